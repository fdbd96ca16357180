"""Environment probe: engine presence, version pin, and media toolchain."""

from __future__ import annotations

import os
import tempfile

from . import engines


def _renderer_available() -> tuple[bool, str]:
    try:
        import cv2
    except Exception as exc:
        return False, f"opencv unavailable: {exc}"
    handle, path = tempfile.mkstemp(suffix=".mp4")
    os.close(handle)
    try:
        writer = cv2.VideoWriter(path, cv2.VideoWriter_fourcc(*"mp4v"), 10, (64, 64))
        opened = writer.isOpened()
        writer.release()
        if not opened:
            return False, "mp4 encoder unavailable"
        return True, ""
    finally:
        os.unlink(path)


def probe(engine: str = "auto") -> tuple[dict, int]:
    """Version report plus exit code (nonzero when unusable)."""
    renderer_ok, renderer_msg = _renderer_available()
    try:
        selected, note = engines.resolve_engine(engine)
    except RuntimeError as exc:
        return (
            {
                "usable": False,
                "engine": engine,
                "version": engines.manim_version(),
                "renderer_ok": renderer_ok,
                "message": str(exc),
            },
            1,
        )
    version = engines.manim_version() if selected == "manim" else "builtin-0.1"
    usable = renderer_ok
    message = note or renderer_msg
    return (
        {
            "usable": usable,
            "engine": selected,
            "version": version,
            "renderer_ok": renderer_ok,
            "message": message,
        },
        0 if usable else 1,
    )
