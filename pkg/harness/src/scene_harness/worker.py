"""In-process scene execution: runs inside the supervised child process.

Loads the scene file with honest Python semantics (tracebacks point into the
submitted file), discovers the single TeachingScene subclass, renders it
with the selected engine, and writes the structured result to
``<out_dir>/.result.json``. All engine chatter goes to ``engine.log``; this
process never prints to its own stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

from . import engines

RESULT_FILENAME = ".result.json"
LOG_FILENAME = "engine.log"
SCENE_MODULE_NAME = "__scene__"


def _redirect_output(log_path: Path) -> None:
    handle = open(log_path, "a", buffering=1)
    os.dup2(handle.fileno(), 1)
    os.dup2(handle.fileno(), 2)
    sys.stdout = handle
    sys.stderr = handle


def _block_network() -> None:
    import socket

    def deny(*args, **kwargs):
        raise RuntimeError("network access is disabled inside the scene harness")

    socket.socket = deny
    socket.create_connection = deny
    socket.socketpair = deny


def _deepest_line_in_file(exc: BaseException, scene_path: str, line_count: int) -> int:
    line = 0
    for frame in traceback.extract_tb(exc.__traceback__):
        if frame.filename == scene_path:
            line = frame.lineno or line
    if line < 1:
        return 1
    return min(line, line_count)


def _error_result(exc: BaseException, scene_path: str, line_count: int) -> dict:
    return {
        "status": "error",
        "exception_type": type(exc).__name__,
        "message": str(exc),
        "error_line": _deepest_line_in_file(exc, scene_path, line_count),
        "video": None,
        "duration_s": None,
    }


class SceneDiscoveryError(Exception):
    pass


def _discover_scene_class(namespace: dict):
    base = namespace.get("TeachingScene")
    if not isinstance(base, type):
        raise SceneDiscoveryError("scene file does not define the TeachingScene base class")
    candidates = [
        value
        for value in namespace.values()
        if isinstance(value, type)
        and issubclass(value, base)
        and value is not base
        and getattr(value, "__module__", "") == SCENE_MODULE_NAME
    ]
    if len(candidates) != 1:
        names = ", ".join(sorted(c.__name__ for c in candidates)) or "(none)"
        raise SceneDiscoveryError(
            f"scene file must define exactly one TeachingScene subclass; found {names}"
        )
    return candidates[0]


def _render_builtin(scene_cls, out_dir: Path, quality: str) -> tuple[str, float]:
    video_path = out_dir / f"{scene_cls.__name__}.mp4"
    scene = scene_cls()
    duration = scene.render_to(str(video_path), quality=quality)
    return str(video_path), duration


def _render_manim(scene_cls, out_dir: Path, quality: str) -> tuple[str, float]:
    from manim import tempconfig

    quality_map = {"low": "low_quality", "medium": "medium_quality", "high": "high_quality"}
    with tempconfig(
        {
            "quality": quality_map.get(quality, "low_quality"),
            "media_dir": str(out_dir),
            "output_file": scene_cls.__name__,
            "disable_caching": True,
        }
    ):
        scene = scene_cls()
        scene.render()
        video_path = str(scene.renderer.file_writer.movie_file_path)
    import cv2

    cap = cv2.VideoCapture(video_path)
    try:
        fps = cap.get(cv2.CAP_PROP_FPS) or 30.0
        duration = cap.get(cv2.CAP_PROP_FRAME_COUNT) / fps
    finally:
        cap.release()
    return video_path, duration


def run(scene_file: str, out_dir: str, quality: str, engine: str) -> dict:
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    scene_path = str(Path(scene_file).resolve())
    source = Path(scene_path).read_text(encoding="utf-8")
    line_count = max(1, len(source.split("\n")))

    try:
        selected, note = engines.resolve_engine(engine)
    except RuntimeError as exc:
        return {
            "status": "error",
            "exception_type": "EnvironmentError",
            "message": str(exc),
            "error_line": 1,
            "video": None,
            "duration_s": None,
        }
    if note:
        print(f"[harness] {note}")

    if selected == "builtin":
        from . import mini_engine

        sys.modules["manim"] = mini_engine

    os.chdir(out_path)
    _block_network()

    namespace = {"__name__": SCENE_MODULE_NAME, "__file__": scene_path}
    try:
        code = compile(source, scene_path, "exec")
        exec(code, namespace)
    except BaseException as exc:  # noqa: BLE001 - every failure becomes a report
        return _error_result(exc, scene_path, line_count)

    try:
        scene_cls = _discover_scene_class(namespace)
    except SceneDiscoveryError as exc:
        return {
            "status": "error",
            "exception_type": "SceneDiscoveryError",
            "message": str(exc),
            "error_line": 1,
            "video": None,
            "duration_s": None,
        }

    try:
        if selected == "builtin":
            video, duration = _render_builtin(scene_cls, out_path, quality)
        else:
            video, duration = _render_manim(scene_cls, out_path, quality)
    except BaseException as exc:  # noqa: BLE001
        return _error_result(exc, scene_path, line_count)

    return {
        "status": "ok",
        "exception_type": None,
        "message": None,
        "error_line": None,
        "video": video,
        "duration_s": duration,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--scene-file", required=True)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--quality", default="low")
    parser.add_argument("--engine", default="auto")
    args = parser.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _redirect_output(out_dir / LOG_FILENAME)

    try:
        result = run(args.scene_file, args.out_dir, args.quality, args.engine)
    except BaseException as exc:  # noqa: BLE001 - the supervisor needs a result file
        result = {
            "status": "error",
            "exception_type": type(exc).__name__,
            "message": f"harness worker crashed: {exc}",
            "error_line": 1,
            "video": None,
            "duration_s": None,
        }
    (out_dir / RESULT_FILENAME).write_text(json.dumps(result), encoding="utf-8")
    return 0 if result["status"] == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
