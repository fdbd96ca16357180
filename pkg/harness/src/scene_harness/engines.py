"""Engine selection and version pinning."""

from __future__ import annotations

PINNED_MAJOR_MINOR = (0, 19)
PINNED_LABEL = "0.19"

ENGINES = ("auto", "manim", "builtin")


def manim_version() -> str | None:
    """Installed engine version string, or None when not importable."""
    try:
        import manim  # noqa: F401

        return str(getattr(manim, "__version__", "unknown"))
    except Exception:
        return None


def version_ok(version: str) -> bool:
    parts = version.split(".")
    try:
        return (int(parts[0]), int(parts[1])) == PINNED_MAJOR_MINOR
    except (ValueError, IndexError):
        return False


def resolve_engine(requested: str) -> tuple[str, str]:
    """Map an --engine request to a concrete engine.

    Returns (engine, note); raises RuntimeError when the request cannot be
    satisfied (strict manim mode with a missing or mismatched engine).
    """
    if requested not in ENGINES:
        raise RuntimeError(f"unknown engine {requested!r}; expected one of {ENGINES}")
    version = manim_version()
    if requested == "builtin":
        return "builtin", ""
    if requested == "manim":
        if version is None:
            raise RuntimeError(f"manim not importable; expected {PINNED_LABEL}.x")
        if not version_ok(version):
            raise RuntimeError(f"manim version mismatch: expected {PINNED_LABEL}.x, found {version}")
        return "manim", ""
    # auto: prefer the pinned engine, fall back to the builtin one
    if version is not None and version_ok(version):
        return "manim", ""
    if version is not None:
        return "builtin", f"manim {version} present but not {PINNED_LABEL}.x; using builtin engine"
    return "builtin", "manim not installed; using builtin engine"
