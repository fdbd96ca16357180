"""Render execution: drive the scene harness subprocess (or a deterministic
stub), decode structured failure reports, sample frames, and concatenate
section videos into the final output."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import signal
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import EnvironmentError_, StageError, ValidationError

log = logging.getLogger(__name__)

OUTER_KILL_GRACE_SECONDS = 10.0
DURATION_TOLERANCE_SECONDS = 0.2

STUB_SIZE = (320, 180)
STUB_FPS = 10


@dataclass(frozen=True)
class TracebackReport:
    status: str  # ok | error | timeout
    exception_type: str = ""
    message: str = ""
    error_line: int = 0
    raw: str = ""

    def __post_init__(self):
        if self.status not in ("ok", "error", "timeout"):
            raise ValidationError(f"unknown render status {self.status!r}")
        if self.status == "error" and self.error_line < 1:
            raise ValidationError("error reports need an error_line >= 1")


@dataclass(frozen=True)
class RenderedSection:
    section_id: str
    video_path: Path
    duration_seconds: float
    frame_samples: tuple[Path, ...] = ()

    def __post_init__(self):
        if self.duration_seconds <= 0:
            raise ValidationError("rendered section duration must be > 0")


def probe_duration(video_path: Path | str) -> float:
    cap = cv2.VideoCapture(str(video_path))
    try:
        if not cap.isOpened():
            raise StageError("render", f"unreadable video {video_path}")
        fps = cap.get(cv2.CAP_PROP_FPS) or 30.0
        frames = cap.get(cv2.CAP_PROP_FRAME_COUNT)
        return frames / fps
    finally:
        cap.release()


def write_solid_video(
    path: Path | str,
    seconds: float,
    label: str = "",
    size: tuple[int, int] = STUB_SIZE,
    fps: int = STUB_FPS,
) -> Path:
    """Synthetic solid-color clip; pixel content is a pure function of the label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    color = (int(digest[0]) % 200 + 30, int(digest[1]) % 200 + 30, int(digest[2]) % 200 + 30)
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, size)
    if not writer.isOpened():
        raise StageError("render", f"cannot open video writer for {path}")
    frame_count = max(1, round(seconds * fps))
    for index in range(frame_count):
        frame = np.full((size[1], size[0], 3), color, dtype=np.uint8)
        cv2.putText(
            frame, f"{label} f{index}", (8, size[1] // 2),
            cv2.FONT_HERSHEY_SIMPLEX, 0.5, (255, 255, 255), 1,
        )
        writer.write(frame)
    writer.release()
    return path


def sample_frames(
    video_path: Path | str,
    rate_fps: float = 1.0,
    max_frames: int = 60,
    out_dir: Path | str | None = None,
) -> list[Path]:
    """Sample frames at ``rate_fps`` (default one per second), evenly thinned
    down to ``max_frames`` when the video is long; always at least one frame."""
    video_path = Path(video_path)
    cap = cv2.VideoCapture(str(video_path))
    if not cap.isOpened():
        raise StageError("render", f"unreadable video {video_path}")
    try:
        fps = cap.get(cv2.CAP_PROP_FPS) or 30.0
        total = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        duration = total / fps if fps else 0.0
        wanted = max(1, int(duration * rate_fps))
        if wanted > max_frames:
            positions = [round(i * (wanted - 1) / (max_frames - 1)) for i in range(max_frames)]
        else:
            positions = list(range(wanted))
        frame_indices = sorted({min(total - 1, round(p / rate_fps * fps)) for p in positions})
        if out_dir is None:
            out_dir = video_path.parent / (video_path.stem + "_frames")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for order, index in enumerate(frame_indices, start=1):
            cap.set(cv2.CAP_PROP_POS_FRAMES, index)
            ok, frame = cap.read()
            if not ok:
                continue
            frame_path = out_dir / f"frame_{order:04d}.png"
            cv2.imwrite(str(frame_path), frame)
            paths.append(frame_path)
        if not paths:
            raise StageError("render", f"no frames decodable from {video_path}")
        return paths
    finally:
        cap.release()


def concatenate(sections: list[RenderedSection], out_path: Path | str) -> Path:
    """Join section videos in order into one file.

    Prefers a stream-copy via ffmpeg when the binary exists (all sections
    share encoder settings); otherwise falls back to a re-encode through
    OpenCV. A single section is byte-copied.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    missing = [s.section_id for s in sections if not Path(s.video_path).exists()]
    if not sections or missing:
        raise StageError(
            "concat", f"missing rendered sections: {', '.join(missing) if missing else '(none given)'}"
        )
    if len(sections) == 1:
        shutil.copyfile(sections[0].video_path, out_path)
        return out_path

    ffmpeg = shutil.which("ffmpeg")
    if ffmpeg:
        list_file = out_path.parent / "concat_list.txt"
        list_file.write_text(
            "".join(f"file '{Path(s.video_path).resolve()}'\n" for s in sections),
            encoding="utf-8",
        )
        proc = subprocess.run(
            [ffmpeg, "-y", "-f", "concat", "-safe", "0", "-i", str(list_file),
             "-c", "copy", str(out_path)],
            capture_output=True,
            text=True,
        )
        list_file.unlink(missing_ok=True)
        if proc.returncode == 0:
            return out_path
        log.warning("ffmpeg stream copy failed (%s); falling back to re-encode", proc.returncode)

    first = cv2.VideoCapture(str(sections[0].video_path))
    fps = first.get(cv2.CAP_PROP_FPS) or 30.0
    width = int(first.get(cv2.CAP_PROP_FRAME_WIDTH))
    height = int(first.get(cv2.CAP_PROP_FRAME_HEIGHT))
    first.release()
    writer = cv2.VideoWriter(str(out_path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height))
    if not writer.isOpened():
        raise StageError("concat", f"cannot open writer for {out_path}")
    try:
        for section in sections:
            cap = cv2.VideoCapture(str(section.video_path))
            try:
                while True:
                    ok, frame = cap.read()
                    if not ok:
                        break
                    if frame.shape[1] != width or frame.shape[0] != height:
                        frame = cv2.resize(frame, (width, height))
                    writer.write(frame)
            finally:
                cap.release()
    finally:
        writer.release()
    total_in = sum(s.duration_seconds for s in sections)
    total_out = probe_duration(out_path)
    if abs(total_out - total_in) > DURATION_TOLERANCE_SECONDS:
        raise StageError(
            "concat",
            f"concatenated duration {total_out:.2f}s deviates from {total_in:.2f}s "
            f"by more than {DURATION_TOLERANCE_SECONDS}s",
        )
    return out_path


# --- renderers -------------------------------------------------------------------


class StubRenderer:
    """Deterministic renderer for offline tests: synthetic solid-color videos
    and optionally scripted failure reports per section."""

    def __init__(
        self,
        script: dict[str, list[TracebackReport]] | None = None,
        duration_seconds: float = 2.0,
    ):
        self.script = {k: list(v) for k, v in (script or {}).items()}
        self.duration_seconds = duration_seconds
        self.calls: list[str] = []

    def execute(
        self, program, out_dir: Path | str, timeout_seconds: float
    ) -> tuple[TracebackReport, RenderedSection | None]:
        self.calls.append(program.section_id)
        queue = self.script.get(program.section_id)
        if queue:
            report = queue.pop(0)
            if report.status != "ok":
                return report, None
        out_dir = Path(out_dir)
        video = write_solid_video(
            out_dir / f"video_r{program.revision}.mp4",
            self.duration_seconds,
            label=program.section_id,
        )
        rendered = RenderedSection(
            section_id=program.section_id,
            video_path=video,
            duration_seconds=probe_duration(video),
        )
        return TracebackReport(status="ok", raw="stub"), rendered


class HarnessRenderer:
    """Drives the scene-harness subprocess protocol.

    argv: [harness..., --scene-file F, --out-dir D, --timeout S, --quality Q];
    stdout: one JSON object {status, exception_type, message, error_line,
    video, duration_s}; exit code 0 iff status ok.
    """

    def __init__(self, harness_cmd: list[str] | None = None, quality: str = "low"):
        self.harness_cmd = harness_cmd or default_harness_cmd()
        self.quality = quality

    def probe(self) -> None:
        try:
            proc = subprocess.run(
                [*self.harness_cmd, "--probe"], capture_output=True, text=True, timeout=120
            )
        except FileNotFoundError:
            raise EnvironmentError_(f"scene harness not runnable: {self.harness_cmd}")
        except subprocess.TimeoutExpired:
            raise EnvironmentError_("scene harness probe timed out")
        if proc.returncode != 0:
            raise EnvironmentError_(f"scene harness unusable: {proc.stdout or proc.stderr}")

    def execute(
        self, program, out_dir: Path | str, timeout_seconds: float
    ) -> tuple[TracebackReport, RenderedSection | None]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        scene_file = out_dir / f"scene_r{program.revision}.py"
        scene_file.write_text(program.source_text, encoding="utf-8")
        argv = [
            *self.harness_cmd,
            "--scene-file", str(scene_file),
            "--out-dir", str(out_dir),
            "--timeout", str(timeout_seconds),
            "--quality", self.quality,
        ]
        proc = subprocess.Popen(
            argv,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            start_new_session=True,
        )
        try:
            stdout, stderr = proc.communicate(
                timeout=timeout_seconds + OUTER_KILL_GRACE_SECONDS
            )
        except subprocess.TimeoutExpired:
            _kill_process_group(proc)
            stdout, stderr = proc.communicate()
            return (
                TracebackReport(
                    status="timeout",
                    raw=f"driver killed harness after outer timeout; stderr: {stderr[-500:]}",
                ),
                None,
            )
        report_data, parse_error = _parse_single_json(stdout)
        if report_data is None:
            return (
                TracebackReport(
                    status="error",
                    exception_type="HarnessProtocolError",
                    message=f"unparseable harness stdout: {parse_error}",
                    error_line=1,
                    raw=stdout + stderr,
                ),
                None,
            )
        status = report_data.get("status", "error")
        if status == "ok":
            video = Path(report_data["video"])
            duration = float(report_data.get("duration_s") or probe_duration(video))
            rendered = RenderedSection(
                section_id=program.section_id, video_path=video, duration_seconds=duration
            )
            return TracebackReport(status="ok", raw=stdout), rendered
        return (
            TracebackReport(
                status=status,
                exception_type=str(report_data.get("exception_type", "")),
                message=str(report_data.get("message", "")),
                error_line=int(report_data.get("error_line") or 1),
                raw=stdout,
            ),
            None,
        )


def default_harness_cmd() -> list[str]:
    env_cmd = os.environ.get("LECTERN_HARNESS_CMD")
    if env_cmd:
        return env_cmd.split()
    if shutil.which("scene-harness"):
        return ["scene-harness"]
    return [sys.executable, "-m", "scene_harness"]


def _parse_single_json(stdout: str):
    stripped = stdout.strip()
    if not stripped:
        return None, "empty stdout"
    try:
        return json.loads(stripped), None
    except json.JSONDecodeError as exc:
        return None, str(exc)


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def suppress_lecture_lines(source_text: str) -> str:
    """Rewrite the setup_layout call to pass no lecture lines (animation-only
    render used by the evaluation ablation)."""
    import re

    return re.sub(
        r"(self\.setup_layout\(\s*(?:\"[^\"]*\"|'[^']*')\s*,\s*)\[[^\]]*\]",
        r"\1[]",
        source_text,
        count=1,
    )
