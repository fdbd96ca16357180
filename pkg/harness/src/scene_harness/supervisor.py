"""Supervises one scene execution: wall timeout, process-group kill, and the
guarantee that exactly one JSON report reaches stdout no matter what the
worker or the engine does."""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

from .worker import LOG_FILENAME, RESULT_FILENAME

KILL_WAIT_SECONDS = 2.0


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        try:
            proc.kill()
        except ProcessLookupError:
            pass


def run_scene(scene_file: str, out_dir: str, timeout: float, quality: str, engine: str) -> dict:
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    result_path = out_path / RESULT_FILENAME
    if result_path.exists():
        result_path.unlink()

    argv = [
        sys.executable, "-m", "scene_harness.worker",
        "--scene-file", scene_file,
        "--out-dir", out_dir,
        "--quality", quality,
        "--engine", engine,
    ]
    started = time.monotonic()
    proc = subprocess.Popen(
        argv,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        start_new_session=True,
    )
    try:
        proc.wait(timeout=timeout)
    except subprocess.TimeoutExpired:
        _kill_process_group(proc)
        try:
            proc.wait(timeout=KILL_WAIT_SECONDS)
        except subprocess.TimeoutExpired:
            pass
        return {
            "status": "timeout",
            "exception_type": None,
            "message": f"wall timeout after {timeout}s",
            "error_line": None,
            "video": None,
            "duration_s": None,
        }

    elapsed = time.monotonic() - started
    if result_path.exists():
        try:
            return json.loads(result_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            crash_detail = f"corrupt result file: {exc}"
    else:
        crash_detail = f"worker exited {proc.returncode} after {elapsed:.1f}s without a result"
    log_path = out_path / LOG_FILENAME
    log_tail = ""
    if log_path.exists():
        log_tail = log_path.read_text(encoding="utf-8", errors="replace")[-500:]
    return {
        "status": "error",
        "exception_type": "EngineCrash",
        "message": f"{crash_detail}; log tail: {log_tail}",
        "error_line": 1,
        "video": None,
        "duration_s": None,
    }
