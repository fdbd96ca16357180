"""Command line for the scene harness.

Protocol: argv carries --scene-file/--out-dir/--timeout/--quality; stdout is
always exactly one JSON object; exit code 0 iff status ok. `--probe` reports
engine/toolchain health instead of running a scene.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import probe as probe_mod
from . import supervisor


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scene-harness")
    parser.add_argument("--scene-file", help="scene program to execute")
    parser.add_argument("--out-dir", help="artifact directory (video, logs)")
    parser.add_argument("--timeout", type=float, default=600.0, help="wall timeout seconds")
    parser.add_argument("--quality", choices=("low", "medium", "high"), default="low")
    parser.add_argument("--engine", choices=("auto", "manim", "builtin"), default="auto")
    parser.add_argument("--probe", action="store_true", help="report engine health and exit")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.probe:
        report, code = probe_mod.probe(args.engine)
        print(json.dumps(report))
        return code
    if not args.scene_file or not args.out_dir:
        report = {
            "status": "error",
            "exception_type": "UsageError",
            "message": "--scene-file and --out-dir are required",
            "error_line": 1,
            "video": None,
            "duration_s": None,
        }
        print(json.dumps(report))
        return 1
    try:
        report = supervisor.run_scene(
            args.scene_file, args.out_dir, args.timeout, args.quality, args.engine
        )
    except Exception as exc:  # the one-JSON-object contract holds even here
        report = {
            "status": "error",
            "exception_type": type(exc).__name__,
            "message": f"supervisor failure: {exc}",
            "error_line": 1,
            "video": None,
            "duration_s": None,
        }
    print(json.dumps(report))
    return 0 if report.get("status") == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
