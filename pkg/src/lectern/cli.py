"""Command-line entry point wiring the pipeline stages into composable commands."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from .errors import (
    EXIT_ENVIRONMENT,
    EXIT_OK,
    EXIT_STAGE_FAILURE,
    EXIT_VALIDATION,
    LecternError,
)
from .gateway import HttpProvider, ModelGateway
from .pipeline import EVAL_STAGES, PIPELINE_STAGES, PipelineRun
from .prompts import load_all_prompts
from .render import HarnessRenderer, StubRenderer
from .workspace import (
    LearningTopic,
    PipelineConfig,
    init_workspace,
    load_workspace,
    read_json,
)

log = logging.getLogger(__name__)

ABLATION_HELP = """\
ablation flag map:
  --no-assets            drop the external asset database
  --grid none            drop the visual anchor system entirely
  --grid center          single central anchor (1x1)
  --grid 4x4 / 8x8       coarser / finer anchor granularity
  --no-critic            skip the visual refinement pass
  --serial               disable parallel section synthesis
  --repair retry         regenerate the whole section on any error
  --repair debug         full-code + error-log repair calls
  --repair scoperefine   scoped line/block/global ladder (default)
"""


def _parse_grid(spec: str) -> dict:
    if spec == "none":
        return {"grid_enabled": False}
    if spec == "center":
        return {"grid_rows": 1, "grid_cols": 1}
    match = re.match(r"^(\d+)x(\d+)$", spec)
    if not match:
        raise argparse.ArgumentTypeError(f"grid must be RxC, 'center', or 'none'; got {spec!r}")
    return {"grid_rows": int(match.group(1)), "grid_cols": int(match.group(2))}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--workspace-root", default="runs", help="directory holding run workspaces")
    parser.add_argument("--mode", choices=("live", "record", "replay"), default="live")
    parser.add_argument("--cassette", help="cassette file for record/replay modes")
    parser.add_argument("--stub-renderer", action="store_true", help="use the deterministic stub renderer")
    parser.add_argument("--harness-cmd", help="override the scene-harness command line")
    parser.add_argument("--config", help="JSON file with PipelineConfig overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lectern",
        description="Generate an educational animation video from a learning topic.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=ABLATION_HELP,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "pipeline", help="full run: plan, assets, code, critic, concat",
        formatter_class=argparse.RawDescriptionHelpFormatter, epilog=ABLATION_HELP,
    )
    run.add_argument("--topic", required=True)
    run.add_argument("--duration", type=float, default=3.0, help="target video minutes")
    run.add_argument("--max-parallel", type=int)
    run.add_argument("--serial", action="store_true", help="one section at a time")
    run.add_argument("--no-critic", action="store_true")
    run.add_argument("--no-assets", action="store_true")
    run.add_argument("--grid", default="6x6", help="RxC, 'center', or 'none'")
    run.add_argument("--repair", choices=("scoperefine", "retry", "debug"), default="scoperefine")
    run.add_argument("--critique-rounds", type=int)
    run.add_argument("--render-timeout", type=float)
    run.add_argument("--assets-dir", help="preseeded asset directory searched before any backend")
    run.add_argument("--reference-image", help="image grounding the outline request")
    run.add_argument("--resume", action="store_true", help="reuse an existing workspace")
    run.add_argument("--allow-partial", action="store_true", help="concatenate surviving sections")
    _add_common(run)

    stage = sub.add_parser("stage", help="re-run one stage from persisted artifacts")
    stage.add_argument("name", choices=PIPELINE_STAGES + EVAL_STAGES)
    stage.add_argument("--slug", required=True, help="workspace slug under the root")
    stage.add_argument("--assets-dir")
    stage.add_argument("--random-video", help="mismatched-topic video for eval-ablation")
    _add_common(stage)

    ev = sub.add_parser("eval", help="score a finished video")
    ev.add_argument("kind", choices=("aesthetics", "teachquiz", "ablation"))
    ev.add_argument("--slug", required=True)
    ev.add_argument("--random-video")
    _add_common(ev)

    probe = sub.add_parser("probe", help="check templates and the render harness")
    _add_common(probe)
    return parser


def make_gateway(args) -> ModelGateway:
    if args.mode == "replay":
        if not args.cassette:
            raise LecternError("replay mode requires --cassette")
        return ModelGateway(mode="replay", cassette_path=args.cassette)
    provider = HttpProvider()
    return ModelGateway(mode=args.mode, provider=provider, cassette_path=args.cassette)


def make_renderer(args):
    if args.stub_renderer:
        return StubRenderer()
    cmd = args.harness_cmd.split() if args.harness_cmd else None
    renderer = HarnessRenderer(harness_cmd=cmd)
    renderer.probe()
    return renderer


def _config_from_args(args) -> PipelineConfig:
    overrides: dict = {}
    if args.config:
        overrides.update(read_json(Path(args.config)))
    overrides.update(_parse_grid(args.grid))
    if args.serial:
        overrides["max_parallel_sections"] = 1
    elif args.max_parallel:
        overrides["max_parallel_sections"] = args.max_parallel
    if args.no_critic:
        overrides["critic_enabled"] = False
    if args.no_assets:
        overrides["assets_enabled"] = False
    if args.critique_rounds is not None:
        overrides["critique_rounds"] = args.critique_rounds
    if args.render_timeout is not None:
        overrides["render_timeout_seconds"] = args.render_timeout
    if args.allow_partial:
        overrides["allow_partial"] = True
    overrides["repair_strategy"] = args.repair
    return PipelineConfig(**{**PipelineConfig().to_dict(), **overrides})


def cmd_pipeline(args) -> int:
    topic = LearningTopic.from_text(args.topic, target_duration_minutes=args.duration)
    config = _config_from_args(args)
    workspace = init_workspace(args.workspace_root, topic, config, resume=args.resume)
    run = PipelineRun(
        workspace,
        make_gateway(args),
        make_renderer(args),
        preseed_dir=Path(args.assets_dir) if args.assets_dir else None,
        reference_image=Path(args.reference_image) if args.reference_image else None,
    )
    final = run.run()
    print(f"final video: {final}")
    return EXIT_OK


def _open_run(args) -> PipelineRun:
    workspace = load_workspace(args.workspace_root, args.slug)
    preseed = getattr(args, "assets_dir", None)
    return PipelineRun(
        workspace,
        make_gateway(args),
        make_renderer(args),
        preseed_dir=Path(preseed) if preseed else None,
    )


def cmd_stage(args) -> int:
    run = _open_run(args)
    random_video = Path(args.random_video) if getattr(args, "random_video", None) else None
    result = run.run_stage(args.name, random_video=random_video)
    if isinstance(result, dict):
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        print(f"stage {args.name}: ok")
    return EXIT_OK


def cmd_eval(args) -> int:
    args.name = f"eval-{args.kind}"
    if args.kind == "ablation":
        args.name = "eval-ablation"
    return cmd_stage(args)


def cmd_probe(args) -> int:
    load_all_prompts()
    print("templates: ok")
    if not args.stub_renderer:
        make_renderer(args)
        print("harness: ok")
    else:
        print("harness: stubbed")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "pipeline": cmd_pipeline,
        "stage": cmd_stage,
        "eval": cmd_eval,
        "probe": cmd_probe,
    }
    try:
        return handlers[args.command](args)
    except LecternError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except KeyboardInterrupt:
        log.error("interrupted; workspace remains resumable")
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
