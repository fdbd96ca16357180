"""Regenerate the shipped pipeline cassette and preseed icons.

Run from the repository root after changing prompts, scripted responses, or
the stub renderer:

    python tests/build_cassette.py

Records three pipeline variants against the scripted provider so the replay
suite can drive the default run plus the no-assets and no-anchor ablations
offline.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

TESTS_DIR = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS_DIR))

from scripted import TOPIC_TEXT, ScriptedProvider, ensure_preseed, quiz_fixture  # noqa: E402

from lectern.gateway import ModelGateway  # noqa: E402
from lectern.pipeline import PipelineRun  # noqa: E402
from lectern.render import StubRenderer, write_solid_video  # noqa: E402
from lectern.workspace import (  # noqa: E402
    LearningTopic,
    PipelineConfig,
    init_workspace,
    write_json,
)

CASSETTE_PATH = TESTS_DIR / "fixtures" / "pipeline_cassette.jsonl"
PRESEED_DIR = TESTS_DIR / "fixtures" / "preseed"

# pixel content of this clip is a pure function of the label, so the replay
# suite regenerates an identical mismatched-topic video at test time
RANDOM_VIDEO_LABEL = "random-topic"

VARIANTS: dict[str, dict] = {
    "default": {},
    "no_assets": {"assets_enabled": False},
    "grid_none": {"grid_enabled": False},
}


def record_variant(cassette: Path, overrides: dict, root: Path, with_eval: bool) -> None:
    topic = LearningTopic.from_text(TOPIC_TEXT, target_duration_minutes=3)
    config = PipelineConfig(**{**PipelineConfig().to_dict(), **overrides})
    workspace = init_workspace(root, topic, config)
    gateway = ModelGateway(mode="record", provider=ScriptedProvider(), cassette_path=cassette)
    run = PipelineRun(workspace, gateway, StubRenderer(), preseed_dir=PRESEED_DIR)
    run.run()
    if with_eval:
        write_json(workspace.eval_dir / "quiz.json", quiz_fixture())
        run.eval_aesthetics()
        run.eval_teachquiz()
        random_video = write_solid_video(root / "random.mp4", 2.0, label=RANDOM_VIDEO_LABEL)
        run.eval_ablation(random_video)


def main() -> None:
    ensure_preseed(PRESEED_DIR)
    CASSETTE_PATH.parent.mkdir(parents=True, exist_ok=True)
    if CASSETTE_PATH.exists():
        CASSETTE_PATH.unlink()
    with tempfile.TemporaryDirectory() as scratch:
        for name, overrides in VARIANTS.items():
            record_variant(
                CASSETTE_PATH, overrides, Path(scratch) / name, with_eval=name == "default"
            )
            print(f"recorded variant: {name}")
    entries = CASSETTE_PATH.read_text().strip().split("\n")
    print(f"cassette written: {CASSETTE_PATH} ({len(entries)} entries)")


if __name__ == "__main__":
    main()
