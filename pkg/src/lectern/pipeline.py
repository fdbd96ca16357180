"""End-to-end orchestration: plan -> assets -> code -> critic -> concat,
with per-stage metrics and single-stage re-runs from persisted artifacts."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import assets as assets_mod
from . import planner as planner_mod
from .coder import SectionProgram, parse_blocks, run_sections_parallel
from .critic import RefineLoop
from .errors import StageError, ValidationError
from .evaluator import (
    AblationMaterials,
    QuizSet,
    judge_aesthetics,
    teachquiz,
    teachquiz_ablation,
)
from .gateway import Attachment, ModelGateway
from .grid import AnchorGrid, parse_placements
from .metrics import MetricsLog
from .prompts import load_all_prompts
from .render import (
    RenderedSection,
    StubRenderer,
    concatenate,
    probe_duration,
    suppress_lecture_lines,
    write_solid_video,
)
from .workspace import (
    PipelineConfig,
    Storyboard,
    WorkspaceHandle,
    read_json,
    write_json,
)

log = logging.getLogger(__name__)

PIPELINE_STAGES = ("plan", "assets", "code", "render", "critic", "concat")
EVAL_STAGES = ("eval-aesthetics", "eval-teachquiz", "eval-ablation")


class PipelineRun:
    """Holds the shared pieces one run needs across stages."""

    def __init__(
        self,
        workspace: WorkspaceHandle,
        gateway: ModelGateway,
        renderer,
        preseed_dir: Path | None = None,
        reference_image: Path | None = None,
        asset_backends: list | None = None,
    ):
        self.workspace = workspace
        self.gateway = gateway
        self.renderer = renderer
        self.preseed_dir = preseed_dir
        self.reference_image = reference_image
        self.asset_backends = asset_backends or []
        self.config = workspace.config
        self.metrics = MetricsLog(workspace.metrics_path)
        load_all_prompts()  # fail fast if any template is missing

    # -- helpers -----------------------------------------------------------

    @property
    def grid(self) -> AnchorGrid | None:
        if not self.config.grid_enabled:
            return None
        return AnchorGrid(self.config.grid_rows, self.config.grid_cols)

    def _record(self, stage: str, started: float, usage_before: tuple[int, int]) -> None:
        prompt_after, completion_after = self.gateway.usage()
        self.metrics.record(
            stage,
            time.monotonic() - started,
            prompt_after - usage_before[0],
            completion_after - usage_before[1],
        )

    def section_executor(self, section_id: str):
        out_dir = self.workspace.section_dir(section_id)
        timeout = self.config.render_timeout_seconds

        def execute(program: SectionProgram):
            return self.renderer.execute(program, out_dir, timeout)

        return execute

    def asset_tokens(self) -> list[str]:
        manifest_path = self.workspace.assets_dir / "manifest.json"
        if not manifest_path.exists():
            return []
        store = assets_mod.AssetStore(self.workspace.root)
        return assets_mod.manifest_for_coder(store.entries())

    # -- stages ------------------------------------------------------------

    def stage_plan(self) -> None:
        started = time.monotonic()
        usage = self.gateway.usage()
        reference = None
        if self.reference_image is not None:
            reference = Attachment(
                kind="image", path=str(self.reference_image), media_note="reference image"
            )
        planner_mod.plan(self.gateway, self.workspace, reference)
        self._record("planner", started, usage)

    def stage_assets(self) -> None:
        if not self.config.assets_enabled:
            log.info("assets disabled; skipping retrieval")
            return
        storyboard = self._require_storyboard("assets")
        started = time.monotonic()
        usage = self.gateway.usage()
        keywords = assets_mod.extract_keywords(self.gateway, storyboard)
        store = assets_mod.AssetStore(
            self.workspace.root,
            backends=self.asset_backends,
            preseed_dir=self.preseed_dir,
        )
        store.retrieve_all(keywords)
        problems = store.verify()
        if problems:
            raise StageError("assets", "; ".join(problems))
        self._record("assets", started, usage)

    def stage_code(self) -> list:
        storyboard = self._require_storyboard("code")
        started = time.monotonic()
        usage = self.gateway.usage()
        results = run_sections_parallel(
            self.gateway,
            self.workspace,
            storyboard,
            self.asset_tokens(),
            self.grid,
            self.config,
            self.section_executor,
        )
        for result in results:
            if not result.failed:
                self._persist_section(result.program, result.rendered)
        self._record("coder", started, usage)
        failed = [r.section_id for r in results if r.failed]
        if failed:
            log.warning("sections failed and are excluded: %s", ", ".join(failed))
        return results

    def _persist_section(self, program: SectionProgram, rendered: RenderedSection | None) -> None:
        section_dir = self.workspace.section_dir(program.section_id)
        (section_dir / "code_final.txt").write_text(program.source_text, encoding="utf-8")
        grid = self.grid
        if grid is not None:
            write_json(
                section_dir / "occupancy.json", parse_placements(program, grid).to_dict(grid)
            )
        if rendered is not None:
            write_json(
                section_dir / "render.json",
                {
                    "section_id": program.section_id,
                    "video": str(rendered.video_path),
                    "duration_seconds": rendered.duration_seconds,
                    "revision": program.revision,
                },
            )

    def _load_section_program(self, section, expect_blocks: bool = True) -> SectionProgram:
        section_dir = self.workspace.section_dir(section.id)
        code_path = section_dir / "code_final.txt"
        if not code_path.exists():
            raise StageError("render", f"missing section code: {code_path}")
        text = code_path.read_text(encoding="utf-8")
        blocks = parse_blocks(text, expected_count=len(section.lecture_lines))
        return SectionProgram(section.id, text, blocks)

    def _load_rendered(self, section_id: str) -> RenderedSection:
        render_path = self.workspace.section_dir(section_id) / "render.json"
        if not render_path.exists():
            raise StageError("critic", f"missing render for {section_id} (run the render stage)")
        data = read_json(render_path)
        return RenderedSection(
            section_id=section_id,
            video_path=Path(data["video"]),
            duration_seconds=float(data["duration_seconds"]),
        )

    def stage_render(self) -> None:
        """Re-render every section from its persisted final code.

        Repair-loop renders only need to prove executability and run at the
        renderer's default (low) quality; this standalone pass is the final
        render and steps the harness up to the high preset.
        """
        storyboard = self._require_storyboard("render")
        started = time.monotonic()
        usage = self.gateway.usage()
        renderer = self.renderer
        from .render import HarnessRenderer

        if isinstance(renderer, HarnessRenderer):
            renderer = HarnessRenderer(harness_cmd=renderer.harness_cmd, quality="high")
        failures = []
        for section in storyboard.sections:
            program = self._load_section_program(section)
            out_dir = self.workspace.section_dir(section.id)
            report, rendered = renderer.execute(
                program, out_dir, self.config.render_timeout_seconds
            )
            if report.status != "ok" or rendered is None:
                failures.append(f"{section.id} ({report.status}: {report.message})")
                continue
            self._persist_section(program, rendered)
        self._record("render", started, usage)
        if failures and not self.config.allow_partial:
            raise StageError("render", "; ".join(failures))

    def stage_critic(self, results=None) -> None:
        if not self.config.critic_enabled or self.config.critique_rounds == 0:
            log.info("critic disabled; skipping refinement")
            return
        storyboard = self._require_storyboard("critic")
        started = time.monotonic()
        usage = self.gateway.usage()
        by_id = {r.section_id: r for r in (results or []) if not r.failed}

        def refine(section):
            if section.id in by_id:
                program = by_id[section.id].program
                rendered = by_id[section.id].rendered
            else:
                try:
                    program = self._load_section_program(section)
                    rendered = self._load_rendered(section.id)
                except StageError:
                    if self.config.allow_partial:
                        log.warning("skipping critique of %s (no artifacts)", section.id)
                        return
                    raise
            if rendered is None:
                raise StageError("critic", f"missing render for {section.id}")
            loop_local = RefineLoop(
                self.gateway,
                self.workspace,
                self.config,
                self.grid,
                self.asset_tokens(),
                executor=self.section_executor(section.id),
            )
            final_program, final_rendered, _rounds = loop_local.run(section, program, rendered)
            self._persist_section(final_program, final_rendered)

        with ThreadPoolExecutor(max_workers=max(1, self.config.max_parallel_sections)) as pool:
            errors = []
            futures = {pool.submit(refine, s): s.id for s in storyboard.sections}
            for future, section_id in futures.items():
                try:
                    future.result()
                except Exception as exc:
                    errors.append(f"{section_id}: {exc}")
        self._record("critic", started, usage)
        if errors:
            raise StageError("critic", "; ".join(errors))

    def stage_concat(self) -> Path:
        storyboard = self._require_storyboard("concat")
        started = time.monotonic()
        usage = self.gateway.usage()
        rendered = []
        missing = []
        for section in storyboard.sections:
            try:
                rendered.append(self._load_rendered(section.id))
            except StageError:
                missing.append(section.id)
        if missing and not self.config.allow_partial:
            raise StageError("concat", f"missing rendered sections: {', '.join(missing)}")
        final = concatenate(rendered, self.workspace.final_video_path)
        self._record("concat", started, usage)
        return final

    def run(self) -> Path:
        self.stage_plan()
        self.stage_assets()
        results = self.stage_code()
        self.stage_critic(results)
        final = self.stage_concat()
        log.info("final video at %s", final)
        return final

    # -- eval --------------------------------------------------------------

    def _require_storyboard(self, stage: str) -> Storyboard:
        if not self.workspace.storyboard_path.exists():
            raise StageError(stage, f"missing prerequisite: {self.workspace.storyboard_path.name}")
        return self.workspace.load_storyboard()

    def _require_final_video(self, stage: str) -> Path:
        final = self.workspace.final_video_path
        if not final.exists():
            raise StageError(stage, f"missing prerequisite: {final}")
        return final

    def load_quiz(self) -> QuizSet:
        quiz_path = self.workspace.eval_dir / "quiz.json"
        if not quiz_path.exists():
            raise StageError("eval", f"missing quiz manifest: {quiz_path}")
        return QuizSet.from_dict(read_json(quiz_path))

    def eval_aesthetics(self) -> dict:
        video = self._require_final_video("eval-aesthetics")
        report = judge_aesthetics(self.gateway, video, self.workspace.topic.text)
        write_json(self.workspace.eval_dir / "aesthetics.json", report.to_dict())
        return report.to_dict()

    def eval_teachquiz(self) -> dict:
        video = self._require_final_video("eval-teachquiz")
        result = teachquiz(self.gateway, self.load_quiz(), video)
        write_json(self.workspace.eval_dir / "teachquiz.json", result.to_dict())
        return result.to_dict()

    def build_animation_only_video(self) -> Path:
        """Render pass with the lecture panel suppressed, for the ablation."""
        storyboard = self._require_storyboard("eval-ablation")
        out_path = self.workspace.eval_dir / "animation_only.mp4"
        if isinstance(self.renderer, StubRenderer):
            write_solid_video(out_path, 2.0, label=self.workspace.topic.slug + "-anim-only")
            return out_path
        rendered = []
        for section in storyboard.sections:
            program = self._load_section_program(section)
            muted = SectionProgram(
                section.id,
                suppress_lecture_lines(program.source_text),
                program.blocks,
            )
            out_dir = self.workspace.eval_dir / "anim_only" / section.id
            report, section_render = self.renderer.execute(
                muted, out_dir, self.config.render_timeout_seconds
            )
            if report.status != "ok" or section_render is None:
                raise StageError("eval-ablation", f"animation-only render failed for {section.id}")
            rendered.append(section_render)
        return concatenate(rendered, out_path)

    def eval_ablation(self, random_video: Path) -> dict:
        self._require_final_video("eval-ablation")
        storyboard = self._require_storyboard("eval-ablation")
        lecture_text = "\n".join(
            line for section in storyboard.sections for line in section.lecture_lines
        )
        materials = AblationMaterials(
            lecture_text=lecture_text,
            video=self.workspace.final_video_path,
            animation_only_video=self.build_animation_only_video(),
            random_video=Path(random_video),
        )
        result = teachquiz_ablation(self.gateway, self.load_quiz(), materials)
        write_json(self.workspace.eval_dir / "teachquiz_ablation.json", result)
        return result

    def run_stage(self, name: str, random_video: Path | None = None):
        if name == "plan":
            return self.stage_plan()
        if name == "assets":
            self._require_storyboard("assets")
            return self.stage_assets()
        if name == "code":
            return self.stage_code()
        if name == "render":
            return self.stage_render()
        if name == "critic":
            return self.stage_critic()
        if name == "concat":
            return self.stage_concat()
        if name == "eval-aesthetics":
            return self.eval_aesthetics()
        if name == "eval-teachquiz":
            return self.eval_teachquiz()
        if name == "eval-ablation":
            if random_video is None:
                raise ValidationError("eval-ablation needs --random-video")
            return self.eval_ablation(random_video)
        raise ValidationError(f"unknown stage {name!r}")
