"""Vision-judge layout refinement: critique the rendered section against its
occupancy table, rewrite the code from the findings, and re-render.

Refinement is best-effort and can never regress a working section: if the
rewritten program cannot be made to execute (even after the repair ladder),
the pre-critique revision stays."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .coder import (
    SectionProgram,
    extract_code_fence,
    parse_blocks,
    scope_refine,
    synthesize_section,
)
from .errors import ValidationError
from .gateway import Attachment, ModelGateway, ModelRequest
from .grid import AnchorGrid, OccupancyTable, legend_text, parse_placements
from .planner import parse_json_object
from .prompts import load_prompt, render_prompt
from .render import RenderedSection
from .workspace import PipelineConfig, StoryboardSection, WorkspaceHandle, write_json

log = logging.getLogger(__name__)

MAX_IMPROVEMENTS = 10


@dataclass(frozen=True)
class CritiqueReport:
    has_issues: bool
    improvements: tuple[tuple[str, str], ...] = ()  # (problem, solution)

    def to_dict(self) -> dict:
        return {
            "has_issues": self.has_issues,
            "improvements": [
                {"problem": problem, "solution": solution}
                for problem, solution in self.improvements
            ],
        }


@dataclass
class RefinementRound:
    round_index: int
    critique: CritiqueReport
    revision_before: int
    revision_after: int
    rerendered: bool
    abandoned: bool = False


def occupancy_summary(table: OccupancyTable | None, grid: AnchorGrid | None) -> str:
    """Serialized occupancy appendix for the judge: what sits where, and which
    anchors remain free for conflict-free reallocation."""
    if table is None or grid is None:
        return "Anchor-grid placement data unavailable for this run."
    lines = ["Current element occupancy (from the section code):"]
    if not table.placements:
        lines.append("- (no placement calls found)")
    for placement in table.placements:
        if placement.kind == "dynamic":
            lines.append(
                f"- {placement.element_id}: dynamic placement at line "
                f"{placement.code_lines[0]} (labels unresolved)"
            )
            continue
        anchors = "..".join(placement.anchors)
        lines.append(
            f"- {placement.element_id}: {placement.kind} {anchors}, "
            f"scale {placement.scale_factor}, line {placement.code_lines[0]}, "
            f"lecture block {placement.lecture_block}"
        )
    usage = table.cell_usage(grid)
    free = [label for label in grid.labels() if usage[label] == 0]
    lines.append(f"Unoccupied anchors: {', '.join(free) if free else '(none)'}")
    return "\n".join(lines)


def _normalize_report(data: dict) -> CritiqueReport:
    layout = data.get("layout")
    if not isinstance(layout, dict) or "has_issues" not in layout:
        raise ValidationError('critique response lacks {"layout": {"has_issues": ...}}')
    has_issues = layout["has_issues"]
    if not isinstance(has_issues, bool):
        raise ValidationError("has_issues must be true or false")
    raw_improvements = layout.get("improvements") or []
    if not isinstance(raw_improvements, list):
        raise ValidationError("improvements must be a list")
    improvements = []
    for item in raw_improvements[:MAX_IMPROVEMENTS]:
        if not isinstance(item, dict) or "problem" not in item or "solution" not in item:
            raise ValidationError("each improvement needs problem and solution")
        improvements.append((str(item["problem"]), str(item["solution"])))
    if has_issues and not improvements:
        log.warning("critique claimed issues but listed none; treating as clean")
        has_issues = False
    if not has_issues:
        improvements = []
    return CritiqueReport(has_issues=has_issues, improvements=tuple(improvements))


def critique(
    gateway: ModelGateway,
    section: StoryboardSection,
    rendered: RenderedSection,
    program: SectionProgram,
    grid: AnchorGrid | None,
) -> CritiqueReport:
    """One judge call (plus at most one format re-ask) against the exact code
    revision being critiqued; schema failures degrade to a clean report."""
    table = parse_placements(program, grid) if grid is not None else None
    template = load_prompt("refine")
    prompt = render_prompt(
        template,
        {
            "section.title": section.title,
            "'; '.join(section.lecture_lines)": "; ".join(section.lecture_lines),
        },
    )
    appendix = [occupancy_summary(table, grid)]
    if grid is not None and (grid.rows, grid.cols) != (6, 6):
        appendix.insert(0, "Anchor legend for this run:\n" + legend_text(grid))
    prompt = prompt + "\n\n" + "\n\n".join(appendix)
    attachment = Attachment(kind="video", path=str(rendered.video_path), media_note="section render")
    attempt_prompt = prompt
    for attempt in range(2):
        response = gateway.complete(
            ModelRequest(role_tag="critic", prompt=attempt_prompt, attachments=(attachment,))
        )
        try:
            return _normalize_report(parse_json_object(response.text))
        except ValidationError as exc:
            log.warning("critique attempt %d unparseable: %s", attempt + 1, exc)
            if attempt == 0:
                attempt_prompt = prompt + (
                    "\n\nREMINDER: Output MUST be exactly the JSON structure "
                    'shown above, with "layout", "has_issues", and "improvements".'
                )
    log.warning("critique failed schema after re-ask; refinement skipped for %s", section.id)
    return CritiqueReport(has_issues=False)


def _constraints_block() -> str:
    body = load_prompt("coder").body
    match = re.search(r"(?ms)^7\. MANDATORY CONSTRAINTS:.*\Z", body)
    return match.group(0).rstrip() if match else ""


def build_rewrite_prompt(program: SectionProgram, report: CritiqueReport) -> str:
    numbered = "\n".join(
        f"{index}. Problem: {problem}\n   Solution: {solution}"
        for index, (problem, solution) in enumerate(report.improvements, start=1)
    )
    return (
        "The following Manim scene program renders correctly but has layout "
        "problems. Rewrite it applying each solution below, changing nothing else.\n\n"
        "```python\n"
        f"{program.source_text}\n"
        "```\n\n"
        f"Layout fixes to apply:\n{numbered}\n\n"
        f"{_constraints_block()}\n\n"
        "Return the complete corrected program in a single ```python fence, keeping "
        "every '# === Animation for Lecture Line k ===' marker line."
    )


def apply_improvements(
    gateway: ModelGateway,
    program: SectionProgram,
    report: CritiqueReport,
) -> SectionProgram:
    """Rewrite call honoring the critique; marker structure is re-validated."""
    if not report.has_issues:
        return program
    prompt = build_rewrite_prompt(program, report)
    attempt_prompt = prompt
    reason = ""
    for attempt in range(2):
        response = gateway.complete(ModelRequest(role_tag="coder", prompt=attempt_prompt))
        code = extract_code_fence(response.text)
        if code is None:
            reason = "no code fence"
        else:
            try:
                blocks = parse_blocks(code, expected_count=len(program.blocks))
                return SectionProgram(
                    section_id=program.section_id,
                    source_text=code,
                    blocks=blocks,
                    revision=program.revision + 1,
                )
            except ValidationError as exc:
                reason = str(exc)
        if attempt == 0:
            attempt_prompt = prompt + (
                "\n\nREMINDER: keep the marker comment lines exactly as in the original."
            )
    raise ValidationError(f"rewrite failed validation after re-ask: {reason}")


class RefineLoop:
    """Per-section critique -> rewrite -> re-render loop, bounded by
    config.critique_rounds and stopping early on a clean report."""

    def __init__(
        self,
        gateway: ModelGateway,
        workspace: WorkspaceHandle,
        config: PipelineConfig,
        grid: AnchorGrid | None,
        asset_tokens: list[str],
        executor,
    ):
        self.gateway = gateway
        self.workspace = workspace
        self.config = config
        self.grid = grid
        self.asset_tokens = asset_tokens
        self.executor = executor

    def _repair(self, section, program, failure):
        def fix(level, context, fail, window):
            from .coder import build_fix_prompt

            response = self.gateway.complete(
                ModelRequest(role_tag="fixer", prompt=build_fix_prompt(context, fail, window))
            )
            code = extract_code_fence(response.text) or response.text
            return code.rstrip("\n"), response.prompt_tokens + response.completion_tokens

        def regenerate(note):
            regenerated = synthesize_section(
                self.gateway, section, self.asset_tokens, self.grid, regenerate_note=note
            )
            return regenerated, 0

        return scope_refine(
            program,
            failure,
            (self.config.repair_budget_line, self.config.repair_budget_block),
            execute=lambda p: self.executor(p),
            fix=fix,
            regenerate=regenerate,
            reset_on_new_error=self.config.reset_ladder_on_new_error,
        )

    def run(
        self,
        section: StoryboardSection,
        program: SectionProgram,
        rendered: RenderedSection,
    ) -> tuple[SectionProgram, RenderedSection, list[RefinementRound]]:
        rounds: list[RefinementRound] = []
        section_dir = self.workspace.section_dir(section.id)
        current_program, current_rendered = program, rendered
        for round_index in range(1, self.config.critique_rounds + 1):
            report = critique(self.gateway, section, current_rendered, current_program, self.grid)
            write_json(section_dir / f"critique_r{round_index}.json", report.to_dict())
            if not report.has_issues:
                rounds.append(
                    RefinementRound(
                        round_index, report, current_program.revision,
                        current_program.revision, rerendered=False,
                    )
                )
                break
            revision_before = current_program.revision
            try:
                candidate = apply_improvements(self.gateway, current_program, report)
            except ValidationError as exc:
                log.warning("refinement abandoned for %s: %s", section.id, exc)
                rounds.append(
                    RefinementRound(
                        round_index, report, revision_before, revision_before,
                        rerendered=False, abandoned=True,
                    )
                )
                break
            (section_dir / f"code_r{candidate.revision}.txt").write_text(
                candidate.source_text, encoding="utf-8"
            )
            failure, new_rendered = self.executor(candidate)
            if failure.status != "ok":
                outcome, candidate, failure, new_rendered = self._repair(
                    section, candidate, failure
                )
                if not outcome.success:
                    log.warning(
                        "refined %s failed the repair ladder; keeping revision %d",
                        section.id, revision_before,
                    )
                    rounds.append(
                        RefinementRound(
                            round_index, report, revision_before, revision_before,
                            rerendered=True, abandoned=True,
                        )
                    )
                    break
            current_program, current_rendered = candidate, new_rendered
            rounds.append(
                RefinementRound(
                    round_index, report, revision_before, current_program.revision,
                    rerendered=True,
                )
            )
        (section_dir / "code_final.txt").write_text(
            current_program.source_text, encoding="utf-8"
        )
        if self.grid is not None:
            table = parse_placements(current_program, self.grid)
            write_json(section_dir / "occupancy.json", table.to_dict(self.grid))
        return current_program, current_rendered, rounds
