"""Per-section program synthesis, lecture-block parsing, and scope-guided repair.

A section program is plain scene-program text whose animation code is split
into lecture-line blocks by marker comments. Repair walks a ladder of
growing context: the error line with one line of margin, then the enclosing
lecture block, then full re-synthesis; the ladder never sends more context
than the level requires.
"""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import FormatError, ValidationError, SectionFailure
from .gateway import ModelGateway, ModelRequest
from .grid import AnchorGrid, emit_base_template
from .prompts import load_prompt, render_prompt
from .workspace import StoryboardSection, Storyboard, PipelineConfig, write_json

log = logging.getLogger(__name__)

MARKER_RE = re.compile(r"^\s*# === Animation for Lecture Line (\d+) ===\s*$")
MARKER_TEMPLATE = "# === Animation for Lecture Line {k} ==="

LINE, BLOCK, GLOBAL, DEBUG = "LINE", "BLOCK", "GLOBAL", "DEBUG"


@dataclass(frozen=True)
class Block:
    lecture_index: int
    start_line: int  # 1-based, inclusive; the marker line itself
    end_line: int    # inclusive


@dataclass(frozen=True)
class SectionProgram:
    section_id: str
    source_text: str
    blocks: tuple[Block, ...]
    revision: int = 0

    def lines(self) -> list[str]:
        return self.source_text.split("\n")

    def block_for_line(self, lineno: int) -> int | None:
        for block in self.blocks:
            if block.start_line <= lineno <= block.end_line:
                return block.lecture_index
        return None

    def block_by_index(self, lecture_index: int) -> Block:
        for block in self.blocks:
            if block.lecture_index == lecture_index:
                return block
        raise ValidationError(f"no lecture block {lecture_index} in {self.section_id}")

    def span_text(self, start_line: int, end_line: int) -> str:
        return "\n".join(self.lines()[start_line - 1 : end_line])


def parse_blocks(source_text: str, expected_count: int | None = None) -> tuple[Block, ...]:
    """Locate the lecture-block spans.

    Each block runs from its marker line to the line before the next marker;
    the last block runs to the end of the text, so splitting and rejoining the
    interstitial prefix plus all block spans reproduces the input exactly.
    """
    lines = source_text.split("\n")
    markers: list[tuple[int, int]] = []  # (lecture_index, lineno)
    for lineno, line in enumerate(lines, start=1):
        match = MARKER_RE.match(line)
        if match:
            markers.append((int(match.group(1)), lineno))
    indices = [k for k, _ in markers]
    dupes = {k for k in indices if indices.count(k) > 1}
    if dupes:
        raise ValidationError(f"duplicate marker index {sorted(dupes)}")
    if indices != sorted(indices):
        raise ValidationError(f"marker indices out of order: {indices}")
    if expected_count is not None:
        expected = list(range(1, expected_count + 1))
        if indices != expected:
            missing = sorted(set(expected) - set(indices))
            extra = sorted(set(indices) - set(expected))
            parts = []
            if missing:
                parts.append(f"missing marker {', '.join(map(str, missing))}")
            if extra:
                parts.append(f"unexpected marker {', '.join(map(str, extra))}")
            raise ValidationError("; ".join(parts))
    blocks = []
    for pos, (lecture_index, lineno) in enumerate(markers):
        end = markers[pos + 1][1] - 1 if pos + 1 < len(markers) else len(lines)
        blocks.append(Block(lecture_index=lecture_index, start_line=lineno, end_line=end))
    return tuple(blocks)


def reassemble(source_text: str, blocks: tuple[Block, ...]) -> str:
    """Interstitial prefix + block spans; byte-identity check for the parser."""
    lines = source_text.split("\n")
    if not blocks:
        return source_text
    prefix = lines[: blocks[0].start_line - 1]
    pieces = ["\n".join(prefix)] if prefix else []
    for block in blocks:
        pieces.append("\n".join(lines[block.start_line - 1 : block.end_line]))
    return "\n".join(pieces)


def splice(program: SectionProgram, start_line: int, end_line: int, replacement: str) -> str:
    """Replace lines start..end (inclusive) with the replacement text.

    Rejects replacements that add or remove marker lines relative to the
    window they replace: scoped fixes must not restructure the block layout.
    """
    lines = program.lines()
    if not (1 <= start_line <= end_line <= len(lines)):
        raise ValidationError(f"splice window {start_line}..{end_line} out of range")
    old_markers = [m.group(1) for m in map(MARKER_RE.match, lines[start_line - 1 : end_line]) if m]
    new_lines = replacement.split("\n")
    new_markers = [m.group(1) for m in map(MARKER_RE.match, new_lines) if m]
    if old_markers != new_markers:
        raise ValidationError(
            f"replacement alters marker lines (had {old_markers}, got {new_markers})"
        )
    return "\n".join(lines[: start_line - 1] + new_lines + lines[end_line:])


# --- synthesis ---------------------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:python)?\n(.*?)```", re.S)


def extract_code_fence(text: str) -> str | None:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else None


def class_name_stem(section_id: str) -> str:
    return section_id.title().replace("_", "")


def _marker_reminder(count: int) -> str:
    markers = ", ".join(f"'{MARKER_TEMPLATE.format(k=k)}'" for k in range(1, count + 1))
    return (
        "\n\nREMINDER: Return the complete program in a single ```python fence. "
        f"It must contain exactly {count} marker comment lines, in order: {markers}."
    )


def build_coder_prompt(
    section: StoryboardSection,
    asset_tokens: list[str],
    base_class: str,
    regenerate_note: str = "",
) -> str:
    joined = "; ".join(section.animations)
    if asset_tokens:
        joined += "; Available assets: " + ", ".join(asset_tokens)
    template = load_prompt("coder")
    return render_prompt(
        template,
        {
            "regenerate_note": regenerate_note,
            "section.title": section.title,
            "section.lecture_lines": json.dumps(list(section.lecture_lines)),
            "'; '.join(section.animations)": joined,
            "base_class": base_class,
            "section.id.title().replace('_', '')": class_name_stem(section.id),
        },
    )


def synthesize_section(
    gateway: ModelGateway,
    section: StoryboardSection,
    asset_tokens: list[str],
    grid: AnchorGrid | None,
    regenerate_note: str = "",
    revision: int = 0,
) -> SectionProgram:
    """One coder call (plus at most one format re-ask) to a validated program."""
    base_class = emit_base_template(grid)
    prompt = build_coder_prompt(section, asset_tokens, base_class, regenerate_note)
    expected = len(section.lecture_lines)
    attempt_prompt = prompt
    last_error = ""
    for attempt in range(2):
        response = gateway.complete(ModelRequest(role_tag="coder", prompt=attempt_prompt))
        code = extract_code_fence(response.text)
        if code is None:
            last_error = "no code fence in response"
        else:
            try:
                blocks = parse_blocks(code, expected_count=expected)
                return SectionProgram(
                    section_id=section.id, source_text=code, blocks=blocks, revision=revision
                )
            except ValidationError as exc:
                last_error = str(exc)
        if attempt == 0:
            attempt_prompt = prompt + _marker_reminder(expected)
    raise FormatError(f"section {section.id}: marker mismatch after re-ask ({last_error})")


# --- repair -----------------------------------------------------------------------


@dataclass(frozen=True)
class RepairScope:
    level: str
    line_window: tuple[int, int] | None = None
    block_index: int | None = None


@dataclass(frozen=True)
class RepairAttempt:
    level: str
    tokens: int
    duration_seconds: float
    context_chars: int
    accepted: bool


@dataclass(frozen=True)
class RepairOutcome:
    success: bool
    attempts: tuple[RepairAttempt, ...]
    final_revision: int
    strategy: str = "scoperefine"

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "strategy": self.strategy,
            "final_revision": self.final_revision,
            "attempts": [
                {
                    "level": a.level,
                    "tokens": a.tokens,
                    "duration_seconds": a.duration_seconds,
                    "context_chars": a.context_chars,
                    "accepted": a.accepted,
                }
                for a in self.attempts
            ],
        }


def line_window(program: SectionProgram, error_line: int) -> tuple[int, int]:
    """The error line with one line of margin, clamped to its lecture block."""
    start, end = error_line - 1, error_line + 1
    block_index = program.block_for_line(error_line)
    if block_index is not None:
        block = program.block_by_index(block_index)
        start = max(start, block.start_line)
        end = min(end, block.end_line)
    return max(1, start), min(len(program.lines()), end)


def build_fix_prompt(context_text: str, failure, window: tuple[int, int]) -> str:
    return (
        "A Manim scene program failed to execute.\n"
        f"Error: {failure.exception_type}: {failure.message} "
        f"(line {failure.error_line} of the program)\n\n"
        f"Lines {window[0]}-{window[1]} of the program:\n"
        "```python\n"
        f"{context_text}\n"
        "```\n"
        "Return ONLY the corrected replacement for the shown lines, inside a "
        "```python fence. Keep any '# === Animation for Lecture Line k ===' "
        "marker lines exactly as they are."
    )


def _regenerate_note(failure) -> str:
    return (
        "NOTE: A previous version of this section failed to execute with "
        f"{failure.exception_type}: {failure.message}. Generate a fresh, correct program."
    )


def _ladder_phases(program: SectionProgram, error_line: int, k1: int, k2: int) -> list[RepairScope]:
    """LINE^K1 -> BLOCK^K2 -> GLOBAL, degrading when the error is outside blocks."""
    block_index = program.block_for_line(error_line)
    if block_index is None:
        preceding = [b for b in program.blocks if b.start_line <= error_line]
        if preceding:
            block_index = preceding[-1].lecture_index
            return [RepairScope(BLOCK, block_index=block_index)] * k2 + [RepairScope(GLOBAL)]
        return [RepairScope(GLOBAL)]
    return (
        [RepairScope(LINE, block_index=block_index)] * k1
        + [RepairScope(BLOCK, block_index=block_index)] * k2
        + [RepairScope(GLOBAL)]
    )


MAX_LADDER_RESTARTS = 3


def scope_refine(
    program: SectionProgram,
    failure,
    budgets: tuple[int, int],
    *,
    execute,
    fix,
    regenerate,
    reset_on_new_error: bool = True,
):
    """Run the repair ladder until the program executes or budgets exhaust.

    ``execute(program) -> (report, rendered)`` re-runs the program;
    ``fix(scope_level, context_text, failure, window) -> (replacement, tokens)``
    asks the fixer model for a scoped patch; ``regenerate(note) -> (program,
    tokens)`` performs full re-synthesis. Returns (outcome, program, report,
    rendered) where program is the last accepted revision.

    A genuinely new error line after an applied fix restarts the ladder (at
    most MAX_LADDER_RESTARTS times) when ``reset_on_new_error`` is set.
    """
    k1, k2 = budgets
    attempts: list[RepairAttempt] = []
    current = program
    current_failure = failure
    last_report = None
    last_rendered = None
    restarts = 0

    while True:
        phases = _ladder_phases(current, current_failure.error_line, k1, k2)
        restarted = False
        for scope in phases:
            started = time.monotonic()
            if scope.level == GLOBAL:
                try:
                    new_program, tokens = regenerate(_regenerate_note(current_failure))
                except (FormatError, ValidationError) as exc:
                    log.warning("global re-synthesis failed: %s", exc)
                    attempts.append(
                        RepairAttempt(GLOBAL, 0, time.monotonic() - started, 0, False)
                    )
                    return (
                        RepairOutcome(False, tuple(attempts), current.revision),
                        current,
                        last_report,
                        last_rendered,
                    )
                new_program = SectionProgram(
                    section_id=current.section_id,
                    source_text=new_program.source_text,
                    blocks=new_program.blocks,
                    revision=current.revision + 1,
                )
                context_chars = len(new_program.source_text)
                report, rendered = execute(new_program)
                attempts.append(
                    RepairAttempt(GLOBAL, tokens, time.monotonic() - started, context_chars, True)
                )
                current, last_report, last_rendered = new_program, report, rendered
                if report.status == "ok":
                    return (
                        RepairOutcome(True, tuple(attempts), current.revision),
                        current,
                        report,
                        rendered,
                    )
                # global is the last rung; a new error here does not restart
                current_failure = report
                continue

            if scope.level == LINE:
                window = line_window(current, current_failure.error_line)
            else:
                block = current.block_by_index(scope.block_index)
                window = (block.start_line, block.end_line)
            context = current.span_text(*window)
            replacement, tokens = fix(scope.level, context, current_failure, window)
            duration = time.monotonic() - started
            try:
                candidate_text = splice(current, window[0], window[1], replacement)
                candidate_blocks = parse_blocks(candidate_text, expected_count=len(current.blocks))
            except ValidationError as exc:
                log.warning("%s-level fix rejected: %s", scope.level, exc)
                attempts.append(RepairAttempt(scope.level, tokens, duration, len(context), False))
                continue
            candidate = SectionProgram(
                section_id=current.section_id,
                source_text=candidate_text,
                blocks=candidate_blocks,
                revision=current.revision + 1,
            )
            report, rendered = execute(candidate)
            attempts.append(
                RepairAttempt(scope.level, tokens, time.monotonic() - started, len(context), True)
            )
            current, last_report, last_rendered = candidate, report, rendered
            if report.status == "ok":
                return (
                    RepairOutcome(True, tuple(attempts), current.revision),
                    current,
                    report,
                    rendered,
                )
            new_failure = report
            if (
                reset_on_new_error
                and new_failure.error_line != current_failure.error_line
                and restarts < MAX_LADDER_RESTARTS
            ):
                restarts += 1
                current_failure = new_failure
                restarted = True
                break
            current_failure = new_failure
        if not restarted:
            return (
                RepairOutcome(False, tuple(attempts), current.revision),
                current,
                last_report,
                last_rendered,
            )


def repair_retry(program, failure, total_budget: int, *, execute, regenerate):
    """Baseline strategy: regenerate the whole section on any error, no scoping."""
    attempts: list[RepairAttempt] = []
    current, current_failure = program, failure
    last_report = last_rendered = None
    for _ in range(total_budget):
        started = time.monotonic()
        try:
            new_program, tokens = regenerate(_regenerate_note(current_failure))
        except (FormatError, ValidationError) as exc:
            log.warning("retry re-synthesis failed: %s", exc)
            attempts.append(RepairAttempt(GLOBAL, 0, time.monotonic() - started, 0, False))
            continue
        candidate = SectionProgram(
            section_id=current.section_id,
            source_text=new_program.source_text,
            blocks=new_program.blocks,
            revision=current.revision + 1,
        )
        report, rendered = execute(candidate)
        attempts.append(
            RepairAttempt(
                GLOBAL, tokens, time.monotonic() - started, len(candidate.source_text), True
            )
        )
        current, last_report, last_rendered = candidate, report, rendered
        if report.status == "ok":
            return (
                RepairOutcome(True, tuple(attempts), current.revision, strategy="retry"),
                current,
                report,
                rendered,
            )
        current_failure = report
    return (
        RepairOutcome(False, tuple(attempts), current.revision, strategy="retry"),
        current,
        last_report,
        last_rendered,
    )


def build_debug_prompt(program: SectionProgram, failure) -> str:
    return (
        "A Manim scene program failed to execute. Full program and error log follow.\n\n"
        "```python\n"
        f"{program.source_text}\n"
        "```\n\n"
        f"Error log:\n{failure.raw}\n\n"
        "Return the complete corrected program in a single ```python fence, keeping "
        "every '# === Animation for Lecture Line k ===' marker line."
    )


def repair_debug(program, failure, total_budget: int, *, execute, debug_fix):
    """Baseline strategy: feed the entire program plus the full error log to the
    fixer and swap in whatever complete program comes back."""
    attempts: list[RepairAttempt] = []
    current, current_failure = program, failure
    last_report = last_rendered = None
    for _ in range(total_budget):
        started = time.monotonic()
        prompt = build_debug_prompt(current, current_failure)
        replacement, tokens = debug_fix(prompt)
        duration = time.monotonic() - started
        try:
            blocks = parse_blocks(replacement, expected_count=len(current.blocks))
        except ValidationError as exc:
            log.warning("debug fix rejected: %s", exc)
            attempts.append(RepairAttempt(DEBUG, tokens, duration, len(prompt), False))
            continue
        candidate = SectionProgram(
            section_id=current.section_id,
            source_text=replacement,
            blocks=blocks,
            revision=current.revision + 1,
        )
        report, rendered = execute(candidate)
        attempts.append(RepairAttempt(DEBUG, tokens, time.monotonic() - started, len(prompt), True))
        current, last_report, last_rendered = candidate, report, rendered
        if report.status == "ok":
            return (
                RepairOutcome(True, tuple(attempts), current.revision, strategy="debug"),
                current,
                report,
                rendered,
            )
        current_failure = report
    return (
        RepairOutcome(False, tuple(attempts), current.revision, strategy="debug"),
        current,
        last_report,
        last_rendered,
    )


# --- section workers ------------------------------------------------------------------


@dataclass
class SectionResult:
    section_id: str
    program: SectionProgram | None = None
    rendered: object = None
    report: object = None
    repair: RepairOutcome | None = None
    failed: bool = False
    error: str = ""


class SectionBuilder:
    """Synthesize-execute-repair worker shared by parallel and serial runs."""

    def __init__(self, gateway, workspace, asset_tokens, grid, config: PipelineConfig):
        self.gateway = gateway
        self.workspace = workspace
        self.asset_tokens = asset_tokens
        self.grid = grid
        self.config = config

    def _fix(self, level: str, context: str, failure, window) -> tuple[str, int]:
        prompt = build_fix_prompt(context, failure, window)
        response = self.gateway.complete(ModelRequest(role_tag="fixer", prompt=prompt))
        code = extract_code_fence(response.text)
        if code is None:
            code = response.text
        return code.rstrip("\n"), response.prompt_tokens + response.completion_tokens

    def _debug_fix(self, prompt: str) -> tuple[str, int]:
        response = self.gateway.complete(ModelRequest(role_tag="fixer", prompt=prompt))
        code = extract_code_fence(response.text)
        if code is None:
            code = response.text
        return code.rstrip("\n"), response.prompt_tokens + response.completion_tokens

    def _regenerate(self, section: StoryboardSection, note: str):
        before = sum(self.gateway.usage())
        program = synthesize_section(
            self.gateway, section, self.asset_tokens, self.grid, regenerate_note=note
        )
        return program, sum(self.gateway.usage()) - before

    def _save_revision(self, program: SectionProgram) -> None:
        section_dir = self.workspace.section_dir(program.section_id)
        (section_dir / f"code_r{program.revision}.txt").write_text(
            program.source_text, encoding="utf-8"
        )

    def build(self, section: StoryboardSection, executor) -> SectionResult:
        result = SectionResult(section_id=section.id)
        try:
            program = synthesize_section(
                self.gateway, section, self.asset_tokens, self.grid
            )
        except (FormatError, ValidationError) as exc:
            result.failed = True
            result.error = str(exc)
            return result
        self._save_revision(program)

        def execute_and_save(candidate: SectionProgram):
            self._save_revision(candidate)
            return executor(candidate)

        report, rendered = executor(program)
        if report.status != "ok":
            budgets = (self.config.repair_budget_line, self.config.repair_budget_block)
            total_budget = budgets[0] + budgets[1] + 1
            if self.config.repair_strategy == "retry":
                outcome, program, report, rendered = repair_retry(
                    program,
                    report,
                    total_budget,
                    execute=execute_and_save,
                    regenerate=lambda note, s=section: self._regenerate(s, note),
                )
            elif self.config.repair_strategy == "debug":
                outcome, program, report, rendered = repair_debug(
                    program, report, total_budget,
                    execute=execute_and_save, debug_fix=self._debug_fix,
                )
            else:
                outcome, program, report, rendered = scope_refine(
                    program,
                    report,
                    budgets,
                    execute=execute_and_save,
                    fix=self._fix,
                    regenerate=lambda note, s=section: self._regenerate(s, note),
                    reset_on_new_error=self.config.reset_ladder_on_new_error,
                )
            result.repair = outcome
            section_dir = self.workspace.section_dir(section.id)
            write_json(section_dir / "repair_log.json", outcome.to_dict())
            if not outcome.success:
                result.program, result.report = program, report
                result.failed = True
                result.error = (
                    f"repair ladder exhausted ({report.status}: "
                    f"{getattr(report, 'message', '')})"
                    if report is not None
                    else "repair ladder exhausted"
                )
                return result
        result.program = program
        result.report = report
        result.rendered = rendered
        return result


def run_sections_parallel(
    gateway,
    workspace,
    storyboard: Storyboard,
    asset_tokens: list[str],
    grid: AnchorGrid | None,
    config: PipelineConfig,
    executor_factory,
) -> list[SectionResult]:
    """Build every section with a bounded worker pool.

    ``executor_factory(section_id)`` returns the callable that renders a
    program for that section. Results come back in storyboard order no matter
    the completion order, and one section's failure never aborts its
    siblings; failures surface afterwards as a SectionFailure carrying the
    full result list.
    """
    builder = SectionBuilder(gateway, workspace, asset_tokens, grid, config)
    results: dict[str, SectionResult] = {}

    def work(section: StoryboardSection) -> SectionResult:
        try:
            return builder.build(section, executor_factory(section.id))
        except Exception as exc:  # isolation: a crashing worker is a failed section
            log.exception("section %s crashed", section.id)
            return SectionResult(section_id=section.id, failed=True, error=str(exc))

    max_workers = max(1, config.max_parallel_sections)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(work, section): section.id for section in storyboard.sections}
        for future, section_id in futures.items():
            results[section_id] = future.result()

    ordered = [results[section_id] for section_id in storyboard.section_ids()]
    failed = [r.section_id for r in ordered if r.failed]
    if failed and not config.allow_partial:
        raise SectionFailure("code", failed, results=ordered)
    return ordered
