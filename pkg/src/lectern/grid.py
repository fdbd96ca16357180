"""Visual-anchor grid: exact coordinate math, scene base-template emission,
placement-call parsing, occupancy bookkeeping, and layout-issue detection.

Anchor labels are row letters (top to bottom) plus column numbers (left to
right). The 6x6 grid maps label (i, j) to scene coordinates
(0.5 + j, 2.2 - i, 0); other grid sizes span the same rectangle
x in [0.5, 5.5], y in [2.2, -2.8] uniformly, and the 1x1 variant collapses to
the midpoint (3.0, -0.3, 0). Coordinates are computed with rational
arithmetic so every float equals the exact decimal value with no
accumulation drift.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ValidationError

X_START = Fraction(1, 2)      # 0.5
Y_START = Fraction(11, 5)     # 2.2
SPAN = Fraction(5, 1)         # both axes span 5 scene units
X_CENTER = Fraction(3, 1)     # midpoint of [0.5, 5.5]
Y_CENTER = Fraction(-3, 10)   # midpoint of [2.2, -2.8]

MARKER_PREFIX = "# === Animation for Lecture Line "

_LABEL_RE = re.compile(r"^([A-L])(\d{1,2})$")


@dataclass(frozen=True)
class AnchorGrid:
    rows: int
    cols: int

    def __post_init__(self):
        if not (1 <= self.rows <= 12 and 1 <= self.cols <= 12):
            raise ValidationError("grid dimensions must be within 1..12")

    @property
    def row_letters(self) -> list[str]:
        return list(string.ascii_uppercase[: self.rows])

    @property
    def col_numbers(self) -> list[str]:
        return [str(j + 1) for j in range(self.cols)]

    def labels(self) -> list[str]:
        return [r + c for r in self.row_letters for c in self.col_numbers]

    def label_at(self, i: int, j: int) -> str:
        return self.row_letters[i] + str(j + 1)

    def indices(self, label: str) -> tuple[int, int]:
        match = _LABEL_RE.match(label)
        if not match:
            raise ValidationError(f"malformed anchor label {label!r}")
        i = ord(match.group(1)) - ord("A")
        j = int(match.group(2)) - 1
        if i >= self.rows or j >= self.cols or j < 0:
            raise ValidationError(f"label {label!r} outside {self.rows}x{self.cols} grid")
        return i, j

    def _spacing(self, count: int) -> Fraction:
        return SPAN / (count - 1) if count > 1 else Fraction(0)

    def exact_coordinate(self, label: str) -> tuple[Fraction, Fraction]:
        i, j = self.indices(label)
        if self.cols > 1:
            x = X_START + j * self._spacing(self.cols)
        else:
            x = X_CENTER
        if self.rows > 1:
            y = Y_START - i * self._spacing(self.rows)
        else:
            y = Y_CENTER
        return x, y


def coordinate(grid: AnchorGrid, label: str) -> tuple[float, float, float]:
    x, y = grid.exact_coordinate(label)
    return (float(x), float(y), 0.0)


def region_center(grid: AnchorGrid, top_left: str, bottom_right: str) -> tuple[float, float, float]:
    """Component-wise midpoint of the two corner anchors."""
    _check_rectangle(grid, top_left, bottom_right)
    x1, y1 = grid.exact_coordinate(top_left)
    x2, y2 = grid.exact_coordinate(bottom_right)
    return (float((x1 + x2) / 2), float((y1 + y2) / 2), 0.0)


def _check_rectangle(grid: AnchorGrid, top_left: str, bottom_right: str) -> None:
    i1, j1 = grid.indices(top_left)
    i2, j2 = grid.indices(bottom_right)
    if i1 > i2 or j1 > j2:
        raise ValidationError(
            f"inverted region: {top_left} is not above-left of {bottom_right}"
        )


def region_labels(grid: AnchorGrid, top_left: str, bottom_right: str) -> set[str]:
    """All labels covered by the rectangle, corners inclusive."""
    _check_rectangle(grid, top_left, bottom_right)
    i1, j1 = grid.indices(top_left)
    i2, j2 = grid.indices(bottom_right)
    return {grid.label_at(i, j) for i in range(i1, i2 + 1) for j in range(j1, j2 + 1)}


# --- base-template emission ---------------------------------------------------

_BASE_TEMPLATE = '''\
class TeachingScene(Scene):
    def setup_layout(self, title_text, lecture_lines):
        # BASE
        self.camera.background_color = "#000000"
        self.title = Text(title_text, font_size=28, color=WHITE).to_edge(UP)
        self.add(self.title)

        # Left-side lecture content (bullets with "-")
        lecture_texts = [Text(line, font_size=22, color=WHITE) for line in lecture_lines]
        self.lecture = VGroup(*lecture_texts).arrange(DOWN, aligned_edge=LEFT).scale(0.8)
        self.lecture.to_edge(LEFT, buff=0.2)
        self.add(self.lecture)
{grid_block}'''

_GRID_BLOCK = '''
        # Define fine-grained animation grid (4x4 grid on right side)
        self.grid = {{}}
        rows = {rows_list}  # Top to bottom
        cols = {cols_list}  # Left to right

        for i, row in enumerate(rows):
            for j, col in enumerate(cols):
                x = {x_expr}
                y = {y_expr}
                self.grid[f"{{row}}{{col}}"] = np.array([x, y, 0])

    def place_at_grid(self, mobject, grid_pos, scale_factor=1.0):
        mobject.scale(scale_factor)
        mobject.move_to(self.grid[grid_pos])
        return mobject

    def place_in_area(self, mobject, top_left, bottom_right, scale_factor=1.0):
        tl_pos = self.grid[top_left]
        br_pos = self.grid[bottom_right]
        {empty}
        # Calculate center of the area
        center_x = (tl_pos[0] + br_pos[0]) / 2
        center_y = (tl_pos[1] + br_pos[1]) / 2
        center = np.array([center_x, center_y, 0])
        {empty}
        mobject.scale(scale_factor)
        mobject.move_to(center)
        return mobject
'''


def _spacing_expr(var: str, count: int, start: str, sign: str) -> str:
    # Spelled so corner evaluation is float-exact: (k * 5.0) / den hits the
    # span endpoint with no rounding because k * 5.0 is a multiple of den.
    if count == 1:
        center = "3.0" if var == "j" else "-0.3"
        return f"{center} {sign} {var} * 0"
    den = count - 1
    if den == 5:
        spacing = "1"
    elif den == 1:
        spacing = "5.0"
    else:
        spacing = f"5.0 / {den}"
    return f"{start} {sign} {var} * {spacing}"


def emit_base_template(grid: AnchorGrid | None) -> str:
    """Scene base class the generated programs inherit.

    For the 6x6 grid the output is byte-identical to the reference listing;
    other sizes substitute the generalized row/column lists and spacing. With
    ``grid=None`` the anchor dictionary and placement helpers are omitted
    entirely (placement parsing is disabled in that mode).
    """
    if grid is None:
        return _BASE_TEMPLATE.format(grid_block="")
    rows_list = "[" + ", ".join(f'"{r}"' for r in grid.row_letters) + "]"
    cols_list = "[" + ", ".join(f'"{c}"' for c in grid.col_numbers) + "]"
    block = _GRID_BLOCK.format(
        rows_list=rows_list,
        cols_list=cols_list,
        x_expr=_spacing_expr("j", grid.cols, "0.5", "+"),
        y_expr=_spacing_expr("i", grid.rows, "2.2", "-"),
        empty="",
    )
    return _BASE_TEMPLATE.format(grid_block=block)


def legend_text(grid: AnchorGrid) -> str:
    """Anchor legend shown to models; 6x6 uses the shipped prompt verbatim."""
    if grid.rows == 6 and grid.cols == 6:
        from .prompts import load_prompt

        return load_prompt("vis").body
    lines = [f"Visual Anchor System ({grid.rows}*{grid.cols} grid, right side only):", "```"]
    prefix = "lecture |  "
    pad = " " * (len(prefix) - 3) + "|  "
    for i, row in enumerate(grid.row_letters):
        cells = "  ".join(row + c for c in grid.col_numbers)
        lines.append((prefix if i == 0 else pad) + cells)
    lines.append("```")
    lines.append("- Point positioning example: self.place_at_grid(obj, 'B2', scale_factor=0.8)")
    lines.append("- Area positioning example: self.place_in_area(obj, 'A1', 'C3', scale_factor=0.7)")
    return "\n".join(lines) + "\n"


# --- placement parsing ----------------------------------------------------------

MAX_SCALE_FACTOR = 3.0


@dataclass(frozen=True)
class Placement:
    element_id: str
    kind: str  # "point" | "region" | "dynamic"
    anchors: tuple[str, ...]  # one label for point, (top_left, bottom_right) for region
    scale_factor: float
    code_lines: tuple[int, int]
    lecture_block: int | None

    def covered_labels(self, grid: AnchorGrid) -> set[str]:
        if self.kind == "point":
            return {self.anchors[0]}
        if self.kind == "region":
            return region_labels(grid, self.anchors[0], self.anchors[1])
        return set()


@dataclass
class OccupancyTable:
    section_id: str
    placements: list[Placement] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def cell_usage(self, grid: AnchorGrid) -> dict[str, int]:
        usage = {label: 0 for label in grid.labels()}
        for placement in self.placements:
            for label in placement.covered_labels(grid):
                usage[label] += 1
        return usage

    def to_dict(self, grid: AnchorGrid) -> dict:
        return {
            "section_id": self.section_id,
            "placements": [
                {
                    "element_id": p.element_id,
                    "kind": p.kind,
                    "anchors": list(p.anchors),
                    "scale_factor": p.scale_factor,
                    "code_lines": list(p.code_lines),
                    "lecture_block": p.lecture_block,
                }
                for p in self.placements
            ],
            "cell_usage": self.cell_usage(grid),
            "warnings": self.warnings,
        }


_CALL_RE = re.compile(r"self\s*\.\s*(place_at_grid|place_in_area)\s*\(")
_STRING_LITERAL_RE = re.compile(r"""^\s*(['"])([^'"]*)\1\s*$""")


def _split_args(text: str, start: int) -> tuple[list[str], int] | None:
    """Split a call's argument list honoring nesting and string quoting.

    ``start`` indexes the opening parenthesis; returns (args, end_index) or
    None when the call never closes on this line run.
    """
    depth = 0
    args: list[str] = []
    current: list[str] = []
    quote: str | None = None
    k = start
    while k < len(text):
        ch = text[k]
        if quote:
            current.append(ch)
            if ch == quote and text[k - 1] != "\\":
                quote = None
        elif ch in "'\"":
            quote = ch
            current.append(ch)
        elif ch in "([{":
            depth += 1
            if depth > 1:
                current.append(ch)
        elif ch in ")]}":
            depth -= 1
            if depth == 0:
                args.append("".join(current).strip())
                return args, k
            current.append(ch)
        elif ch == "," and depth == 1:
            args.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
        k += 1
    return None


def _literal_label(arg: str) -> str | None:
    match = _STRING_LITERAL_RE.match(arg)
    return match.group(2) if match else None


def _parse_scale(args: list[str], positional_index: int) -> float | None:
    """scale_factor given positionally or as keyword; None means default 1.0."""
    for arg in args:
        if arg.startswith("scale_factor"):
            _, _, value = arg.partition("=")
            try:
                return float(value.strip())
            except ValueError:
                return None
    if len(args) > positional_index:
        candidate = args[positional_index]
        if "=" not in candidate:
            try:
                return float(candidate)
            except ValueError:
                return None
    return 1.0


def parse_placements(program, grid: AnchorGrid) -> OccupancyTable:
    """Extract every place_at_grid / place_in_area call from a section program.

    Non-literal label arguments become "dynamic" placements excluded from
    conflict math; malformed calls (wrong arity, bad scale) are skipped with a
    warning attached to the table.
    """
    table = OccupancyTable(section_id=program.section_id)
    lines = program.source_text.split("\n")
    for lineno, line in enumerate(lines, start=1):
        for match in _CALL_RE.finditer(line):
            func = match.group(1)
            parsed = _split_args(line, match.end() - 1)
            if parsed is None:
                table.warnings.append(f"line {lineno}: unterminated {func} call skipped")
                continue
            args, _ = parsed
            block = program.block_for_line(lineno)
            min_args = 2 if func == "place_at_grid" else 3
            positional = [a for a in args if "=" not in a or not a.split("=")[0].strip().isidentifier()]
            if len(positional) < min_args and len(args) < min_args:
                table.warnings.append(f"line {lineno}: {func} arity {len(args)} too small, skipped")
                continue
            element = args[0] if args else ""
            if func == "place_at_grid":
                label = _literal_label(args[1]) if len(args) > 1 else None
                scale = _parse_scale(args, 2)
                if scale is None or not (0 < scale <= MAX_SCALE_FACTOR):
                    table.warnings.append(f"line {lineno}: bad scale_factor in {func}, skipped")
                    continue
                if label is None or not _valid_label(grid, label):
                    table.placements.append(
                        Placement(element, "dynamic", (), scale, (lineno, lineno), block)
                    )
                    continue
                table.placements.append(
                    Placement(element, "point", (label,), scale, (lineno, lineno), block)
                )
            else:
                tl = _literal_label(args[1]) if len(args) > 1 else None
                br = _literal_label(args[2]) if len(args) > 2 else None
                scale = _parse_scale(args, 3)
                if scale is None or not (0 < scale <= MAX_SCALE_FACTOR):
                    table.warnings.append(f"line {lineno}: bad scale_factor in {func}, skipped")
                    continue
                if tl is None or br is None or not (_valid_label(grid, tl) and _valid_label(grid, br)):
                    table.placements.append(
                        Placement(element, "dynamic", (), scale, (lineno, lineno), block)
                    )
                    continue
                try:
                    _check_rectangle(grid, tl, br)
                except ValidationError:
                    table.warnings.append(f"line {lineno}: inverted region {tl}..{br}, skipped")
                    continue
                table.placements.append(
                    Placement(element, "region", (tl, br), scale, (lineno, lineno), block)
                )
    return table


def _valid_label(grid: AnchorGrid, label: str) -> bool:
    try:
        grid.indices(label)
        return True
    except ValidationError:
        return False


# --- issue detection -------------------------------------------------------------

UNUSED_THRESHOLD = 0.5
FORBIDDEN_POSITIONING = (".to_edge(", ".move_to(")


@dataclass(frozen=True)
class LayoutIssue:
    kind: str  # OVERLAP | OCCLUSION | UNUSED
    detail: str
    elements: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()


def detect_issues(table: OccupancyTable, grid: AnchorGrid, program=None) -> list[LayoutIssue]:
    """Static layout findings from the occupancy table.

    Overlap means two placements in the same lecture block share covered
    anchors; elements on different blocks may legally reuse cells (they fade
    between lines). Forbidden absolute-positioning calls inside animation
    blocks count as occlusion risks. An unused-space issue fires when more
    than half the cells see no placement at all.
    """
    issues: list[LayoutIssue] = []
    static = [p for p in table.placements if p.kind != "dynamic"]
    for a_index in range(len(static)):
        for b_index in range(a_index + 1, len(static)):
            a, b = static[a_index], static[b_index]
            if a.lecture_block is None or a.lecture_block != b.lecture_block:
                continue
            shared = a.covered_labels(grid) & b.covered_labels(grid)
            if shared:
                issues.append(
                    LayoutIssue(
                        kind="OVERLAP",
                        detail=(
                            f"{a.element_id} and {b.element_id} share "
                            f"{', '.join(sorted(shared))} in lecture block {a.lecture_block}"
                        ),
                        elements=(a.element_id, b.element_id),
                        labels=tuple(sorted(shared)),
                    )
                )
    if program is not None:
        for lineno, line in enumerate(program.source_text.split("\n"), start=1):
            if program.block_for_line(lineno) is None:
                continue
            for token in FORBIDDEN_POSITIONING:
                if token in line:
                    issues.append(
                        LayoutIssue(
                            kind="OCCLUSION",
                            detail=f"line {lineno} uses forbidden positioning call {token.strip('.( ')}",
                        )
                    )
    usage = table.cell_usage(grid)
    unused = sum(1 for count in usage.values() if count == 0)
    if usage and unused / len(usage) > UNUSED_THRESHOLD:
        issues.append(
            LayoutIssue(
                kind="UNUSED",
                detail=f"{unused} of {len(usage)} cells unused ({100.0 * unused / len(usage):.0f}%)",
            )
        )
    return issues
