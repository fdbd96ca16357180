from __future__ import annotations

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

# The scene base class generated programs inherit; fixtures embed it so the
# harness tests stay independent of the pipeline package.
BASE_SCENE = '''\
class TeachingScene(Scene):
    def setup_layout(self, title_text, lecture_lines):
        self.camera.background_color = "#000000"
        self.title = Text(title_text, font_size=28, color=WHITE).to_edge(UP)
        self.add(self.title)

        lecture_texts = [Text(line, font_size=22, color=WHITE) for line in lecture_lines]
        self.lecture = VGroup(*lecture_texts).arrange(DOWN, aligned_edge=LEFT).scale(0.8)
        self.lecture.to_edge(LEFT, buff=0.2)
        self.add(self.lecture)

        self.grid = {}
        rows = ["A", "B", "C", "D", "E", "F"]
        cols = ["1", "2", "3", "4", "5", "6"]

        for i, row in enumerate(rows):
            for j, col in enumerate(cols):
                x = 0.5 + j * 1
                y = 2.2 - i * 1
                self.grid[f"{row}{col}"] = np.array([x, y, 0])

    def place_at_grid(self, mobject, grid_pos, scale_factor=1.0):
        mobject.scale(scale_factor)
        mobject.move_to(self.grid[grid_pos])
        return mobject

    def place_in_area(self, mobject, top_left, bottom_right, scale_factor=1.0):
        tl_pos = self.grid[top_left]
        br_pos = self.grid[bottom_right]
        center_x = (tl_pos[0] + br_pos[0]) / 2
        center_y = (tl_pos[1] + br_pos[1]) / 2
        center = np.array([center_x, center_y, 0])
        mobject.scale(scale_factor)
        mobject.move_to(center)
        return mobject
'''

VALID_SCENE = f'''\
from manim import *

{BASE_SCENE}

class DemoScene(TeachingScene):
    def construct(self):
        self.setup_layout("Demo Title", ["first line", "second line"])
        dot = Dot(color="#58C4DD")
        self.place_at_grid(dot, 'B2', scale_factor=1.0)
        self.play(FadeIn(dot))
        note = Text("a note", color="#FFD166")
        self.place_in_area(note, 'D2', 'E4', scale_factor=0.8)
        self.play(FadeIn(note))
        self.wait(1)
'''


def scene_with_error_at(line_number: int) -> str:
    """Scene whose undefined name sits exactly on the given 1-based line."""
    lines = [
        "from manim import *",
        "",
        "class TeachingScene(Scene):",
        "    def setup_layout(self, title_text, lecture_lines):",
        '        self.camera.background_color = "#000000"',
        "",
        "class DemoScene(TeachingScene):",
        "    def construct(self):",
        '        self.setup_layout("T", ["a"])',
    ]
    assert line_number > len(lines) + 1, "error line must land inside construct"
    while len(lines) < line_number - 1:
        lines.append("        pass  # padding")
    lines.append("        undefined_name")
    assert len(lines) == line_number
    lines.append("        self.wait(1)")
    return "\n".join(lines) + "\n"


INFINITE_LOOP_SCENE = '''\
from manim import *

class TeachingScene(Scene):
    def setup_layout(self, title_text, lecture_lines):
        self.camera.background_color = "#000000"

class SpinScene(TeachingScene):
    def construct(self):
        while True:
            pass
'''


def run_harness(scene_file: Path, out_dir: Path, timeout: float = 60.0,
                engine: str = "builtin", quality: str = "low"):
    """Invoke the harness exactly as the render driver does; returns
    (parsed_report, exit_code, raw_stdout, elapsed_seconds)."""
    started = time.monotonic()
    proc = subprocess.run(
        [
            sys.executable, "-m", "scene_harness",
            "--scene-file", str(scene_file),
            "--out-dir", str(out_dir),
            "--timeout", str(timeout),
            "--quality", quality,
            "--engine", engine,
        ],
        capture_output=True,
        text=True,
    )
    elapsed = time.monotonic() - started
    report = json.loads(proc.stdout)  # raises if stdout is not one JSON object
    return report, proc.returncode, proc.stdout, elapsed


@pytest.fixture
def write_scene(tmp_path):
    def _write(source: str, name: str = "scene.py") -> Path:
        path = tmp_path / name
        path.write_text(source, encoding="utf-8")
        return path

    return _write
