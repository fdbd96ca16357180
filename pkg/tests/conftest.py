from __future__ import annotations

import random

import pytest
from hypothesis import settings

from lectern.coder import SectionProgram, parse_blocks
from lectern.gateway import ModelResponse

settings.register_profile("ci", deadline=None, derandomize=True, max_examples=120)
settings.load_profile("ci")


class FakeGateway:
    """Gateway stand-in: routes complete() through a responder callable."""

    def __init__(self, responder):
        self.responder = responder
        self.requests = []
        self.prompt_tokens_total = 0
        self.completion_tokens_total = 0

    def usage(self):
        return self.prompt_tokens_total, self.completion_tokens_total

    def complete(self, request):
        self.requests.append(request)
        text = self.responder(request)
        response = ModelResponse(
            text=text,
            prompt_tokens=max(1, len(request.prompt) // 4),
            completion_tokens=max(1, len(text) // 4),
            provider_id="fake",
        )
        self.prompt_tokens_total += response.prompt_tokens
        self.completion_tokens_total += response.completion_tokens
        return response


@pytest.fixture
def fake_gateway_factory():
    return FakeGateway


def make_program(
    section_id: str = "section_1",
    block_bodies: list[list[str]] | None = None,
    prefix_lines: list[str] | None = None,
    revision: int = 0,
) -> SectionProgram:
    """Assemble a marker-structured program from block bodies."""
    if block_bodies is None:
        block_bodies = [["        self.wait(1)"] for _ in range(3)]
    if prefix_lines is None:
        prefix_lines = [
            "from manim import *",
            "",
            "class TeachingScene(Scene):",
            "    pass",
            "",
            f"class {section_id.title().replace('_', '')}Scene(TeachingScene):",
            "    def construct(self):",
            '        self.setup_layout("T", ["a", "b", "c"])',
            "",
        ]
    lines = list(prefix_lines)
    for index, body in enumerate(block_bodies, start=1):
        lines.append(f"        # === Animation for Lecture Line {index} ===")
        lines.extend(body)
    text = "\n".join(lines)
    return SectionProgram(
        section_id=section_id,
        source_text=text,
        blocks=parse_blocks(text, expected_count=len(block_bodies)),
        revision=revision,
    )


def random_marker_program(rng: random.Random) -> str:
    """Structurally valid random program text for round-trip checks."""
    lines = ["from manim import *", ""]
    for _ in range(rng.randint(0, 6)):
        lines.append("    " * rng.randint(0, 2) + f"x_{rng.randint(0, 99)} = {rng.random():.3f}")
    count = rng.randint(1, 5)
    for index in range(1, count + 1):
        lines.append(f"        # === Animation for Lecture Line {index} ===")
        for _ in range(rng.randint(0, 5)):
            lines.append("        " + rng.choice([
                "self.wait(1)",
                "self.play(FadeIn(obj))",
                f"value = {rng.randint(0, 1000)}",
                "",
            ]))
    text = "\n".join(lines)
    if rng.random() < 0.5:
        text += "\n"
    return text
