"""Prompt template registry: loading, placeholder validation, and assembly.

Template bodies are shipped as plain-text files under ``templates/`` and are
loaded byte-identically: assembly substitutes named ``{placeholder}`` spans
and unescapes ``{{``/``}}``, leaving every other brace untouched (the bodies
contain JSON examples and code snippets with braces of their own).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .errors import ValidationError

TEMPLATE_NAMES = (
    "outline",
    "storyboard",
    "asset",
    "coder",
    "vis",
    "refine",
    "aesth",
    "unlearn",
    "learn",
)

# Placeholders each assembling operation substitutes; validated at load time.
TEMPLATE_PLACEHOLDERS: dict[str, tuple[str, ...]] = {
    "outline": ("knowledge_point", "duration"),
    "storyboard": (),
    "asset": ("storyboard_data",),
    "coder": (
        "regenerate_note",
        "section.title",
        "section.lecture_lines",
        "'; '.join(section.animations)",
        "base_class",
        "section.id.title().replace('_', '')",
    ),
    "vis": (),
    "refine": ("section.title", "'; '.join(section.lecture_lines)"),
    "aesth": (),
    "unlearn": ("concept",),
    "learn": ("concept",),
}

_PLACEHOLDER_RE = re.compile(r"\{\{|\}\}|\{([^{}\n]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    def placeholders(self) -> set[str]:
        """Single-brace placeholder expressions present in the body."""
        found = set()
        for match in _PLACEHOLDER_RE.finditer(self.body):
            if match.group(1) is not None:
                found.add(match.group(1))
        return found


def load_prompt(name: str) -> PromptTemplate:
    """Load a shipped template by name, validating its placeholder inventory."""
    if name not in TEMPLATE_NAMES:
        raise ValidationError(f"unknown prompt template '{name}'")
    path = resources.files("lectern").joinpath("templates", f"{name}.txt")
    try:
        body = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"prompt template file missing for '{name}'")
    template = PromptTemplate(name=name, body=body)
    required = set(TEMPLATE_PLACEHOLDERS[name])
    missing = required - template.placeholders()
    if missing:
        raise ValidationError(
            f"template '{name}' lacks placeholders referenced by its assembler: {sorted(missing)}"
        )
    return template


def load_all_prompts() -> dict[str, PromptTemplate]:
    """Fail-fast completeness check: every registered template must load."""
    return {name: load_prompt(name) for name in TEMPLATE_NAMES}


def render_prompt(template: PromptTemplate, mapping: dict[str, str]) -> str:
    """Substitute ``mapping`` into the body in a single pass.

    Substituted values are inserted verbatim and never rescanned, so braces
    inside values (JSON, generated code) survive. Placeholder expressions not
    present in ``mapping`` are left as-is. Raises if a mapping key never
    matches the body, which would silently drop content otherwise.
    """
    matched: set[str] = set()

    def _sub(match: re.Match[str]) -> str:
        token = match.group(0)
        if token == "{{":
            return "{"
        if token == "}}":
            return "}"
        key = match.group(1)
        if key in mapping:
            matched.add(key)
            return mapping[key]
        return token

    rendered = _PLACEHOLDER_RE.sub(_sub, template.body)
    unmatched = set(mapping) - matched
    if unmatched:
        raise ValidationError(
            f"template '{template.name}' has no placeholder for: {sorted(unmatched)}"
        )
    return rendered
