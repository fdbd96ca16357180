"""Topic -> outline -> storyboard planning calls with structural validation."""

from __future__ import annotations

import json
import logging
import math
import re

from .errors import FormatError, ValidationError
from .gateway import Attachment, ModelGateway, ModelRequest
from .prompts import load_prompt, render_prompt
from .workspace import (
    LearningTopic,
    Outline,
    Storyboard,
    StoryboardSection,
    WorkspaceHandle,
    NON_KEY_LECTURE_LINES,
)

log = logging.getLogger(__name__)

MAX_LECTURE_LINE_CHARS = 90

_REASK_SUFFIX = (
    "\n\nREMINDER: Your previous reply could not be used ({reason}). "
    "Respond with exactly the JSON object demanded above, with every required "
    "field present, and nothing else."
)


def parse_json_object(text: str) -> dict:
    """Parse the first top-level JSON object, tolerating code-fence wrappers."""
    candidates = [text.strip()]
    fence = re.search(r"```(?:json)?\s*\n(.*?)```", text, re.S)
    if fence:
        candidates.insert(0, fence.group(1).strip())
    for candidate in candidates:
        try:
            value = json.loads(candidate)
            if isinstance(value, dict):
                return value
        except json.JSONDecodeError:
            pass
    # last resort: first balanced top-level object
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_string:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        value = json.loads(text[start : pos + 1])
                        if isinstance(value, dict):
                            return value
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    raise ValidationError("no JSON object found in response")


def _format_duration(minutes: float) -> str:
    return str(int(minutes)) if float(minutes).is_integer() else str(minutes)


def generate_outline(
    gateway: ModelGateway,
    topic: LearningTopic,
    reference_image: Attachment | None = None,
) -> Outline:
    """One planner call (plus at most one format re-ask) to a valid outline."""
    template = load_prompt("outline")
    prompt = render_prompt(
        template,
        {
            "knowledge_point": topic.text,
            "duration": _format_duration(topic.target_duration_minutes),
        },
    )
    attachments = (reference_image,) if reference_image else ()
    attempt_prompt = prompt
    reason = ""
    for attempt in range(2):
        response = gateway.complete(
            ModelRequest(role_tag="planner", prompt=attempt_prompt, attachments=attachments)
        )
        try:
            data = parse_json_object(response.text)
            return Outline.from_dict(data)
        except ValidationError as exc:
            reason = str(exc)
            log.warning("outline attempt %d rejected: %s", attempt + 1, reason)
        if attempt == 0:
            attempt_prompt = prompt + _REASK_SUFFIX.format(reason=reason)
    raise FormatError(f"planner format error: {reason}", raw_text=response.text)


def _outline_payload(outline: Outline) -> str:
    return json.dumps(outline.to_dict(), indent=2, ensure_ascii=False)


def key_section_cap(section_count: int) -> int:
    return math.ceil(section_count / 3)


def _storyboard_from_response(data: dict, outline: Outline) -> Storyboard:
    raw_sections = data.get("sections")
    if not isinstance(raw_sections, list) or not raw_sections:
        raise ValidationError("storyboard response lacks a sections list")
    expected_ids = [s.id for s in outline.sections]
    got_ids = [str(s.get("id", "")) for s in raw_sections]
    if got_ids != expected_ids:
        raise ValidationError(
            f"storyboard ids {got_ids} do not match outline ids {expected_ids}"
        )

    # Key sections: explicit flag wins, else any section beyond the non-key
    # length; at most ceil(n/3) stay key, earliest ids win the tie.
    marked = []
    for raw in raw_sections:
        lines = raw.get("lecture_lines") or []
        explicit = bool(raw.get("is_key", False))
        marked.append(explicit or len(lines) > NON_KEY_LECTURE_LINES)
    cap = key_section_cap(len(raw_sections))
    kept = 0
    is_key_flags = []
    for flag in marked:
        if flag and kept < cap:
            is_key_flags.append(True)
            kept += 1
        else:
            is_key_flags.append(False)

    sections = []
    for raw, is_key in zip(raw_sections, is_key_flags):
        lines = tuple(str(x) for x in (raw.get("lecture_lines") or []))
        too_long = [line for line in lines if len(line) > MAX_LECTURE_LINE_CHARS]
        if too_long:
            raise ValidationError(
                f"section {raw.get('id')}: lecture line exceeds "
                f"{MAX_LECTURE_LINE_CHARS} characters: {too_long[0]!r}"
            )
        sections.append(
            StoryboardSection(
                id=str(raw.get("id", "")),
                title=str(raw.get("title", "")),
                lecture_lines=lines,
                animations=tuple(str(x) for x in (raw.get("animations") or [])),
                is_key=is_key,
            )
        )
    return Storyboard(sections=tuple(sections))


def generate_storyboard(gateway: ModelGateway, outline: Outline) -> Storyboard:
    """Convert the outline into a storyboard; re-ask once on any violation."""
    template = load_prompt("storyboard")
    prompt = (
        render_prompt(template, {})
        + "\n\nTeaching outline to convert:\n"
        + _outline_payload(outline)
    )
    attempt_prompt = prompt
    reason = ""
    for attempt in range(2):
        response = gateway.complete(ModelRequest(role_tag="planner", prompt=attempt_prompt))
        try:
            data = parse_json_object(response.text)
            return _storyboard_from_response(data, outline)
        except ValidationError as exc:
            reason = str(exc)
            log.warning("storyboard attempt %d rejected: %s", attempt + 1, reason)
        if attempt == 0:
            attempt_prompt = prompt + _REASK_SUFFIX.format(reason=reason)
    raise FormatError(f"storyboard format error: {reason}", raw_text=response.text)


def plan(
    gateway: ModelGateway,
    workspace: WorkspaceHandle,
    reference_image: Attachment | None = None,
) -> tuple[Outline, Storyboard]:
    """Outline then storyboard, persisted into the workspace."""
    outline = generate_outline(gateway, workspace.topic, reference_image)
    workspace.save_outline(outline)
    storyboard = generate_storyboard(gateway, outline)
    workspace.save_storyboard(storyboard)
    return outline, storyboard
