"""Domain types, pipeline configuration, and the on-disk workspace layout.

A workspace is a directory per topic slug holding every stage's artifacts so
any stage can be re-run from persisted inputs:

    <root>/<slug>/
        config.json, outline.json, storyboard.json, metrics.json
        assets/            icon files + manifest.json
        sections/<id>/     code revisions, occupancy, critiques, renders
        videos/            final.mp4
        eval/              quiz.json, aesthetics.json, teachquiz.json
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ValidationError, WorkspaceExistsError

_SLUG_RE = re.compile(r"^[a-z0-9-]+$")
_SECTION_ID_RE = re.compile(r"^section_(\d+)$")

SUBDIRS = ("assets", "sections", "videos", "eval")


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    if not slug:
        raise ValidationError(f"cannot derive slug from topic text {text!r}")
    return slug


@dataclass(frozen=True)
class LearningTopic:
    text: str
    slug: str
    target_duration_minutes: float = 3.0

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("topic text must be non-empty")
        if not _SLUG_RE.match(self.slug):
            raise ValidationError(f"slug {self.slug!r} must match [a-z0-9-]+")
        if self.target_duration_minutes <= 0:
            raise ValidationError("target_duration_minutes must be > 0")

    @classmethod
    def from_text(cls, text: str, target_duration_minutes: float = 3.0) -> "LearningTopic":
        return cls(text=text, slug=slugify(text), target_duration_minutes=target_duration_minutes)


@dataclass(frozen=True)
class OutlineSection:
    id: str
    title: str
    content: str
    example: str

    def __post_init__(self):
        for name in ("id", "title", "content", "example"):
            if not str(getattr(self, name)).strip():
                raise ValidationError(f"outline section field '{name}' must be non-empty")


@dataclass(frozen=True)
class Outline:
    topic: str
    target_audience: str
    sections: tuple[OutlineSection, ...]

    def __post_init__(self):
        if not self.sections:
            raise ValidationError("outline must contain at least one section")
        seen = set()
        for k, section in enumerate(self.sections, start=1):
            match = _SECTION_ID_RE.match(section.id)
            if not match:
                raise ValidationError(f"section id {section.id!r} not of form section_<k>")
            if section.id in seen:
                raise ValidationError(f"duplicate section id {section.id!r}")
            seen.add(section.id)
            if int(match.group(1)) != k:
                raise ValidationError(
                    f"section ids must be consecutive from section_1; got {section.id!r} at position {k}"
                )

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "target_audience": self.target_audience,
            "sections": [asdict(s) for s in self.sections],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Outline":
        try:
            sections = tuple(
                OutlineSection(
                    id=str(s["id"]),
                    title=str(s["title"]),
                    content=str(s["content"]),
                    example=str(s["example"]),
                )
                for s in data["sections"]
            )
            return cls(
                topic=str(data["topic"]),
                target_audience=str(data["target_audience"]),
                sections=sections,
            )
        except KeyError as exc:
            raise ValidationError(f"outline missing field {exc}")


MAX_LECTURE_LINES = 5
NON_KEY_LECTURE_LINES = 3


@dataclass(frozen=True)
class StoryboardSection:
    id: str
    title: str
    lecture_lines: tuple[str, ...]
    animations: tuple[str, ...]
    is_key: bool = False

    def __post_init__(self):
        if len(self.lecture_lines) != len(self.animations):
            raise ValidationError(
                f"section {self.id}: {len(self.lecture_lines)} lecture lines paired with "
                f"{len(self.animations)} animations"
            )
        n = len(self.lecture_lines)
        if not 1 <= n <= MAX_LECTURE_LINES:
            raise ValidationError(f"section {self.id}: lecture line count {n} outside 1..{MAX_LECTURE_LINES}")
        if not self.is_key and n != NON_KEY_LECTURE_LINES:
            raise ValidationError(
                f"section {self.id}: non-key sections need exactly {NON_KEY_LECTURE_LINES} lines, got {n}"
            )


@dataclass(frozen=True)
class Storyboard:
    sections: tuple[StoryboardSection, ...]

    def section_ids(self) -> list[str]:
        return [s.id for s in self.sections]

    def to_dict(self) -> dict:
        return {
            "sections": [
                {
                    "id": s.id,
                    "title": s.title,
                    "lecture_lines": list(s.lecture_lines),
                    "animations": list(s.animations),
                    "is_key": s.is_key,
                }
                for s in self.sections
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Storyboard":
        try:
            sections = tuple(
                StoryboardSection(
                    id=str(s["id"]),
                    title=str(s["title"]),
                    lecture_lines=tuple(str(x) for x in s["lecture_lines"]),
                    animations=tuple(str(x) for x in s["animations"]),
                    is_key=bool(s.get("is_key", False)),
                )
                for s in data["sections"]
            )
        except KeyError as exc:
            raise ValidationError(f"storyboard missing field {exc}")
        return cls(sections=sections)


REPAIR_STRATEGIES = ("scoperefine", "retry", "debug")


@dataclass
class PipelineConfig:
    grid_rows: int = 6
    grid_cols: int = 6
    max_parallel_sections: int = 4
    repair_budget_line: int = 2
    repair_budget_block: int = 2
    critique_rounds: int = 1
    render_timeout_seconds: float = 600.0
    assets_enabled: bool = True
    critic_enabled: bool = True
    grid_enabled: bool = True
    repair_strategy: str = "scoperefine"
    reset_ladder_on_new_error: bool = True
    render_workers: int = 2
    allow_partial: bool = False

    def __post_init__(self):
        if not (1 <= self.grid_rows <= 12 and 1 <= self.grid_cols <= 12):
            raise ValidationError("grid dimensions must be within 1..12")
        if self.repair_budget_line < 0 or self.repair_budget_block < 0:
            raise ValidationError("repair budgets must be >= 0")
        if self.critique_rounds < 0:
            raise ValidationError("critique_rounds must be >= 0")
        if self.max_parallel_sections < 1:
            raise ValidationError("max_parallel_sections must be >= 1")
        if self.render_timeout_seconds <= 0:
            raise ValidationError("render_timeout_seconds must be > 0")
        if self.repair_strategy not in REPAIR_STRATEGIES:
            raise ValidationError(f"repair_strategy must be one of {REPAIR_STRATEGIES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


def dump_json(data) -> str:
    """Canonical JSON form: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Path, data) -> None:
    path.write_text(dump_json(data), encoding="utf-8")


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


class WorkspaceHandle:
    """Paths and serialized-artifact accessors for one topic's run directory.

    Shareable across section workers; per-section subdirectories are owned by
    exactly one worker at a time, and metrics appends go through a single
    locked writer (see metrics.MetricsLog).
    """

    def __init__(self, root: Path, topic: LearningTopic, config: PipelineConfig):
        self.root = Path(root)
        self.topic = topic
        self.config = config
        self._section_lock = threading.Lock()

    # -- layout ------------------------------------------------------------

    @property
    def assets_dir(self) -> Path:
        return self.root / "assets"

    @property
    def sections_dir(self) -> Path:
        return self.root / "sections"

    @property
    def videos_dir(self) -> Path:
        return self.root / "videos"

    @property
    def eval_dir(self) -> Path:
        return self.root / "eval"

    def section_dir(self, section_id: str) -> Path:
        path = self.sections_dir / section_id
        with self._section_lock:
            path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def outline_path(self) -> Path:
        return self.root / "outline.json"

    @property
    def storyboard_path(self) -> Path:
        return self.root / "storyboard.json"

    @property
    def metrics_path(self) -> Path:
        return self.root / "metrics.json"

    @property
    def final_video_path(self) -> Path:
        return self.videos_dir / "final.mp4"

    # -- artifacts ----------------------------------------------------------

    def save_outline(self, outline: Outline) -> None:
        write_json(self.outline_path, outline.to_dict())

    def load_outline(self) -> Outline:
        return Outline.from_dict(read_json(self.outline_path))

    def save_storyboard(self, storyboard: Storyboard) -> None:
        write_json(self.storyboard_path, storyboard.to_dict())

    def load_storyboard(self) -> Storyboard:
        return Storyboard.from_dict(read_json(self.storyboard_path))

    def existing_artifacts(self) -> list[str]:
        names = []
        for path in (self.config_path, self.outline_path, self.storyboard_path, self.metrics_path):
            if path.exists():
                names.append(path.name)
        for sub in SUBDIRS:
            base = self.root / sub
            if base.is_dir() and any(base.iterdir()):
                names.append(sub + "/")
        return names


def init_workspace(
    root_dir: Path | str,
    topic: LearningTopic,
    config: PipelineConfig,
    resume: bool = False,
) -> WorkspaceHandle:
    """Create (or re-open with ``resume``) the workspace for one topic."""
    root = Path(root_dir) / topic.slug
    if root.exists() and any(root.iterdir()) and not resume:
        raise WorkspaceExistsError(
            f"workspace exists: {root} (pass resume to reuse prior artifacts)"
        )
    try:
        root.mkdir(parents=True, exist_ok=True)
        for sub in SUBDIRS:
            (root / sub).mkdir(exist_ok=True)
    except OSError as exc:
        raise WorkspaceExistsError(f"cannot create workspace under {root_dir}: {exc}")
    handle = WorkspaceHandle(root, topic, config)
    if not resume or not handle.config_path.exists():
        write_json(
            handle.config_path,
            {
                "topic": {
                    "text": topic.text,
                    "slug": topic.slug,
                    "target_duration_minutes": topic.target_duration_minutes,
                },
                "config": config.to_dict(),
            },
        )
    return handle


def load_workspace(root_dir: Path | str, slug: str) -> WorkspaceHandle:
    """Open an existing workspace from its persisted config snapshot."""
    root = Path(root_dir) / slug
    config_path = root / "config.json"
    if not config_path.exists():
        raise ValidationError(f"no workspace at {root} (missing config.json)")
    snapshot = read_json(config_path)
    topic = LearningTopic(
        text=snapshot["topic"]["text"],
        slug=snapshot["topic"]["slug"],
        target_duration_minutes=snapshot["topic"]["target_duration_minutes"],
    )
    return WorkspaceHandle(root, topic, PipelineConfig.from_dict(snapshot["config"]))
