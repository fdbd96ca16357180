"""Per-stage wall-time and token accounting, persisted to metrics.json."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .workspace import read_json, write_json


@dataclass(frozen=True)
class StageRecord:
    stage: str
    wall_seconds: float
    prompt_tokens: int
    completion_tokens: int

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class RunMetrics:
    stages: tuple[StageRecord, ...] = ()

    @property
    def total_seconds(self) -> float:
        return sum(r.wall_seconds for r in self.stages)

    @property
    def total_prompt_tokens(self) -> int:
        return sum(r.prompt_tokens for r in self.stages)

    @property
    def total_completion_tokens(self) -> int:
        return sum(r.completion_tokens for r in self.stages)

    @property
    def total_tokens(self) -> int:
        return self.total_prompt_tokens + self.total_completion_tokens

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "stage": r.stage,
                    "wall_seconds": r.wall_seconds,
                    "prompt_tokens": r.prompt_tokens,
                    "completion_tokens": r.completion_tokens,
                }
                for r in self.stages
            ],
            "totals": {
                "wall_seconds": self.total_seconds,
                "prompt_tokens": self.total_prompt_tokens,
                "completion_tokens": self.total_completion_tokens,
                "tokens": self.total_tokens,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunMetrics":
        stages = tuple(
            StageRecord(
                stage=str(r["stage"]),
                wall_seconds=float(r["wall_seconds"]),
                prompt_tokens=int(r["prompt_tokens"]),
                completion_tokens=int(r["completion_tokens"]),
            )
            for r in data.get("stages", [])
        )
        return cls(stages=stages)


def record_stage(
    metrics: RunMetrics,
    stage: str,
    wall_seconds: float,
    prompt_tokens: int,
    completion_tokens: int,
) -> RunMetrics:
    """Append one stage record; totals are derived, never stored stale."""
    if wall_seconds < 0:
        raise ValidationError("wall_seconds must be >= 0")
    if prompt_tokens < 0 or completion_tokens < 0:
        raise ValidationError("token counts must be >= 0")
    record = StageRecord(stage, wall_seconds, prompt_tokens, completion_tokens)
    return RunMetrics(stages=metrics.stages + (record,))


class MetricsLog:
    """Single-writer metrics accumulator bound to a metrics.json file."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.metrics = RunMetrics()
        if self.path.exists():
            self.metrics = RunMetrics.from_dict(read_json(self.path))

    def record(self, stage: str, wall_seconds: float, prompt_tokens: int, completion_tokens: int) -> RunMetrics:
        with self._lock:
            self.metrics = record_stage(self.metrics, stage, wall_seconds, prompt_tokens, completion_tokens)
            write_json(self.path, self.metrics.to_dict())
            return self.metrics
