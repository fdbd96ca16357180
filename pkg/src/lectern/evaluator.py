"""Scoring of finished videos: rubric-based aesthetics via a vision judge,
the unlearn/relearn quiz protocol with its evidence-source ablations, and
efficiency reporting from run metrics."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, ValidationError
from .gateway import Attachment, ModelGateway, ModelRequest
from .metrics import RunMetrics
from .planner import parse_json_object
from .prompts import load_prompt, render_prompt

log = logging.getLogger(__name__)

OPTION_KEYS = ("A", "B", "C", "D")
DEFAULT_QUIZ_SIZE = 10

AESTHETIC_DIMS = {
    "EL": "element_layout",
    "AT": "attractiveness",
    "LF": "logic_flow",
    "AD": "accuracy_depth",
    "VC": "visual_consistency",
}
DIM_MAX_POINTS = 20.0
SCALE_FACTOR = 5.0

QUIZ_MODES = (
    "unlearn",
    "learn_video",
    "learn_text_only",
    "learn_animation_only",
    "learn_random_video",
)


@dataclass(frozen=True)
class QuizQuestion:
    id: str
    stem: str
    options: dict[str, str]
    answer: str

    def __post_init__(self):
        if self.answer not in OPTION_KEYS:
            raise ValidationError(f"question {self.id}: answer must be one of {OPTION_KEYS}")
        if sorted(self.options) != sorted(OPTION_KEYS):
            raise ValidationError(f"question {self.id}: options must be exactly A-D")


@dataclass(frozen=True)
class QuizSet:
    concept: str
    questions: tuple[QuizQuestion, ...]

    def __post_init__(self):
        if not self.questions:
            raise ValidationError("quiz must contain at least one question")

    @classmethod
    def from_dict(cls, data: dict) -> "QuizSet":
        questions = tuple(
            QuizQuestion(
                id=str(q.get("id", str(index + 1))),
                stem=str(q["stem"]),
                options={k: str(v) for k, v in q["options"].items()},
                answer=str(q["answer"]).strip().upper(),
            )
            for index, q in enumerate(data["questions"])
        )
        return cls(concept=str(data["concept"]), questions=questions)


@dataclass(frozen=True)
class QuizItem:
    evidence_status: str  # SUFFICIENT | INSUFFICIENT
    answer: str  # A | B | C | D | NULL
    justification: str
    parse_ok: bool


@dataclass(frozen=True)
class QuizTranscript:
    items: tuple[QuizItem, ...]


@dataclass(frozen=True)
class TeachQuizResult:
    s_unlearn: float
    s_relearn: float
    tq: float

    def __post_init__(self):
        if self.tq != self.s_relearn - self.s_unlearn:
            raise ValidationError("tq must equal s_relearn - s_unlearn exactly")

    @classmethod
    def from_scores(cls, s_unlearn: float, s_relearn: float) -> "TeachQuizResult":
        return cls(s_unlearn=s_unlearn, s_relearn=s_relearn, tq=s_relearn - s_unlearn)

    def to_dict(self) -> dict:
        return {"s_unlearn": self.s_unlearn, "s_relearn": self.s_relearn, "tq": self.tq}


def format_questions(quiz: QuizSet) -> str:
    blocks = []
    for number, question in enumerate(quiz.questions, start=1):
        options = "\n".join(f"{key}) {question.options[key]}" for key in OPTION_KEYS)
        blocks.append(f"Question {number}: {question.stem}\n{options}")
    return "\n\n".join(blocks)


_STATUS_RE = re.compile(r"EVIDENCE_STATUS\s*=\s*(SUFFICIENT|INSUFFICIENT)", re.I)
_ANSWER_RE = re.compile(r"ANSWER\s*=\s*\(?\s*\"?(A|B|C|D|NULL)\"?\s*\)?", re.I)


def parse_transcript(text: str, question_count: int) -> QuizTranscript:
    """Total parse: every question gets a verdict. Blocks are delimited by
    EVIDENCE_STATUS lines; a missing or garbled block scores as an incorrect,
    parse-flagged item (the student is never re-asked)."""
    status_matches = list(_STATUS_RE.finditer(text))
    items: list[QuizItem] = []
    for index in range(question_count):
        if index >= len(status_matches):
            items.append(QuizItem("INSUFFICIENT", "NULL", "", parse_ok=False))
            continue
        start = status_matches[index].end()
        end = status_matches[index + 1].start() if index + 1 < len(status_matches) else len(text)
        block = text[start:end]
        status = status_matches[index].group(1).upper()
        answer_match = _ANSWER_RE.search(block)
        if not answer_match:
            items.append(QuizItem(status, "NULL", block.strip()[:200], parse_ok=False))
            continue
        answer = answer_match.group(1).upper()
        justification = block[answer_match.end():].strip()[:500]
        # normalize the NULL-iff-INSUFFICIENT pairing when the model slips
        if status == "INSUFFICIENT":
            answer = "NULL"
        elif answer == "NULL":
            status = "INSUFFICIENT"
        items.append(QuizItem(status, answer, justification, parse_ok=True))
    return QuizTranscript(items=tuple(items))


def score_transcript(transcript: QuizTranscript, quiz: QuizSet) -> float:
    correct = sum(
        1
        for item, question in zip(transcript.items, quiz.questions)
        if item.answer == question.answer
    )
    return 100.0 * correct / len(quiz.questions)


@dataclass
class Evidence:
    """What the student model sees besides the questions."""

    text: str | None = None
    video: Path | None = None


def run_quiz(
    gateway: ModelGateway,
    quiz: QuizSet,
    mode: str,
    evidence: Evidence | None = None,
) -> tuple[QuizTranscript, float]:
    if mode not in QUIZ_MODES:
        raise ValidationError(f"quiz mode {mode!r} not one of {QUIZ_MODES}")
    evidence = evidence or Evidence()
    template_name = "unlearn" if mode == "unlearn" else "learn"
    if mode == "unlearn" and (evidence.text or evidence.video):
        raise ValidationError("unlearn mode takes no evidence")
    if mode in ("learn_video", "learn_animation_only", "learn_random_video") and not evidence.video:
        raise ValidationError(f"mode {mode} requires a video")
    if mode == "learn_text_only" and not evidence.text:
        raise ValidationError("learn_text_only requires the lecture-lines text")
    template = load_prompt(template_name)
    prompt = render_prompt(template, {"concept": quiz.concept})
    if mode == "learn_text_only":
        prompt += f"\n[EVIDENCE DOCUMENT: lecture lines]\n{evidence.text}\n"
    prompt += "\n" + format_questions(quiz) + "\n"
    attachments = ()
    if evidence.video is not None:
        attachments = (
            Attachment(kind="video", path=str(evidence.video), media_note=f"{mode} evidence"),
        )
    response = gateway.complete(
        ModelRequest(role_tag="student", prompt=prompt, attachments=attachments)
    )
    transcript = parse_transcript(response.text, len(quiz.questions))
    return transcript, score_transcript(transcript, quiz)


def teachquiz(gateway: ModelGateway, quiz: QuizSet, video: Path) -> TeachQuizResult:
    """Unlearn baseline, then learn-from-video; the score is the exact gap."""
    _, s_unlearn = run_quiz(gateway, quiz, "unlearn")
    _, s_relearn = run_quiz(gateway, quiz, "learn_video", Evidence(video=video))
    return TeachQuizResult.from_scores(s_unlearn, s_relearn)


@dataclass
class AblationMaterials:
    lecture_text: str
    video: Path
    animation_only_video: Path
    random_video: Path


def teachquiz_ablation(
    gateway: ModelGateway, quiz: QuizSet, materials: AblationMaterials
) -> dict:
    """Evidence-source ablation. The unlearn baseline runs once and is shared
    across modes; random-video is expected near that baseline but only
    reported, never enforced."""
    _, s_unlearn = run_quiz(gateway, quiz, "unlearn")
    columns = {}
    for column, mode, evidence in (
        ("text_only", "learn_text_only", Evidence(text=materials.lecture_text)),
        ("animation", "learn_animation_only", Evidence(video=materials.animation_only_video)),
        ("random", "learn_random_video", Evidence(video=materials.random_video)),
    ):
        _, score = run_quiz(gateway, quiz, mode, evidence)
        columns[column] = {"score": score, "tq": score - s_unlearn}
    return {"unlearn": s_unlearn, "modes": columns}


# --- aesthetics ---------------------------------------------------------------------


@dataclass(frozen=True)
class AestheticsReport:
    raw: dict[str, float]  # EL/AT/LF/AD/VC on the 0-20 rubric scale
    overall: float  # recomputed sum, 0-100
    scaled: dict[str, float]  # per-dimension 0-100
    feedback: dict[str, str]
    summary: str
    strengths: tuple[str, ...]
    improvements: tuple[str, ...]
    model_reported_overall: float
    discrepancy_note: str = ""

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "overall": self.overall,
            "scaled": self.scaled,
            "feedback": self.feedback,
            "summary": self.summary,
            "strengths": list(self.strengths),
            "improvements": list(self.improvements),
            "model_reported_overall": self.model_reported_overall,
            "discrepancy_note": self.discrepancy_note,
        }


def _parse_aesthetics(data: dict) -> AestheticsReport:
    raw = {}
    feedback = {}
    for short, key in AESTHETIC_DIMS.items():
        block = data.get(key)
        if not isinstance(block, dict) or "score" not in block:
            raise ValidationError(f"aesthetics response missing {key}.score")
        score = float(block["score"])
        if not 0.0 <= score <= DIM_MAX_POINTS:
            raise ValidationError(f"{key}.score {score} outside 0..{DIM_MAX_POINTS}")
        raw[short] = score
        feedback[short] = str(block.get("feedback", ""))
    overall = sum(raw.values())
    model_overall = float(data.get("overall_score", overall))
    note = ""
    if abs(model_overall - overall) > 1e-9:
        note = (
            f"model reported overall {model_overall} but dimension sum is {overall}; "
            "stored the recomputed sum"
        )
        log.warning("aesthetics overall discrepancy: %s", note)
    return AestheticsReport(
        raw=raw,
        overall=overall,
        scaled={short: value * SCALE_FACTOR for short, value in raw.items()},
        feedback=feedback,
        summary=str(data.get("summary", "")),
        strengths=tuple(str(s) for s in data.get("strengths", [])),
        improvements=tuple(str(s) for s in data.get("improvements", [])),
        model_reported_overall=model_overall,
        discrepancy_note=note,
    )


def judge_aesthetics(gateway: ModelGateway, video: Path, topic_text: str) -> AestheticsReport:
    """Rubric judge call; scores are the product here, so schema violations
    fail the evaluation rather than defaulting."""
    template = load_prompt("aesth")
    prompt = render_prompt(template, {}) + f"\n\nKnowledge point being taught: {topic_text}\n"
    attachment = Attachment(kind="video", path=str(video), media_note="final video")
    attempt_prompt = prompt
    reason = ""
    for attempt in range(2):
        response = gateway.complete(
            ModelRequest(role_tag="judge", prompt=attempt_prompt, attachments=(attachment,))
        )
        try:
            return _parse_aesthetics(parse_json_object(response.text))
        except ValidationError as exc:
            reason = str(exc)
            log.warning("aesthetics attempt %d rejected: %s", attempt + 1, reason)
        if attempt == 0:
            attempt_prompt = prompt + (
                "\n\nREMINDER: respond with exactly the JSON structure specified, "
                "every dimension scored in 0-20."
            )
    raise FormatError(f"aesthetics evaluation failed: {reason}", raw_text=response.text)


def efficiency_report(metrics: RunMetrics) -> dict:
    """Minutes and kilotokens, per stage and overall."""
    def fmt(seconds: float, tokens: float) -> dict:
        return {"minutes": round(seconds / 60.0, 1), "kilotokens": round(tokens / 1000.0, 1)}

    per_stage: dict[str, list[float]] = {}
    for record in metrics.stages:
        seconds, tokens = per_stage.setdefault(record.stage, [0.0, 0.0])
        per_stage[record.stage] = [seconds + record.wall_seconds, tokens + record.tokens]
    return {
        "total": fmt(metrics.total_seconds, metrics.total_tokens),
        "stages": {stage: fmt(*values) for stage, values in per_stage.items()},
    }
