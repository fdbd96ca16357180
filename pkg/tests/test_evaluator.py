from __future__ import annotations

import json

import pytest

from conftest import FakeGateway
from lectern.errors import FormatError, ValidationError
from lectern.evaluator import (
    AblationMaterials,
    Evidence,
    QuizSet,
    TeachQuizResult,
    efficiency_report,
    judge_aesthetics,
    parse_transcript,
    run_quiz,
    score_transcript,
    teachquiz,
    teachquiz_ablation,
)
from lectern.gateway import ModelGateway
from lectern.metrics import RunMetrics, record_stage
from lectern.render import write_solid_video
from scripted import (
    AESTHETICS_RESPONSE,
    LEARN_RESPONSE,
    ScriptedProvider,
    UNLEARN_RESPONSE,
    quiz_fixture,
)

QUIZ = QuizSet.from_dict(quiz_fixture())


@pytest.fixture
def video(tmp_path):
    return write_solid_video(tmp_path / "final.mp4", 2.0, label="final")


def aesthetics_data(**overrides):
    data = json.loads(AESTHETICS_RESPONSE)
    data.update(overrides)
    return data


class TestAesthetics:
    def test_sum_and_scaling(self, video):
        gateway = FakeGateway(lambda request: AESTHETICS_RESPONSE)
        report = judge_aesthetics(gateway, video, "Euler's Formula")
        assert report.raw == {"EL": 16, "AT": 15, "LF": 17, "AD": 18, "VC": 16}
        assert report.overall == 82
        assert report.scaled["EL"] == 80
        assert report.discrepancy_note == ""

    def test_all_zero_dims(self, video):
        data = aesthetics_data()
        for key in ("element_layout", "attractiveness", "logic_flow",
                    "accuracy_depth", "visual_consistency"):
            data[key] = {"score": 0, "feedback": ""}
        data["overall_score"] = 0
        gateway = FakeGateway(lambda request: json.dumps(data))
        report = judge_aesthetics(gateway, video, "t")
        assert report.overall == 0

    def test_inconsistent_overall_recomputed(self, video):
        gateway = FakeGateway(lambda request: json.dumps(aesthetics_data(overall_score=90)))
        report = judge_aesthetics(gateway, video, "t")
        assert report.overall == 82
        assert report.model_reported_overall == 90
        assert "recomputed" in report.discrepancy_note

    def test_out_of_range_dim_fails_after_reask(self, video):
        data = aesthetics_data()
        data["element_layout"] = {"score": 25, "feedback": "too generous"}
        gateway = FakeGateway(lambda request: json.dumps(data))
        with pytest.raises(FormatError, match="aesthetics"):
            judge_aesthetics(gateway, video, "t")
        assert len(gateway.requests) == 2


class TestParseTranscript:
    def test_total_parse_on_garbage(self):
        transcript = parse_transcript("complete nonsense", 10)
        assert len(transcript.items) == 10
        assert all(not item.parse_ok for item in transcript.items)
        assert score_transcript(transcript, QUIZ) == 0.0

    def test_null_iff_insufficient_normalized(self):
        text = (
            "EVIDENCE_STATUS = INSUFFICIENT\nANSWER = B\nJUSTIFICATION: leak\n"
            "EVIDENCE_STATUS = SUFFICIENT\nANSWER = NULL\nJUSTIFICATION: odd\n"
        )
        transcript = parse_transcript(text, 2)
        assert transcript.items[0].answer == "NULL"
        assert transcript.items[1].evidence_status == "INSUFFICIENT"

    def test_parenthesized_answer_accepted(self):
        text = 'EVIDENCE_STATUS = SUFFICIENT\nANSWER = (C)\nJUSTIFICATION: ok\n'
        assert parse_transcript(text, 1).items[0].answer == "C"


class TestRunQuiz:
    def test_eight_of_ten(self, video):
        gateway = FakeGateway(lambda request: LEARN_RESPONSE)
        transcript, score = run_quiz(gateway, QUIZ, "learn_video", Evidence(video=video))
        assert score == 80.0
        assert len(transcript.items) == 10

    def test_all_null_scores_zero(self):
        text = "\n".join(
            "EVIDENCE_STATUS = INSUFFICIENT\nANSWER = NULL\nJUSTIFICATION: blocked."
            for _ in range(10)
        )
        gateway = FakeGateway(lambda request: text)
        _, score = run_quiz(gateway, QUIZ, "unlearn")
        assert score == 0.0

    def test_replayed_unlearn_lucky_guess(self, tmp_path):
        cassette = tmp_path / "quiz.jsonl"
        recorder = ModelGateway(mode="record", provider=ScriptedProvider(), cassette_path=cassette)
        _, recorded_score = run_quiz(recorder, QUIZ, "unlearn")
        assert recorded_score == 10.0  # scored by hand: q4 guessed B correctly

        replayer = ModelGateway(mode="replay", cassette_path=cassette)
        _, replayed_score = run_quiz(replayer, QUIZ, "unlearn")
        assert replayed_score == 10.0

    def test_mode_evidence_contract(self, video):
        gateway = FakeGateway(lambda request: UNLEARN_RESPONSE)
        with pytest.raises(ValidationError):
            run_quiz(gateway, QUIZ, "unlearn", Evidence(video=video))
        with pytest.raises(ValidationError):
            run_quiz(gateway, QUIZ, "learn_video", Evidence())
        with pytest.raises(ValidationError):
            run_quiz(gateway, QUIZ, "learn_text_only", Evidence())
        with pytest.raises(ValidationError):
            run_quiz(gateway, QUIZ, "not_a_mode")

    def test_text_only_has_no_attachment(self):
        gateway = FakeGateway(lambda request: LEARN_RESPONSE)
        run_quiz(gateway, QUIZ, "learn_text_only", Evidence(text="line one\nline two"))
        request = gateway.requests[0]
        assert request.attachments == ()
        assert "line one\nline two" in request.prompt
        assert "[RULES: VIDEO-ONLY EVIDENCE]" in request.prompt

    def test_unlearn_prompt_substitutes_concept(self):
        gateway = FakeGateway(lambda request: UNLEARN_RESPONSE)
        run_quiz(gateway, QUIZ, "unlearn")
        assert "[Euler's Formula]" in gateway.requests[0].prompt
        assert "Question 10:" in gateway.requests[0].prompt


class TestTeachQuiz:
    def test_score_gap_pairs(self):
        assert TeachQuizResult.from_scores(5.0, 85.0).tq == 80.0
        assert TeachQuizResult.from_scores(5.0, 87.0).tq == 82.0
        assert TeachQuizResult.from_scores(5.0, 91.0).tq == 86.0

    def test_equal_scores_zero(self):
        assert TeachQuizResult.from_scores(42.0, 42.0).tq == 0.0

    def test_identity_enforced(self):
        with pytest.raises(ValidationError):
            TeachQuizResult(s_unlearn=5.0, s_relearn=85.0, tq=79.0)

    def test_end_to_end_gap(self, video):
        def respond(request):
            if "[RULES: VIDEO-ONLY EVIDENCE]" in request.prompt:
                return LEARN_RESPONSE
            return UNLEARN_RESPONSE

        gateway = FakeGateway(respond)
        result = teachquiz(gateway, QUIZ, video)
        assert (result.s_unlearn, result.s_relearn, result.tq) == (10.0, 80.0, 70.0)


class TestAblation:
    def test_mode_columns(self, tmp_path, video):
        other = write_solid_video(tmp_path / "other.mp4", 2.0, label="other-topic")
        anim = write_solid_video(tmp_path / "anim.mp4", 2.0, label="anim-only")

        def respond(request):
            if "[RULES: VIDEO-ONLY EVIDENCE]" in request.prompt:
                return LEARN_RESPONSE
            return UNLEARN_RESPONSE

        gateway = FakeGateway(respond)
        result = teachquiz_ablation(
            gateway,
            QUIZ,
            AblationMaterials(
                lecture_text="l1\nl2", video=video,
                animation_only_video=anim, random_video=other,
            ),
        )
        assert set(result["modes"]) == {"text_only", "animation", "random"}
        assert result["unlearn"] == 10.0
        for column in result["modes"].values():
            assert column["tq"] == column["score"] - result["unlearn"]

    def test_unlearn_ran_once(self, tmp_path, video):
        other = write_solid_video(tmp_path / "other.mp4", 2.0, label="other")
        anim = write_solid_video(tmp_path / "anim.mp4", 2.0, label="anim")
        unlearn_calls = {"n": 0}

        def respond(request):
            if "[RULES: VIDEO-ONLY EVIDENCE]" in request.prompt:
                return LEARN_RESPONSE
            unlearn_calls["n"] += 1
            return UNLEARN_RESPONSE

        gateway = FakeGateway(respond)
        teachquiz_ablation(
            gateway, QUIZ,
            AblationMaterials("text", video, anim, other),
        )
        assert unlearn_calls["n"] == 1


class TestEfficiency:
    def test_table_style_rounding(self):
        metrics = record_stage(RunMetrics(), "pipeline", 528.0, 10000, 9300)
        report = efficiency_report(metrics)
        assert report["total"] == {"minutes": 8.8, "kilotokens": 19.3}

    def test_zero_run(self):
        report = efficiency_report(RunMetrics())
        assert report["total"] == {"minutes": 0.0, "kilotokens": 0.0}

    def test_stage_breakdown_sums_to_overall(self):
        metrics = record_stage(RunMetrics(), "planner", 60.0, 1000, 500)
        metrics = record_stage(metrics, "coder", 120.0, 2000, 1500)
        metrics = record_stage(metrics, "critic", 60.0, 500, 500)
        assert metrics.total_seconds == 240.0
        assert metrics.total_tokens == 6000
        report = efficiency_report(metrics)
        assert sum(s["minutes"] for s in report["stages"].values()) == report["total"]["minutes"]
        assert sum(s["kilotokens"] for s in report["stages"].values()) \
            == report["total"]["kilotokens"]
