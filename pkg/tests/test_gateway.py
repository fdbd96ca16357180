from __future__ import annotations

import json

import pytest

from lectern.errors import CassetteMissError, ProviderError, ValidationError
from lectern.gateway import (
    Attachment,
    Cassette,
    Decoding,
    ModelGateway,
    ModelRequest,
    ModelResponse,
    Provider,
    TransientProviderError,
    fingerprint,
)


class CountingProvider(Provider):
    def __init__(self, texts=None, fail_times: int = 0):
        self.texts = list(texts or [])
        self.fail_times = fail_times
        self.calls = 0

    def send(self, request):
        self.calls += 1
        if self.fail_times > 0:
            self.fail_times -= 1
            raise TransientProviderError("flaky")
        text = self.texts.pop(0) if self.texts else f"reply to: {request.prompt[:20]}"
        return ModelResponse(text=text, prompt_tokens=7, completion_tokens=11, provider_id="test")


def request(prompt: str = "hello", role: str = "coder", attachments=()):
    return ModelRequest(role_tag=role, prompt=prompt, attachments=tuple(attachments))


class TestRequestValidation:
    def test_attachments_only_for_multimodal_roles(self, tmp_path):
        image = tmp_path / "x.png"
        image.write_bytes(b"fake")
        attachment = Attachment(kind="image", path=str(image))
        with pytest.raises(ValidationError):
            request(role="coder", attachments=[attachment])
        for role in ("planner", "critic", "judge", "student"):
            assert request(role=role, attachments=[attachment]).role_tag == role

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValidationError):
            ModelRequest(role_tag="coder", prompt="")

    def test_role_temperature_defaults(self):
        assert request(role="coder").resolved_decoding().temperature == 0.2
        assert request(role="planner").resolved_decoding().temperature == 0.7
        assert request(role="judge").resolved_decoding().temperature == 0.0


class TestFingerprint:
    def test_equal_requests_equal_fingerprints(self):
        assert fingerprint(request("abc")) == fingerprint(request("abc"))

    def test_one_byte_difference_changes_fingerprint(self):
        prompts = ["abc", "abd", "abc ", " abc", "Abc", "ab\nc"]
        prints = {fingerprint(request(p)) for p in prompts}
        assert len(prints) == len(prompts)

    def test_decoding_included(self):
        base = request("abc")
        custom = ModelRequest(role_tag="coder", prompt="abc", decoding=Decoding(0.9, 100))
        assert fingerprint(base) != fingerprint(custom)

    def test_attachment_content_not_path(self, tmp_path):
        file_a = tmp_path / "a.png"
        file_b = tmp_path / "b.png"
        file_a.write_bytes(b"same-bytes")
        file_b.write_bytes(b"same-bytes")
        fp_a = fingerprint(request(role="judge", attachments=[Attachment("image", str(file_a))]))
        fp_b = fingerprint(request(role="judge", attachments=[Attachment("image", str(file_b))]))
        assert fp_a == fp_b
        file_b.write_bytes(b"different!")
        fp_b2 = fingerprint(request(role="judge", attachments=[Attachment("image", str(file_b))]))
        assert fp_b2 != fp_a


class TestReplay:
    def _cassette(self, tmp_path, entries):
        path = tmp_path / "tape.jsonl"
        with open(path, "w") as handle:
            for entry in entries:
                handle.write(json.dumps(entry) + "\n")
        return path

    def test_replay_hit(self, tmp_path):
        fp = fingerprint(request("abc"))
        path = self._cassette(
            tmp_path,
            [{
                "fingerprint": fp, "role_tag": "coder", "response_text": "stored",
                "prompt_tokens": 3, "completion_tokens": 4,
            }],
        )
        gateway = ModelGateway(mode="replay", cassette_path=path)
        response = gateway.complete(request("abc"))
        assert response.text == "stored"
        assert (response.prompt_tokens, response.completion_tokens) == (3, 4)

    def test_replay_miss_names_role(self, tmp_path):
        path = self._cassette(tmp_path, [])
        gateway = ModelGateway(mode="replay", cassette_path=path)
        with pytest.raises(CassetteMissError, match="coder"):
            gateway.complete(request("abc"))

    def test_record_then_replay_identical_transcript(self, tmp_path):
        path = tmp_path / "tape.jsonl"
        provider = CountingProvider(texts=["first", "second"])
        recorder = ModelGateway(mode="record", provider=provider, cassette_path=path)
        recorded = [recorder.complete(request("same")).text for _ in range(2)]
        assert recorded == ["first", "second"]

        replayer = ModelGateway(mode="replay", cassette_path=path)
        replayed = [replayer.complete(request("same")).text for _ in range(2)]
        assert replayed == recorded  # identical requests replay in order
        with pytest.raises(CassetteMissError):
            replayer.complete(request("same"))

    def test_replay_does_not_touch_network(self, tmp_path):
        fp = fingerprint(request("abc"))
        path = self._cassette(
            tmp_path,
            [{
                "fingerprint": fp, "role_tag": "coder", "response_text": "x",
                "prompt_tokens": 1, "completion_tokens": 1,
            }],
        )
        gateway = ModelGateway(mode="replay", cassette_path=path)
        assert gateway.provider is None
        gateway.complete(request("abc"))


class TestRetries:
    def test_transient_failures_retried(self):
        provider = CountingProvider(fail_times=2)
        gateway = ModelGateway(mode="record", provider=provider, sleeper=lambda s: None)
        response = gateway.complete(request("abc"))
        assert response.text.startswith("reply")
        assert provider.calls == 3

    def test_retries_exhausted_surfaces_role(self):
        provider = CountingProvider(fail_times=10)
        gateway = ModelGateway(mode="record", provider=provider, sleeper=lambda s: None)
        with pytest.raises(ProviderError, match="coder"):
            gateway.complete(request("abc"))
        assert provider.calls == 3


class TestTokenAccounting:
    def test_totals_equal_sum_of_responses(self):
        provider = CountingProvider()
        gateway = ModelGateway(mode="record", provider=provider)
        responses = [gateway.complete(request(f"p{i}")) for i in range(5)]
        assert gateway.usage() == (
            sum(r.prompt_tokens for r in responses),
            sum(r.completion_tokens for r in responses),
        )


class TestVideoTranscode:
    def test_video_becomes_frame_sequence(self, tmp_path):
        from lectern.render import write_solid_video

        video = write_solid_video(tmp_path / "clip.mp4", seconds=3.0, label="clip")
        provider = CountingProvider()
        gateway = ModelGateway(mode="record", provider=provider, cassette_path=tmp_path / "t.jsonl")
        gateway.complete(
            request(role="judge", attachments=[Attachment("video", str(video))])
        )
        # prepared attachments become part of the fingerprint; re-preparing
        # the same request must hit the cassette on replay
        replayer = ModelGateway(mode="replay", cassette_path=tmp_path / "t.jsonl")
        response = replayer.complete(
            request(role="judge", attachments=[Attachment("video", str(video))])
        )
        assert response.text.startswith("reply")

    def test_missing_attachment_rejected(self, tmp_path):
        gateway = ModelGateway(mode="record", provider=CountingProvider())
        attachment = Attachment(kind="image", path=str(tmp_path / "nope.png"))
        with pytest.raises(ValidationError, match="missing or empty"):
            gateway.complete(request(role="judge", attachments=[attachment]))
