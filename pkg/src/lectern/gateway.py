"""Provider-agnostic model access with retries, token accounting, and
deterministic record/replay.

All model traffic in the pipeline goes through :class:`ModelGateway`; no other
module talks to a provider. A cassette is a JSONL transcript keyed by request
fingerprint; replay mode serves stored responses without any network and
raises on a miss.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import CassetteMissError, EnvironmentError_, ProviderError, ValidationError

log = logging.getLogger(__name__)

ROLE_TAGS = ("planner", "coder", "fixer", "critic", "judge", "student")
# Reference images ride on planner requests; the multimodal judges get video.
ATTACHMENT_ROLES = ("planner", "critic", "judge", "student")
ATTACHMENT_KINDS = ("image", "video", "frame_sequence")

DEFAULT_TEMPERATURE = {
    "planner": 0.7,
    "coder": 0.2,
    "fixer": 0.2,
    "critic": 0.0,
    "judge": 0.0,
    "student": 0.0,
}

MAX_RETRIES = 3
BACKOFF_BASE_SECONDS = 0.5
FRAME_SAMPLE_FPS = 1.0
FRAME_SAMPLE_CAP = 60


@dataclass(frozen=True)
class Attachment:
    kind: str
    path: str
    media_note: str = ""

    def __post_init__(self):
        if self.kind not in ATTACHMENT_KINDS:
            raise ValidationError(f"attachment kind {self.kind!r} not one of {ATTACHMENT_KINDS}")

    def content_digest(self) -> str:
        data = Path(self.path).read_bytes()
        if not data:
            raise ValidationError(f"attachment {self.path} is empty")
        return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class Decoding:
    temperature: float
    max_tokens: int = 4096


@dataclass(frozen=True)
class ModelRequest:
    role_tag: str
    prompt: str
    attachments: tuple[Attachment, ...] = ()
    decoding: Decoding | None = None

    def __post_init__(self):
        if self.role_tag not in ROLE_TAGS:
            raise ValidationError(f"unknown role_tag {self.role_tag!r}")
        if not self.prompt:
            raise ValidationError("prompt must be non-empty")
        if self.attachments and self.role_tag not in ATTACHMENT_ROLES:
            raise ValidationError(f"role {self.role_tag!r} may not carry attachments")

    def resolved_decoding(self) -> Decoding:
        if self.decoding is not None:
            return self.decoding
        return Decoding(temperature=DEFAULT_TEMPERATURE[self.role_tag])


@dataclass(frozen=True)
class ModelResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    provider_id: str = ""

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValidationError("token counts must be >= 0")


def fingerprint(request: ModelRequest) -> str:
    """Stable digest of (role, prompt, decoding, attachment contents).

    Attachments contribute their content digest, not their path, so cassettes
    stay valid when files move between runs.
    """
    decoding = request.resolved_decoding()
    payload = {
        "role_tag": request.role_tag,
        "prompt": request.prompt,
        "temperature": decoding.temperature,
        "max_tokens": decoding.max_tokens,
        "attachments": [
            {"kind": a.kind, "media_note": a.media_note, "digest": a.content_digest()}
            for a in request.attachments
        ],
    }
    raw = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()


class TransientProviderError(Exception):
    """Provider failure worth retrying (timeouts, 5xx, rate limits)."""


class Provider:
    """Interface a concrete provider implements."""

    name = "provider"
    supports_video = False

    def send(self, request: ModelRequest) -> ModelResponse:  # pragma: no cover - interface
        raise NotImplementedError


class HttpProvider(Provider):
    """OpenAI-compatible chat-completions client.

    Endpoint and credentials come from LECTERN_API_BASE / LECTERN_API_KEY;
    the model is LECTERN_MODEL with optional per-role overrides
    LECTERN_MODEL_<ROLE>. Images and frame sequences are inlined base64.
    """

    name = "http"

    def __init__(self, session=None, env: dict | None = None):
        env = env if env is not None else os.environ
        self.base_url = env.get("LECTERN_API_BASE", "").rstrip("/")
        self.api_key = env.get("LECTERN_API_KEY", "")
        self.default_model = env.get("LECTERN_MODEL", "")
        self.role_models = {
            role: env.get(f"LECTERN_MODEL_{role.upper()}", self.default_model) for role in ROLE_TAGS
        }
        self.supports_video = env.get("LECTERN_VIDEO_NATIVE", "") in ("1", "true", "yes")
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        if not self.base_url or not self.api_key:
            raise EnvironmentError_(
                "live mode needs LECTERN_API_BASE and LECTERN_API_KEY set"
            )

    def _content_parts(self, request: ModelRequest) -> list[dict]:
        import base64

        parts: list[dict] = [{"type": "text", "text": request.prompt}]
        for attachment in request.attachments:
            data = Path(attachment.path).read_bytes()
            b64 = base64.b64encode(data).decode("ascii")
            if attachment.kind == "video":
                parts.append(
                    {"type": "video_url", "video_url": {"url": f"data:video/mp4;base64,{b64}"}}
                )
            else:
                ext = Path(attachment.path).suffix.lstrip(".") or "png"
                parts.append(
                    {"type": "image_url", "image_url": {"url": f"data:image/{ext};base64,{b64}"}}
                )
        return parts

    def send(self, request: ModelRequest) -> ModelResponse:
        decoding = request.resolved_decoding()
        body = {
            "model": self.role_models[request.role_tag],
            "messages": [{"role": "user", "content": self._content_parts(request)}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
        }
        try:
            resp = self.session.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=300,
            )
        except Exception as exc:
            raise TransientProviderError(str(exc))
        if resp.status_code in (429, 500, 502, 503, 504):
            raise TransientProviderError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderError(request.role_tag, f"HTTP {resp.status_code}: {resp.text[:400]}")
        data = resp.json()
        usage = data.get("usage", {})
        return ModelResponse(
            text=data["choices"][0]["message"]["content"],
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            provider_id=str(data.get("model", self.role_models[request.role_tag])),
        )


@dataclass
class CassetteEntry:
    fingerprint: str
    role_tag: str
    response_text: str
    prompt_tokens: int
    completion_tokens: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "fingerprint": self.fingerprint,
                "role_tag": self.role_tag,
                "response_text": self.response_text,
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
            },
            ensure_ascii=False,
        )


class Cassette:
    """Ordered transcript of exchanges; replay consumes per-fingerprint FIFO.

    Identical requests recorded twice yield two entries under one fingerprint
    and replay returns them in recorded order.
    """

    def __init__(self, entries: list[CassetteEntry] | None = None):
        self.entries: list[CassetteEntry] = list(entries or [])
        self._queues: dict[str, list[CassetteEntry]] = {}
        self._lock = threading.Lock()
        for entry in self.entries:
            self._queues.setdefault(entry.fingerprint, []).append(entry)

    @classmethod
    def load(cls, path: Path | str) -> "Cassette":
        entries = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                raw = json.loads(line)
                entries.append(
                    CassetteEntry(
                        fingerprint=raw["fingerprint"],
                        role_tag=raw["role_tag"],
                        response_text=raw["response_text"],
                        prompt_tokens=int(raw["prompt_tokens"]),
                        completion_tokens=int(raw["completion_tokens"]),
                    )
                )
        return cls(entries)

    def pop(self, fp: str) -> CassetteEntry | None:
        with self._lock:
            queue = self._queues.get(fp)
            if not queue:
                return None
            return queue.pop(0)


class ModelGateway:
    """complete() router for live, record, and replay modes."""

    def __init__(
        self,
        mode: str = "replay",
        provider: Provider | None = None,
        cassette_path: Path | str | None = None,
        sleeper=time.sleep,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValidationError(f"gateway mode {mode!r} not one of live|record|replay")
        self.mode = mode
        self.provider = provider
        self.cassette_path = Path(cassette_path) if cassette_path else None
        self._sleep = sleeper
        self._usage_lock = threading.Lock()
        self._cassette_lock = threading.Lock()
        self.prompt_tokens_total = 0
        self.completion_tokens_total = 0
        if mode == "replay":
            if self.cassette_path is None:
                raise ValidationError("replay mode requires a cassette file")
            self.cassette = Cassette.load(self.cassette_path)
        else:
            self.cassette = Cassette()
            if self.provider is None:
                raise EnvironmentError_(f"{mode} mode requires a configured provider")

    # -- token accounting ----------------------------------------------------

    def usage(self) -> tuple[int, int]:
        with self._usage_lock:
            return self.prompt_tokens_total, self.completion_tokens_total

    def _account(self, response: ModelResponse) -> None:
        with self._usage_lock:
            self.prompt_tokens_total += response.prompt_tokens
            self.completion_tokens_total += response.completion_tokens

    # -- request preparation ---------------------------------------------------

    def _prepare(self, request: ModelRequest) -> ModelRequest:
        """Transcode video attachments to frame sequences unless the provider
        takes video natively. Replay matches whatever form was recorded, so the
        same preparation runs in every mode."""
        native = bool(self.provider and self.provider.supports_video)
        if native or not any(a.kind == "video" for a in request.attachments):
            return request
        from .render import sample_frames

        converted: list[Attachment] = []
        for attachment in request.attachments:
            if attachment.kind != "video":
                converted.append(attachment)
                continue
            frames = sample_frames(
                Path(attachment.path), rate_fps=FRAME_SAMPLE_FPS, max_frames=FRAME_SAMPLE_CAP
            )
            for k, frame in enumerate(frames):
                converted.append(
                    Attachment(
                        kind="frame_sequence",
                        path=str(frame),
                        media_note=f"{attachment.media_note} [frame {k + 1}/{len(frames)} @1fps]",
                    )
                )
        return ModelRequest(
            role_tag=request.role_tag,
            prompt=request.prompt,
            attachments=tuple(converted),
            decoding=request.decoding,
        )

    def _check_attachments(self, request: ModelRequest) -> None:
        for attachment in request.attachments:
            path = Path(attachment.path)
            if not path.exists() or path.stat().st_size == 0:
                raise ValidationError(f"attachment missing or empty at send time: {path}")

    # -- completion -------------------------------------------------------------

    def complete(self, request: ModelRequest) -> ModelResponse:
        self._check_attachments(request)
        request = self._prepare(request)
        fp = fingerprint(request)

        if self.mode == "replay":
            entry = self.cassette.pop(fp)
            if entry is None:
                raise CassetteMissError(request.role_tag, fp)
            response = ModelResponse(
                text=entry.response_text,
                prompt_tokens=entry.prompt_tokens,
                completion_tokens=entry.completion_tokens,
                provider_id="replay",
            )
            self._account(response)
            return response

        response = self._send_with_retries(request)
        self._account(response)
        if self.mode == "record":
            entry = CassetteEntry(
                fingerprint=fp,
                role_tag=request.role_tag,
                response_text=response.text,
                prompt_tokens=response.prompt_tokens,
                completion_tokens=response.completion_tokens,
            )
            with self._cassette_lock:
                self.cassette.entries.append(entry)
                if self.cassette_path is not None:
                    with open(self.cassette_path, "a", encoding="utf-8") as handle:
                        handle.write(entry.to_json() + "\n")
        return response

    def _send_with_retries(self, request: ModelRequest) -> ModelResponse:
        last_error = None
        for attempt in range(MAX_RETRIES):
            try:
                return self.provider.send(request)
            except TransientProviderError as exc:
                last_error = exc
                if attempt < MAX_RETRIES - 1:
                    delay = BACKOFF_BASE_SECONDS * (2**attempt)
                    log.warning("transient provider failure (%s); retrying in %.1fs", exc, delay)
                    self._sleep(delay)
        raise ProviderError(request.role_tag, f"retries exhausted: {last_error}")
