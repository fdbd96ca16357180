"""Asset keyword extraction, retrieval, and the persistent shared cache.

Retrieval consults a local preseed directory first, then any configured
search backends. Every accepted entry's file lives under the workspace's
``assets/`` directory and the manifest records its content digest so a
verify pass can prove manifest/directory coherence. The same manifest feeds
every section's coder prompt, which is what keeps icon usage consistent
across sections.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

from PIL import Image

from .errors import ValidationError
from .gateway import ModelGateway, ModelRequest
from .prompts import load_prompt, render_prompt
from .workspace import Storyboard, read_json, write_json

log = logging.getLogger(__name__)

KEYWORD_RE = re.compile(r"^[a-z]+$")
RASTER_EXTENSIONS = (".png", ".jpg", ".jpeg")
ACCEPTED_EXTENSIONS = RASTER_EXTENSIONS + (".svg",)
NEAR_BLACK_LUMINANCE = 0.04


def extract_keywords(gateway: ModelGateway, storyboard: Storyboard) -> list[str]:
    """Ask for one-word asset keywords; anything not strictly lowercase
    letters is dropped silently (abstract concepts, numbering, prose)."""
    template = load_prompt("asset")
    prompt = render_prompt(
        template,
        {"storyboard_data": json.dumps(storyboard.to_dict(), indent=2, ensure_ascii=False)},
    )
    response = gateway.complete(ModelRequest(role_tag="planner", prompt=prompt))
    keywords: list[str] = []
    for line in response.text.splitlines():
        word = line.strip()
        if KEYWORD_RE.match(word) and word not in keywords:
            keywords.append(word)
    return keywords


@dataclass
class AssetEntry:
    keyword: str
    path: str  # workspace-relative ("assets/cat.png"); empty when rejected
    source: str  # local_index | http_search | preseeded
    content_digest: str
    accepted: bool

    def to_dict(self) -> dict:
        return {
            "keyword": self.keyword,
            "path": self.path,
            "source": self.source,
            "content_digest": self.content_digest,
            "accepted": self.accepted,
        }


class RelevanceScorer:
    """Slot for embedding-similarity filtering; default accepts everything."""

    def accept(self, keyword: str, image_bytes: bytes) -> bool:
        return True


class SearchBackend:
    """Interface: return (image_bytes, extension) for a keyword, or None."""

    name = "backend"

    def search(self, keyword: str):  # pragma: no cover - interface
        raise NotImplementedError


class HttpSearchBackend(SearchBackend):
    """Thin image-search client: GET {base_url}?q=<keyword> returning image
    bytes. Real deployments point this at a search proxy; failures degrade to
    a rejected entry, never an aborted run."""

    name = "http_search"

    def __init__(self, base_url: str, api_key: str = "", session=None):
        self.base_url = base_url
        self.api_key = api_key
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def search(self, keyword: str):
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.session.get(
                self.base_url, params={"q": keyword}, headers=headers, timeout=30
            )
        except Exception as exc:
            log.warning("asset search failed for %r: %s", keyword, exc)
            return None
        if resp.status_code != 200 or not resp.content:
            return None
        content_type = resp.headers.get("content-type", "image/png")
        ext = {
            "image/png": ".png",
            "image/jpeg": ".jpg",
            "image/svg+xml": ".svg",
        }.get(content_type.split(";")[0].strip(), ".png")
        return resp.content, ext


def mean_luminance(image_bytes: bytes) -> float:
    """Mean luminance on a 0..1 scale, alpha composited over black (the
    background the videos use, so fully transparent regions count as black)."""
    with Image.open(BytesIO(image_bytes)) as img:
        rgba = img.convert("RGBA")
        background = Image.new("RGBA", rgba.size, (0, 0, 0, 255))
        flattened = Image.alpha_composite(background, rgba).convert("L")
        histogram = flattened.histogram()
    total = sum(histogram)
    if total == 0:
        return 0.0
    return sum(value * count for value, count in enumerate(histogram)) / total / 255.0


class AssetStore:
    """Keyword-addressed cache rooted at the workspace assets directory."""

    def __init__(
        self,
        workspace_root: Path | str,
        backends: list[SearchBackend] | None = None,
        scorer: RelevanceScorer | None = None,
        preseed_dir: Path | str | None = None,
    ):
        self.workspace_root = Path(workspace_root)
        self.assets_dir = self.workspace_root / "assets"
        self.assets_dir.mkdir(parents=True, exist_ok=True)
        self.backends = backends or []
        self.scorer = scorer or RelevanceScorer()
        self.preseed_dir = Path(preseed_dir) if preseed_dir else None
        self._manifest_lock = threading.Lock()
        self._keyword_locks: dict[str, threading.Lock] = {}
        self._entries: dict[str, AssetEntry] = {}
        if self.manifest_path.exists():
            for raw in read_json(self.manifest_path).get("entries", {}).values():
                entry = AssetEntry(**raw)
                self._entries[entry.keyword] = entry

    @property
    def manifest_path(self) -> Path:
        return self.assets_dir / "manifest.json"

    def _lock_for(self, keyword: str) -> threading.Lock:
        with self._manifest_lock:
            return self._keyword_locks.setdefault(keyword, threading.Lock())

    def _save_manifest(self) -> None:
        with self._manifest_lock:
            write_json(
                self.manifest_path,
                {"entries": {k: e.to_dict() for k, e in sorted(self._entries.items())}},
            )

    def _store(self, keyword: str, data: bytes, ext: str, source: str) -> AssetEntry:
        digest = hashlib.sha256(data).hexdigest()
        is_raster = ext in RASTER_EXTENSIONS
        accepted = self.scorer.accept(keyword, data)
        if accepted and is_raster:
            try:
                if mean_luminance(data) < NEAR_BLACK_LUMINANCE:
                    log.info("rejecting near-black asset %r", keyword)
                    accepted = False
            except Exception as exc:
                log.warning("cannot inspect asset %r (%s); rejecting", keyword, exc)
                accepted = False
        if not accepted:
            return AssetEntry(keyword, "", source, digest, False)
        target = self.assets_dir / f"{keyword}{ext}"
        target.write_bytes(data)
        rel_path = str(Path("assets") / target.name)
        return AssetEntry(keyword, rel_path, source, digest, True)

    def _from_preseed(self, keyword: str) -> AssetEntry | None:
        if self.preseed_dir is None:
            return None
        for ext in ACCEPTED_EXTENSIONS:
            candidate = self.preseed_dir / f"{keyword}{ext}"
            if candidate.exists():
                return self._store(keyword, candidate.read_bytes(), ext, "local_index")
        return None

    def retrieve(self, keyword: str) -> AssetEntry:
        """Idempotent fetch: a cached keyword never touches a backend again."""
        if not KEYWORD_RE.match(keyword):
            raise ValidationError(f"asset keyword {keyword!r} must match [a-z]+")
        with self._lock_for(keyword):
            cached = self._entries.get(keyword)
            if cached is not None:
                return cached
            entry = self._from_preseed(keyword)
            if entry is None:
                for backend in self.backends:
                    found = backend.search(keyword)
                    if found:
                        entry = self._store(keyword, found[0], found[1], "http_search")
                        break
            if entry is None:
                entry = AssetEntry(keyword, "", "http_search", "", False)
            self._entries[keyword] = entry
        self._save_manifest()
        return entry

    def retrieve_all(self, keywords: list[str], max_workers: int = 4) -> dict[str, AssetEntry]:
        if not keywords:
            return {}
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(self.retrieve, keywords))
        return {entry.keyword: entry for entry in results}

    def entries(self) -> dict[str, AssetEntry]:
        with self._manifest_lock:
            return dict(self._entries)

    def verify(self) -> list[str]:
        """Manifest/directory coherence: accepted files exist with matching
        digests. Returns human-readable problems (empty = coherent)."""
        problems = []
        for keyword, entry in sorted(self._entries.items()):
            if not entry.accepted:
                continue
            path = self.workspace_root / entry.path
            if not path.exists():
                problems.append(f"{keyword}: file missing at {entry.path}")
                continue
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if digest != entry.content_digest:
                problems.append(f"{keyword}: digest mismatch for {entry.path}")
        return problems


def manifest_for_coder(entries: dict[str, AssetEntry]) -> list[str]:
    """Asset tokens for the coder prompt: accepted entries only, sorted by
    keyword for determinism."""
    return [
        f"[Asset: {entry.path}]"
        for _, entry in sorted(entries.items())
        if entry.accepted and entry.path
    ]
