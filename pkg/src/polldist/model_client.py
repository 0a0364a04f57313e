"""HTTP client for completions-style logprob endpoints and embedding
endpoints, with retries and an on-disk response cache.

The completions contract: POST {model, prompt, max_tokens: 1, logprobs: K,
temperature: 0} and read top-K first-token logprobs from the response. The
embeddings contract: POST {model, input}; the response carries either a
bare {"vector": [...]} or the common {"data": [{"embedding": [...]}]} shape.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .errors import CapabilityError, TransportError
from .survey import Distribution, Question

API_KEY_ENV = "POLLDIST_API_KEY"


@dataclass(frozen=True)
class LogprobResult:
    prompt_hash: str
    letter_logprobs: dict[str, float]
    raw_top_tokens: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class EmbeddingVector:
    id: str
    values: tuple[float, ...]
    model_tag: str

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not any(self.values):
            raise CapabilityError(f"embedding {self.id!r} has zero norm")


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class ClientStats:
    cache_hits: int = 0
    cache_misses: int = 0
    requests: int = 0

    def as_dict(self) -> dict:
        return {"cache_hits": self.cache_hits, "cache_misses": self.cache_misses,
                "requests": self.requests}


class ModelClient:
    """Shareable across worker threads; cache writes are atomic."""

    def __init__(self, base_url: str, model: str, cache_dir=None, *,
                 embed_model: str = "", top_logprobs: int = 20,
                 max_retries: int = 3, backoff: float = 0.5, timeout: float = 60.0,
                 max_concurrency: int = 8):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.embed_model = embed_model or model
        self.top_logprobs = top_logprobs
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.max_concurrency = max_concurrency
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.stats = ClientStats()
        self._endpoint_tag = _digest(self.base_url)[:12]

    # -- cache -------------------------------------------------------------

    def _cache_path(self, kind: str, digest: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{self._endpoint_tag}_{kind}_{digest}.json"

    def _cache_get(self, kind: str, digest: str):
        path = self._cache_path(kind, digest)
        if path is not None and path.exists():
            self.stats.cache_hits += 1
            return json.loads(path.read_text(encoding="utf-8"))
        self.stats.cache_misses += 1
        return None

    def _cache_put(self, kind: str, digest: str, payload) -> None:
        path = self._cache_path(kind, digest)
        if path is None:
            return
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- transport ---------------------------------------------------------

    def _post(self, path: str, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = f"{self.base_url}{path}"
        last_error = None
        for attempt in range(self.max_retries + 1):
            try:
                self.stats.requests += 1
                resp = requests.post(url, json=body, headers=headers, timeout=self.timeout)
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = TransportError(f"{url}: HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise TransportError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return resp.json()
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = TransportError(f"{url}: {exc}")
            if attempt < self.max_retries:
                time.sleep(self.backoff * 2 ** attempt)
        raise last_error

    # -- operations --------------------------------------------------------

    def fetch_option_logprobs(self, prompt: str, letters) -> LogprobResult:
        """Per-letter first-token logprobs for ``prompt``.

        Both the bare letter and its leading-space form count toward a
        letter; absent letters are simply missing from the result.
        """
        letters = sorted(letters)
        if not letters:
            raise ValueError("letters must be nonempty")
        digest = _digest(prompt)
        cached = self._cache_get("lp", digest)
        if cached is None:
            body = {"model": self.model, "prompt": prompt, "max_tokens": 1,
                    "logprobs": self.top_logprobs, "temperature": 0}
            data = self._post("/completions", body)
            try:
                top = data["choices"][0]["logprobs"]["top_logprobs"][0]
            except (KeyError, IndexError, TypeError) as exc:
                raise CapabilityError(f"endpoint returned no logprobs field: {exc}") from exc
            cached = {"top": top}
            self._cache_put("lp", digest, cached)
        top = cached["top"]
        letter_logprobs = {}
        for letter in letters:
            mass = 0.0
            for form in (letter, " " + letter):
                if form in top:
                    mass += math.exp(top[form])
            if mass > 0.0:
                letter_logprobs[letter] = math.log(mass)
        raw = tuple(sorted(top.items(), key=lambda kv: (-kv[1], kv[0])))
        return LogprobResult(prompt_hash=digest, letter_logprobs=letter_logprobs, raw_top_tokens=raw)

    def fetch_embedding(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        digest = _digest(text)
        cached = self._cache_get("emb", digest)
        if cached is None:
            data = self._post("/embeddings", {"model": self.embed_model, "input": text})
            if "vector" in data:
                vector = data["vector"]
            else:
                try:
                    vector = data["data"][0]["embedding"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise CapabilityError(f"endpoint returned no embedding: {exc}") from exc
            cached = {"vector": vector}
            self._cache_put("emb", digest, cached)
        return EmbeddingVector(id=digest, values=tuple(cached["vector"]), model_tag=self.embed_model)


def extract_distribution(result: LogprobResult, question: Question) -> Distribution:
    """Renormalized exp(logprob) over the question's option letters.

    Letters absent from the result get probability 0.
    """
    masses = []
    for letter in question.letters:
        lp = result.letter_logprobs.get(letter)
        masses.append(math.exp(lp) if lp is not None else 0.0)
    total = sum(masses)
    if total <= 0.0:
        raise CapabilityError(
            f"no option letter of question {question.id!r} appeared in the top logprobs"
        )
    return Distribution(question.id, tuple(m / total for m in masses))


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    a = np.asarray(u.values)
    b = np.asarray(v.values)
    if a.shape != b.shape:
        raise ValueError(f"embedding dimension mismatch: {a.shape} vs {b.shape}")
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
