"""Embedding providers, weighted PC similarity and few-shot example selection."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import threading
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from reqpc.errors import ConfigError, ProviderError, TransportError
from reqpc.model import CompetencyRecord, FewShotExample, Requisition
from reqpc.retry import call_with_retries

log = logging.getLogger(__name__)

NORM_TOL = 1e-6


@dataclass(frozen=True)
class SimilarityConfig:
    w_label: float = 0.3
    w_def: float = 0.7
    threshold: float = 0.5

    def __post_init__(self):
        if self.w_label < 0 or self.w_def < 0:
            raise ConfigError("similarity weights must be non-negative")
        if abs(self.w_label + self.w_def - 1.0) > 1e-9:
            raise ConfigError(f"w_label + w_def must equal 1, got {self.w_label + self.w_def}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed_raw(self, text: str) -> Sequence[float]: ...


_TOKEN_EDGE = re.compile(r"^\W+|\W+$")


class HashingEmbeddingProvider:
    """Deterministic bag-of-tokens embedding.

    Each lowercased whitespace token (edge punctuation stripped) is hashed with
    BLAKE2b into one of ``dim`` buckets with a sign bit. Identical on every
    machine and Python process, unlike ``hash()``.
    """

    name = "hashing"

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ConfigError("embedding dim must be positive")
        self.dim = dim

    def embed_raw(self, text: str) -> np.ndarray:
        acc = np.zeros(self.dim)
        for raw in text.lower().split():
            token = _TOKEN_EDGE.sub("", raw) or raw
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(digest, "big")
            acc[value % self.dim] += 1.0 if (value >> 63) & 1 else -1.0
        return acc


class StaticEmbeddingProvider:
    """Looks vectors up in a fixed table; unknown text is a transport-level miss."""

    name = "static"

    def __init__(self, table: Mapping[str, Sequence[float]]):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        dims = {v.shape[0] for v in self.table.values()}
        if len(dims) != 1:
            raise ConfigError("static embedding table needs vectors of one dimension")
        self.dim = dims.pop()

    def embed_raw(self, text: str) -> np.ndarray:
        if text not in self.table:
            raise ProviderError(f"no static embedding for {text!r}")
        return self.table[text]


class HttpEmbeddingProvider:
    """JSON-over-HTTP embedding endpoint.

    Request:  ``POST {base_url}/embeddings`` with ``{"model": ..., "input": [text]}``
    Response: ``{"data": [{"embedding": [float, ...]}]}``
    The bearer credential is read from the environment variable ``api_key_env``.
    """

    name = "http"

    def __init__(self, base_url: str, dim: int, model: str = "", api_key_env: str = "REQPC_EMBED_API_KEY",
                 timeout: float = 30.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)

    def embed_raw(self, text: str) -> list[float]:
        import httpx

        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(f"{self.base_url}/embeddings",
                                     json={"model": self.model, "input": [text]}, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"embedding endpoint returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from exc


class Embedder:
    """Caching, normalizing front end over an :class:`EmbeddingProvider`.

    Vectors are unit-norm float arrays. Empty or whitespace-only text, and
    text whose raw embedding is the zero vector, map to the first basis
    vector (with a warning) so similarity never sees NaNs.
    """

    def __init__(self, provider: EmbeddingProvider, attempts: int = 3, base_delay: float = 0.5):
        self.provider = provider
        self.dim = provider.dim
        self.attempts = attempts
        self.base_delay = base_delay
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.provider_calls = 0

    def _canonical(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[0] = 1.0
        return v

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit
        if not text.strip():
            log.warning("empty text embedded as canonical basis vector")
            vec = self._canonical()
        else:
            raw = call_with_retries(lambda: self._call(text), self.attempts, self.base_delay,
                                    what=f"{self.provider.name} embedding")
            vec = np.asarray(raw, dtype=float)
            if vec.shape != (self.dim,):
                raise ProviderError(f"embedding dimension mismatch: expected {self.dim}, got {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise ProviderError("embedding contains non-finite values")
            norm = _norm(vec)
            if norm == 0.0:
                log.warning("zero embedding for %r; using canonical basis vector", text[:40])
                vec = self._canonical()
            else:
                vec = vec / norm
        vec.setflags(write=False)
        with self._lock:
            # identical keys carry identical values, so last writer wins harmlessly
            self._cache[text] = vec
        return vec

    def _call(self, text: str):
        with self._lock:
            self.provider_calls += 1
        return self.provider.embed_raw(text)

    def cache_size(self) -> int:
        with self._lock:
            return len(self._cache)


def _norm(v: np.ndarray) -> float:
    # fsum is exactly rounded, so results do not depend on BLAS or SIMD summation order
    return math.sqrt(math.fsum((v * v).tolist()))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of unit vectors, clipped to [-1, 1]."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return min(1.0, max(-1.0, math.fsum((a * b).tolist())))


@dataclass(frozen=True)
class PairScore:
    label: float
    definition: float
    combined: float


def pc_similarity_parts(a: CompetencyRecord, b: CompetencyRecord, cfg: SimilarityConfig,
                        embedder: Embedder) -> PairScore:
    s_label = cosine(embedder.embed(a.label), embedder.embed(b.label))
    s_def = cosine(embedder.embed(a.definition), embedder.embed(b.definition))
    return PairScore(s_label, s_def, cfg.w_label * s_label + cfg.w_def * s_def)


def pc_similarity(a: CompetencyRecord, b: CompetencyRecord, cfg: SimilarityConfig, embedder: Embedder) -> float:
    return pc_similarity_parts(a, b, cfg, embedder).combined


def select_example(req: Requisition, examples: Sequence[FewShotExample], threshold: float,
                   embedder: Embedder) -> tuple[FewShotExample, float] | None:
    """Most JD-similar example scoring strictly above ``threshold``, or None for zero-shot.

    Ties at the maximum go to the lexicographically smallest req_id.
    """
    if not examples:
        return None
    query = embedder.embed(req.jd)
    best: tuple[FewShotExample, float] | None = None
    for ex in examples:
        score = cosine(query, embedder.embed(ex.req.jd))
        if best is None or score > best[1] or (score == best[1] and ex.req_id < best[0].req_id):
            best = (ex, score)
    if best is None or not best[1] > threshold:
        return None
    return best


def make_embedding_provider(spec: Mapping) -> EmbeddingProvider:
    kind = spec.get("kind", "hashing")
    if kind == "hashing":
        return HashingEmbeddingProvider(int(spec.get("dim", 64)))
    if kind == "http":
        if "base_url" not in spec or "dim" not in spec:
            raise ConfigError("http embedding provider needs base_url and dim")
        return HttpEmbeddingProvider(spec["base_url"], int(spec["dim"]), spec.get("model", ""),
                                     spec.get("api_key_env", "REQPC_EMBED_API_KEY"))
    raise ConfigError(f"unknown embedding provider kind {kind!r}")
