import logging
import math
import threading

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reqpc.errors import ConfigError, ProviderError, TransportError
from reqpc.model import OF, CompetencyRecord, FewShotExample, LabelSet, Requisition, Source
from reqpc.similarity import (
    Embedder,
    HashingEmbeddingProvider,
    HttpEmbeddingProvider,
    SimilarityConfig,
    StaticEmbeddingProvider,
    cosine,
    make_embedding_provider,
    pc_similarity,
    pc_similarity_parts,
    select_example,
)

S2 = 1 / math.sqrt(2)


def static_embedder(table):
    return Embedder(StaticEmbeddingProvider(table), base_delay=0)


def test_hashing_is_deterministic_and_unit_norm(embedder):
    fresh = Embedder(HashingEmbeddingProvider(64))
    v = embedder.embed("Program Management")
    assert np.array_equal(v, fresh.embed("Program Management"))
    assert abs(np.linalg.norm(v) - 1.0) < 1e-6


def test_hashing_ignores_case_and_edge_punctuation(embedder):
    assert np.array_equal(embedder.embed("Ownership."), embedder.embed("ownership"))


@given(st.text(max_size=60))
def test_any_text_gets_unit_vector(text):
    v = Embedder(HashingEmbeddingProvider(16)).embed(text)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-6


def test_empty_text_maps_to_basis_vector(caplog):
    emb = Embedder(HashingEmbeddingProvider(8))
    with caplog.at_level(logging.WARNING):
        v = emb.embed("   ")
    assert v[0] == 1.0 and np.count_nonzero(v) == 1
    assert "canonical" in caplog.text
    assert emb.provider_calls == 0


def test_zero_vector_maps_to_basis_vector():
    v = static_embedder({"z": [0.0, 0.0, 0.0]}).embed("z")
    assert list(v) == [1.0, 0.0, 0.0]


def test_cache_calls_provider_once_per_text():
    emb = Embedder(HashingEmbeddingProvider(16))
    for _ in range(5):
        emb.embed("alpha beta")
    emb.embed("gamma")
    assert emb.provider_calls == 2 and emb.cache_size() == 2


def test_cache_is_thread_safe():
    emb = Embedder(HashingEmbeddingProvider(16))
    texts = [f"text {i % 7}" for i in range(200)]
    threads = [threading.Thread(target=lambda: [emb.embed(t) for t in texts]) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert emb.cache_size() == 7


class Flaky:
    name, dim = "flaky", 2

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def embed_raw(self, text):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("boom")
        return [3.0, 4.0]


def test_transient_embedding_failure_retried():
    provider = Flaky(failures=2)
    v = Embedder(provider, attempts=3, base_delay=0).embed("x")
    assert np.allclose(v, [0.6, 0.8]) and provider.calls == 3


def test_embedding_exhausts_retries():
    provider = Flaky(failures=10)
    with pytest.raises(TransportError) as err:
        Embedder(provider, attempts=3, base_delay=0).embed("x")
    assert err.value.attempts == 3 and provider.calls == 3


def test_dimension_mismatch():
    class Wrong:
        name, dim = "wrong", 3

        def embed_raw(self, text):
            return [1.0, 0.0]

    with pytest.raises(ProviderError, match="dimension"):
        Embedder(Wrong()).embed("x")


def test_cosine_checks_shape():
    with pytest.raises(ValueError):
        cosine(np.ones(2), np.ones(3))


def test_weights_must_sum_to_one():
    with pytest.raises(ConfigError):
        SimilarityConfig(0.5, 0.6)


class TestWeightedSimilarity:
    table = {
        "L1": [1, 0, 0], "L2": [0, 1, 0], "L3": [1, 0, 0],
        "D1": [1, 0, 0], "D2": [1, 0, 0], "D3": [0, 1, 0],
        "Lh": [S2, S2, 0], "Dh": [0, 0, 1],
    }

    def test_identical_definitions_orthogonal_labels(self):
        a = CompetencyRecord("L1", "D1", OF, 5)
        b = CompetencyRecord("L2", "D2", OF, 5)
        assert pc_similarity(a, b, SimilarityConfig(), static_embedder(self.table)) == pytest.approx(0.7, abs=1e-9)

    def test_identical_labels_orthogonal_definitions(self):
        a = CompetencyRecord("L1", "D1", OF, 5)
        b = CompetencyRecord("L3", "D3", OF, 5)
        assert pc_similarity(a, b, SimilarityConfig(), static_embedder(self.table)) == pytest.approx(0.3, abs=1e-9)

    def test_parts(self):
        a = CompetencyRecord("L1", "D1", OF, 5)
        b = CompetencyRecord("Lh", "Dh", OF, 5)
        parts = pc_similarity_parts(a, b, SimilarityConfig(), static_embedder(self.table))
        assert parts.label == pytest.approx(S2)
        assert parts.definition == pytest.approx(0.0)
        assert parts.combined == pytest.approx(0.3 * S2)

    def test_symmetric_and_bounded(self, embedder):
        a = CompetencyRecord("Program Management", "Plans programs", OF, 5)
        b = CompetencyRecord("Project Planning", "Manages project schedules", OF, 5)
        cfg = SimilarityConfig()
        assert pc_similarity(a, b, cfg, embedder) == pc_similarity(b, a, cfg, embedder)
        assert -1.0 <= pc_similarity(a, b, cfg, embedder) <= 1.0
        assert pc_similarity(a, a, cfg, embedder) == pytest.approx(1.0)


def example(rid, jd):
    req = Requisition(rid, "PM", sections={"JD": jd})
    return FewShotExample(req, LabelSet(rid, Source.consensus(), ()))


class TestSelectExample:
    def test_self_match(self, embedder):
        jd = "Drive payments risk strategy across checkout"
        pool = [example("A", "Unrelated warehouse robotics role"), example("B", jd)]
        chosen, score = select_example(Requisition("Q", "PM", sections={"JD": jd}), pool, 0.5, embedder)
        assert chosen.req_id == "B" and score == pytest.approx(1.0)

    def test_zero_shot_below_threshold(self):
        emb = static_embedder({"q": [1, 0], "e": [S2, S2]})
        req = Requisition("Q", "PM", sections={"JD": "q"})
        assert select_example(req, [example("E", "e")], 0.75, emb) is None
        assert select_example(req, [], 0.5, emb) is None

    def test_threshold_is_strict(self):
        emb = static_embedder({"q": [1, 0], "e": [3, 4]})
        req = Requisition("Q", "PM", sections={"JD": "q"})
        assert select_example(req, [example("E", "e")], 0.6, emb) is None
        assert select_example(req, [example("E", "e")], 0.59, emb) is not None

    def test_tie_goes_to_smallest_id(self, embedder):
        pool = [example("Z9", "same text"), example("A1", "same text")]
        chosen, _ = select_example(Requisition("Q", "PM", sections={"JD": "same text"}), pool, 0.5, embedder)
        assert chosen.req_id == "A1"


class TestHttpEmbedding:
    def provider(self, handler):
        return HttpEmbeddingProvider("http://embed.test/v1", 3, model="m",
                                     client=httpx.Client(transport=httpx.MockTransport(handler)))

    def test_success(self, monkeypatch):
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json={"data": [{"embedding": [0.0, 2.0, 0.0]}]})

        monkeypatch.setenv("REQPC_EMBED_API_KEY", "secret")
        v = Embedder(self.provider(handler)).embed("hello")
        assert list(v) == [0.0, 1.0, 0.0]
        assert seen == {"url": "http://embed.test/v1/embeddings", "auth": "Bearer secret"}

    def test_server_error_is_transient(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(503) if len(calls) == 1 else httpx.Response(200, json={"data": [{"embedding": [1, 0, 0]}]})

        assert list(Embedder(self.provider(handler), base_delay=0).embed("x")) == [1.0, 0.0, 0.0]
        assert len(calls) == 2

    def test_client_error_is_permanent(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(400, text="bad")

        with pytest.raises(ProviderError):
            Embedder(self.provider(handler), base_delay=0).embed("x")
        assert len(calls) == 1


def test_make_embedding_provider():
    assert make_embedding_provider({"kind": "hashing", "dim": 32}).dim == 32
    with pytest.raises(ConfigError):
        make_embedding_provider({"kind": "http"})
    with pytest.raises(ConfigError):
        make_embedding_provider({"kind": "word2vec"})


def test_cosine_identities():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = rng.normal(size=8), rng.normal(size=8)
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        assert cosine(a, b) == cosine(b, a)
        assert cosine(a, a) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
