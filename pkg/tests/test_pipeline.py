import dataclasses
import json

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from reqpc.errors import ConfigError, PipelineStageError
from reqpc.llm import ChatClient, MockChatProvider, Stage, serialize_competencies
from reqpc.model import DTS, OF, CompetencyRecord, MentionEvidence, ReferenceLibrary, Requisition
from reqpc.pipeline import Pipeline, PipelineConfig
from reqpc.similarity import SimilarityConfig, pc_similarity
from scenarios import (
    EXAMPLES,
    LIBRARY,
    PC_1,
    PC_2,
    PC_2_REVISED_DEF,
    PC_2_REVISED_LABEL,
    PC_3,
    PM31,
    passing_evaluation,
    pm31_mock,
)


def make_pipeline(mock, embedder, library=LIBRARY, examples=EXAMPLES, **cfg):
    return Pipeline(ChatClient(mock, base_delay=0), embedder, library, examples, PipelineConfig(**cfg))


class TestWalkthrough:
    @pytest.fixture
    def run(self, embedder):
        mock = pm31_mock()
        labels, trace = make_pipeline(mock, embedder).run_pipeline(PM31)
        return mock, labels, trace

    def test_stage_order(self, run):
        _, _, trace = run
        assert [s for s, _ in trace.snapshots] == ["primary", "eval_regen", "filter", "validation", "final"]

    def test_example_selected(self, run):
        _, _, trace = run
        assert trace.example_id == "PM-07" and trace.primary.example_score > 0.5

    def test_primary_snapshot_ranked(self, run):
        _, _, trace = run
        assert [r.label for r in trace.records_at("primary")] == [PC_1.label, PC_2.label, PC_3.label]

    def test_eval_regen_revises_definition_and_clamps(self, run):
        _, _, trace = run
        after = trace.records_at("eval_regen")
        assert after[0].priority == 7
        assert after[1].definition == PC_2_REVISED_DEF
        assert trace.eval_regen.rounds[0].issues == [(2, "definition")]
        assert [(c.label, c.old_priority, c.new_priority) for c in trace.eval_regen.corrections] == [
            (PC_1.label, 6, 7)]

    def test_filter_removes_out_of_scope(self, run):
        _, _, trace = run
        assert [r.label for r in trace.records_at("filter")] == [PC_1.label, PC_2.label]
        (removal,) = trace.filter.removals
        assert (removal.label, removal.cause, removal.counterpart) == ("Ownership", "out_of_scope", "Ownership")
        assert removal.score > 0.5

    def test_validation_relabels(self, run):
        mock, labels, trace = run
        (action,) = trace.validation.actions
        assert action.action == "relabeled" and action.library_label == "Program Management"
        assert action.label_score > 0.8 and action.definition_score <= 0.5
        assert len(mock.calls_for(Stage.REFINE_LABEL)) == 1
        assert mock.calls_for(Stage.REFINE_LABEL)[0].model_id == "small-model"

    def test_final_output(self, run):
        _, labels, _ = run
        assert [(r.label, r.priority, r.category) for r in labels.records] == [
            ("Payments Risk Domain Expertise", 7, DTS), (PC_2_REVISED_LABEL, 6, OF)]
        assert labels.records[1].definition == PC_2_REVISED_DEF
        assert labels.source.id == "run-00"

    def test_trace_serializes(self, run):
        _, _, trace = run
        json.dumps(trace.to_dict())


class TestStages:
    def test_empty_primary_stops(self, embedder):
        mock = MockChatProvider().add(Stage.PRIMARY, "PM-31", "NONE")
        labels, trace = make_pipeline(mock, embedder).run_pipeline(PM31)
        assert labels.records == ()
        assert [c.stage for c in mock.calls] == [Stage.PRIMARY]
        assert [s for s, _ in trace.snapshots] == ["primary", "final"]

    def test_primary_truncates_to_max(self, embedder):
        recs = [CompetencyRecord(f"Skill {i}", f"Definition number {i}", OF, 10 - i) for i in range(7)]
        mock = MockChatProvider().add(Stage.PRIMARY, "PM-31", serialize_competencies(recs))
        pcs, _ = make_pipeline(mock, embedder).run_primary(PM31)
        assert [p.label for p in pcs] == [f"Skill {i}" for i in range(5)]

    def test_no_issues_skips_suggest(self, embedder):
        mock = MockChatProvider().add(Stage.EVALUATE, "PM-31", passing_evaluation([PC_1, PC_2]))
        pcs, trace = make_pipeline(mock, embedder).run_eval_regen(PM31, [PC_1, PC_2])
        assert [c.stage for c in mock.calls] == [Stage.EVALUATE]
        assert pcs[0].priority == 7 and pcs[1] == PC_2

    def test_zero_iterations_only_clamps(self, embedder):
        mock = MockChatProvider()
        pcs, _ = make_pipeline(mock, embedder, eval_regen_iterations=0).run_eval_regen(PM31, [PC_1])
        assert mock.calls == [] and pcs[0].priority == 7

    def test_disabled_stages(self, embedder):
        mock = pm31_mock()
        labels, trace = make_pipeline(mock, embedder, enable_eval_regen=False, enable_filter=False,
                                      enable_validation=False).run_pipeline(PM31)
        assert [c.stage for c in mock.calls] == [Stage.PRIMARY]
        assert [r.label for r in labels.records] == [PC_1.label, PC_2.label, PC_3.label]
        assert labels.records[0].priority == 6

    def test_zero_shot_mode(self, embedder):
        mock = pm31_mock()
        _, trace = make_pipeline(mock, embedder, few_shot_mode="zero_shot").run_pipeline(PM31)
        assert trace.example_id is None
        assert "Checkout Fraud Prevention" not in mock.calls_for(Stage.PRIMARY)[0].user_text

    def test_static_mode(self, embedder):
        mock = pm31_mock()
        _, trace = make_pipeline(mock, embedder, few_shot_mode="static", static_example_id="PM-07").run_pipeline(PM31)
        assert trace.example_id == "PM-07"

    def test_static_missing_is_config_error(self, embedder):
        with pytest.raises(ConfigError, match="PM-99"):
            make_pipeline(MockChatProvider(), embedder, few_shot_mode="static", static_example_id="PM-99")

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            PipelineConfig(few_shot_mode="two_shot")

    def test_extended_reasoning_flag_propagates(self, embedder):
        mock = pm31_mock()
        make_pipeline(mock, embedder, extended_reasoning=False).run_pipeline(PM31)
        assert not any(c.extended_reasoning for c in mock.calls)

    def test_validation_replaces_near_duplicate(self, embedder):
        lib = LIBRARY.library_pcs[0]
        pc = CompetencyRecord("Program Delivery", lib.definition, OF, 6, "why")
        out, trace = make_pipeline(MockChatProvider(), embedder).run_validation(PM31, [pc])
        assert (out[0].label, out[0].definition) == (lib.label, lib.definition)
        assert (out[0].priority, out[0].justification) == (6, "why")
        assert trace.actions[0].action == "replaced"

    def test_validation_leaves_distinct_pc(self, embedder):
        out, trace = make_pipeline(MockChatProvider(), embedder).run_validation(PM31, [PC_1])
        assert out == [PC_1] and trace.actions == []

    def test_stage_failure_names_stage(self, embedder):
        mock = MockChatProvider().add(Stage.PRIMARY, "PM-31", serialize_competencies([PC_1]))
        mock.add(Stage.EVALUATE, "PM-31", "[EVAL]\npc: 1\n")
        with pytest.raises(PipelineStageError) as err:
            make_pipeline(mock, embedder).run_pipeline(PM31)
        assert err.value.stage == "eval_regen" and err.value.req_id == "PM-31"

    def test_batch_isolates_failures(self, embedder):
        mock = pm31_mock()
        other = Requisition("PM-32", "PM", sections={"JD": "anything"})
        mock.add(Stage.PRIMARY, "PM-32", "garbage without blocks")
        result = make_pipeline(mock, embedder).run_batch([PM31, other], workers=2)
        assert [ls.req_id for ls in result.label_sets] == ["PM-31"]
        assert [(f.req_id, f.stage) for f in result.failures] == [("PM-32", "primary")]


words = st.sampled_from(["program", "risk", "payments", "launch", "seller", "data", "analysis", "vendor",
                         "ownership", "customer", "trust", "scope", "roadmap", "fraud"])
phrases = st.lists(words, min_size=1, max_size=5).map(" ".join)


@st.composite
def pcs(draw):
    label = draw(phrases).title()
    definition = draw(phrases.filter(lambda d: d.title() != label)) + " work"
    return CompetencyRecord(label, definition, draw(st.sampled_from([DTS, OF])), draw(st.integers(1, 10)))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(pcs(), max_size=6), st.lists(pcs(), max_size=3, unique_by=lambda r: r.label))
def test_filter_invariants(embedder, inputs, excluded):
    library = ReferenceLibrary(excluded_pcs=tuple(excluded))
    pipe = make_pipeline(MockChatProvider(), embedder, library=library)
    kept, removed, trace = pipe.run_filter(inputs)
    cfg = SimilarityConfig()
    assert sorted(map(id, kept + removed)) == sorted(map(id, inputs))
    assert len(trace.removals) == len(removed)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert pc_similarity(a, b, cfg, embedder) <= cfg.threshold
        for x in excluded:
            assert pc_similarity(a, x, cfg, embedder) <= cfg.threshold


def test_filter_keeps_higher_ranked_duplicate(embedder):
    top = dataclasses.replace(PC_2, priority=8)
    dup = dataclasses.replace(PC_2, label="Program Management Skills", priority=5,
                              mentions=MentionEvidence(jd_count=1))
    kept, removed, trace = make_pipeline(MockChatProvider(), embedder).run_filter([dup, top])
    assert kept == [top] and removed == [dup]
    assert trace.removals[0].cause == "redundant"


def test_eval_regen_clamps_pq_only(embedder):
    pq_only = CompetencyRecord("Card Network Rules", "Knows card network operating rules", OF, 9,
                               mentions=MentionEvidence(in_pq=True))
    mock = MockChatProvider().add(Stage.EVALUATE, "PM-31", passing_evaluation([pq_only]))
    pcs, trace = make_pipeline(mock, embedder).run_eval_regen(PM31, [pq_only])
    assert pcs[0].priority == 4
    assert [(c.old_priority, c.new_priority) for c in trace.corrections] == [(9, 4)]


def test_filter_removes_duplicate_at_point_nine():
    from reqpc.similarity import Embedder, StaticEmbeddingProvider

    # identical labels, definition cosine 6/7: 0.3 * 1 + 0.7 * 6/7 = 0.9
    d = 6 / 7
    emb = Embedder(StaticEmbeddingProvider({
        "Skill": [1.0, 0.0], "def a": [1.0, 0.0], "def b": [d, (1 - d * d) ** 0.5],
    }))
    top = CompetencyRecord("Skill", "def a", DTS, 9)
    dup = CompetencyRecord("Skill", "def b", OF, 6)
    kept, removed, trace = make_pipeline(MockChatProvider(), emb, library=ReferenceLibrary()).run_filter([dup, top])
    assert kept == [top] and removed == [dup]
    assert trace.removals[0].score == pytest.approx(0.9)


def test_filter_noop_when_all_distinct(embedder):
    kept, removed, _ = make_pipeline(MockChatProvider(), embedder).run_filter([PC_1, PC_2])
    assert kept == [PC_1, PC_2] and removed == []
