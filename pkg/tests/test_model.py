import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reqpc.errors import ValidationError
from reqpc.model import (
    DTS,
    OF,
    CompetencyRecord,
    DatasetBundle,
    LabelSet,
    MentionEvidence,
    PCRating,
    ReferenceLibrary,
    Requisition,
    SMERatingSheet,
    Source,
)
from reqpc.rules import rank_competencies
from reqpc.store import (
    load_bundle,
    load_dataset,
    save_label_set,
    save_label_sets,
    save_library,
    save_ratings,
    save_requisitions,
    save_splits,
)


def rec(label="Label", definition="A definition", category=OF, priority=5, **kw):
    return CompetencyRecord(label, definition, category, priority, **kw)


def write_lines(path: Path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))
    return path


def req_obj(rid):
    return {"schema_version": 1, "req_id": rid, "job_category": "PM", "external_title": "t",
            "department": "d", "sections": {"BQ": "", "PQ": "", "JD": "some jd"}}


def record_obj(label, priority=5, category="OtherFunctional"):
    return {"label": label, "definition": f"{label} definition", "category": category, "priority": priority,
            "justification": "", "mentions": {"in_bq": False, "in_pq": False, "jd_count": 1}}


class TestRecords:
    def test_priority_bounds(self):
        for bad in (0, 11, -3):
            with pytest.raises(ValidationError, match="priority"):
                rec(priority=bad)

    def test_label_must_differ_from_definition(self):
        with pytest.raises(ValidationError, match="differ"):
            rec(label="Same", definition="Same")

    def test_empty_label_rejected(self):
        with pytest.raises(ValidationError):
            rec(label="   ")

    def test_text_is_stripped(self):
        r = rec(label="  Padded ", definition=" Def\n")
        assert (r.label, r.definition) == ("Padded", "Def")

    def test_negative_jd_count(self):
        with pytest.raises(ValidationError, match="jd_count"):
            MentionEvidence(jd_count=-1)

    def test_category_aliases(self):
        assert rec(category="Domain/Team-Specific").category is DTS
        assert rec(category="other functional").category is OF
        with pytest.raises(ValidationError):
            rec(category="Leadership")

    def test_requisition_requires_jd(self):
        with pytest.raises(ValidationError, match="JD"):
            Requisition("R1", "PM", sections={"BQ": "x"})
        r = Requisition("R1", "Nurse", sections={"JD": "text"})
        assert r.sections["BQ"] == "" and r.job_category == "Nurse"

    def test_rating_sheet_bounds(self):
        with pytest.raises(ValidationError):
            SMERatingSheet("R1", top1_appropriateness=4)
        with pytest.raises(ValidationError):
            PCRating("x", out_of_scope=2)
        with pytest.raises(ValidationError):
            PCRating("x", out_of_scope=0, granularity="medium")


class TestLabelSetInvariants:
    def test_sme_cap(self):
        records = tuple(rec(f"L{i}", priority=9 - i) for i in range(6))
        ls = LabelSet("R1", Source.sme("a"), records)
        assert any("at most 5" in p for p in ls.violations())
        assert LabelSet("R1", Source.model_run("r"), records).violations() == []

    def test_ordering_checked_not_fixed(self):
        ls = LabelSet("R1", Source.consensus(), (rec("A", priority=3), rec("B", priority=8)))
        assert ls.records[0].label == "A"
        with pytest.raises(ValidationError, match="ranking"):
            ls.check()


class TestLoad:
    def test_two_reqs(self, tmp_path):
        path = write_lines(tmp_path / "reqs.jsonl", [req_obj("R1"), req_obj("R2")])
        bundle = load_dataset(path, "reqs")
        assert list(bundle.requisitions) == ["R1", "R2"]

    def test_priority_11_names_invariant(self, tmp_path):
        obj = {"schema_version": 1, "req_id": "R1", "source": {"kind": "consensus", "id": ""},
               "records": [record_obj("A", priority=11)]}
        path = write_lines(tmp_path / "labels.jsonl", [obj])
        with pytest.raises(ValidationError) as err:
            load_dataset(path, "labels")
        assert "priority <= 10" in str(err.value)
        assert ":1:" in err.value.problems[0]

    def test_sme_six_records(self, tmp_path):
        obj = {"schema_version": 1, "req_id": "R1", "source": {"kind": "sme", "id": "rater1"},
               "records": [record_obj(f"L{i}", priority=9) for i in range(6)]}
        path = write_lines(tmp_path / "labels.jsonl", [obj])
        with pytest.raises(ValidationError, match="at most 5"):
            load_dataset(path, "labels")

    def test_duplicate_req_id(self, tmp_path):
        path = write_lines(tmp_path / "reqs.jsonl", [req_obj("R1"), req_obj("R1")])
        with pytest.raises(ValidationError, match="duplicate req_id"):
            load_dataset(path, "reqs")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.jsonl", "reqs")

    def test_reports_every_bad_line(self, tmp_path):
        bad = dict(req_obj("R2"), sections={"BQ": "x"})
        path = write_lines(tmp_path / "reqs.jsonl", [req_obj("R1"), bad, {"req_id": "R3"}])
        with pytest.raises(ValidationError) as err:
            load_dataset(path, "reqs")
        assert len(err.value.problems) == 2
        assert ":2:" in err.value.problems[0] and ":3:" in err.value.problems[1]

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "reqs.jsonl"
        path.write_text('{"schema_version": 1,\n')
        with pytest.raises(ValidationError, match="malformed JSON"):
            load_dataset(path, "reqs")

    def test_label_set_must_reference_existing_req(self, tmp_path):
        reqs = write_lines(tmp_path / "reqs.jsonl", [req_obj("R1")])
        labels = write_lines(tmp_path / "labels.jsonl", [
            {"schema_version": 1, "req_id": "R9", "source": {"kind": "consensus", "id": ""}, "records": []}])
        with pytest.raises(ValidationError, match="unknown req R9"):
            load_bundle(reqs, labels)

    def test_canonical_schema_fixtures_load(self):
        root = Path(__file__).parent.parent / "schemas"
        bundle = load_bundle(root / "requisitions.jsonl", root / "label_sets.jsonl", root / "library.jsonl",
                             root / "ratings.jsonl", root / "splits.jsonl")
        assert bundle.requisitions and bundle.label_sets and bundle.library and bundle.ratings and bundle.splits


class TestSave:
    def test_round_trip(self, tmp_path):
        ls = LabelSet("R1", Source.sme("a"), (rec("A", category=DTS, priority=8), rec("B", priority=4)))
        path = tmp_path / "ls.jsonl"
        save_label_set(ls, path)
        loaded = load_dataset(path, "labels").label_sets[("R1", Source.sme("a"))]
        assert loaded == ls
        first = path.read_bytes()
        save_label_set(loaded, path)
        assert path.read_bytes() == first

    def test_ordering_violation_blocks_write(self, tmp_path):
        ls = LabelSet("R1", Source.consensus(), (rec("A", priority=2), rec("B", priority=7)))
        path = tmp_path / "ls.jsonl"
        with pytest.raises(ValidationError):
            save_label_set(ls, path)
        assert not path.exists()

    def test_unwritable_location(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        ls = LabelSet("R1", Source.consensus(), ())
        target = blocker / "ls.jsonl"
        with pytest.raises(OSError) as err:
            save_label_set(ls, target)
        assert str(target) in str(err.value)

    def test_all_kinds_round_trip(self, tmp_path):
        reqs = [Requisition("R1", "PM", "T", "D", {"JD": "jd text", "BQ": "bq"}),
                Requisition("R2", "PMT", sections={"JD": "other"})]
        lib = ReferenceLibrary((rec("Lib A"),), (rec("Excl B", "Excluded def"),))
        sheets = [SMERatingSheet("R1", (PCRating("A", 1, "too_broad", 0, 1),), 0, 2, "r1")]
        save_requisitions(reqs, tmp_path / "r.jsonl")
        save_library(lib, tmp_path / "l.jsonl")
        save_ratings(sheets, tmp_path / "s.jsonl")
        save_splits({"R1": "train", "R2": "test"}, tmp_path / "sp.jsonl")
        bundle = load_bundle(tmp_path / "r.jsonl", library=tmp_path / "l.jsonl", ratings=tmp_path / "s.jsonl",
                             splits=tmp_path / "sp.jsonl")
        assert list(bundle.requisitions.values()) == reqs
        assert bundle.library == lib
        assert list(bundle.ratings) == sheets
        assert bundle.splits == {"R1": "train", "R2": "test"}


text = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30).map(str.strip).filter(bool)


@st.composite
def records(draw):
    label = draw(text)
    definition = draw(text.filter(lambda d: d != label))
    return CompetencyRecord(
        label, definition, draw(st.sampled_from([DTS, OF])), draw(st.integers(1, 10)), draw(st.text(max_size=20)),
        MentionEvidence(draw(st.booleans()), draw(st.booleans()), draw(st.integers(0, 5))),
    )


@settings(max_examples=60, deadline=None)
@given(st.lists(records(), max_size=5), st.sampled_from([Source.consensus(), Source.sme("x"), Source.model_run("r")]))
def test_label_set_round_trip_property(tmp_path_factory, recs, source):
    ls = LabelSet("REQ", source, tuple(rank_competencies(recs)))
    path = tmp_path_factory.mktemp("rt") / "ls.jsonl"
    save_label_sets([ls], path)
    assert load_dataset(path, "labels").label_sets[("REQ", source)] == ls


def test_bundle_merge_rejects_duplicates():
    a = DatasetBundle.of([Requisition("R1", "PM", sections={"JD": "x"})])
    with pytest.raises(ValidationError):
        a.merge(a)
