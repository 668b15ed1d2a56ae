"""Domain types for requisitions, competency records, label sets and SME ratings.

All types are frozen dataclasses. Constructors enforce field-level invariants
and raise :class:`ValidationError`; collection-level invariants that a caller
may legitimately hold in memory (ranking order, the SME cap) are reported by
``LabelSet.violations()`` and enforced on load and save.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from reqpc.errors import ValidationError

SME_MAX_PCS = 5


class SectionKind(str, enum.Enum):
    BQ = "BQ"
    PQ = "PQ"
    JD = "JD"


class Category(str, enum.Enum):
    DOMAIN_TEAM_SPECIFIC = "DomainTeamSpecific"
    OTHER_FUNCTIONAL = "OtherFunctional"

    @classmethod
    def parse(cls, value: str | Category) -> Category:
        if isinstance(value, Category):
            return value
        key = "".join(ch for ch in str(value).lower() if ch.isalpha())
        for member in cls:
            if key == member.value.lower():
                return member
        raise ValidationError(f"unknown category {value!r}")

    @property
    def indicator(self) -> int:
        """1 for Domain/Team-Specific, 0 for Other Functional."""
        return 1 if self is Category.DOMAIN_TEAM_SPECIFIC else 0


DTS = Category.DOMAIN_TEAM_SPECIFIC
OF = Category.OTHER_FUNCTIONAL


def _set(obj, name, value):
    object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class MentionEvidence:
    in_bq: bool = False
    in_pq: bool = False
    jd_count: int = 0

    def __post_init__(self):
        if not isinstance(self.jd_count, int) or isinstance(self.jd_count, bool):
            raise ValidationError(f"jd_count must be an integer, got {self.jd_count!r}")
        if self.jd_count < 0:
            raise ValidationError(f"jd_count must be >= 0, got {self.jd_count}")
        _set(self, "in_bq", bool(self.in_bq))
        _set(self, "in_pq", bool(self.in_pq))

    @property
    def in_jd(self) -> bool:
        return self.jd_count > 0

    def to_dict(self) -> dict:
        return {"in_bq": self.in_bq, "in_pq": self.in_pq, "jd_count": self.jd_count}

    @classmethod
    def from_dict(cls, d: Mapping) -> MentionEvidence:
        return cls(bool(d.get("in_bq", False)), bool(d.get("in_pq", False)), d.get("jd_count", 0))


@dataclass(frozen=True)
class CompetencyRecord:
    """One personal competency. Text fields are whitespace-stripped on construction."""

    label: str
    definition: str
    category: Category
    priority: int
    justification: str = ""
    mentions: MentionEvidence = field(default_factory=MentionEvidence)

    def __post_init__(self):
        for name in ("label", "definition", "justification"):
            value = getattr(self, name)
            if not isinstance(value, str):
                raise ValidationError(f"{name} must be a string, got {type(value).__name__}")
            _set(self, name, value.strip())
        if not self.label:
            raise ValidationError("label must be non-empty")
        if not self.definition:
            raise ValidationError(f"definition of {self.label!r} must be non-empty")
        if self.label == self.definition:
            raise ValidationError(f"label and definition of {self.label!r} must differ")
        _set(self, "category", Category.parse(self.category))
        if not isinstance(self.priority, int) or isinstance(self.priority, bool):
            raise ValidationError(f"priority must be an integer, got {self.priority!r}")
        if not 1 <= self.priority <= 10:
            raise ValidationError(f"priority must satisfy 1 <= priority <= 10, got {self.priority}")
        if not isinstance(self.mentions, MentionEvidence):
            raise ValidationError("mentions must be MentionEvidence")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "definition": self.definition,
            "category": self.category.value,
            "priority": self.priority,
            "justification": self.justification,
            "mentions": self.mentions.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping, default_priority: int | None = None) -> CompetencyRecord:
        priority = d.get("priority", default_priority)
        return cls(
            label=d.get("label", ""),
            definition=d.get("definition", ""),
            category=d.get("category", OF.value),
            priority=priority,
            justification=d.get("justification", ""),
            mentions=MentionEvidence.from_dict(d.get("mentions", {})),
        )


@dataclass(frozen=True)
class Requisition:
    req_id: str
    job_category: str
    external_title: str = ""
    department: str = ""
    sections: Mapping[SectionKind, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.req_id, str) or not self.req_id.strip():
            raise ValidationError("req_id must be a non-empty string")
        sections = {}
        for key, text in dict(self.sections).items():
            try:
                kind = SectionKind(key)
            except ValueError:
                raise ValidationError(f"unknown section {key!r} in req {self.req_id}") from None
            sections[kind] = text or ""
        if not sections.get(SectionKind.JD, "").strip():
            raise ValidationError(f"req {self.req_id} has no JD section")
        sections.setdefault(SectionKind.BQ, "")
        sections.setdefault(SectionKind.PQ, "")
        _set(self, "sections", {k: sections[k] for k in SectionKind})

    @property
    def jd(self) -> str:
        return self.sections[SectionKind.JD]

    def to_dict(self) -> dict:
        return {
            "req_id": self.req_id,
            "job_category": self.job_category,
            "external_title": self.external_title,
            "department": self.department,
            "sections": {k.value: v for k, v in self.sections.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Requisition:
        return cls(
            req_id=d.get("req_id", ""),
            job_category=d.get("job_category", ""),
            external_title=d.get("external_title", ""),
            department=d.get("department", ""),
            sections=d.get("sections", {}),
        )


@dataclass(frozen=True)
class Source:
    """Who produced a label set: ``model_run`` (with run id), ``sme`` (with rater id) or ``consensus``."""

    kind: str
    id: str = ""

    KINDS = ("model_run", "sme", "consensus")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown source kind {self.kind!r}")
        if self.kind == "consensus":
            if self.id:
                raise ValidationError("consensus source takes no id")
        elif not self.id:
            raise ValidationError(f"{self.kind} source requires an id")

    @classmethod
    def model_run(cls, run_id: str) -> Source:
        return cls("model_run", run_id)

    @classmethod
    def sme(cls, rater_id: str) -> Source:
        return cls("sme", rater_id)

    @classmethod
    def consensus(cls) -> Source:
        return cls("consensus")

    @property
    def is_human(self) -> bool:
        return self.kind in ("sme", "consensus")

    def __str__(self) -> str:
        return f"{self.kind}:{self.id}" if self.id else self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "id": self.id}

    @classmethod
    def from_dict(cls, d: Mapping) -> Source:
        return cls(d.get("kind", ""), d.get("id", "") or "")


@dataclass(frozen=True)
class LabelSet:
    req_id: str
    source: Source
    records: tuple[CompetencyRecord, ...] = ()

    def __post_init__(self):
        if not self.req_id:
            raise ValidationError("label set requires a req_id")
        _set(self, "records", tuple(self.records))

    def violations(self) -> list[str]:
        """Collection-level invariant failures (empty when valid)."""
        from reqpc.rules import is_ranked

        problems = []
        if self.source.is_human and len(self.records) > SME_MAX_PCS:
            problems.append(
                f"{self.source} label set for {self.req_id} has {len(self.records)} records; "
                f"SME label sets hold at most {SME_MAX_PCS}"
            )
        if not is_ranked(self.records):
            problems.append(
                f"{self.source} label set for {self.req_id} violates ranking rules "
                "(Domain/Team-Specific first, then descending priority)"
            )
        return problems

    def check(self) -> LabelSet:
        problems = self.violations()
        if problems:
            raise ValidationError("; ".join(problems), problems)
        return self

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    def to_dict(self) -> dict:
        return {
            "req_id": self.req_id,
            "source": self.source.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> LabelSet:
        return cls(
            req_id=d.get("req_id", ""),
            source=Source.from_dict(d.get("source", {})),
            records=tuple(CompetencyRecord.from_dict(r) for r in d.get("records", [])),
        )


@dataclass(frozen=True)
class ReferenceLibrary:
    """Standardized library PCs plus the explicit out-of-scope exclusion list."""

    library_pcs: tuple[CompetencyRecord, ...] = ()
    excluded_pcs: tuple[CompetencyRecord, ...] = ()

    def __post_init__(self):
        _set(self, "library_pcs", tuple(self.library_pcs))
        _set(self, "excluded_pcs", tuple(self.excluded_pcs))
        for name in ("library_pcs", "excluded_pcs"):
            seen = set()
            for rec in getattr(self, name):
                if rec.label in seen:
                    raise ValidationError(f"duplicate label {rec.label!r} in {name}")
                seen.add(rec.label)


GRANULARITY_VALUES = ("just_right", "too_broad", "too_granular")


def _binary(name: str, value) -> int:
    if isinstance(value, bool):
        value = int(value)
    if value not in (0, 1):
        raise ValidationError(f"{name} must be 0 or 1, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class PCRating:
    """SME rating of one model-generated PC. ``out_of_scope`` is 1 when the SME flags it."""

    label: str
    out_of_scope: int
    granularity: str = "just_right"
    categorization_correct: int = 1
    justification_ok: int = 1

    def __post_init__(self):
        if not self.label:
            raise ValidationError("rated PC needs a label")
        for name in ("out_of_scope", "categorization_correct", "justification_ok"):
            _set(self, name, _binary(name, getattr(self, name)))
        if self.granularity not in GRANULARITY_VALUES:
            raise ValidationError(
                f"granularity must be one of {GRANULARITY_VALUES}, got {self.granularity!r}"
            )


@dataclass(frozen=True)
class SMERatingSheet:
    req_id: str
    pc_ratings: tuple[PCRating, ...] = ()
    overlap_free: int = 1
    top1_appropriateness: int = 3
    rater_id: str = ""

    def __post_init__(self):
        if not self.req_id:
            raise ValidationError("rating sheet requires a req_id")
        _set(self, "pc_ratings", tuple(self.pc_ratings))
        _set(self, "overlap_free", _binary("overlap_free", self.overlap_free))
        if self.top1_appropriateness not in (1, 2, 3) or isinstance(self.top1_appropriateness, bool):
            raise ValidationError(
                f"top1_appropriateness must be 1, 2 or 3, got {self.top1_appropriateness!r}"
            )

    def rating_for(self, label: str) -> PCRating | None:
        for r in self.pc_ratings:
            if r.label == label:
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "req_id": self.req_id,
            "rater_id": self.rater_id,
            "pc_ratings": [
                {
                    "label": r.label,
                    "out_of_scope": r.out_of_scope,
                    "granularity": r.granularity,
                    "categorization_correct": r.categorization_correct,
                    "justification_ok": r.justification_ok,
                }
                for r in self.pc_ratings
            ],
            "overlap_free": self.overlap_free,
            "top1_appropriateness": self.top1_appropriateness,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SMERatingSheet:
        return cls(
            req_id=d.get("req_id", ""),
            rater_id=d.get("rater_id", "") or "",
            pc_ratings=tuple(PCRating(**r) for r in d.get("pc_ratings", [])),
            overlap_free=d.get("overlap_free", 1),
            top1_appropriateness=d.get("top1_appropriateness", 3),
        )


@dataclass(frozen=True)
class FewShotExample:
    """A train-split requisition paired with its desired (consensus) PC output."""

    req: Requisition
    labels: LabelSet

    @property
    def req_id(self) -> str:
        return self.req.req_id


SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class DatasetBundle:
    requisitions: Mapping[str, Requisition] = field(default_factory=dict)
    label_sets: Mapping[tuple[str, Source], LabelSet] = field(default_factory=dict)
    library: ReferenceLibrary | None = None
    ratings: tuple[SMERatingSheet, ...] = ()
    splits: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        _set(self, "ratings", tuple(self.ratings))
        for req_id, split in self.splits.items():
            if split not in SPLITS:
                raise ValidationError(f"req {req_id} has unknown split {split!r}")

    def merge(self, other: DatasetBundle) -> DatasetBundle:
        dup = set(self.requisitions) & set(other.requisitions)
        if dup:
            raise ValidationError(f"duplicate req_id(s): {sorted(dup)}")
        dup_sets = set(self.label_sets) & set(other.label_sets)
        if dup_sets:
            raise ValidationError(f"duplicate label sets: {sorted(map(str, dup_sets))}")
        if self.library is not None and other.library is not None:
            raise ValidationError("bundle already has a reference library")
        return DatasetBundle(
            requisitions={**self.requisitions, **other.requisitions},
            label_sets={**self.label_sets, **other.label_sets},
            library=self.library if self.library is not None else other.library,
            ratings=self.ratings + other.ratings,
            splits={**self.splits, **other.splits},
        )

    def validate_references(self) -> DatasetBundle:
        """Every label set, rating sheet and split entry must name a known req."""
        problems = []
        for req_id, source in self.label_sets:
            if req_id not in self.requisitions:
                problems.append(f"label set {source} references unknown req {req_id}")
        for sheet in self.ratings:
            if sheet.req_id not in self.requisitions:
                problems.append(f"rating sheet references unknown req {sheet.req_id}")
        for req_id in self.splits:
            if req_id not in self.requisitions:
                problems.append(f"split assignment references unknown req {req_id}")
        if problems:
            raise ValidationError("; ".join(problems), problems)
        return self

    def reqs_in(self, split: str) -> list[Requisition]:
        return [r for rid, r in self.requisitions.items() if self.splits.get(rid) == split]

    def consensus(self, req_id: str) -> LabelSet | None:
        return self.label_sets.get((req_id, Source.consensus()))

    def sme_sets(self, req_id: str) -> list[LabelSet]:
        sets = [ls for (rid, src), ls in self.label_sets.items() if rid == req_id and src.kind == "sme"]
        return sorted(sets, key=lambda ls: ls.source.id)

    @property
    def example_library(self) -> list[FewShotExample]:
        out = []
        for req in self.reqs_in("train"):
            labels = self.consensus(req.req_id)
            if labels is not None:
                out.append(FewShotExample(req, labels))
        return out

    def with_splits(self, splits: Mapping[str, str]) -> DatasetBundle:
        return DatasetBundle(self.requisitions, self.label_sets, self.library, self.ratings, dict(splits))

    @classmethod
    def of(
        cls,
        requisitions: Iterable[Requisition] = (),
        label_sets: Iterable[LabelSet] = (),
        library: ReferenceLibrary | None = None,
        ratings: Iterable[SMERatingSheet] = (),
        splits: Mapping[str, str] | None = None,
    ) -> DatasetBundle:
        reqs: dict[str, Requisition] = {}
        for r in requisitions:
            if r.req_id in reqs:
                raise ValidationError(f"duplicate req_id {r.req_id!r}")
            reqs[r.req_id] = r
        sets: dict[tuple[str, Source], LabelSet] = {}
        for ls in label_sets:
            key = (ls.req_id, ls.source)
            if key in sets:
                raise ValidationError(f"duplicate label set {ls.source} for {ls.req_id}")
            sets[key] = ls
        return cls(reqs, sets, library, tuple(ratings), dict(splits or {}))
