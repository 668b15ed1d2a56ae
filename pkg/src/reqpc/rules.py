"""Priority-rating bounds and ranking rules for competency records.

Evidence rules (a PC "only" in a section means no mention anywhere else):

    PQ only                       -> max 4
    BQ only                       -> max 6
    BQ and JD                     -> min 6
    BQ, PQ and JD                 -> min 7
    BQ, PQ and JD (2+ mentions)   -> min 8
    Domain/Team-Specific          -> min 7, even for JD-only mentions

When the category minimum collides with an evidence maximum, the category
minimum wins, the maximum is lifted to 10, and ``conflict`` is set.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Sequence

from reqpc.model import Category, CompetencyRecord, MentionEvidence

PRIORITY_MIN = 1
PRIORITY_MAX = 10


@dataclass(frozen=True)
class PriorityBounds:
    min: int
    max: int
    conflict: bool = False

    def clamp(self, priority: int) -> int:
        return max(self.min, min(self.max, priority))

    def __contains__(self, priority: int) -> bool:
        return self.min <= priority <= self.max


def priority_bounds(mentions: MentionEvidence, category: Category) -> PriorityBounds:
    lo, hi = PRIORITY_MIN, PRIORITY_MAX
    bq, pq, jd = mentions.in_bq, mentions.in_pq, mentions.jd_count

    if pq and not bq and jd == 0:
        hi = min(hi, 4)
    if bq and not pq and jd == 0:
        hi = min(hi, 6)
    if bq and jd >= 1:
        lo = max(lo, 6)
    if bq and pq and jd >= 1:
        lo = max(lo, 7)
    if bq and pq and jd >= 2:
        lo = max(lo, 8)
    if Category.parse(category) is Category.DOMAIN_TEAM_SPECIFIC:
        lo = max(lo, 7)

    if lo > hi:
        return PriorityBounds(lo, PRIORITY_MAX, conflict=True)
    return PriorityBounds(lo, hi)


def enforce_priority(pc: CompetencyRecord) -> tuple[CompetencyRecord, bool]:
    """Clamp ``pc.priority`` into its rule bounds. Returns the record and whether it changed."""
    bounds = priority_bounds(pc.mentions, pc.category)
    new = bounds.clamp(pc.priority)
    if new == pc.priority:
        return pc, False
    return dataclasses.replace(pc, priority=new), True


def _rank_key(pc: CompetencyRecord) -> tuple[int, int]:
    return (0 if pc.category is Category.DOMAIN_TEAM_SPECIFIC else 1, -pc.priority)


def rank_competencies(records: Iterable[CompetencyRecord]) -> list[CompetencyRecord]:
    # sorted() is stable, so equal (category, priority) keep generation order
    return sorted(records, key=_rank_key)


def is_ranked(records: Sequence[CompetencyRecord]) -> bool:
    keys = [_rank_key(r) for r in records]
    return all(a <= b for a, b in zip(keys, keys[1:]))
