"""Matching and agreement metrics between model-generated and SME label sets.

Alignment metrics over zero matched pairs are ``None`` (absent), never 0,
so they drop out of averages instead of dragging them down.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import t as student_t

from reqpc.errors import ConfigError
from reqpc.model import Category, CompetencyRecord, LabelSet, SMERatingSheet
from reqpc.similarity import Embedder, SimilarityConfig, pc_similarity

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricConfig:
    persistence: float = 0.9
    rating_range: float = 10.0
    threshold: float = 0.5
    top1_min_priority: int = 6
    precision_mode: str = "count_as_miss"  # or "exclude"
    ra_mode: str = "as_written"  # or "normalized"
    top1_acceptance_level: int = 2

    def __post_init__(self):
        if not 0.0 < self.persistence < 1.0:
            raise ConfigError("persistence must lie in (0, 1)")
        if self.rating_range <= 0:
            raise ConfigError("rating_range must be positive")
        if self.precision_mode not in ("count_as_miss", "exclude"):
            raise ConfigError(f"unknown precision_mode {self.precision_mode!r}")
        if self.ra_mode not in ("as_written", "normalized"):
            raise ConfigError(f"unknown ra_mode {self.ra_mode!r}")
        if self.top1_acceptance_level not in (2, 3):
            raise ConfigError("top1_acceptance_level must be 2 or 3")


@dataclass(frozen=True)
class MatchedPairSet:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_model: tuple[int, ...]
    unmatched_truth: tuple[int, ...]

    @property
    def total(self) -> float:
        # fsum is exactly rounded, so the total does not depend on pair order
        return math.fsum(s for _, _, s in self.pairs)

    def truth_for(self, model_index: int) -> int | None:
        for i, j, _ in self.pairs:
            if i == model_index:
                return j
        return None


def match_matrix(sim: np.ndarray, threshold: float = 0.5) -> MatchedPairSet:
    """Maximum-total-similarity one-to-one matching over pairs scoring above ``threshold``.

    Pairs at or below the threshold get weight 0, so an optimal full assignment
    restricted to valid pairs is an optimal matching over valid pairs.
    """
    sim = np.asarray(sim, dtype=float)
    n_model, n_truth = sim.shape if sim.ndim == 2 else (0, 0)
    if n_model == 0 or n_truth == 0:
        return MatchedPairSet((), tuple(range(n_model)), tuple(range(n_truth)))
    valid = sim > threshold
    weights = np.where(valid, sim, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    pairs = tuple(
        (int(i), int(j), float(sim[i, j])) for i, j in zip(rows, cols) if valid[i, j]
    )
    used_m = {i for i, _, _ in pairs}
    used_t = {j for _, j, _ in pairs}
    return MatchedPairSet(
        pairs,
        tuple(i for i in range(n_model) if i not in used_m),
        tuple(j for j in range(n_truth) if j not in used_t),
    )


def similarity_matrix(model: Sequence[CompetencyRecord], truth: Sequence[CompetencyRecord],
                      sim_cfg: SimilarityConfig, embedder: Embedder) -> np.ndarray:
    out = np.zeros((len(model), len(truth)))
    for i, a in enumerate(model):
        for j, b in enumerate(truth):
            out[i, j] = pc_similarity(a, b, sim_cfg, embedder)
    return out


def match_pcs(model: LabelSet, truth: LabelSet, sim_cfg: SimilarityConfig, embedder: Embedder,
              cfg: MetricConfig | None = None) -> MatchedPairSet:
    if model.req_id != truth.req_id:
        raise ValueError(f"cannot match label sets of different reqs ({model.req_id} vs {truth.req_id})")
    cfg = cfg or MetricConfig()
    sim = similarity_matrix(model.records, truth.records, sim_cfg, embedder)
    return match_matrix(sim, cfg.threshold)


@dataclass(frozen=True)
class ReqComparison:
    """One req's model list, reference list (both ranked) and their matching."""

    req_id: str
    model: tuple[CompetencyRecord, ...]
    truth: tuple[CompetencyRecord, ...]
    matching: MatchedPairSet
    job_category: str = ""


def compare(model: LabelSet, truth: LabelSet, sim_cfg: SimilarityConfig, embedder: Embedder,
            cfg: MetricConfig | None = None, job_category: str = "") -> ReqComparison:
    return ReqComparison(model.req_id, model.records, truth.records,
                         match_pcs(model, truth, sim_cfg, embedder, cfg), job_category)


def top1_eligible(pc: CompetencyRecord, cfg: MetricConfig) -> bool:
    return pc.category is Category.DOMAIN_TEAM_SPECIFIC and pc.priority >= cfg.top1_min_priority


def top1_hit(c: ReqComparison, k: int, cfg: MetricConfig) -> bool | None:
    """True/False for a hit or miss; None when the req drops out of the denominator."""
    if not c.model:
        return None if cfg.precision_mode == "exclude" else False
    if not top1_eligible(c.model[0], cfg):
        return None if cfg.precision_mode == "exclude" else False
    j = c.matching.truth_for(0)
    return j is not None and j < k


def topk_precision(comparisons: Iterable[ReqComparison], k: int, cfg: MetricConfig | None = None) -> float | None:
    if k < 1:
        raise ValueError("k must be >= 1")
    cfg = cfg or MetricConfig()
    hits = [h for h in (top1_hit(c, k, cfg) for c in comparisons) if h is not None]
    if not hits:
        return None
    return sum(hits) / len(hits)


def ranking_alignment(m: Sequence, s: Sequence, cfg: MetricConfig | None = None) -> float:
    """Rank-biased overlap summed to depth max(|M|, |S|).

    ``as_written`` stops at that depth with no extrapolation, so identical
    lists of length K score 1 - p**K; ``normalized`` divides by that ceiling.
    """
    cfg = cfg or MetricConfig()
    p = cfg.persistence
    depth = max(len(m), len(s))
    if depth == 0:
        return 1.0
    seen_m: set = set()
    seen_s: set = set()
    overlap = 0
    total = 0.0
    for k in range(1, depth + 1):
        if k <= len(m):
            x = m[k - 1]
            if x in seen_s:
                overlap += 1
            seen_m.add(x)
        if k <= len(s):
            y = s[k - 1]
            if y in seen_m:
                overlap += 1
            seen_s.add(y)
        total += p ** (k - 1) * overlap / k
    ra = (1 - p) * total
    if cfg.ra_mode == "normalized":
        ra /= 1 - p ** depth
    return ra


def rank_identifiers(c: ReqComparison) -> tuple[list[str], list[str]]:
    """Identifier sequences for RA: matched pairs share an id, unmatched PCs get their own."""
    m_ids = [f"m{i}" for i in range(len(c.model))]
    s_ids = [f"s{j}" for j in range(len(c.truth))]
    for i, j, _ in c.matching.pairs:
        m_ids[i] = s_ids[j] = f"pair{i}_{j}"
    return m_ids, s_ids


def comparison_ra(c: ReqComparison, cfg: MetricConfig | None = None) -> float:
    m, s = rank_identifiers(c)
    return ranking_alignment(m, s, cfg)


def priority_alignment(c: ReqComparison, cfg: MetricConfig | None = None) -> float | None:
    cfg = cfg or MetricConfig()
    pairs = c.matching.pairs
    if not pairs:
        return None
    err = math.fsum(abs(c.model[i].priority - c.truth[j].priority) / cfg.rating_range for i, j, _ in pairs)
    return 1 - err / len(pairs)


def category_alignment(c: ReqComparison, cfg: MetricConfig | None = None) -> float | None:
    pairs = c.matching.pairs
    if not pairs:
        return None
    err = sum(abs(c.model[i].category.indicator - c.truth[j].category.indicator) for i, j, _ in pairs)
    return 1 - err / len(pairs)


def mean_present(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


METRICS = ("top1_precision", "top2_precision", "top3_precision", "ranking_alignment",
           "priority_alignment", "category_alignment")


def corpus_metrics(comparisons: Sequence[ReqComparison], cfg: MetricConfig | None = None) -> dict[str, float | None]:
    """All headline metrics for one run over a set of reqs (alignment metrics averaged per req)."""
    cfg = cfg or MetricConfig()
    return {
        "top1_precision": topk_precision(comparisons, 1, cfg),
        "top2_precision": topk_precision(comparisons, 2, cfg),
        "top3_precision": topk_precision(comparisons, 3, cfg),
        "ranking_alignment": mean_present(comparison_ra(c, cfg) for c in comparisons),
        "priority_alignment": mean_present(priority_alignment(c, cfg) for c in comparisons),
        "category_alignment": mean_present(category_alignment(c, cfg) for c in comparisons),
    }


def req_metrics(c: ReqComparison, cfg: MetricConfig | None = None) -> dict[str, float | None]:
    cfg = cfg or MetricConfig()
    row: dict[str, float | None] = {}
    for k in (1, 2, 3):
        hit = top1_hit(c, k, cfg)
        row[f"top{k}_precision"] = None if hit is None else float(hit)
    row["ranking_alignment"] = comparison_ra(c, cfg)
    row["priority_alignment"] = priority_alignment(c, cfg)
    row["category_alignment"] = category_alignment(c, cfg)
    return row


IRR_METRICS = ("top1_precision", "ranking_alignment", "priority_alignment", "category_alignment")


def compute_irr(rater_sets: Mapping[str, Sequence[LabelSet]], sim_cfg: SimilarityConfig, embedder: Embedder,
                cfg: MetricConfig | None = None) -> dict[str, float | None]:
    """Average each metric over every ordered rater pair (A as prediction, B as reference) of every req."""
    cfg = cfg or MetricConfig()
    values: dict[str, list[float | None]] = {m: [] for m in IRR_METRICS}
    for req_id, sets in rater_sets.items():
        if len(sets) < 2:
            log.warning("req %s has %d rater(s); excluded from IRR", req_id, len(sets))
            continue
        for a, b in itertools.permutations(sets, 2):
            c = compare(a, b, sim_cfg, embedder, cfg)
            hit = top1_hit(c, 1, cfg)
            values["top1_precision"].append(None if hit is None else float(hit))
            values["ranking_alignment"].append(comparison_ra(c, cfg))
            values["priority_alignment"].append(priority_alignment(c, cfg))
            values["category_alignment"].append(category_alignment(c, cfg))
    return {m: mean_present(v) for m, v in values.items()}


def out_of_scope_rates(model_sets: Iterable[LabelSet], ratings: Mapping[str, SMERatingSheet],
                       min_priority: int = 6) -> tuple[float | None, float | None]:
    """(overall defect rate over rated PCs, fraction of reqs whose top PC is a defect).

    A defect is a PC with priority >= ``min_priority`` that SMEs flagged out-of-scope.
    """
    rated = defects = 0
    top_reqs = top_defects = 0
    for ls in model_sets:
        sheet = ratings.get(ls.req_id)
        for pos, pc in enumerate(ls.records):
            r = sheet.rating_for(pc.label) if sheet is not None else None
            if r is None:
                log.warning("PC %r of req %s has no SME rating; excluded", pc.label, ls.req_id)
                continue
            defect = pc.priority >= min_priority and r.out_of_scope == 1
            rated += 1
            defects += defect
            if pos == 0:
                top_reqs += 1
                top_defects += defect
    return (defects / rated if rated else None, top_defects / top_reqs if top_reqs else None)


def sme_rating_summary(sheets: Sequence[SMERatingSheet], acceptance_level: int = 2) -> dict[str, float | None]:
    """Fraction of positive anchors per rating dimension."""
    pcs = [r for s in sheets for r in s.pc_ratings]

    def frac(xs):
        xs = list(xs)
        return sum(xs) / len(xs) if xs else None

    return {
        "in_scope": frac(1 - r.out_of_scope for r in pcs),
        "out_of_scope_flag_rate": frac(r.out_of_scope for r in pcs),
        "granularity_appropriateness": frac(r.granularity == "just_right" for r in pcs),
        "categorization_correctness": frac(r.categorization_correct for r in pcs),
        "justification_quality": frac(r.justification_ok for r in pcs),
        "overlap_free": frac(s.overlap_free for s in sheets),
        "top1_precision": frac(s.top1_appropriateness >= acceptance_level for s in sheets),
    }


@dataclass(frozen=True)
class RunAggregate:
    mean: float
    n: int
    ci_low: float | None = None
    ci_high: float | None = None

    @property
    def half_width(self) -> float | None:
        return None if self.ci_high is None else self.ci_high - self.mean


def aggregate_runs(values: Iterable[float | None], confidence: float = 0.95) -> RunAggregate | None:
    """Mean of per-run values with a Student-t interval; a single run has no interval."""
    vals = [float(v) for v in values if v is not None]
    n = len(vals)
    if n == 0:
        return None
    if all(v == vals[0] for v in vals):
        mean = vals[0]
        return RunAggregate(mean, n) if n == 1 else RunAggregate(mean, n, mean, mean)
    mean = math.fsum(vals) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1))
    half = float(student_t.ppf(0.5 + confidence / 2, n - 1)) * sd / math.sqrt(n)
    return RunAggregate(mean, n, mean - half, mean + half)
