"""Experiment orchestration: splitting, repeated pipeline runs, evaluation, ablations and IRR."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from reqpc.errors import ConfigError, ReqPCError
from reqpc.llm.providers import ChatClient, ChatProvider, make_chat_provider
from reqpc.metrics import (
    IRR_METRICS,
    METRICS,
    MetricConfig,
    ReqComparison,
    aggregate_runs,
    compare,
    compute_irr,
    corpus_metrics,
    req_metrics,
)
from reqpc.model import DatasetBundle, LabelSet, Requisition
from reqpc.pipeline import BatchResult, Pipeline, PipelineConfig
from reqpc.report import EvaluationReport, MetricRow, ReqRow
from reqpc.similarity import Embedder, make_embedding_provider
from reqpc.store import load_bundle, save_label_sets, write_jsonl

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.26, 0.50, 0.24)
ALL_GROUP = "ALL"


class ExperimentError(ReqPCError):
    exit_code = 2


VARIANT_FIELDS = ("few_shot_mode", "static_example_id", "enable_eval_regen", "enable_filter",
                  "enable_validation", "extended_reasoning", "model_id")


@dataclass(frozen=True)
class AblationVariant:
    name: str
    overrides: Mapping[str, Any]

    def __post_init__(self):
        if not self.name:
            raise ConfigError("ablation variant needs a name")
        if not self.overrides:
            raise ConfigError(f"ablation variant {self.name!r} has no overrides")
        unknown = set(self.overrides) - set(VARIANT_FIELDS)
        if unknown:
            raise ConfigError(f"variant {self.name!r} overrides unknown field(s) {sorted(unknown)}")

    def apply(self, cfg: PipelineConfig) -> PipelineConfig:
        return dataclasses.replace(cfg, **dict(self.overrides))


@dataclass(frozen=True)
class ExperimentConfig:
    reqs: str
    labels: str | None = None
    library: str | None = None
    ratings: str | None = None
    splits: str | None = None
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    seed: int = 0
    runs: int = 10
    eval_split: str = "test"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    variants: tuple[AblationVariant, ...] = ()
    chat: Mapping[str, Any] = field(default_factory=lambda: {"kind": "mock", "fixtures": "mock_responses.jsonl"})
    embedding: Mapping[str, Any] = field(default_factory=lambda: {"kind": "hashing", "dim": 64})
    output_dir: str = "out"
    workers: int = 1
    retry_attempts: int = 3
    retry_base_delay: float = 1.0
    max_in_flight: int = 4
    workspace: str = "."

    def __post_init__(self):
        check_fractions(self.fractions)
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        names = [v.name for v in self.variants]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ConfigError(f"duplicate ablation variant name(s): {dup}")
        if "baseline" in names:
            raise ConfigError("'baseline' is reserved for the unmodified configuration")

    def path(self, rel: str | None) -> Path | None:
        return None if rel is None else Path(self.workspace) / rel

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], workspace: str | os.PathLike = ".") -> ExperimentConfig:
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config key(s): {sorted(unknown)}")
        try:
            if "pipeline" in d:
                d["pipeline"] = PipelineConfig(**d["pipeline"])
            if "metrics" in d:
                d["metrics"] = MetricConfig(**d["metrics"])
            if "variants" in d:
                d["variants"] = tuple(AblationVariant(v["name"], v.get("overrides", {})) for v in d["variants"])
            if "fractions" in d:
                d["fractions"] = tuple(float(x) for x in d["fractions"])
            d.setdefault("workspace", str(workspace))
            if "reqs" not in d:
                raise ConfigError("experiment config needs a 'reqs' path")
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None

    @classmethod
    def from_file(cls, path: str | os.PathLike, workspace: str | os.PathLike | None = None) -> ExperimentConfig:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(data, workspace if workspace is not None else path.parent)


def check_fractions(fractions: Sequence[float]) -> None:
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError("split fractions must be three non-negative numbers (train, dev, test)")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of ``n`` items."""
    raw = [n * f for f in fractions]
    sizes = [int(x) for x in raw]
    order = sorted(range(3), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes[0], sizes[1], sizes[2]


def split_dataset(bundle: DatasetBundle, fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0) -> DatasetBundle:
    check_fractions(fractions)
    ids = sorted(bundle.requisitions)
    if len(ids) < 3:
        raise ConfigError(f"need at least 3 requisitions to split, got {len(ids)}")
    random.Random(seed).shuffle(ids)
    n_train, n_dev, _ = split_sizes(len(ids), fractions)
    splits = {}
    for pos, rid in enumerate(ids):
        splits[rid] = "train" if pos < n_train else "dev" if pos < n_train + n_dev else "test"
    return bundle.with_splits({rid: splits[rid] for rid in sorted(splits)})


def evaluate_predictions(predictions: Sequence[LabelSet], bundle: DatasetBundle, embedder: Embedder,
                         pipeline_cfg: PipelineConfig, metric_cfg: MetricConfig) -> list[ReqComparison]:
    """Compare each prediction with its req's consensus set; reqs without consensus are skipped."""
    out = []
    for ls in predictions:
        truth = bundle.consensus(ls.req_id)
        if truth is None:
            log.warning("no consensus label set for %s; not evaluated", ls.req_id)
            continue
        category = bundle.requisitions[ls.req_id].job_category if ls.req_id in bundle.requisitions else ""
        out.append(compare(ls, truth, pipeline_cfg.similarity, embedder, metric_cfg, category))
    return out


def _groups(comparisons: Sequence[ReqComparison]) -> dict[str, list[ReqComparison]]:
    groups: dict[str, list[ReqComparison]] = {}
    for c in comparisons:
        groups.setdefault(c.job_category or "unknown", []).append(c)
    ordered = {g: groups[g] for g in sorted(groups)}
    ordered[ALL_GROUP] = list(comparisons)
    return ordered


def report_from_runs(runs: Mapping[str, Sequence[ReqComparison]], metric_cfg: MetricConfig, variant: str,
                     title: str) -> EvaluationReport:
    """Aggregate per-run corpus metrics into mean + CI rows per job-category group."""
    report = EvaluationReport(title)
    per_group_values: dict[str, dict[str, list]] = {}
    for run_id, comparisons in runs.items():
        for group, comps in _groups(comparisons).items():
            values = corpus_metrics(comps, metric_cfg)
            slot = per_group_values.setdefault(group, {m: [] for m in METRICS})
            for m in METRICS:
                slot[m].append(values[m])
            report.n_reqs[group] = max(report.n_reqs.get(group, 0), len(comps))
        for c in comparisons:
            for m, v in req_metrics(c, metric_cfg).items():
                report.req_rows.append(ReqRow(variant, run_id, c.req_id, c.job_category, m, v))
    for group, metrics in per_group_values.items():
        for m in METRICS:
            agg = aggregate_runs(metrics[m])
            if agg is None:
                report.rows.append(MetricRow(variant, group, m, None, None, None, 0))
            else:
                report.rows.append(MetricRow(variant, group, m, agg.mean, agg.ci_low, agg.ci_high, agg.n))
    return report


class Experiment:
    """Binds a config to its loaded dataset and providers.

    Providers may be injected (tests use the scripted mock directly); otherwise
    they are built from the config's ``chat`` and ``embedding`` sections.
    """

    def __init__(self, cfg: ExperimentConfig, bundle: DatasetBundle | None = None,
                 chat_provider: ChatProvider | None = None, embedder: Embedder | None = None):
        self.cfg = cfg
        if bundle is None:
            bundle = load_bundle(cfg.path(cfg.reqs), cfg.path(cfg.labels), cfg.path(cfg.library),
                                 cfg.path(cfg.ratings), cfg.path(cfg.splits))
        if not bundle.splits:
            bundle = split_dataset(bundle, cfg.fractions, cfg.seed)
        self.bundle = bundle
        self.chat_provider = chat_provider or make_chat_provider(cfg.chat, cfg.workspace)
        self.embedder = embedder or Embedder(make_embedding_provider(cfg.embedding), cfg.retry_attempts,
                                             cfg.retry_base_delay)

    def pipeline(self, pipeline_cfg: PipelineConfig | None = None) -> Pipeline:
        client = ChatClient(self.chat_provider, self.cfg.retry_attempts, self.cfg.retry_base_delay,
                            self.cfg.max_in_flight)
        return Pipeline(client, self.embedder, self.bundle.library, self.bundle.example_library,
                        pipeline_cfg or self.cfg.pipeline)

    def eval_reqs(self) -> list[Requisition]:
        reqs = self.bundle.reqs_in(self.cfg.eval_split)
        return sorted(reqs, key=lambda r: r.req_id)

    def run_once(self, run_id: str, pipeline_cfg: PipelineConfig | None = None) -> BatchResult:
        return self.pipeline(pipeline_cfg).run_batch(self.eval_reqs(), run_id, self.cfg.workers)

    def run_experiment(self, pipeline_cfg: PipelineConfig | None = None, variant: str = "baseline",
                       persist: bool = True) -> EvaluationReport:
        pcfg = pipeline_cfg or self.cfg.pipeline
        runs: dict[str, list[ReqComparison]] = {}
        failures = 0
        for r in range(self.cfg.runs):
            run_id = f"run-{r:02d}"
            result = self.run_once(run_id, pcfg)
            if not result.label_sets:
                raise ExperimentError(f"{variant} {run_id} produced no outputs "
                                      f"({len(result.failures)} failure(s))")
            failures += len(result.failures)
            if persist:
                self._persist(variant, run_id, result)
            runs[run_id] = evaluate_predictions(result.label_sets, self.bundle, self.embedder, pcfg, self.cfg.metrics)
        report = report_from_runs(runs, self.cfg.metrics, variant,
                                  f"{variant}: {self.cfg.eval_split} split, {self.cfg.runs} run(s)")
        if failures:
            report.notes.append(f"{variant}: {failures} req failure(s) across runs; see failures.jsonl")
        return report

    def _persist(self, variant: str, run_id: str, result: BatchResult) -> None:
        out = Path(self.cfg.workspace) / self.cfg.output_dir / variant / run_id
        save_label_sets(result.label_sets, out / "labels.jsonl")
        write_jsonl(out / "traces.jsonl", (t.to_dict() for t in result.traces))
        write_jsonl(out / "failures.jsonl", (f.to_dict() for f in result.failures))

    def run_ablation(self, persist: bool = True) -> EvaluationReport:
        """Baseline plus one row block per variant; a failing variant is noted, not fatal."""
        report = self.run_experiment(variant="baseline", persist=persist)
        report.title = f"ablation: {self.cfg.eval_split} split, {self.cfg.runs} run(s)"
        for variant in self.cfg.variants:
            try:
                vcfg = variant.apply(self.cfg.pipeline)
                part = self.run_experiment(vcfg, variant.name, persist)
            except ReqPCError as exc:
                log.error("variant %s failed: %s", variant.name, exc)
                report.notes.append(f"{variant.name}: failed ({exc})")
                report.rows += [MetricRow(variant.name, ALL_GROUP, m, None) for m in METRICS]
                continue
            report.rows += part.rows
            report.req_rows += part.req_rows
            report.notes += part.notes
        return report


def compute_irr_report(bundle: DatasetBundle, embedder: Embedder, pipeline_cfg: PipelineConfig | None = None,
                       metric_cfg: MetricConfig | None = None, split: str | None = None) -> EvaluationReport:
    """Per-job-category IRR from individual SME label sets (ordered-pair averages)."""
    pipeline_cfg = pipeline_cfg or PipelineConfig()
    metric_cfg = metric_cfg or MetricConfig()
    report = EvaluationReport("inter-rater reliability")
    by_group: dict[str, dict[str, list[LabelSet]]] = {}
    for req_id in sorted(bundle.requisitions):
        if split is not None and bundle.splits.get(req_id) != split:
            continue
        sets = bundle.sme_sets(req_id)
        if len(sets) >= 2:
            by_group.setdefault(bundle.requisitions[req_id].job_category, {})[req_id] = sets
    if not by_group:
        log.warning("no req has two or more individual SME label sets; IRR table is empty")
        report.notes.append("no req with >= 2 raters")
        return report
    groups = {g: by_group[g] for g in sorted(by_group)}
    groups[ALL_GROUP] = {rid: s for g in by_group.values() for rid, s in g.items()}
    for group, rater_sets in groups.items():
        values = compute_irr(rater_sets, pipeline_cfg.similarity, embedder, metric_cfg)
        report.n_reqs[group] = len(rater_sets)
        for m in IRR_METRICS:
            report.rows.append(MetricRow("irr", group, m, values[m], None, None, 1))
    return report


def dump_config(cfg: ExperimentConfig) -> str:
    d = dataclasses.asdict(cfg)
    d["variants"] = [{"name": v.name, "overrides": dict(v.overrides)} for v in cfg.variants]
    d["fractions"] = list(cfg.fractions)
    return json.dumps(d, indent=2, sort_keys=True, default=str)
