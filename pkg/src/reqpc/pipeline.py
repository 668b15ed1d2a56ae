"""Five-stage competency pipeline: primary call, evaluation + regeneration, filter, validation.

Every stage records what it did in a :class:`PipelineTrace` so that removals,
replacements, relabels and rule corrections can be audited after a run.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from reqpc.errors import ConfigError, PipelineStageError, ReqPCError, ValidationError
from reqpc.llm.prompts import PromptContext, PromptSettings, Stage, TemplateSet, assemble_prompt
from reqpc.llm.providers import ChatClient
from reqpc.llm.wire import (
    StageEvaluation,
    parse_competency_output,
    parse_evaluation,
    parse_refined_label,
    parse_suggestions,
)
from reqpc.model import CompetencyRecord, FewShotExample, LabelSet, ReferenceLibrary, Requisition, Source
from reqpc.rules import enforce_priority, priority_bounds, rank_competencies
from reqpc.similarity import Embedder, SimilarityConfig, pc_similarity, pc_similarity_parts, select_example

log = logging.getLogger(__name__)

FEW_SHOT_MODES = ("dynamic", "static", "zero_shot")


@dataclass(frozen=True)
class PipelineConfig:
    few_shot_mode: str = "dynamic"
    static_example_id: str | None = None
    eval_regen_iterations: int = 1
    enable_eval_regen: bool = True
    enable_filter: bool = True
    enable_validation: bool = True
    extended_reasoning: bool = True
    model_id: str = "large-model"
    validation_model_id: str = "small-model"
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    max_pcs: int = 5
    tau_label: float = 0.8
    tau_def: float = 0.5
    template_version: str = "v1"
    max_output: int = 4096

    def __post_init__(self):
        if self.few_shot_mode not in FEW_SHOT_MODES:
            raise ConfigError(f"few_shot_mode must be one of {FEW_SHOT_MODES}, got {self.few_shot_mode!r}")
        if self.eval_regen_iterations < 0:
            raise ConfigError("eval_regen_iterations must be >= 0")
        if self.max_pcs < 1:
            raise ConfigError("max_pcs must be >= 1")
        for name in ("tau_label", "tau_def"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if isinstance(self.similarity, dict):
            object.__setattr__(self, "similarity", SimilarityConfig(**self.similarity))

    def large_model(self) -> PromptSettings:
        return PromptSettings(self.model_id, self.extended_reasoning, self.max_output, 0.0, self.max_pcs)

    def small_model(self) -> PromptSettings:
        return PromptSettings(self.validation_model_id, False, self.max_output, 0.0, self.max_pcs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["similarity"] = dataclasses.asdict(self.similarity)
        return d


@dataclass(frozen=True)
class Removal:
    label: str
    cause: str  # "redundant" | "out_of_scope"
    counterpart: str
    score: float


@dataclass(frozen=True)
class ValidationAction:
    label: str
    action: str  # "replaced" | "relabeled"
    library_label: str
    label_score: float
    definition_score: float
    combined_score: float
    new_label: str


@dataclass(frozen=True)
class RuleCorrection:
    label: str
    old_priority: int
    new_priority: int
    conflict: bool


@dataclass
class EvalRound:
    issues: list[tuple[int, str]]
    suggestions: dict[tuple[int, str], str]


@dataclass
class PrimaryTrace:
    mode: str
    example_id: str | None = None
    example_score: float | None = None


@dataclass
class EvalRegenTrace:
    rounds: list[EvalRound] = field(default_factory=list)
    corrections: list[RuleCorrection] = field(default_factory=list)


@dataclass
class FilterTrace:
    removals: list[Removal] = field(default_factory=list)


@dataclass
class ValidationTrace:
    actions: list[ValidationAction] = field(default_factory=list)


STAGE_ORDER = ("primary", "eval_regen", "filter", "validation", "final")


@dataclass
class PipelineTrace:
    req_id: str
    run_id: str
    snapshots: list[tuple[str, tuple[CompetencyRecord, ...]]] = field(default_factory=list)
    primary: PrimaryTrace | None = None
    eval_regen: EvalRegenTrace | None = None
    filter: FilterTrace | None = None
    validation: ValidationTrace | None = None

    def snapshot(self, stage: str, records: Sequence[CompetencyRecord]) -> None:
        done = [s for s, _ in self.snapshots]
        if done and STAGE_ORDER.index(stage) <= STAGE_ORDER.index(done[-1]):
            raise RuntimeError(f"stage {stage} recorded out of order after {done[-1]}")
        self.snapshots.append((stage, tuple(records)))

    def records_at(self, stage: str) -> tuple[CompetencyRecord, ...] | None:
        for s, recs in self.snapshots:
            if s == stage:
                return recs
        return None

    @property
    def example_id(self) -> str | None:
        return self.primary.example_id if self.primary else None

    def to_dict(self) -> dict:
        out: dict = {
            "req_id": self.req_id,
            "run_id": self.run_id,
            "stages": [{"stage": s, "records": [r.to_dict() for r in recs]} for s, recs in self.snapshots],
        }
        if self.primary is not None:
            out["primary"] = dataclasses.asdict(self.primary)
        if self.eval_regen is not None:
            out["eval_regen"] = {
                "rounds": [
                    {"issues": [list(i) for i in r.issues],
                     "suggestions": [{"pc": k[0], "dimension": k[1], "text": v} for k, v in sorted(r.suggestions.items())]}
                    for r in self.eval_regen.rounds
                ],
                "corrections": [dataclasses.asdict(c) for c in self.eval_regen.corrections],
            }
        if self.filter is not None:
            out["filter"] = {"removals": [dataclasses.asdict(r) for r in self.filter.removals]}
        if self.validation is not None:
            out["validation"] = {"actions": [dataclasses.asdict(a) for a in self.validation.actions]}
        return out


@dataclass
class ReqFailure:
    req_id: str
    run_id: str
    stage: str
    error: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class BatchResult:
    label_sets: list[LabelSet]
    traces: list[PipelineTrace]
    failures: list[ReqFailure]


class Pipeline:
    def __init__(
        self,
        chat: ChatClient,
        embedder: Embedder,
        library: ReferenceLibrary | None = None,
        examples: Sequence[FewShotExample] = (),
        config: PipelineConfig | None = None,
        templates: TemplateSet | None = None,
    ):
        self.chat = chat
        self.embedder = embedder
        self.library = library or ReferenceLibrary()
        self.examples = list(examples)
        self.config = config or PipelineConfig()
        self.templates = templates or TemplateSet.load(self.config.template_version)
        if self.config.few_shot_mode == "static" and not any(
                ex.req_id == self.config.static_example_id for ex in self.examples):
            raise ConfigError(f"static example {self.config.static_example_id!r} is not in the example library")

    def _complete(self, stage: Stage, req: Requisition, context: PromptContext, settings: PromptSettings) -> str:
        spec = assemble_prompt(stage, req, context, settings, self.templates)
        return self.chat.complete(spec)

    def _pick_example(self, req: Requisition) -> tuple[FewShotExample | None, float | None]:
        cfg = self.config
        if cfg.few_shot_mode == "zero_shot":
            return None, None
        if cfg.few_shot_mode == "static":
            for ex in self.examples:
                if ex.req_id == cfg.static_example_id:
                    return ex, None
            raise ConfigError(f"static example {cfg.static_example_id!r} is not in the example library")
        picked = select_example(req, self.examples, cfg.similarity.threshold, self.embedder)
        return picked if picked is not None else (None, None)

    def run_primary(self, req: Requisition) -> tuple[list[CompetencyRecord], PrimaryTrace]:
        example, score = self._pick_example(req)
        context = PromptContext(example=example, library=self.library)
        text = self._complete(Stage.PRIMARY, req, context, self.config.large_model())
        pcs = rank_competencies(parse_competency_output(text))[: self.config.max_pcs]
        trace = PrimaryTrace(self.config.few_shot_mode, example.req_id if example else None, score)
        return pcs, trace

    def _clamp(self, pcs: list[CompetencyRecord], trace: EvalRegenTrace) -> list[CompetencyRecord]:
        out = []
        for pc in pcs:
            fixed, changed = enforce_priority(pc)
            if changed:
                conflict = priority_bounds(pc.mentions, pc.category).conflict
                trace.corrections.append(RuleCorrection(pc.label, pc.priority, fixed.priority, conflict))
            out.append(fixed)
        return out

    def run_eval_regen(self, req: Requisition, pcs: Sequence[CompetencyRecord]) -> tuple[list[CompetencyRecord], EvalRegenTrace]:
        trace = EvalRegenTrace()
        current = list(pcs)
        if not current:
            return [], trace
        large = self.config.large_model()
        for _ in range(self.config.eval_regen_iterations):
            verdicts = parse_evaluation(
                self._complete(Stage.EVALUATE, req, PromptContext(candidates=current, library=self.library), large),
                len(current),
            )
            if not any(v.flagged for v in verdicts):
                trace.rounds.append(EvalRound([], {}))
                break
            suggestions = parse_suggestions(
                self._complete(Stage.SUGGEST, req,
                               PromptContext(candidates=current, verdicts=verdicts, library=self.library), large)
            )
            evaluation = StageEvaluation(tuple(verdicts), suggestions)
            trace.rounds.append(EvalRound(evaluation.issues, dict(suggestions)))
            regenerated = parse_competency_output(
                self._complete(Stage.REGENERATE, req,
                               PromptContext(candidates=current, suggestions=suggestions, library=self.library), large)
            )
            current = self._clamp(rank_competencies(regenerated)[: self.config.max_pcs], trace)
        return self._clamp(current, trace), trace

    def run_filter(self, pcs: Sequence[CompetencyRecord]) -> tuple[list[CompetencyRecord], list[CompetencyRecord], FilterTrace]:
        sim_cfg = self.config.similarity
        tau = sim_cfg.threshold
        trace = FilterTrace()
        removed: list[CompetencyRecord] = []

        kept: list[CompetencyRecord] = []
        for pc in rank_competencies(pcs):
            best = self._best_match(pc, kept)
            if best is not None and best[1] > tau:
                trace.removals.append(Removal(pc.label, "redundant", best[0].label, best[1]))
                removed.append(pc)
            else:
                kept.append(pc)

        in_scope = []
        for pc in kept:
            best = self._best_match(pc, self.library.excluded_pcs)
            if best is not None and best[1] > tau:
                trace.removals.append(Removal(pc.label, "out_of_scope", best[0].label, best[1]))
                removed.append(pc)
            else:
                in_scope.append(pc)
        return in_scope, removed, trace

    def _best_match(self, pc: CompetencyRecord, others: Sequence[CompetencyRecord]) -> tuple[CompetencyRecord, float] | None:
        best = None
        for other in others:
            s = pc_similarity(pc, other, self.config.similarity, self.embedder)
            if best is None or s > best[1]:
                best = (other, s)
        return best

    def run_validation(self, req: Requisition, pcs: Sequence[CompetencyRecord]) -> tuple[list[CompetencyRecord], ValidationTrace]:
        cfg = self.config
        trace = ValidationTrace()
        out = []
        for pc in pcs:
            best = None
            for lib in self.library.library_pcs:
                parts = pc_similarity_parts(pc, lib, cfg.similarity, self.embedder)
                if best is None or parts.combined > best[1].combined:
                    best = (lib, parts)
            if best is None:
                out.append(pc)
                continue
            lib, parts = best
            if parts.combined > cfg.tau_def:
                new = dataclasses.replace(pc, label=lib.label, definition=lib.definition)
                trace.actions.append(ValidationAction(pc.label, "replaced", lib.label, parts.label,
                                                      parts.definition, parts.combined, lib.label))
            elif parts.label > cfg.tau_label and parts.definition <= cfg.tau_def:
                text = self._complete(Stage.REFINE_LABEL, req, PromptContext(target=pc, library_entry=lib),
                                      cfg.small_model())
                label = parse_refined_label(text)
                if label.casefold() == lib.label.casefold() or label.casefold() == pc.definition.casefold():
                    raise ValidationError(f"refined label {label!r} for {pc.label!r} is not a usable label")
                new = dataclasses.replace(pc, label=label)
                trace.actions.append(ValidationAction(pc.label, "relabeled", lib.label, parts.label,
                                                      parts.definition, parts.combined, label))
            else:
                new = pc
            out.append(new)
        return out, trace

    def run_pipeline(self, req: Requisition, run_id: str = "run-00") -> tuple[LabelSet, PipelineTrace]:
        cfg = self.config
        trace = PipelineTrace(req.req_id, run_id)
        stage = "primary"
        try:
            pcs, trace.primary = self.run_primary(req)
            trace.snapshot("primary", pcs)
            if pcs and cfg.enable_eval_regen:
                stage = "eval_regen"
                pcs, trace.eval_regen = self.run_eval_regen(req, pcs)
                trace.snapshot("eval_regen", pcs)
            if pcs and cfg.enable_filter:
                stage = "filter"
                pcs, _, trace.filter = self.run_filter(pcs)
                trace.snapshot("filter", pcs)
            if pcs and cfg.enable_validation:
                stage = "validation"
                pcs, trace.validation = self.run_validation(req, pcs)
                trace.snapshot("validation", pcs)
            stage = "final"
            final = rank_competencies(pcs)
            trace.snapshot("final", final)
            labels = LabelSet(req.req_id, Source.model_run(run_id), tuple(final)).check()
        except (ReqPCError, ValueError) as exc:
            if isinstance(exc, PipelineStageError):
                raise
            raise PipelineStageError(stage, req.req_id, exc) from exc
        return labels, trace

    def run_batch(self, reqs: Sequence[Requisition], run_id: str = "run-00", workers: int = 1) -> BatchResult:
        """Run every req independently; a failing req is recorded and the rest proceed."""

        def one(req):
            try:
                return self.run_pipeline(req, run_id)
            except PipelineStageError as exc:
                log.error("%s", exc)
                return ReqFailure(req.req_id, run_id, exc.stage, str(exc.cause))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, reqs))
        else:
            results = [one(r) for r in reqs]
        out = BatchResult([], [], [])
        for res in results:
            if isinstance(res, ReqFailure):
                out.failures.append(res)
            else:
                out.label_sets.append(res[0])
                out.traces.append(res[1])
        return out
