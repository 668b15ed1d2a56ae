"""Command-line entry point: ``reqpc <verb> ...``.

Exit codes: 0 success, 1 config error, 2 provider error, 3 validation error.
All relative paths resolve against ``--workspace`` (default: current directory).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from reqpc.errors import ConfigError, ReqPCError
from reqpc.harness import (
    Experiment,
    ExperimentConfig,
    compute_irr_report,
    evaluate_predictions,
    report_from_runs,
    split_dataset,
)
from reqpc.metrics import MetricConfig, out_of_scope_rates, sme_rating_summary
from reqpc.pipeline import FEW_SHOT_MODES, PipelineConfig
from reqpc.report import emit_report, load_report
from reqpc.similarity import Embedder, HashingEmbeddingProvider
from reqpc.store import load_bundle, load_dataset, save_splits

log = logging.getLogger("reqpc")


def _ws(args, rel):
    return None if rel is None else Path(args.workspace) / rel


def _add_variant_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config (YAML or JSON)")
    p.add_argument("--few-shot-mode", choices=FEW_SHOT_MODES)
    p.add_argument("--static-example-id")
    p.add_argument("--no-eval-regen", action="store_true")
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--no-validation", action="store_true")
    p.add_argument("--no-extended-reasoning", action="store_true")
    p.add_argument("--model-id")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--format", choices=("table", "machine", "all"), default="all")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(_ws(args, args.config), workspace=args.workspace)
    overrides = {}
    if args.few_shot_mode:
        overrides["few_shot_mode"] = args.few_shot_mode
    if args.static_example_id:
        overrides["static_example_id"] = args.static_example_id
    if args.no_eval_regen:
        overrides["enable_eval_regen"] = False
    if args.no_filter:
        overrides["enable_filter"] = False
    if args.no_validation:
        overrides["enable_validation"] = False
    if args.no_extended_reasoning:
        overrides["extended_reasoning"] = False
    if args.model_id:
        overrides["model_id"] = args.model_id
    top = {k: v for k, v in (("runs", args.runs), ("seed", args.seed), ("workers", args.workers)) if v is not None}
    return dataclasses.replace(cfg, pipeline=dataclasses.replace(cfg.pipeline, **overrides), **top)


def cmd_split(args) -> int:
    bundle = load_dataset(_ws(args, args.reqs), "reqs")
    split = split_dataset(bundle, tuple(args.fractions), args.seed)
    save_splits(dict(split.splits), _ws(args, args.out))
    counts = {s: sum(1 for v in split.splits.values() if v == s) for s in ("train", "dev", "test")}
    print(json.dumps(counts))
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    exp = Experiment(cfg)
    report = exp.run_experiment()
    for path in emit_report(report, Path(cfg.workspace) / cfg.output_dir, args.format):
        print(path)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    exp = Experiment(cfg)
    report = exp.run_ablation()
    for path in emit_report(report, Path(cfg.workspace) / cfg.output_dir, args.format, stem="ablation"):
        print(path)
    return 0


def cmd_evaluate(args) -> int:
    bundle = load_bundle(_ws(args, args.reqs), _ws(args, args.truth))
    predictions = load_dataset(_ws(args, args.predictions), "labels").label_sets
    by_run: dict[str, list] = {}
    for (req_id, source), ls in predictions.items():
        by_run.setdefault(source.id or str(source), []).append(ls)
    embedder = Embedder(HashingEmbeddingProvider(args.embedding_dim))
    pcfg, mcfg = PipelineConfig(), MetricConfig(ra_mode=args.ra_mode, precision_mode=args.precision_mode)
    runs = {rid: evaluate_predictions(sorted(sets, key=lambda s: s.req_id), bundle, embedder, pcfg, mcfg)
            for rid, sets in sorted(by_run.items())}
    report = report_from_runs(runs, mcfg, "evaluated", f"evaluation of {args.predictions}")
    for path in emit_report(report, _ws(args, args.out), args.format, stem="metrics"):
        print(path)
    return 0


def cmd_irr(args) -> int:
    bundle = load_bundle(_ws(args, args.reqs), _ws(args, args.labels), splits=_ws(args, args.splits))
    embedder = Embedder(HashingEmbeddingProvider(args.embedding_dim))
    report = compute_irr_report(bundle, embedder, metric_cfg=MetricConfig(ra_mode=args.ra_mode), split=args.split)
    if not report.rows:
        print("no req has two or more raters; IRR table is empty", file=sys.stderr)
        return 0
    for path in emit_report(report, _ws(args, args.out), args.format, stem="irr"):
        print(path)
    return 0


def cmd_report(args) -> int:
    report = load_report(_ws(args, args.input))
    for path in emit_report(report, _ws(args, args.out), args.format, stem=args.stem):
        print(path)
    return 0


def cmd_ingest_ratings(args) -> int:
    bundle = load_bundle(_ws(args, args.reqs), ratings=_ws(args, args.ratings))
    sheets = list(bundle.ratings)
    summary: dict = {"n_sheets": len(sheets), "dimensions": sme_rating_summary(sheets, args.acceptance_level)}
    if args.predictions:
        preds = load_dataset(_ws(args, args.predictions), "labels").label_sets.values()
        overall, top1 = out_of_scope_rates(preds, {s.req_id: s for s in sheets})
        summary["out_of_scope_rate"] = overall
        summary["top1_out_of_scope_rate"] = top1
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = _ws(args, args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reqpc", description=__doc__.splitlines()[0])
    parser.add_argument("--workspace", default=".", help="root for all relative paths")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("split", help="seeded train/dev/test split of a requisition file")
    p.add_argument("--reqs", required=True)
    p.add_argument("--fractions", type=float, nargs=3, default=(0.26, 0.50, 0.24), metavar=("TRAIN", "DEV", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("run", help="run the pipeline R times over the eval split and evaluate")
    _add_variant_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run the baseline and every configured ablation variant")
    _add_variant_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("evaluate", help="score stored model label sets against consensus label sets")
    p.add_argument("--reqs", required=True)
    p.add_argument("--truth", required=True, help="label file holding consensus sets")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", default="eval")
    p.add_argument("--embedding-dim", type=int, default=64)
    p.add_argument("--ra-mode", choices=("as_written", "normalized"), default="as_written")
    p.add_argument("--precision-mode", choices=("count_as_miss", "exclude"), default="count_as_miss")
    p.add_argument("--format", choices=("table", "machine", "all"), default="all")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("irr", help="inter-rater reliability table from individual SME label sets")
    p.add_argument("--reqs", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--splits")
    p.add_argument("--split", choices=("train", "dev", "test"))
    p.add_argument("--out", default="irr")
    p.add_argument("--embedding-dim", type=int, default=64)
    p.add_argument("--ra-mode", choices=("as_written", "normalized"), default="as_written")
    p.add_argument("--format", choices=("table", "machine", "all"), default="all")
    p.set_defaults(func=cmd_irr)

    p = sub.add_parser("report", help="re-render a machine-readable report")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default="report")
    p.add_argument("--stem", default="report")
    p.add_argument("--format", choices=("table", "machine", "all"), default="table")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ingest-ratings", help="validate SME rating sheets and summarize them")
    p.add_argument("--reqs", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--predictions", help="model label sets, for out-of-scope rates")
    p.add_argument("--acceptance-level", type=int, choices=(2, 3), default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest_ratings)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ReqPCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
