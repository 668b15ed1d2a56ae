"""Evaluation report container and its text / JSON / CSV renderings."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from reqpc.errors import ValidationError
from reqpc.metrics import METRICS

METRIC_TITLES = {
    "top1_precision": "top-1 precision",
    "top2_precision": "top-2 precision",
    "top3_precision": "top-3 precision",
    "ranking_alignment": "ranking alignment",
    "priority_alignment": "priority alignment",
    "category_alignment": "category alignment",
}

CSV_COLUMNS = ("variant", "group", "run_id", "req_id", "metric", "value", "ci_low", "ci_high", "n_runs")


@dataclass(frozen=True)
class MetricRow:
    variant: str
    group: str
    metric: str
    mean: float | None
    ci_low: float | None = None
    ci_high: float | None = None
    n_runs: int = 0


@dataclass(frozen=True)
class ReqRow:
    variant: str
    run_id: str
    req_id: str
    group: str
    metric: str
    value: float | None


@dataclass
class EvaluationReport:
    title: str
    rows: list[MetricRow] = field(default_factory=list)
    req_rows: list[ReqRow] = field(default_factory=list)
    n_reqs: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def get(self, metric: str, group: str = "ALL", variant: str | None = None) -> MetricRow | None:
        for row in self.rows:
            if row.metric == metric and row.group == group and (variant is None or row.variant == variant):
                return row
        return None

    @property
    def variants(self) -> list[str]:
        return list(dict.fromkeys(r.variant for r in self.rows))

    @property
    def groups(self) -> list[str]:
        return list(dict.fromkeys(r.group for r in self.rows))

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "n_reqs": dict(self.n_reqs),
            "notes": list(self.notes),
            "rows": [asdict(r) for r in self.rows],
            "req_rows": [asdict(r) for r in self.req_rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvaluationReport:
        return cls(
            title=d["title"],
            rows=[MetricRow(**r) for r in d.get("rows", [])],
            req_rows=[ReqRow(**r) for r in d.get("req_rows", [])],
            n_reqs=dict(d.get("n_reqs", {})),
            notes=list(d.get("notes", [])),
        )

    def merge(self, other: EvaluationReport) -> EvaluationReport:
        return EvaluationReport(self.title, self.rows + other.rows, self.req_rows + other.req_rows,
                                {**self.n_reqs, **other.n_reqs}, self.notes + other.notes)


def format_cell(row: MetricRow | None) -> str:
    """``0.77 / [0.70, 0.84]``; mean only without an interval; ``n/a`` when absent."""
    if row is None or row.mean is None:
        return "n/a"
    if row.ci_low is None or row.ci_high is None:
        return f"{row.mean:.2f}"
    return f"{row.mean:.2f} / [{row.ci_low:.2f}, {row.ci_high:.2f}]"


def render_table(report: EvaluationReport) -> str:
    metrics = [m for m in METRICS if any(r.metric == m for r in report.rows)]
    metrics += [m for m in dict.fromkeys(r.metric for r in report.rows) if m not in metrics]
    multi_variant = len(report.variants) > 1
    header = (["variant"] if multi_variant else []) + ["group", "reqs"] + [METRIC_TITLES.get(m, m) for m in metrics]
    body = []
    for variant in report.variants:
        for group in report.groups:
            if not any(r.variant == variant and r.group == group for r in report.rows):
                continue
            line = ([variant] if multi_variant else []) + [group, str(report.n_reqs.get(group, ""))]
            line += [format_cell(report.get(m, group, variant)) for m in metrics]
            body.append(line)
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [report.title, fmt(header), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
    out += [f"note: {n}" for n in report.notes]
    return "\n".join(out) + "\n"


def render_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    fmt = lambda v: "" if v is None else repr(float(v))
    for r in report.rows:
        writer.writerow([r.variant, r.group, "", "", r.metric, fmt(r.mean), fmt(r.ci_low), fmt(r.ci_high), r.n_runs])
    for r in report.req_rows:
        writer.writerow([r.variant, r.group, r.run_id, r.req_id, r.metric, fmt(r.value), "", "", ""])
    return buf.getvalue()


def render_json(report: EvaluationReport) -> str:
    return json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"


def emit_report(report: EvaluationReport, out_dir: str | os.PathLike, fmt: str = "all",
                stem: str = "report") -> list[Path]:
    """Write ``stem.txt`` (plain table) and/or ``stem.json`` + ``stem.csv`` (machine-readable)."""
    if not report.rows:
        raise ValidationError("report has no metric rows to emit")
    if fmt not in ("table", "machine", "all"):
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    written = []
    targets = []
    if fmt in ("table", "all"):
        targets.append((out / f"{stem}.txt", render_table(report)))
    if fmt in ("machine", "all"):
        targets.append((out / f"{stem}.json", render_json(report)))
        targets.append((out / f"{stem}.csv", render_csv(report)))
    for path, text in targets:
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write {path}: {exc.strerror or exc}") from exc
        written.append(path)
    return written


def load_report(path: str | os.PathLike) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
