"""Field-tagged block format shared by prompts and model responses.

A block is a ``[TAG]`` line, ``key: value`` lines and a ``[/TAG]`` line.
Values are single-line; backslashes and newlines inside values are escaped
as ``\\\\`` and ``\\n``. Anything outside blocks (prose, code fences) is
ignored, so models may wrap output in a fenced ``competencies`` block.

    [PC]
    label: Payments Platform Expertise
    definition: Knowledge of ...
    category: DomainTeamSpecific
    priority: 7
    justification: JD mentions ...
    in_bq: no
    in_pq: no
    jd_count: 2
    [/PC]
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from reqpc.errors import ParseError, ValidationError
from reqpc.model import Category, CompetencyRecord, MentionEvidence

PC_FIELDS = ("label", "definition", "category", "priority", "justification", "in_bq", "in_pq", "jd_count")
PC_REQUIRED = ("label", "definition", "category", "priority")

# five judge dimensions plus definition-guideline conformance
DIMENSIONS = ("out_of_scope", "granularity", "categorization", "justification", "overlap", "definition")

_OPEN = re.compile(r"^\[([A-Z_]+)\]$")


_LINE_BREAKS = "\x0b\x0c\x1c\x1d\x1e\x85\u2028\u2029"


def escape(value: str) -> str:
    out = []
    for ch in value:
        if ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch in _LINE_BREAKS:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def unescape(value: str) -> str:
    out, i = [], 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            if nxt == "u" and re.fullmatch(r"[0-9a-f]{4}", value[i + 2:i + 6]):
                out.append(chr(int(value[i + 2:i + 6], 16)))
                i += 6
                continue
            out.append({"n": "\n", "r": "\r", "\\": "\\"}.get(nxt, "\\" + nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass
class Block:
    tag: str
    fields: dict[str, str]
    line: int


def parse_blocks(text: str, tag: str, allowed: Sequence[str]) -> list[Block]:
    """Extract every ``[tag]`` block. Structural problems raise ParseError."""
    blocks: list[Block] = []
    current: Block | None = None
    problems: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if current is None:
            if line == f"[{tag}]":
                current = Block(tag, {}, lineno)
            continue
        if line == f"[/{tag}]":
            blocks.append(current)
            current = None
            continue
        if not line:
            continue
        if _OPEN.match(line):
            problems.append(f"line {lineno}: nested or unterminated block before {line}")
            current = Block(tag, {}, lineno) if line == f"[{tag}]" else None
            continue
        key, sep, value = line.partition(":")
        key = key.strip().lower()
        if not sep:
            problems.append(f"line {lineno}: expected 'key: value', got {line[:60]!r}")
        elif key not in allowed:
            problems.append(f"line {lineno}: unknown field {key!r} in [{tag}] block")
        elif key in current.fields:
            problems.append(f"line {lineno}: duplicate field {key!r}")
        else:
            current.fields[key] = unescape(value.strip())
    if current is not None:
        problems.append(f"line {current.line}: [{tag}] block never closed")
    if problems:
        raise ParseError(f"malformed [{tag}] output: " + "; ".join(problems), problems)
    return blocks


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("yes", "true", "1", "y"):
        return True
    if v in ("no", "false", "0", "n", ""):
        return False
    raise ValidationError(f"expected yes/no, got {value!r}")


def _int(name: str, value: str) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise ValidationError(f"{name} must be an integer, got {value!r}") from None


def serialize_competencies(records: Iterable[CompetencyRecord], fenced: bool = True) -> str:
    parts = []
    for r in records:
        parts.append("\n".join([
            "[PC]",
            f"label: {escape(r.label)}",
            f"definition: {escape(r.definition)}",
            f"category: {r.category.value}",
            f"priority: {r.priority}",
            f"justification: {escape(r.justification)}",
            f"in_bq: {'yes' if r.mentions.in_bq else 'no'}",
            f"in_pq: {'yes' if r.mentions.in_pq else 'no'}",
            f"jd_count: {r.mentions.jd_count}",
            "[/PC]",
        ]))
    body = "\n".join(parts) or "NONE"
    return f"```competencies\n{body}\n```" if fenced else body


def parse_competency_output(text: str) -> list[CompetencyRecord]:
    """Parse every ``[PC]`` block into a validated record.

    Any malformed block or invalid record fails the whole parse; the error
    lists each failing record by 1-based index.
    """
    blocks = parse_blocks(text, "PC", PC_FIELDS)
    records, problems = [], []
    for idx, block in enumerate(blocks, start=1):
        f = block.fields
        try:
            missing = [k for k in PC_REQUIRED if k not in f]
            if missing:
                raise ValidationError(f"missing field(s) {missing}")
            records.append(CompetencyRecord(
                label=f["label"],
                definition=f["definition"],
                category=Category.parse(f["category"]),
                priority=_int("priority", f["priority"]),
                justification=f.get("justification", ""),
                mentions=MentionEvidence(
                    in_bq=_bool(f.get("in_bq", "no")),
                    in_pq=_bool(f.get("in_pq", "no")),
                    jd_count=_int("jd_count", f.get("jd_count", "0")),
                ),
            ))
        except ValidationError as exc:
            problems.append(f"record {idx} (line {block.line}): {exc}")
    if problems:
        raise ParseError("invalid competency record(s): " + "; ".join(problems), problems)
    if not blocks and text.strip() and "NONE" not in text.upper().split():
        raise ParseError("response contains no [PC] blocks and no explicit NONE marker")
    return records


@dataclass(frozen=True)
class PCVerdict:
    """Judge verdicts for one PC: dimension -> 1 (meets guideline) or 0 (issue)."""

    index: int
    label: str
    verdicts: Mapping[str, int]

    @property
    def flagged(self) -> list[str]:
        return [d for d in DIMENSIONS if self.verdicts.get(d, 1) == 0]


@dataclass(frozen=True)
class StageEvaluation:
    verdicts: tuple[PCVerdict, ...]
    suggestions: Mapping[tuple[int, str], str] = field(default_factory=dict)

    def __post_init__(self):
        missing = [
            f"PC {v.index} {dim}"
            for v in self.verdicts
            for dim in v.flagged
            if not self.suggestions.get((v.index, dim), "").strip()
        ]
        if missing:
            raise ValidationError(f"flagged issue(s) without a suggestion: {missing}", missing)

    @property
    def issues(self) -> list[tuple[int, str]]:
        return [(v.index, d) for v in self.verdicts for d in v.flagged]

    @property
    def has_issues(self) -> bool:
        return bool(self.issues)


def parse_evaluation(text: str, n_pcs: int) -> list[PCVerdict]:
    blocks = parse_blocks(text, "EVAL", ("pc", "label", *DIMENSIONS))
    out, problems = [], []
    seen = set()
    for block in blocks:
        f = block.fields
        try:
            idx = _int("pc", f.get("pc", ""))
            if not 1 <= idx <= n_pcs:
                raise ValidationError(f"pc index {idx} outside 1..{n_pcs}")
            if idx in seen:
                raise ValidationError(f"pc {idx} evaluated twice")
            seen.add(idx)
            verdicts = {}
            for dim in DIMENSIONS:
                if dim in f:
                    v = _int(dim, f[dim])
                    if v not in (0, 1):
                        raise ValidationError(f"{dim} verdict must be 0 or 1, got {v}")
                    verdicts[dim] = v
            out.append(PCVerdict(idx, f.get("label", ""), verdicts))
        except ValidationError as exc:
            problems.append(f"line {block.line}: {exc}")
    if problems:
        raise ParseError("invalid evaluation block(s): " + "; ".join(problems), problems)
    return sorted(out, key=lambda v: v.index)


def parse_suggestions(text: str) -> dict[tuple[int, str], str]:
    blocks = parse_blocks(text, "SUGGESTION", ("pc", "dimension", "text"))
    out: dict[tuple[int, str], str] = {}
    problems = []
    for block in blocks:
        f = block.fields
        try:
            dim = f.get("dimension", "").strip().lower()
            if dim not in DIMENSIONS:
                raise ValidationError(f"unknown dimension {dim!r}")
            out[(_int("pc", f.get("pc", "")), dim)] = f.get("text", "")
        except ValidationError as exc:
            problems.append(f"line {block.line}: {exc}")
    if problems:
        raise ParseError("invalid suggestion block(s): " + "; ".join(problems), problems)
    return out


def format_verdicts(verdicts: Sequence[PCVerdict]) -> str:
    lines = []
    for v in verdicts:
        lines.append("[EVAL]")
        lines.append(f"pc: {v.index}")
        lines.append(f"label: {escape(v.label)}")
        lines.extend(f"{d}: {v.verdicts[d]}" for d in DIMENSIONS if d in v.verdicts)
        lines.append("[/EVAL]")
    return "\n".join(lines)


def format_suggestions(suggestions: Mapping[tuple[int, str], str]) -> str:
    lines = []
    for (idx, dim), text in sorted(suggestions.items()):
        lines += ["[SUGGESTION]", f"pc: {idx}", f"dimension: {dim}", f"text: {escape(text)}", "[/SUGGESTION]"]
    return "\n".join(lines)


def parse_refined_label(text: str) -> str:
    blocks = parse_blocks(text, "LABEL", ("label", "rationale"))
    if len(blocks) != 1 or not blocks[0].fields.get("label", "").strip():
        raise ParseError("label refinement must return exactly one [LABEL] block with a label")
    return blocks[0].fields["label"].strip()
