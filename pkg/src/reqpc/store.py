"""Line-delimited JSON persistence for every dataset file kind.

Each line is one JSON object carrying ``schema_version``. Loading validates
every line and raises a single :class:`ValidationError` listing all bad
lines (``path:line: reason``); nothing partially valid is returned.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Callable, Iterable

from reqpc.errors import ValidationError
from reqpc.model import (
    SPLITS,
    CompetencyRecord,
    DatasetBundle,
    LabelSet,
    ReferenceLibrary,
    Requisition,
    SMERatingSheet,
)

SCHEMA_VERSION = 1
KINDS = ("reqs", "labels", "library", "ratings", "splits")


def _dumps(obj: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **obj}, ensure_ascii=False)


def iter_jsonl(path: str | os.PathLike) -> Iterable[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for non-blank lines; JSON errors become ValidationError."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}:{lineno}: record must be a JSON object")
            yield lineno, obj


def _check_version(obj: dict) -> None:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")


def _parse_library_line(obj: dict) -> tuple[str, CompetencyRecord]:
    which = obj.get("list")
    if which not in ("library", "excluded"):
        raise ValidationError(f"library line needs list='library' or 'excluded', got {which!r}")
    return which, CompetencyRecord.from_dict(obj, default_priority=1)


def load_dataset(path: str | os.PathLike, kind: str) -> DatasetBundle:
    """Load one file of the given ``kind`` into a bundle fragment.

    Merge fragments with :meth:`DatasetBundle.merge`. Raises
    ``FileNotFoundError`` for a missing file and ``ValidationError`` naming
    every failing line otherwise.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")

    problems: list[str] = []
    items: list[tuple[int, object]] = []
    for lineno, obj in iter_jsonl(path):
        try:
            _check_version(obj)
            if kind == "reqs":
                item: object = Requisition.from_dict(obj)
            elif kind == "labels":
                item = LabelSet.from_dict(obj).check()
            elif kind == "library":
                item = _parse_library_line(obj)
            elif kind == "ratings":
                item = SMERatingSheet.from_dict(obj)
            else:
                split = obj.get("split")
                if split not in SPLITS or not obj.get("req_id"):
                    raise ValidationError(f"split line needs req_id and split in {SPLITS}")
                item = (obj["req_id"], split)
        except (ValidationError, TypeError) as exc:
            problems.append(f"{path}:{lineno}: {exc}")
            continue
        items.append((lineno, item))

    # uniqueness checks after per-line validation so all problems are reported together
    if kind == "reqs":
        seen: dict[str, int] = {}
        for lineno, req in items:
            if req.req_id in seen:
                problems.append(f"{path}:{lineno}: duplicate req_id {req.req_id!r} (first on line {seen[req.req_id]})")
            else:
                seen[req.req_id] = lineno
    elif kind == "labels":
        seen_sets: dict[tuple, int] = {}
        for lineno, ls in items:
            key = (ls.req_id, ls.source)
            if key in seen_sets:
                problems.append(f"{path}:{lineno}: duplicate label set {ls.source} for {ls.req_id}")
            else:
                seen_sets[key] = lineno
    if problems:
        raise ValidationError(f"{len(problems)} invalid record(s) in {path}:\n  " + "\n  ".join(problems), problems)

    values = [item for _, item in items]
    if kind == "reqs":
        return DatasetBundle.of(requisitions=values)
    if kind == "labels":
        return DatasetBundle.of(label_sets=values)
    if kind == "ratings":
        return DatasetBundle.of(ratings=values)
    if kind == "splits":
        splits: dict[str, str] = {}
        for req_id, split in values:
            if req_id in splits:
                raise ValidationError(f"{path}: req {req_id} assigned to more than one split")
            splits[req_id] = split
        return DatasetBundle(splits=splits)
    try:
        library = ReferenceLibrary(
            library_pcs=[rec for which, rec in values if which == "library"],
            excluded_pcs=[rec for which, rec in values if which == "excluded"],
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return DatasetBundle(library=library)


def load_bundle(
    reqs: str | os.PathLike,
    labels: str | os.PathLike | None = None,
    library: str | os.PathLike | None = None,
    ratings: str | os.PathLike | None = None,
    splits: str | os.PathLike | None = None,
) -> DatasetBundle:
    bundle = load_dataset(reqs, "reqs")
    for path, kind in ((labels, "labels"), (library, "library"), (ratings, "ratings"), (splits, "splits")):
        if path is not None:
            bundle = bundle.merge(load_dataset(path, kind))
    return bundle.validate_references()


def _write_lines(path: str | os.PathLike, lines: Iterable[str]) -> None:
    path = Path(path)
    text = "".join(line + "\n" for line in lines)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror or exc}") from exc


def save_label_sets(sets: Iterable[LabelSet], path: str | os.PathLike) -> None:
    sets = list(sets)
    for ls in sets:
        ls.check()
    _write_lines(path, (_dumps(ls.to_dict()) for ls in sets))


def save_label_set(label_set: LabelSet, path: str | os.PathLike) -> None:
    """Write one label set. Invariants are checked before the file is touched."""
    save_label_sets([label_set], path)


def save_requisitions(reqs: Iterable[Requisition], path: str | os.PathLike) -> None:
    _write_lines(path, (_dumps(r.to_dict()) for r in reqs))


def save_library(library: ReferenceLibrary, path: str | os.PathLike) -> None:
    lines = [_dumps({"list": "library", **r.to_dict()}) for r in library.library_pcs]
    lines += [_dumps({"list": "excluded", **r.to_dict()}) for r in library.excluded_pcs]
    _write_lines(path, lines)


def save_ratings(sheets: Iterable[SMERatingSheet], path: str | os.PathLike) -> None:
    _write_lines(path, (_dumps(s.to_dict()) for s in sheets))


def save_splits(splits: dict[str, str], path: str | os.PathLike) -> None:
    _write_lines(path, (_dumps({"req_id": rid, "split": s}) for rid, s in splits.items()))


def write_jsonl(path: str | os.PathLike, rows: Iterable[dict], versioned: bool = True) -> None:
    dump: Callable[[dict], str] = _dumps if versioned else (lambda o: json.dumps(o, ensure_ascii=False))
    _write_lines(path, (dump(r) for r in rows))
