"""Prompt assembly from versioned template directories.

A template directory holds ``VERSION``, shared fragments (``guidelines.txt``,
``output_format.txt``, ``example.txt``) and ``<stage>.system.txt`` /
``<stage>.user.txt`` per stage. Placeholders use ``string.Template`` syntax;
a missing value is a :class:`TemplateError`, never a silently unfilled slot.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Mapping, Sequence

from reqpc.errors import TemplateError, ValidationError
from reqpc.llm.wire import PCVerdict, escape, format_suggestions, format_verdicts, serialize_competencies
from reqpc.model import CompetencyRecord, FewShotExample, ReferenceLibrary, Requisition, SectionKind

DEFAULT_TEMPLATE_ROOT = Path(__file__).resolve().parent.parent / "templates"


class Stage(str, enum.Enum):
    PRIMARY = "primary"
    EVALUATE = "evaluate"
    SUGGEST = "suggest"
    REGENERATE = "regenerate"
    REFINE_LABEL = "refine_label"


@dataclass(frozen=True)
class PromptSpec:
    stage: Stage
    system_text: str
    user_text: str
    extended_reasoning: bool = False
    model_id: str = ""
    max_output: int = 4096
    temperature: float = 0.0
    req_id: str = ""
    template_version: str = ""

    @property
    def prompt_hash(self) -> str:
        h = hashlib.sha256()
        for part in (self.stage.value, self.template_version, self.system_text, self.user_text):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class PromptSettings:
    model_id: str = "large-model"
    extended_reasoning: bool = True
    max_output: int = 4096
    temperature: float = 0.0
    max_pcs: int = 5


@dataclass(frozen=True)
class PromptContext:
    example: FewShotExample | None = None
    candidates: Sequence[CompetencyRecord] = ()
    verdicts: Sequence[PCVerdict] = ()
    suggestions: Mapping[tuple[int, str], str] = field(default_factory=dict)
    library: ReferenceLibrary | None = None
    target: CompetencyRecord | None = None
    library_entry: CompetencyRecord | None = None


class TemplateSet:
    FRAGMENTS = ("guidelines", "output_format", "example")

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise TemplateError(f"template directory not found: {self.directory}")
        version_file = self.directory / "VERSION"
        self.version = version_file.read_text().strip() if version_file.exists() else self.directory.name
        self._cache: dict[str, Template] = {}

    @classmethod
    def load(cls, version: str = "v1", root: str | Path | None = None) -> TemplateSet:
        return cls(Path(root or DEFAULT_TEMPLATE_ROOT) / version)

    def get(self, name: str) -> Template:
        if name not in self._cache:
            path = self.directory / f"{name}.txt"
            if not path.exists():
                raise TemplateError(f"missing template {path}")
            self._cache[name] = Template(path.read_text(encoding="utf-8"))
        return self._cache[name]

    def render(self, name: str, values: Mapping[str, str]) -> str:
        try:
            return self.get(name).substitute(values)
        except KeyError as exc:
            raise TemplateError(f"template {name} ({self.version}) has unfilled placeholder {exc}") from None
        except ValueError as exc:
            raise TemplateError(f"template {name} ({self.version}) is malformed: {exc}") from None


def format_requisition(req: Requisition) -> str:
    lines = [
        f"Requisition ID: {req.req_id}",
        f"Job category: {req.job_category}",
        f"External title: {req.external_title}",
        f"Department: {req.department}",
    ]
    titles = {SectionKind.BQ: "Basic qualifications", SectionKind.PQ: "Preferred qualifications",
              SectionKind.JD: "Job description"}
    for kind in SectionKind:
        lines.append(f"## {titles[kind]}")
        lines.append(req.sections[kind].strip() or "(none)")
    return "\n".join(lines)


def format_exclusions(library: ReferenceLibrary | None) -> str:
    if library is None or not library.excluded_pcs:
        return "(none)"
    return "\n".join(f"- {escape(r.label)}: {escape(r.definition)}" for r in library.excluded_pcs)


def _format_entry(rec: CompetencyRecord) -> str:
    return f"label: {escape(rec.label)}\ndefinition: {escape(rec.definition)}"


_REQUIRED = {
    Stage.PRIMARY: (),
    Stage.EVALUATE: ("candidates",),
    Stage.SUGGEST: ("candidates", "verdicts"),
    Stage.REGENERATE: ("candidates", "suggestions"),
    Stage.REFINE_LABEL: ("target", "library_entry"),
}


def assemble_prompt(stage: Stage, req: Requisition, context: PromptContext, settings: PromptSettings,
                    templates: TemplateSet) -> PromptSpec:
    """Render the system and user prompts for ``stage``. Pure: same inputs give identical specs."""
    stage = Stage(stage)
    missing = [name for name in _REQUIRED[stage] if not getattr(context, name)]
    if missing:
        raise ValidationError(f"{stage.value} prompt requires context: {', '.join(missing)}")

    values = {
        "guidelines": templates.render("guidelines", {}).strip(),
        "output_format": templates.render("output_format", {}).strip(),
        "exclusions": format_exclusions(context.library),
        "max_pcs": str(settings.max_pcs),
        "req_block": format_requisition(req),
        "req_title": f"{req.req_id}: {req.external_title} ({req.department})",
    }
    if stage is Stage.PRIMARY:
        values["example_block"] = ""
        if context.example is not None:
            values["example_block"] = templates.render("example", {
                "example_req": format_requisition(context.example.req),
                "example_output": serialize_competencies(context.example.labels.records),
            })
    if context.candidates:
        values["candidates"] = serialize_competencies(context.candidates)
    if context.verdicts:
        values["verdicts"] = format_verdicts(context.verdicts)
    if context.suggestions:
        values["suggestions"] = format_suggestions(context.suggestions)
    if context.target is not None:
        values["target"] = _format_entry(context.target)
    if context.library_entry is not None:
        values["library_entry"] = _format_entry(context.library_entry)

    return PromptSpec(
        stage=stage,
        system_text=templates.render(f"{stage.value}.system", values),
        user_text=templates.render(f"{stage.value}.user", values),
        extended_reasoning=settings.extended_reasoning,
        model_id=settings.model_id,
        max_output=settings.max_output,
        temperature=settings.temperature,
        req_id=req.req_id,
        template_version=templates.version,
    )
