"""Identify and prioritize requisition-specific personal competencies with an LLM pipeline."""

from reqpc.errors import (
    ConfigError,
    ParseError,
    PipelineStageError,
    ProviderError,
    ReqPCError,
    TransportError,
    ValidationError,
)
from reqpc.model import (
    Category,
    CompetencyRecord,
    DatasetBundle,
    FewShotExample,
    LabelSet,
    MentionEvidence,
    ReferenceLibrary,
    Requisition,
    SectionKind,
    SMERatingSheet,
    Source,
)

__version__ = "0.1.0"

__all__ = [
    "Category",
    "CompetencyRecord",
    "ConfigError",
    "DatasetBundle",
    "FewShotExample",
    "LabelSet",
    "MentionEvidence",
    "ParseError",
    "PipelineStageError",
    "ProviderError",
    "ReferenceLibrary",
    "ReqPCError",
    "Requisition",
    "SMERatingSheet",
    "SectionKind",
    "Source",
    "TransportError",
    "ValidationError",
]
