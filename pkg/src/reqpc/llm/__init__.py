from reqpc.llm.prompts import PromptContext, PromptSettings, PromptSpec, Stage, TemplateSet, assemble_prompt
from reqpc.llm.providers import ChatClient, HttpChatProvider, MockChatProvider, make_chat_provider
from reqpc.llm.wire import (
    DIMENSIONS,
    PCVerdict,
    StageEvaluation,
    parse_competency_output,
    parse_evaluation,
    parse_refined_label,
    parse_suggestions,
    serialize_competencies,
)

__all__ = [
    "DIMENSIONS",
    "ChatClient",
    "HttpChatProvider",
    "MockChatProvider",
    "PCVerdict",
    "PromptContext",
    "PromptSettings",
    "PromptSpec",
    "Stage",
    "StageEvaluation",
    "TemplateSet",
    "assemble_prompt",
    "make_chat_provider",
    "parse_competency_output",
    "parse_evaluation",
    "parse_refined_label",
    "parse_suggestions",
    "serialize_competencies",
]
