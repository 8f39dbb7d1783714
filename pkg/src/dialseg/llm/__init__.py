from .client import AuditLog, ChatClient, LlmClientConfig, annotate_llm, run_sessions, segment_llm
from .mock import MockChatServer
from .parsing import first_json_object, parse_annotation_response, parse_boundary_response
from .prompts import PromptSpec, build_annotation_prompt, build_segmentation_prompt, load_template

__all__ = [
    "AuditLog",
    "ChatClient",
    "LlmClientConfig",
    "MockChatServer",
    "PromptSpec",
    "annotate_llm",
    "build_annotation_prompt",
    "build_segmentation_prompt",
    "first_json_object",
    "load_template",
    "parse_annotation_response",
    "parse_boundary_response",
    "run_sessions",
    "segment_llm",
]
