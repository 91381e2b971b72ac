from .base import (
    AttentionUnavailable,
    Backend,
    BackendError,
    GenerateOptions,
    GenerationRecord,
    PromptTooLong,
    TransportError,
    UnknownPrompt,
    Unsupported,
)
from .mock import MockBackend, MockModelConfig, mock_generate, mock_tokenize
from .remote import RemoteBackend
from .replay import RecordingBackend, ReplayBackend

__all__ = [
    "AttentionUnavailable",
    "Backend",
    "BackendError",
    "GenerateOptions",
    "GenerationRecord",
    "MockBackend",
    "MockModelConfig",
    "PromptTooLong",
    "RecordingBackend",
    "RemoteBackend",
    "ReplayBackend",
    "TransportError",
    "UnknownPrompt",
    "Unsupported",
    "mock_generate",
    "mock_tokenize",
]
