from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

from ..attention import AttentionVector


class BackendError(RuntimeError):
    """Generation failed."""


class TransportError(BackendError):
    pass


class AttentionUnavailable(BackendError):
    pass


class UnknownPrompt(BackendError):
    pass


class PromptTooLong(BackendError):
    pass


class Unsupported(BackendError):
    pass


@dataclass(frozen=True)
class GenerateOptions:
    max_tokens: int = 32
    return_attention: bool = False
    temperature: float = 0.0
    prompt_id: str | None = None
    format_tag: str | None = None
    # Consumed only by the mock model; real backends never see them on the wire.
    gold_char_span: tuple[int, int] | None = None
    gold_answer: str | None = None


@dataclass(frozen=True)
class GenerationRecord:
    text: str
    token_count: int
    attention: AttentionVector | None = None

    def __post_init__(self) -> None:
        if self.token_count < 1:
            raise BackendError(f"token_count must be >= 1, got {self.token_count}")


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Backend(ABC):
    """Model boundary. Implementations must be deterministic for fixed inputs."""

    @abstractmethod
    def generate(self, prompt: str, options: GenerateOptions | None = None) -> GenerationRecord:
        ...

    def tokenize_count(self, text: str) -> int:
        raise Unsupported(f"{self.describe()} does not support tokenization")

    def capabilities(self) -> dict[str, Any]:
        return {"attention_supported": False, "attention_convention": "", "max_prompt_tokens": None}

    @property
    def supports_attention(self) -> bool:
        return bool(self.capabilities().get("attention_supported"))

    def describe(self) -> str:
        return type(self).__name__

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def check_prompt(prompt: str) -> None:
    if not prompt:
        raise BackendError("prompt is empty")
