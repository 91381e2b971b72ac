"""Deterministic positional-bias model used as a test oracle.

Tokens are maximal non-whitespace runs, except that each configured split
character becomes a token of its own ("a-b" is three tokens when ``-``
splits, one otherwise). Token ``t`` of ``T`` sits at normalized position
``t / (T - 1)``; its raw attention is the weight of the zone containing that
position: start ``[0, 0.2)``, middle ``[0.2, 0.8)``, end ``[0.8, 1]``.
The model answers with the gold string iff the normalized attention mass on
the gold span reaches the threshold, and with ``UNKNOWN`` otherwise.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..attention import AttentionVector
from ..normalizer import NONE
from .base import (
    Backend,
    BackendError,
    GenerateOptions,
    GenerationRecord,
    PromptTooLong,
    check_prompt,
)

WRONG_ANSWER = "UNKNOWN"
UNIFORM = (1.0, 1.0, 1.0)
U_SHAPED = (1.0, 0.0, 1.0)

_NONSPACE_RE = re.compile(r"\S+")

Profile = tuple[float, float, float]


def _check_profile(name: str, w) -> Profile:
    w = tuple(float(x) for x in w)
    if len(w) != 3 or any(x < 0 or not math.isfinite(x) for x in w) or not any(w):
        raise BackendError(f"profile {name!r} needs three non-negative weights, one positive")
    return w  # type: ignore[return-value]


@dataclass(frozen=True)
class MockModelConfig:
    profiles: Mapping[str, Profile] = field(default_factory=lambda: {NONE: UNIFORM})
    threshold: float = 0.05
    default_profile: Profile | None = None
    split_chars: str = ""
    zone_edges: tuple[float, float] = (0.2, 0.8)
    max_prompt_tokens: int | None = None

    def __post_init__(self) -> None:
        profiles = {str(k): _check_profile(k, v) for k, v in self.profiles.items()}
        object.__setattr__(self, "profiles", profiles)
        if self.default_profile is not None:
            object.__setattr__(self, "default_profile", _check_profile("default", self.default_profile))
        if not 0 < self.threshold <= 1:
            raise BackendError(f"threshold must be in (0, 1], got {self.threshold}")
        lo, hi = self.zone_edges
        if not 0 < lo <= hi < 1:
            raise BackendError(f"bad zone edges {self.zone_edges}")

    def profile_for(self, tag: str | None) -> Profile:
        tag = NONE if tag is None else tag
        for key in (tag, tag.split("@", 1)[0]):
            if key in self.profiles:
                return self.profiles[key]
        if self.default_profile is not None:
            return self.default_profile
        raise BackendError(f"mock has no profile for format {tag!r}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["profiles"] = {k: list(v) for k, v in self.profiles.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MockModelConfig":
        kw = dict(d)
        if "profiles" in kw:
            kw["profiles"] = {k: tuple(v) for k, v in kw["profiles"].items()}
        for key in ("default_profile", "zone_edges"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def mock_tokenize(text: str, split_chars: str = "") -> list[tuple[int, int]]:
    """Character spans of mock tokens."""
    spans = []
    for m in _NONSPACE_RE.finditer(text):
        start = m.start()
        for i in range(m.start(), m.end()):
            if text[i] in split_chars:
                if start < i:
                    spans.append((start, i))
                spans.append((i, i + 1))
                start = i + 1
        if start < m.end():
            spans.append((start, m.end()))
    return spans


def zone_of(x: float, edges: tuple[float, float] = (0.2, 0.8)) -> int:
    return 0 if x < edges[0] else (1 if x < edges[1] else 2)


def mock_attention(T: int, profile: Profile, edges: tuple[float, float] = (0.2, 0.8)) -> list[float]:
    if T < 2:
        raise BackendError("mock attention needs at least two tokens")
    raw = [profile[zone_of(t / (T - 1), edges)] for t in range(T)]
    total = math.fsum(raw)
    if total == 0:
        raise BackendError("profile puts zero weight on every token of this prompt")
    return [w / total for w in raw]


def char_span_to_tokens(spans: list[tuple[int, int]], start: int, end: int) -> tuple[int, int]:
    """Token range ``[a, b)`` of the tokens overlapping characters ``[start, end)``."""
    idx = [i for i, (s, e) in enumerate(spans) if s < end and e > start]
    if not idx:
        raise BackendError(f"character span [{start}, {end}) covers no tokens")
    return idx[0], idx[-1] + 1


def mock_generate(
    prompt: str,
    gold_span: tuple[int, int],
    config: MockModelConfig,
    delimiter_tag: str | None,
    gold_answer: str,
    token_count: int | None = None,
) -> GenerationRecord:
    """Answer from token-level gold span ``[a, b)``; see module docstring."""
    T = token_count if token_count is not None else len(mock_tokenize(prompt, config.split_chars))
    a, b = gold_span
    if not 0 <= a < b <= T:
        raise BackendError(f"gold span [{a}, {b}) outside [0, {T})")
    weights = mock_attention(T, config.profile_for(delimiter_tag), config.zone_edges)
    mass = math.fsum(weights[a:b])
    text = gold_answer if mass >= config.threshold else WRONG_ANSWER
    return GenerationRecord(
        text=text,
        token_count=T,
        attention=AttentionVector(tuple(weights), "", delimiter_tag or NONE),
    )


class MockBackend(Backend):
    def __init__(self, config: MockModelConfig | None = None):
        self.config = config or MockModelConfig()

    def tokenize_count(self, text: str) -> int:
        return len(mock_tokenize(text, self.config.split_chars))

    def capabilities(self) -> dict[str, Any]:
        return {
            "attention_supported": True,
            "attention_convention": "normalized zone weights over all prompt tokens",
            "max_prompt_tokens": self.config.max_prompt_tokens,
        }

    def describe(self) -> str:
        return f"mock:{self.config.digest()}"

    def generate(self, prompt: str, options: GenerateOptions | None = None) -> GenerationRecord:
        options = options or GenerateOptions()
        check_prompt(prompt)
        if options.gold_char_span is None or options.gold_answer is None:
            raise BackendError("mock backend needs gold_char_span and gold_answer")
        spans = mock_tokenize(prompt, self.config.split_chars)
        limit = self.config.max_prompt_tokens
        if limit is not None and len(spans) > limit:
            raise PromptTooLong(f"prompt has {len(spans)} tokens, limit {limit}")
        gold = char_span_to_tokens(spans, *options.gold_char_span)
        rec = mock_generate(
            prompt, gold, self.config, options.format_tag, options.gold_answer, len(spans)
        )
        attention = None
        if options.return_attention:
            attention = AttentionVector(
                rec.attention.weights, options.prompt_id or "", options.format_tag or NONE
            )
        return GenerationRecord(rec.text, rec.token_count, attention)
