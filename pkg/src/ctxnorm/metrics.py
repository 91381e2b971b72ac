"""Answer scoring, OAA/OPA, and Pearson correlation."""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from typing import Sequence

from .dataset import strip_non_hex


class MetricError(ValueError):
    pass


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(token: str) -> str:
    i, j = 0, len(token)
    while i < j and _is_punct(token[i]):
        i += 1
    while j > i and _is_punct(token[j - 1]):
        j -= 1
    return token[i:j]


def normalize_answer(text: str) -> str:
    """Lowercase, split on whitespace, trim punctuation off each token, rejoin."""
    tokens = (_strip_punct(t) for t in text.lower().split())
    return " ".join(t for t in tokens if t)


def score_answer(generated: str, gold_answers: Sequence[str]) -> bool:
    if not gold_answers:
        raise MetricError("gold_answers is empty")
    gen = normalize_answer(generated)
    for ans in gold_answers:
        norm = normalize_answer(ans)
        if norm and norm in gen:
            return True
    return False


def score_kv_answer(generated: str, gold_value: str) -> bool:
    """True if some whitespace-separated token of the generation carries the gold value.

    Each token is reduced to its hex characters first, so a value echoed in a
    different surface format (hyphens, ampersands, ...) still counts.
    """
    target = strip_non_hex(gold_value)
    return any(strip_non_hex(tok) == target for tok in generated.split())


@dataclass(frozen=True)
class PositionAccuracy:
    per_position: tuple[float, ...]
    sample_counts: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_position", tuple(float(x) for x in self.per_position))
        object.__setattr__(self, "sample_counts", tuple(int(x) for x in self.sample_counts))
        if not self.per_position:
            raise MetricError("per-position accuracy vector is empty")
        if len(self.per_position) != len(self.sample_counts):
            raise MetricError("per_position and sample_counts differ in length")
        if any(not 0.0 <= x <= 1.0 for x in self.per_position):
            raise MetricError("accuracies must lie in [0, 1]")
        if len(set(self.sample_counts)) != 1 or self.sample_counts[0] <= 0:
            raise MetricError("denominators must be equal and positive")

    @classmethod
    def from_bits(cls, bits_by_position: Sequence[Sequence[bool]]) -> "PositionAccuracy":
        return cls(
            tuple(sum(b) / len(b) if b else 0.0 for b in bits_by_position),
            tuple(len(b) for b in bits_by_position),
        )


@dataclass(frozen=True)
class MetricSummary:
    oaa: float
    opa: float


def _values(p: PositionAccuracy | Sequence[float]) -> Sequence[float]:
    vals = p.per_position if isinstance(p, PositionAccuracy) else p
    if not vals:
        raise MetricError("per-position accuracy vector is empty")
    return vals


def compute_oaa(p: PositionAccuracy | Sequence[float]) -> float:
    vals = _values(p)
    return math.fsum(vals) / len(vals)


def compute_opa(p: PositionAccuracy | Sequence[float]) -> float:
    return max(_values(p))


def summarize(p: PositionAccuracy) -> MetricSummary:
    return MetricSummary(compute_oaa(p), compute_opa(p))


def mean_summary(summaries: Sequence[MetricSummary]) -> MetricSummary:
    if not summaries:
        raise MetricError("no summaries to average")
    n = len(summaries)
    return MetricSummary(
        math.fsum(s.oaa for s in summaries) / n, math.fsum(s.opa for s in summaries) / n
    )


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; raises when either series is constant."""
    if len(x) != len(y):
        raise MetricError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise MetricError("need at least two points")
    if len(set(x)) == 1 or len(set(y)) == 1:
        raise MetricError("correlation undefined for a constant series")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise MetricError("correlation undefined for a constant series")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))
