"""Attention Balance Score and attention-guided format selection."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .normalizer import NONE, FormatConfig

# Mean scores closer than this are treated as tied.
TIE_TOLERANCE = 1e-12


class AttentionError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionVector:
    """Final-token attention over the T prompt positions (may be unnormalized)."""

    weights: tuple[float, ...]
    prompt_id: str = ""
    format_tag: str = ""

    def __post_init__(self) -> None:
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) < 2:
            raise AttentionError(f"attention vector needs T >= 2, got T={len(w)}")
        if any(not math.isfinite(x) or x < 0 for x in w):
            raise AttentionError("attention weights must be finite and non-negative")
        if not any(w):
            raise AttentionError("attention weights are all zero")

    @property
    def T(self) -> int:
        return len(self.weights)

    def normalized(self) -> list[float]:
        total = math.fsum(self.weights)
        return [x / total for x in self.weights]


@dataclass(frozen=True)
class AbsResult:
    mu: float
    score: float
    prompt_id: str = ""


def _as_vector(a: AttentionVector | Sequence[float]) -> AttentionVector:
    return a if isinstance(a, AttentionVector) else AttentionVector(tuple(a))


def attention_balance_score(a: AttentionVector | Sequence[float]) -> AbsResult:
    """``1 - 2|mu - 0.5|`` where ``mu`` is the attention-weighted mean position in [0, 1]."""
    vec = _as_vector(a)
    probs = vec.normalized()
    last = vec.T - 1
    mu = math.fsum(t * p for t, p in enumerate(probs)) / last
    mu = min(1.0, max(0.0, mu))
    return AbsResult(mu=mu, score=1.0 - 2.0 * abs(mu - 0.5), prompt_id=vec.prompt_id)


def _score_of(x: AbsResult | float) -> float:
    return x.score if isinstance(x, AbsResult) else float(x)


def _delimiter_of(key: FormatConfig | str) -> str:
    return key.delimiter if isinstance(key, FormatConfig) else str(key)


def _tie_key(key: FormatConfig | str):
    d = _delimiter_of(key)
    ratio = key.ratio if isinstance(key, FormatConfig) else 0.0
    return (d != NONE, d, ratio)


def mean_scores(reports: Mapping[Any, Sequence[AbsResult | float]]) -> dict[Any, float]:
    if not reports:
        raise AttentionError("no formats to select from")
    sizes = {len(v) for v in reports.values()}
    if 0 in sizes:
        empty = [k for k, v in reports.items() if not v]
        raise AttentionError(f"formats without scores: {empty}")
    if len(sizes) != 1:
        raise AttentionError("formats were scored on different numbers of prompts")
    ids = [
        frozenset(x.prompt_id for x in v if isinstance(x, AbsResult) and x.prompt_id)
        for v in reports.values()
    ]
    if any(ids) and len(set(ids)) != 1:
        raise AttentionError("formats were scored on different prompt sets")
    return {k: math.fsum(_score_of(x) for x in v) / len(v) for k, v in reports.items()}


def select_format(reports: Mapping[Any, Sequence[AbsResult | float]]):
    """Return the key with the highest mean ABS.

    Ties (within ``TIE_TOLERANCE``) go to ``none`` first, then to the
    lexicographically smallest delimiter.
    """
    means = mean_scores(reports)
    best = max(means.values())
    tied = [k for k, m in means.items() if best - m <= TIE_TOLERANCE]
    return min(tied, key=_tie_key)


@dataclass
class CalibrationReport:
    candidates: list[FormatConfig]
    per_prompt: dict[str, list[AbsResult]]  # keyed by FormatConfig.tag
    selected: FormatConfig
    sample_count: int
    prompt_ids: list[str] = field(default_factory=list)
    mode: str = "eval"

    @property
    def mean_abs(self) -> dict[str, float]:
        return {tag: math.fsum(r.score for r in rs) / len(rs) for tag, rs in self.per_prompt.items()}

    @classmethod
    def build(
        cls,
        scores: Mapping[FormatConfig, Sequence[AbsResult]],
        prompt_ids: Sequence[str] = (),
        mode: str = "eval",
    ) -> "CalibrationReport":
        selected = select_format(scores)
        n = len(next(iter(scores.values())))
        return cls(
            candidates=list(scores),
            per_prompt={c.tag: list(v) for c, v in scores.items()},
            selected=selected,
            sample_count=n,
            prompt_ids=list(prompt_ids),
            mode=mode,
        )

    def to_dict(self) -> dict[str, Any]:
        means = self.mean_abs
        return {
            "selected": self.selected.to_dict(),
            "sample_count": self.sample_count,
            "mode": self.mode,
            "prompt_ids": self.prompt_ids,
            "candidates": [
                {
                    **c.to_dict(),
                    "mean_abs": means[c.tag],
                    "scores": [
                        {"prompt_id": r.prompt_id, "mu": r.mu, "abs": r.score}
                        for r in self.per_prompt[c.tag]
                    ],
                }
                for c in self.candidates
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CalibrationReport":
        cands = [FormatConfig.from_dict(c) for c in d["candidates"]]
        per_prompt = {
            FormatConfig.from_dict(c).tag: [
                AbsResult(s["mu"], s["abs"], s.get("prompt_id", "")) for s in c["scores"]
            ]
            for c in d["candidates"]
        }
        return cls(
            candidates=cands,
            per_prompt=per_prompt,
            selected=FormatConfig.from_dict(d["selected"]),
            sample_count=int(d["sample_count"]),
            prompt_ids=list(d.get("prompt_ids", [])),
            mode=d.get("mode", "eval"),
        )


def span_attention_profile(
    a: AttentionVector | Sequence[float], spans: Sequence[tuple[int, int]]
) -> list[float]:
    """Share of total attention mass inside each ``[start, end)`` token range."""
    vec = _as_vector(a)
    ordered = sorted(spans)
    prev_end = 0
    for start, end in ordered:
        if not 0 <= start < end <= vec.T:
            raise AttentionError(f"span [{start}, {end}) outside [0, {vec.T})")
        if start < prev_end:
            raise AttentionError("spans overlap")
        prev_end = end
    total = math.fsum(vec.weights)
    return [math.fsum(vec.weights[s:e]) / total for s, e in spans]


def binned_profile(a: AttentionVector | Sequence[float], bins: int = 10) -> list[float]:
    """Attention mass in ``bins`` contiguous, near-equal token ranges."""
    vec = _as_vector(a)
    bins = min(bins, vec.T)
    edges = [round(i * vec.T / bins) for i in range(bins + 1)]
    return span_attention_profile(vec, list(zip(edges[:-1], edges[1:])))


# --- trace files -------------------------------------------------------------


def load_attention_traces(path: str | Path) -> list[AttentionVector]:
    """Read attention records (``prompt_id``, ``format_tag``, ``T``, ``weights``).

    Records without attention are skipped.
    """
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise AttentionError(f"{path}:{lineno}: {e.msg}") from None
            weights = rec.get("weights")
            if weights is None:
                continue
            if rec.get("T") is not None and rec["T"] != len(weights):
                raise AttentionError(f"{path}:{lineno}: T={rec['T']} but {len(weights)} weights")
            try:
                out.append(
                    AttentionVector(tuple(weights), str(rec.get("prompt_id", "")), str(rec.get("format_tag", "")))
                )
            except AttentionError as e:
                raise AttentionError(f"{path}:{lineno}: {e}") from None
    return out


def scores_by_tag(vectors: Iterable[AttentionVector]) -> dict[str, list[AbsResult]]:
    """Score each vector and group by format tag.

    A trailing ``/<tag>`` on the prompt id is dropped so the same prompt
    under different formats compares as one prompt.
    """
    grouped: dict[str, list[AbsResult]] = defaultdict(list)
    for v in vectors:
        r = attention_balance_score(v)
        pid = v.prompt_id
        suffix = "/" + v.format_tag
        if v.format_tag and pid.endswith(suffix):
            pid = pid[: -len(suffix)]
        grouped[v.format_tag].append(AbsResult(r.mu, r.score, pid))
    return dict(grouped)
