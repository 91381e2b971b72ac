"""Experiment orchestration: permutation runs, calibration, C-Norm pipeline, token studies.

Every cell is a (sample, gold position, shuffle seed) triple. Distractor order
for a cell comes from a Fisher-Yates shuffle driven by ``random.Random``
(MT19937) seeded with SHA-256 of ``"<seed>|<sample id>"``; ``j`` is drawn as
``randrange(i + 1)`` for ``i`` from ``n - 1`` down to 1. The order depends on
(seed, sample) only, so within a seed the gold position is the only thing that
varies across cells.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from .attention import AbsResult, CalibrationReport, attention_balance_score
from .backends.base import Backend, BackendError, GenerateOptions
from .dataset import (
    Dataset,
    FormatStyle,
    KvSample,
    Sample,
    apply_format_style,
    render_kv_prompt_with_span,
)
from .metrics import (
    MetricSummary,
    PositionAccuracy,
    mean_summary,
    pearson,
    score_answer,
    score_kv_answer,
    summarize,
)
from .normalizer import (
    NONE,
    FormatConfig,
    PromptTemplate,
    assemble_prompt_with_spans,
    normalize_document,
)

log = logging.getLogger(__name__)

EXPERIMENT_SCHEMA = "ctxnorm.experiment/1"
CALIBRATION_SCHEMA = "ctxnorm.calibration/1"
PIPELINE_SCHEMA = "ctxnorm.pipeline/1"
TOKENIZATION_SCHEMA = "ctxnorm.tokenization/1"


class HarnessError(ValueError):
    pass


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- context construction ------------------------------------------------------


def _rng_for(*parts: object) -> random.Random:
    key = "|".join(str(p) for p in parts).encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


def fisher_yates(items: Sequence, rng: random.Random) -> list:
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.randrange(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def arrange(items: Sequence, gold_index: int, position: int, seed: int, sample_id: str) -> list:
    """Shuffle the non-gold items and insert the gold item at ``position``."""
    if not 0 <= position < len(items):
        raise HarnessError(f"position {position} out of range for {len(items)} items")
    distractors = [x for i, x in enumerate(items) if i != gold_index]
    order = fisher_yates(distractors, _rng_for(seed, sample_id))
    order.insert(position, items[gold_index])
    return order


def kv_style_for(fmt: FormatConfig) -> FormatStyle:
    """Key-value samples map the delimiter onto identifier styles; the ratio is unused."""
    if fmt.delimiter == NONE:
        return FormatStyle.plain()
    if fmt.delimiter == "-":
        return FormatStyle.uuid()
    return FormatStyle.modified(fmt.delimiter)


@dataclass(frozen=True)
class PreparedPrompt:
    prompt: str
    gold_span: tuple[int, int]
    gold_answer: str


def prepare_prompt(
    sample: Sample,
    fmt: FormatConfig,
    position: int,
    seed: int | None,
    template: PromptTemplate | None = None,
    selection_seed: int = 0,
) -> PreparedPrompt:
    """Build the prompt for one cell. ``seed=None`` keeps the stored item order."""
    if isinstance(sample, KvSample):
        if seed is None:
            kv = sample
        else:
            pairs = arrange(sample.pairs, sample.gold_index, position, seed, sample.id)
            kv = KvSample(sample.id, tuple(pairs), position)
        style = kv_style_for(fmt)
        text, span = render_kv_prompt_with_span(kv, style, position)
        return PreparedPrompt(text, span, apply_format_style(sample.gold_value, style))
    if seed is None:
        if position != sample.gold_index:
            raise HarnessError("unshuffled prompts keep the stored gold position")
        docs = list(sample.documents)
    else:
        docs = arrange(sample.documents, sample.gold_index, position, seed, sample.id)
    normalized = [normalize_document(d, fmt, selection_seed) for d in docs]
    assembled = assemble_prompt_with_spans(sample.question, normalized, template)
    return PreparedPrompt(assembled.text, assembled.doc_spans[position], sample.gold_answers[0])


def is_correct(sample: Sample, generated: str) -> bool:
    if isinstance(sample, KvSample):
        return score_kv_answer(generated, sample.gold_value)
    return score_answer(generated, sample.gold_answers)


# --- permutation experiment ----------------------------------------------------------


@dataclass(frozen=True)
class PermutationPlan:
    positions: tuple[int, ...]
    seeds: tuple[int, ...] = (0,)
    sample_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", tuple(self.positions))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if self.sample_ids is not None:
            object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        if not self.positions or not self.seeds:
            raise HarnessError("plan needs at least one position and one seed")
        if len(set(self.positions)) != len(self.positions) or min(self.positions) < 0:
            raise HarnessError("positions must be distinct and non-negative")
        if len(set(self.seeds)) != len(self.seeds):
            raise HarnessError("seeds must be distinct")

    @classmethod
    def all_positions(cls, dataset: Dataset, seeds: Sequence[int] = (0,)) -> "PermutationPlan":
        if not len(dataset):
            raise HarnessError("dataset is empty")
        n = min(s.num_items for s in dataset)
        return cls(tuple(range(n)), tuple(seeds))

    def to_dict(self) -> dict[str, Any]:
        return {
            "positions": list(self.positions),
            "seeds": list(self.seeds),
            "sample_ids": None if self.sample_ids is None else list(self.sample_ids),
        }

    def select(self, dataset: Dataset) -> list[Sample]:
        if self.sample_ids is None:
            samples = list(dataset)
        else:
            by_id = {s.id: s for s in dataset}
            missing = [i for i in self.sample_ids if i not in by_id]
            if missing:
                raise HarnessError(f"plan names unknown samples: {missing[:5]}")
            samples = [by_id[i] for i in self.sample_ids]
        if not samples:
            raise HarnessError("plan selects no samples")
        n = min(s.num_items for s in samples)
        if max(self.positions) >= n:
            raise HarnessError(f"position {max(self.positions)} exceeds document count {n}")
        return samples


@dataclass(frozen=True)
class Cell:
    sample_id: str
    position: int
    seed: int
    correct: bool
    failed: bool = False
    token_count: int | None = None
    error: str | None = None

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.sample_id, self.position, self.seed)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "sample_id": self.sample_id,
            "position": self.position,
            "seed": self.seed,
            "correct": self.correct,
            "failed": self.failed,
            "token_count": self.token_count,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Cell":
        return cls(
            d["sample_id"], int(d["position"]), int(d["seed"]), bool(d["correct"]),
            bool(d.get("failed", False)), d.get("token_count"), d.get("error"),
        )


@dataclass
class ExperimentResult:
    """Raw correctness bits plus the run's configuration; metrics derive from the bits."""

    cells: list[Cell]
    positions: tuple[int, ...]
    seeds: tuple[int, ...]
    config: dict[str, Any] = field(default_factory=dict)
    created_at: str = ""

    def __post_init__(self) -> None:
        self.cells = sorted(self.cells, key=lambda c: c.key)
        self.positions = tuple(self.positions)
        self.seeds = tuple(self.seeds)

    def _accuracy(self, cells: Iterable[Cell]) -> PositionAccuracy:
        bits: dict[int, list[bool]] = {p: [] for p in self.positions}
        for c in cells:
            bits[c.position].append(c.correct)
        return PositionAccuracy.from_bits([bits[p] for p in self.positions])

    @property
    def position_accuracy(self) -> PositionAccuracy:
        return self._accuracy(self.cells)

    def seed_accuracy(self, seed: int) -> PositionAccuracy:
        return self._accuracy(c for c in self.cells if c.seed == seed)

    @property
    def summary(self) -> MetricSummary:
        """Mean over seeds of each seed's OAA and OPA."""
        return mean_summary([summarize(self.seed_accuracy(s)) for s in self.seeds])

    @property
    def oaa(self) -> float:
        return self.summary.oaa

    @property
    def opa(self) -> float:
        return self.summary.opa

    @property
    def failures(self) -> int:
        return sum(c.failed for c in self.cells)

    def mean_token_count(self) -> float | None:
        counts = [c.token_count for c in self.cells if c.token_count is not None]
        return math.fsum(counts) / len(counts) if counts else None

    def metrics_dict(self) -> dict[str, Any]:
        pooled = self.position_accuracy
        summary = self.summary
        per_seed = []
        for s in self.seeds:
            acc = self.seed_accuracy(s)
            sm = summarize(acc)
            per_seed.append({"seed": s, "per_position": list(acc.per_position), "oaa": sm.oaa, "opa": sm.opa})
        return {
            "positions": list(self.positions),
            "per_position": list(pooled.per_position),
            "sample_counts": list(pooled.sample_counts),
            "oaa": summary.oaa,
            "opa": summary.opa,
            "per_seed": per_seed,
            "failures": self.failures,
            "mean_token_count": self.mean_token_count(),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": EXPERIMENT_SCHEMA,
            "created_at": self.created_at,
            "config": self.config,
            "seeds": list(self.seeds),
            "metrics": self.metrics_dict(),
            "cells": [c.to_dict() for c in self.cells],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentResult":
        check_schema(d, EXPERIMENT_SCHEMA)
        return cls(
            cells=[Cell.from_dict(c) for c in d["cells"]],
            positions=tuple(d["metrics"]["positions"]),
            seeds=tuple(d["seeds"]),
            config=d.get("config", {}),
            created_at=d.get("created_at", ""),
        )


def _run_cells(tasks, fn, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_permutation_experiment(
    dataset: Dataset,
    backend: Backend,
    format: FormatConfig,
    plan: PermutationPlan | None,
    *,
    template: PromptTemplate | None = None,
    selection_seed: int = 0,
    max_tokens: int = 32,
    strict: bool = False,
    workers: int = 1,
    created_at: str | None = None,
) -> ExperimentResult:
    """Run every (sample, position, seed) cell and score it.

    Backend failures count as incorrect and are flagged; ``strict`` re-raises them.
    """
    if plan is None:
        raise HarnessError("empty plan")
    samples = plan.select(dataset)
    tasks = [(s, p, seed) for s in samples for p in plan.positions for seed in plan.seeds]

    def run_one(task) -> Cell:
        sample, position, seed = task
        prep = prepare_prompt(sample, format, position, seed, template, selection_seed)
        options = GenerateOptions(
            max_tokens=max_tokens,
            prompt_id=f"{sample.id}/p{position}/s{seed}/{format.tag}",
            format_tag=format.tag,
            gold_char_span=prep.gold_span,
            gold_answer=prep.gold_answer,
        )
        try:
            rec = backend.generate(prep.prompt, options)
        except BackendError as e:
            if strict:
                raise
            log.warning("cell %s failed: %s", options.prompt_id, e)
            return Cell(sample.id, position, seed, False, True, None, f"{type(e).__name__}: {e}")
        return Cell(sample.id, position, seed, is_correct(sample, rec.text), False, rec.token_count)

    cells = _run_cells(tasks, run_one, workers)
    config = {
        "format": format.to_dict(),
        "backend": backend.describe(),
        "template": (template.name if template else "base") if dataset.kind != "kv" else "kv",
        "plan": plan.to_dict(),
        "selection_seed": selection_seed,
        "failure_policy": "strict" if strict else "count-incorrect",
        "dataset": dict(dataset.metadata),
        "num_samples": len(samples),
    }
    return ExperimentResult(cells, plan.positions, plan.seeds, config, created_at if created_at is not None else now_iso())


# --- calibration ---------------------------------------------------------------


def calibration_samples(
    dataset: Dataset, sample_count: int, mode: str = "eval", heldout: Dataset | None = None, seed: int = 0
) -> list[Sample]:
    """First ``sample_count`` samples of a seeded permutation of the pool.

    Smaller counts are prefixes of larger ones, so sweeps over S are nested.
    """
    if sample_count < 1:
        raise HarnessError(f"sample count must be >= 1, got {sample_count}")
    if mode == "eval":
        pool = list(dataset)
    elif mode == "heldout":
        if heldout is None:
            raise HarnessError("held-out mode needs a calibration dataset")
        pool = list(heldout)
    else:
        raise HarnessError(f"unknown calibration mode {mode!r}")
    if sample_count > len(pool):
        raise HarnessError(f"sample count {sample_count} exceeds the {len(pool)} available samples")
    return fisher_yates(pool, _rng_for("calibration", seed))[:sample_count]


def calibrate(
    dataset: Dataset,
    backend: Backend,
    candidates: Sequence[FormatConfig],
    sample_count: int = 8,
    mode: str = "eval",
    *,
    heldout: Dataset | None = None,
    template: PromptTemplate | None = None,
    selection_seed: int = 0,
    seed: int = 0,
) -> CalibrationReport:
    """Score each candidate by mean ABS over ``sample_count`` prompts and pick the best."""
    if not candidates:
        raise HarnessError("no candidate formats")
    if not backend.supports_attention:
        raise HarnessError(f"{backend.describe()} does not provide attention")
    samples = calibration_samples(dataset, sample_count, mode, heldout, seed)
    scores: dict[FormatConfig, list[AbsResult]] = {}
    for cand in candidates:
        results = []
        for s in samples:
            prep = prepare_prompt(s, cand, s.gold_index, None, template, selection_seed)
            pid = f"calib/{s.id}/{cand.tag}"
            rec = backend.generate(
                prep.prompt,
                GenerateOptions(
                    max_tokens=1,
                    return_attention=True,
                    prompt_id=pid,
                    format_tag=cand.tag,
                    gold_char_span=prep.gold_span,
                    gold_answer=prep.gold_answer,
                ),
            )
            if rec.attention is None:
                raise HarnessError(f"backend returned no attention for {pid}")
            r = attention_balance_score(rec.attention)
            results.append(AbsResult(r.mu, r.score, s.id))
        scores[cand] = results
    return CalibrationReport.build(scores, [s.id for s in samples], mode)


def calibration_to_dict(report: CalibrationReport, backend: str = "", created_at: str | None = None) -> dict[str, Any]:
    return {
        "schema": CALIBRATION_SCHEMA,
        "created_at": created_at if created_at is not None else now_iso(),
        "backend": backend,
        **report.to_dict(),
    }


# --- full pipeline -----------------------------------------------------------------


@dataclass
class PipelineResult:
    calibration: CalibrationReport
    result: ExperimentResult
    baseline: ExperimentResult | None = None

    def __iter__(self):
        return iter((self.calibration, self.result))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": PIPELINE_SCHEMA,
            "created_at": self.result.created_at,
            "calibration": calibration_to_dict(self.calibration, self.result.config.get("backend", ""), self.result.created_at),
            "result": self.result.to_dict(),
            "baseline": None if self.baseline is None else self.baseline.to_dict(),
        }


def run_cnorm_pipeline(
    dataset: Dataset,
    backend: Backend,
    candidates: Sequence[FormatConfig],
    sample_count: int,
    plan: PermutationPlan,
    *,
    mode: str = "eval",
    heldout: Dataset | None = None,
    template: PromptTemplate | None = None,
    selection_seed: int = 0,
    baseline: bool = True,
    workers: int = 1,
    strict: bool = False,
    created_at: str | None = None,
) -> PipelineResult:
    """Calibrate, then run the permutation experiment with the selected format.

    With ``baseline`` the unmodified (``none``) context is run on the same plan.
    """
    report = calibrate(
        dataset, backend, candidates, sample_count, mode,
        heldout=heldout, template=template, selection_seed=selection_seed,
    )
    stamp = created_at if created_at is not None else now_iso()
    kw = dict(template=template, selection_seed=selection_seed, workers=workers, strict=strict, created_at=stamp)
    result = run_permutation_experiment(dataset, backend, report.selected, plan, **kw)
    base = None
    if baseline:
        base_fmt = FormatConfig(NONE, report.selected.ratio)
        base = run_permutation_experiment(dataset, backend, base_fmt, plan, **kw)
    return PipelineResult(report, result, base)


# --- tokenization study --------------------------------------------------------------


@dataclass
class TokenizationReport:
    rows: list[dict[str, Any]]
    pearson_r: float
    config: dict[str, Any] = field(default_factory=dict)
    created_at: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": TOKENIZATION_SCHEMA,
            "created_at": self.created_at,
            "config": self.config,
            "rows": self.rows,
            "pearson_r": self.pearson_r,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TokenizationReport":
        check_schema(d, TOKENIZATION_SCHEMA)
        return cls(d["rows"], d["pearson_r"], d.get("config", {}), d.get("created_at", ""))


def run_tokenization_study(
    dataset: Dataset,
    backend: Backend,
    delimiters: Sequence[str],
    plan: PermutationPlan | None = None,
    *,
    ratio: float = 1.0,
    template: PromptTemplate | None = None,
    workers: int = 1,
    created_at: str | None = None,
) -> TokenizationReport:
    """Mean prompt length and OAA per delimiter, and their Pearson correlation.

    Token counts are the backend's own prompt counts from each generation.
    """
    if len(delimiters) < 2:
        raise HarnessError("need at least two delimiters to correlate")
    plan = plan or PermutationPlan.all_positions(dataset)
    rows = []
    for d in delimiters:
        res = run_permutation_experiment(
            dataset, backend, FormatConfig(d, ratio), plan, template=template, workers=workers, created_at=""
        )
        mean_tokens = res.mean_token_count()
        if mean_tokens is None:
            raise HarnessError(f"no successful generations for delimiter {d!r}")
        rows.append({"delimiter": d, "mean_token_count": mean_tokens, "oaa": res.oaa, "opa": res.opa})
    r = pearson([row["mean_token_count"] for row in rows], [row["oaa"] for row in rows])
    config = {"backend": backend.describe(), "ratio": ratio, "plan": plan.to_dict(), "dataset": dict(dataset.metadata)}
    return TokenizationReport(rows, r, config, created_at if created_at is not None else now_iso())


# --- persistence ---------------------------------------------------------------------


def check_schema(d: dict[str, Any], expected: str) -> None:
    got = d.get("schema")
    if got != expected:
        raise HarnessError(f"expected schema {expected!r}, got {got!r}")


def write_json(obj: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def read_json(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
