"""Trace recording and offline replay.

A trace is JSON lines, one record per generation::

    {"prompt_id": ..., "format_tag": ..., "prompt_sha256": ...,
     "text": ..., "token_count": ..., "T": ..., "weights": [...]}

Failed generations are recorded with an ``error`` field instead of output,
so replaying a run reproduces its failures too.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any

from ..attention import AttentionVector
from .base import (
    Backend,
    BackendError,
    GenerateOptions,
    GenerationRecord,
    UnknownPrompt,
    check_prompt,
    prompt_digest,
)


def record_to_trace(
    prompt: str, options: GenerateOptions, rec: GenerationRecord | None, error: str | None = None
) -> dict[str, Any]:
    out: dict[str, Any] = {
        "prompt_id": options.prompt_id,
        "format_tag": options.format_tag or "",
        "prompt_sha256": prompt_digest(prompt),
    }
    if error is not None:
        out["error"] = error
        return out
    assert rec is not None
    out["text"] = rec.text
    out["token_count"] = rec.token_count
    if rec.attention is not None:
        out["T"] = rec.attention.T
        out["weights"] = list(rec.attention.weights)
    else:
        out["T"] = None
        out["weights"] = None
    return out


class RecordingBackend(Backend):
    """Wraps a live backend and captures every generation for later replay."""

    def __init__(self, inner: Backend, path: str | Path | None = None):
        self.inner = inner
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()

    def generate(self, prompt: str, options: GenerateOptions | None = None) -> GenerationRecord:
        options = options or GenerateOptions()
        if not options.prompt_id:
            raise BackendError("recording requires a prompt_id")
        try:
            rec = self.inner.generate(prompt, options)
        except BackendError as e:
            self._store(record_to_trace(prompt, options, None, f"{type(e).__name__}: {e}"))
            raise
        self._store(record_to_trace(prompt, options, rec))
        return rec

    def _store(self, trace: dict[str, Any]) -> None:
        with self._lock:
            self._records[trace["prompt_id"]] = trace

    def tokenize_count(self, text: str) -> int:
        return self.inner.tokenize_count(text)

    def capabilities(self) -> dict[str, Any]:
        return self.inner.capabilities()

    def describe(self) -> str:
        return self.inner.describe()

    @property
    def records(self) -> list[dict[str, Any]]:
        with self._lock:
            return [self._records[k] for k in sorted(self._records)]

    def write(self, path: str | Path | None = None) -> Path:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise BackendError("no trace path configured")
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            for r in self.records:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")
        return target

    def close(self) -> None:
        if self.path is not None:
            self.write()
        self.inner.close()


class ReplayBackend(Backend):
    def __init__(self, records: dict[str, dict[str, Any]], source: str = "memory"):
        self.records = records
        self.source = source

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        records: dict[str, dict[str, Any]] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise BackendError(f"{path}:{lineno}: {e.msg}") from None
                pid = rec.get("prompt_id")
                if not pid:
                    raise BackendError(f"{path}:{lineno}: record without prompt_id")
                if pid in records and records[pid] != rec:
                    raise BackendError(f"{path}:{lineno}: conflicting records for {pid!r}")
                records[pid] = rec
        return cls(records, str(path))

    def capabilities(self) -> dict[str, Any]:
        has_attn = any(r.get("weights") is not None for r in self.records.values())
        return {
            "attention_supported": has_attn,
            "attention_convention": "as recorded",
            "max_prompt_tokens": None,
        }

    def describe(self) -> str:
        return f"replay:{Path(self.source).name}"

    def generate(self, prompt: str, options: GenerateOptions | None = None) -> GenerationRecord:
        options = options or GenerateOptions()
        check_prompt(prompt)
        rec = self.records.get(options.prompt_id or "")
        if rec is None:
            raise UnknownPrompt(f"no recorded generation for prompt_id {options.prompt_id!r}")
        digest = rec.get("prompt_sha256")
        if digest and digest != prompt_digest(prompt):
            raise BackendError(f"prompt for {options.prompt_id!r} differs from the recorded one")
        if "error" in rec:
            raise BackendError(rec["error"])
        attention = None
        if options.return_attention:
            if rec.get("weights") is None:
                raise BackendError(f"trace for {options.prompt_id!r} has no attention")
            attention = AttentionVector(
                tuple(rec["weights"]), options.prompt_id or "", rec.get("format_tag", "")
            )
        return GenerationRecord(rec["text"], int(rec["token_count"]), attention)
