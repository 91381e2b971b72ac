"""Benchmark data: synthetic key-value extraction samples and QA datasets.

Synthetic samples are drawn from Python's ``random.Random`` (MT19937). Each
hex character is one ``getrandbits(4)`` draw, keys before values, pair by
pair; the gold index is a final ``randrange(num_pairs)`` draw. A sample whose
keys/values collide is discarded and redrawn from the same stream.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

HEX_DIGITS = "0123456789abcdef"
_HEX_RE = re.compile(r"^[0-9a-f]+$")
_NON_HEX_RE = re.compile(r"[^0-9a-f]")

UUID = "uuid"
PLAIN_TEXT = "plain"
MODIFIED_UUID = "modified_uuid"

KV_INSTRUCTION = (
    "Extract the value corresponding to the specified key in the JSON object below."
)


class DatasetError(ValueError):
    """Invalid dataset content or generation config."""


def is_hex_string(s: str) -> bool:
    return bool(s) and _HEX_RE.match(s) is not None


def strip_non_hex(s: str) -> str:
    return _NON_HEX_RE.sub("", s.lower())


@dataclass(frozen=True)
class FormatStyle:
    """Surface format for a hex identifier.

    ``kind`` is one of ``uuid``, ``plain`` or ``modified_uuid``; ``delimiter``
    is only meaningful for ``modified_uuid``.
    """

    kind: str = UUID
    delimiter: str = "-"

    def __post_init__(self) -> None:
        if self.kind not in (UUID, PLAIN_TEXT, MODIFIED_UUID):
            raise DatasetError(f"unknown format kind {self.kind!r}")
        if self.kind == MODIFIED_UUID:
            d = self.delimiter
            if len(d) != 1 or not d.isprintable() or d.isspace() or d.lower() in HEX_DIGITS:
                raise DatasetError(
                    f"modified UUID delimiter must be one printable non-hex character, got {d!r}"
                )

    @classmethod
    def uuid(cls) -> "FormatStyle":
        return cls(UUID, "-")

    @classmethod
    def plain(cls) -> "FormatStyle":
        return cls(PLAIN_TEXT, "")

    @classmethod
    def modified(cls, delimiter: str) -> "FormatStyle":
        return cls(MODIFIED_UUID, delimiter)

    @property
    def label(self) -> str:
        if self.kind == MODIFIED_UUID:
            return f"{self.kind}({self.delimiter})"
        return self.kind


def _group_sizes(n: int) -> list[int]:
    if n == 32:
        return [8, 4, 4, 4, 12]
    if n <= 0 or n % 4:
        raise DatasetError(f"cannot group a {n}-character string into 4-character groups")
    return [4] * (n // 4)


def apply_format_style(s: str, style: FormatStyle) -> str:
    """Render a hex string in the given style.

    32-character strings use the canonical 8-4-4-4-12 grouping; any other
    length divisible by 4 is split into consecutive 4-character groups.
    """
    if not is_hex_string(s):
        raise DatasetError(f"not a lowercase hex string: {s!r}")
    if style.kind == PLAIN_TEXT:
        return s
    sep = "-" if style.kind == UUID else style.delimiter
    parts, i = [], 0
    for size in _group_sizes(len(s)):
        parts.append(s[i : i + size])
        i += size
    return sep.join(parts)


@dataclass(frozen=True)
class KvGenConfig:
    num_pairs: int = 40
    char_len: int = 32
    num_samples: int = 500
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_pairs", "char_len", "num_samples", "seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise DatasetError(f"{name} must be an integer, got {v!r}")
        if self.num_pairs < 2:
            raise DatasetError(f"num_pairs must be >= 2, got {self.num_pairs}")
        if self.char_len < 8 or self.char_len % 4:
            raise DatasetError(
                f"char_len must be >= 8 and divisible by 4, got {self.char_len}"
            )
        if self.num_samples < 1:
            raise DatasetError(f"num_samples must be >= 1, got {self.num_samples}")


@dataclass(frozen=True)
class KvSample:
    id: str
    pairs: tuple[tuple[str, str], ...]
    gold_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple((k, v) for k, v in self.pairs))
        validate_kv_sample(self)

    @property
    def gold_key(self) -> str:
        return self.pairs[self.gold_index][0]

    @property
    def gold_value(self) -> str:
        return self.pairs[self.gold_index][1]

    @property
    def num_items(self) -> int:
        return len(self.pairs)


def validate_kv_sample(sample: KvSample) -> None:
    n = len(sample.pairs)
    if n < 2:
        raise DatasetError(f"sample {sample.id!r}: needs at least 2 pairs")
    for k, v in sample.pairs:
        if not (is_hex_string(k) and is_hex_string(v)):
            raise DatasetError(f"sample {sample.id!r}: keys and values must be lowercase hex")
    keys = [k for k, _ in sample.pairs]
    values = [v for _, v in sample.pairs]
    if len(set(keys)) != n or len(set(values)) != n or set(keys) & set(values):
        raise DatasetError(f"sample {sample.id!r}: keys/values are not pairwise distinct")
    if not 0 <= sample.gold_index < n:
        raise DatasetError(f"sample {sample.id!r}: gold_index {sample.gold_index} out of range")


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    is_gold: bool = False

    def __post_init__(self) -> None:
        if not self.text:
            raise DatasetError(f"document {self.id!r} has empty text")


@dataclass(frozen=True)
class QaSample:
    id: str
    question: str
    gold_answers: tuple[str, ...]
    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        object.__setattr__(self, "documents", tuple(self.documents))
        if not self.gold_answers:
            raise DatasetError(f"sample {self.id!r}: gold_answers is empty")
        n_gold = sum(d.is_gold for d in self.documents)
        if n_gold != 1:
            raise DatasetError(
                f"sample {self.id!r}: expected exactly one gold document, found {n_gold}"
            )

    @property
    def gold_index(self) -> int:
        return next(i for i, d in enumerate(self.documents) if d.is_gold)

    @property
    def num_items(self) -> int:
        return len(self.documents)


Sample = Union[QaSample, KvSample]


@dataclass
class Dataset:
    samples: list[Sample]
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise DatasetError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def kind(self) -> str:
        if self.samples and all(isinstance(s, KvSample) for s in self.samples):
            return "kv"
        if all(isinstance(s, QaSample) for s in self.samples):
            return "qa"
        return "mixed"


def _random_hex(rng: random.Random, n: int) -> str:
    return "".join(HEX_DIGITS[rng.getrandbits(4)] for _ in range(n))


def generate_kv_dataset(config: KvGenConfig) -> Dataset:
    config.validate()
    rng = random.Random(config.seed)
    samples = []
    for i in range(config.num_samples):
        while True:
            pairs = [
                (_random_hex(rng, config.char_len), _random_hex(rng, config.char_len))
                for _ in range(config.num_pairs)
            ]
            flat = [x for kv in pairs for x in kv]
            if len(set(flat)) == len(flat):
                break
        gold = rng.randrange(config.num_pairs)
        samples.append(KvSample(id=f"kv-{i:05d}", pairs=tuple(pairs), gold_index=gold))
    meta = {
        "generator": "kv",
        "prng": "mt19937",
        "num_pairs": config.num_pairs,
        "char_len": config.char_len,
        "num_samples": config.num_samples,
        "seed": config.seed,
    }
    return Dataset(samples, meta)


def move_to_position(items: Sequence, index: int, position: int) -> list:
    """Remove ``items[index]`` and reinsert it at ``position``, keeping the rest in order."""
    if not 0 <= position < len(items):
        raise IndexError(f"position {position} out of range for {len(items)} items")
    rest = [x for i, x in enumerate(items) if i != index]
    rest.insert(position, items[index])
    return rest


def render_kv_prompt_with_span(
    sample: KvSample, style: FormatStyle, gold_position: int
) -> tuple[str, tuple[int, int]]:
    """Rendered prompt plus the character span of the gold ``key: value`` line."""
    if not 0 <= gold_position < len(sample.pairs):
        raise DatasetError(
            f"gold_position {gold_position} out of range for {len(sample.pairs)} pairs"
        )
    pairs = move_to_position(sample.pairs, sample.gold_index, gold_position)
    lines = [
        f"{apply_format_style(k, style)}: {apply_format_style(v, style)}" for k, v in pairs
    ]
    head = f"{KV_INSTRUCTION}\n\n"
    start = len(head) + sum(len(line) + 1 for line in lines[:gold_position])
    text = (
        head
        + "\n".join(lines)
        + f"\n\nKey: {apply_format_style(sample.gold_key, style)}\nCorresponding value:"
    )
    return text, (start, start + len(lines[gold_position]))


def render_kv_prompt(sample: KvSample, style: FormatStyle, gold_position: int) -> str:
    return render_kv_prompt_with_span(sample, style, gold_position)[0]


# --- serialization -----------------------------------------------------------


def sample_to_record(sample: Sample) -> dict[str, Any]:
    if isinstance(sample, KvSample):
        return {
            "id": sample.id,
            "pairs": [[k, v] for k, v in sample.pairs],
            "gold_index": sample.gold_index,
        }
    return {
        "id": sample.id,
        "question": sample.question,
        "gold_answers": list(sample.gold_answers),
        "documents": [
            {"id": d.id, "text": d.text, "is_gold": d.is_gold} for d in sample.documents
        ],
    }


def sample_from_record(rec: Any) -> Sample:
    if not isinstance(rec, dict):
        raise DatasetError("record is not an object")
    if "id" not in rec:
        raise DatasetError("record has no 'id'")
    sid = str(rec["id"])
    if "pairs" in rec:
        pairs = rec["pairs"]
        if not isinstance(pairs, list) or not all(
            isinstance(p, list) and len(p) == 2 and all(isinstance(x, str) for x in p)
            for p in pairs
        ):
            raise DatasetError(f"sample {sid!r}: 'pairs' must be a list of [key, value]")
        gi = rec.get("gold_index")
        if not isinstance(gi, int) or isinstance(gi, bool):
            raise DatasetError(f"sample {sid!r}: 'gold_index' must be an integer")
        return KvSample(sid, tuple((k, v) for k, v in pairs), gi)
    for key in ("question", "gold_answers", "documents"):
        if key not in rec:
            raise DatasetError(f"sample {sid!r}: missing field {key!r}")
    answers = rec["gold_answers"]
    if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
        raise DatasetError(f"sample {sid!r}: 'gold_answers' must be a list of strings")
    docs = []
    for d in rec["documents"]:
        if not isinstance(d, dict) or not {"id", "text", "is_gold"} <= d.keys():
            raise DatasetError(f"sample {sid!r}: documents need id, text, is_gold")
        if not isinstance(d["text"], str) or not isinstance(d["is_gold"], bool):
            raise DatasetError(f"sample {sid!r}: bad document field types")
        try:
            docs.append(Document(str(d["id"]), d["text"], d["is_gold"]))
        except DatasetError as e:
            raise DatasetError(f"sample {sid!r}: {e}") from None
    return QaSample(sid, str(rec["question"]), tuple(answers), tuple(docs))


def save_dataset(dataset: Dataset | Iterable[Sample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in dataset:
            f.write(json.dumps(sample_to_record(s), ensure_ascii=False) + "\n")


def load_qa_dataset(path: str | Path) -> Dataset:
    """Read a JSON-lines dataset file (QA or key-value records).

    Errors carry the 1-based line number of the offending record.
    """
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: parse error: {e.msg}") from None
            try:
                sample = sample_from_record(rec)
            except DatasetError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from None
            if sample.id in seen:
                raise DatasetError(
                    f"{path}:{lineno}: duplicate id {sample.id!r} (first on line {seen[sample.id]})"
                )
            seen[sample.id] = lineno
            samples.append(sample)
    return Dataset(samples, {"source": str(path)})


load_dataset = load_qa_dataset
