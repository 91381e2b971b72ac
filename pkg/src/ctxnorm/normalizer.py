"""Candidate context formatting: sentence-level whitespace-to-delimiter rewriting."""

from __future__ import annotations

import hashlib
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .dataset import Document

NONE = "none"
DEFAULT_DELIMITERS: tuple[str, ...] = (NONE, "-", "_", ":", ".", "~", "+", "/", "&")
# Bump when the sentence selection rule changes; part of the selection hash.
SELECTION_VERSION = "1"

_BOUNDARY_RE = re.compile(r"(?<=[.!?])(\s+)")
_WS_RUN_RE = re.compile(r"\s+")


class FormatError(ValueError):
    pass


def _ratio_count(ratio: float, n: int) -> int:
    # round() absorbs float noise such as 0.1 * 30 = 3.0000000000000004
    return math.ceil(round(ratio * n, 9)) if n > 0 else 0


@dataclass(frozen=True, order=True)
class FormatConfig:
    delimiter: str = NONE
    ratio: float = 0.5

    def __post_init__(self) -> None:
        if not isinstance(self.ratio, (int, float)) or not 0.0 <= self.ratio <= 1.0:
            raise FormatError(f"ratio must be in [0, 1], got {self.ratio!r}")
        d = self.delimiter
        if d != NONE and (len(d) != 1 or not d.isprintable() or d.isspace()):
            raise FormatError(f"delimiter must be 'none' or one printable non-space character, got {d!r}")

    @property
    def is_identity(self) -> bool:
        return self.delimiter == NONE or self.ratio == 0

    @property
    def tag(self) -> str:
        return f"{self.delimiter}@{self.ratio:g}"

    def to_dict(self) -> dict:
        return {"delimiter": self.delimiter, "ratio": self.ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "FormatConfig":
        return cls(d["delimiter"], float(d["ratio"]))


@dataclass(frozen=True)
class Segmentation:
    """A lossless split of text into sentences.

    ``leading + s0 + gaps[0] + s1 + ... + s_n + trailing`` reproduces the
    original text.
    """

    sentences: tuple[str, ...]
    gaps: tuple[str, ...]
    leading: str = ""
    trailing: str = ""

    def join(self, sentences: Sequence[str] | None = None) -> str:
        sents = self.sentences if sentences is None else sentences
        out = [self.leading]
        for i, s in enumerate(sents):
            if i:
                out.append(self.gaps[i - 1])
            out.append(s)
        out.append(self.trailing)
        return "".join(out)


def split_sentences(text: str) -> Segmentation:
    body = text.lstrip()
    leading = text[: len(text) - len(body)]
    stripped = body.rstrip()
    trailing = body[len(stripped) :]
    if not stripped:
        return Segmentation((), (), leading + trailing, "")
    parts = _BOUNDARY_RE.split(stripped)
    return Segmentation(tuple(parts[0::2]), tuple(parts[1::2]), leading, trailing)


def segment_sentences(text: str) -> list[str]:
    """Split after ``.``, ``!`` or ``?`` followed by whitespace; terminators stay attached."""
    return list(split_sentences(text).sentences)


def reformat_sentence(sentence: str, delimiter: str) -> str:
    if delimiter == NONE:
        raise FormatError("cannot reformat with the 'none' delimiter")
    return _WS_RUN_RE.sub(delimiter, sentence)


def select_sentences(n: int, ratio: float, doc_id: str, selection_seed: int = 0) -> tuple[int, ...]:
    """Indices of the ``ceil(ratio * n)`` sentences to rewrite.

    Seeded from SHA-256 of (doc id, selection version, seed), independent of
    the delimiter, so every candidate rewrites the same sentences.
    """
    k = _ratio_count(ratio, n)
    if k == 0:
        return ()
    if k >= n:
        return tuple(range(n))
    key = f"{doc_id}\x1f{SELECTION_VERSION}\x1f{selection_seed}".encode()
    rng = random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))
    return tuple(sorted(rng.sample(range(n), k)))


@dataclass(frozen=True)
class NormalizedDocument:
    original: Document
    text: str
    config: FormatConfig
    reformatted_indices: tuple[int, ...] = ()
    # offsets in ``text`` of every inserted delimiter character
    insertions: tuple[int, ...] = field(default=(), repr=False)

    @property
    def id(self) -> str:
        return self.original.id

    @property
    def is_gold(self) -> bool:
        return self.original.is_gold


def normalize_document(
    doc: Document, config: FormatConfig, selection_seed: int = 0
) -> NormalizedDocument:
    seg = split_sentences(doc.text)
    n = len(seg.sentences)
    if config.delimiter == NONE:
        return NormalizedDocument(doc, doc.text, config)
    chosen = select_sentences(n, config.ratio, doc.id, selection_seed)
    if not chosen:
        return NormalizedDocument(doc, doc.text, config)

    chosen_set = set(chosen)
    pieces = [seg.leading]
    insertions: list[int] = []
    pos = len(seg.leading)
    for i, s in enumerate(seg.sentences):
        if i:
            pieces.append(seg.gaps[i - 1])
            pos += len(seg.gaps[i - 1])
        if i in chosen_set:
            out, last, width = [], 0, 0
            for m in _WS_RUN_RE.finditer(s):
                out.append(s[last : m.start()])
                width += m.start() - last
                insertions.append(pos + width)
                out.append(config.delimiter)
                width += 1
                last = m.end()
            out.append(s[last:])
            s = "".join(out)
        pieces.append(s)
        pos += len(s)
    pieces.append(seg.trailing)
    return NormalizedDocument(doc, "".join(pieces), config, chosen, tuple(insertions))


def candidate_formats(delimiters: Iterable[str], p: float) -> list[FormatConfig]:
    delims = list(delimiters)
    if not delims:
        raise FormatError("delimiter list is empty")
    if len(set(delims)) != len(delims):
        dupes = sorted({d for d in delims if delims.count(d) > 1})
        raise FormatError(f"duplicate delimiters: {dupes}")
    return [FormatConfig(d, p) for d in delims]


# --- prompt assembly ---------------------------------------------------------

DEFAULT_DOC_PREFIX = "Document [{index}]: "


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt text with ``{question}`` and ``{documents}`` placeholders.

    Only those two placeholders are substituted; other braces pass through.
    """

    text: str
    name: str = "custom"
    doc_prefix: str = DEFAULT_DOC_PREFIX
    doc_separator: str = "\n"

    def __post_init__(self) -> None:
        for ph in ("{question}", "{documents}"):
            if ph not in self.text:
                raise FormatError(f"template {self.name!r} lacks placeholder {ph}")

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        p = Path(path)
        return cls(p.read_text(encoding="utf-8"), name=p.stem)

    @classmethod
    def builtin(cls, name: str = "base") -> "PromptTemplate":
        """``base`` for pretrained models, ``aligned`` for chat/instruction models."""
        try:
            text = resources.files("ctxnorm.templates").joinpath(f"{name}.txt").read_text("utf-8")
        except FileNotFoundError:
            raise FormatError(f"no built-in template {name!r}") from None
        return cls(text, name=name)


@dataclass(frozen=True)
class AssembledPrompt:
    text: str
    # character span of each document's body text, in rendered order
    doc_spans: tuple[tuple[int, int], ...]


def assemble_prompt_with_spans(
    question: str,
    docs: Sequence[NormalizedDocument | Document],
    template: PromptTemplate | None = None,
) -> AssembledPrompt:
    template = template or PromptTemplate.builtin("base")
    block, rel_spans, pos = [], [], 0
    for k, d in enumerate(docs, 1):
        if k > 1:
            block.append(template.doc_separator)
            pos += len(template.doc_separator)
        prefix = template.doc_prefix.format(index=k)
        block.append(prefix + d.text)
        rel_spans.append((pos + len(prefix), pos + len(prefix) + len(d.text)))
        pos += len(prefix) + len(d.text)
    documents = "".join(block)

    # Substitute left to right so a '{question}' inside a document stays literal.
    t = template.text
    out, spans, cursor = [], [], 0
    for m in re.finditer(r"\{question\}|\{documents\}", t):
        out.append(t[cursor : m.start()])
        offset = sum(map(len, out))
        if m.group() == "{question}":
            out.append(question)
        else:
            if not spans:
                spans = [(offset + a, offset + b) for a, b in rel_spans]
            out.append(documents)
        cursor = m.end()
    out.append(t[cursor:])
    return AssembledPrompt("".join(out), tuple(spans))


def assemble_prompt(
    question: str,
    docs: Sequence[NormalizedDocument | Document],
    template: PromptTemplate | None = None,
) -> str:
    return assemble_prompt_with_spans(question, docs, template).text
