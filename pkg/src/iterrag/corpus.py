"""Corpus loading, text normalization and sliding-window chunking."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 220
DEFAULT_OVERLAP = 50

_HSPACE = re.compile(r"[^\S\n]+")
_NEWLINES = re.compile(r"\n{2,}")


class ConfigurationError(ValueError):
    pass


class CorpusFormatError(ValueError):
    """Raised for malformed corpus lines; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Document:
    doc_id: str
    source: str
    text: str


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    word_start: int
    word_end: int
    text: str

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "word_start": self.word_start,
            "word_end": self.word_end,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(d["chunk_id"], d["doc_id"], int(d["word_start"]), int(d["word_end"]), d["text"])


def normalize_text(raw: str | bytes) -> str:
    """NFC-compose, collapse whitespace runs, keep newlines as paragraph breaks, trim.

    Bytes are decoded as strict UTF-8, so invalid input raises UnicodeDecodeError.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    text = unicodedata.normalize("NFC", raw)
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    # control characters other than newline/tab become spaces
    text = "".join(
        ch if ch in "\n\t" or unicodedata.category(ch) != "Cc" else " " for ch in text
    )
    lines = [_HSPACE.sub(" ", line).strip() for line in text.split("\n")]
    text = "\n".join(lines)
    text = _NEWLINES.sub("\n", text)
    return text.strip()


def words(text: str) -> list[str]:
    return text.split()


def window_starts(n_words: int, window: int, overlap: int) -> list[int]:
    if window <= overlap or overlap < 0:
        raise ConfigurationError(f"window ({window}) must exceed overlap ({overlap}) >= 0")
    if n_words == 0:
        return []
    stride = window - overlap
    starts = [0]
    while starts[-1] + window < n_words:
        starts.append(starts[-1] + stride)
    return starts


def chunk_document(
    doc: Document, window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP
) -> list[Chunk]:
    toks = words(doc.text)
    starts = window_starts(len(toks), window, overlap)
    if not toks:
        logger.warning("document %s is empty; no chunks produced", doc.doc_id)
        return []
    chunks = []
    for i, start in enumerate(starts):
        end = min(start + window, len(toks))
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#{i:04d}",
                doc_id=doc.doc_id,
                word_start=start,
                word_end=end,
                text=" ".join(toks[start:end]),
            )
        )
    return chunks


def chunk_corpus(
    docs: Iterable[Document], window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP
) -> list[Chunk]:
    out: list[Chunk] = []
    for doc in docs:
        out.extend(chunk_document(doc, window, overlap))
    return out


def parse_document(obj: object, line_no: int) -> Document:
    if not isinstance(obj, dict):
        raise CorpusFormatError(line_no, "expected a JSON object")
    for key in ("doc_id", "source", "text"):
        if not isinstance(obj.get(key), str):
            raise CorpusFormatError(line_no, f"field '{key}' missing or not a string")
    if not obj["doc_id"]:
        raise CorpusFormatError(line_no, "empty doc_id")
    return Document(obj["doc_id"], obj["source"], normalize_text(obj["text"]))


def iter_corpus(path: str | Path) -> Iterator[Document]:
    """Yield normalized documents from a JSONL corpus, validating every line."""
    seen: set[str] = set()
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusFormatError(line_no, f"invalid UTF-8: {exc}") from exc
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(line_no, f"invalid JSON: {exc.msg}") from exc
            doc = parse_document(obj, line_no)
            if doc.doc_id in seen:
                raise CorpusFormatError(line_no, f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            yield doc


def load_corpus(path: str | Path) -> list[Document]:
    return list(iter_corpus(path))
