"""Exact cosine-similarity index over chunk embeddings."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Chunk

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
DEFAULT_K = 10

EmbedFn = Callable[[list[str]], Sequence[Sequence[float]]]


class IndexBuildError(RuntimeError):
    pass


class IndexQueryError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float

    @property
    def chunk_id(self) -> str:
        return self.chunk.chunk_id

    def ref(self) -> dict:
        return {"chunk_id": self.chunk.chunk_id, "doc_id": self.chunk.doc_id, "score": self.score}


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.sqrt((mat * mat).sum(axis=1))
    if np.any(norms == 0):
        raise IndexBuildError("zero-norm embedding cannot be cosine-normalized")
    return mat / norms[:, None]


class VectorIndex:
    """Immutable after construction; safe to share between reader threads."""

    def __init__(self, chunks: Sequence[Chunk], vectors: np.ndarray, encoder_id: str = "unknown",
                 params: dict | None = None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if len(chunks) == 0:
            vectors = vectors.reshape(0, vectors.shape[1] if vectors.ndim == 2 else 0)
        if vectors.ndim != 2 or vectors.shape[0] != len(chunks):
            raise IndexBuildError("need exactly one vector per chunk")
        if not np.all(np.isfinite(vectors)):
            raise IndexBuildError("non-finite embedding values")
        ids = [c.chunk_id for c in chunks]
        if len(set(ids)) != len(ids):
            raise IndexBuildError("duplicate chunk_id in index")
        self._chunks = tuple(chunks)
        self._vectors = _unit_rows(vectors) if len(chunks) else vectors
        self._vectors.setflags(write=False)
        # position of each chunk in chunk_id order, used as the secondary sort key
        order = sorted(range(len(ids)), key=ids.__getitem__)
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(ids))
        self.encoder_id = encoder_id
        self.params = dict(params or {})

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def dim(self) -> int:
        return int(self._vectors.shape[1])

    @property
    def chunks(self) -> tuple[Chunk, ...]:
        return self._chunks

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    def search(self, query_vec: Sequence[float], k: int = DEFAULT_K) -> list[ScoredChunk]:
        return search(self, query_vec, k)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self._vectors.tobytes())
        for c in self._chunks:
            h.update(json.dumps(c.to_dict(), sort_keys=True).encode())
        return h.hexdigest()

    def save(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "vectors.npy", np.ascontiguousarray(self._vectors), allow_pickle=False)
        with open(d / "chunks.jsonl", "w", encoding="utf-8") as fh:
            for c in self._chunks:
                fh.write(json.dumps(c.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
        manifest = {
            "format_version": INDEX_FORMAT_VERSION,
            "encoder_id": self.encoder_id,
            "dim": self.dim,
            "chunk_count": len(self),
            "params": self.params,
            "content_sha256": self.content_hash(),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return d

    @classmethod
    def load(cls, directory: str | Path) -> "VectorIndex":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        if manifest.get("format_version") != INDEX_FORMAT_VERSION:
            raise IndexBuildError(f"unsupported index format {manifest.get('format_version')}")
        with open(d / "chunks.jsonl", encoding="utf-8") as fh:
            chunks = [Chunk.from_dict(json.loads(line)) for line in fh if line.strip()]
        vectors = np.load(d / "vectors.npy", allow_pickle=False)
        if len(chunks) == 0:
            vectors = vectors.reshape(0, int(manifest["dim"]))
        idx = cls(chunks, vectors, manifest["encoder_id"], manifest.get("params"))
        if idx.content_hash() != manifest["content_sha256"]:
            raise IndexBuildError(f"index at {d} failed its content checksum")
        return idx


def read_index_manifest(directory: str | Path) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text())


def build_index(
    chunks: Sequence[Chunk],
    embed: EmbedFn,
    *,
    encoder_id: str = "unknown",
    batch_size: int = 64,
    workers: int = 1,
    params: dict | None = None,
) -> VectorIndex:
    """Embed chunk texts in batches (optionally concurrently) and build the index."""
    for c in chunks:
        if not c.text.strip():
            raise IndexBuildError(f"chunk {c.chunk_id} is empty")
    if not chunks:
        return VectorIndex([], np.zeros((0, 0)), encoder_id, params)
    batches = [list(chunks[i:i + batch_size]) for i in range(0, len(chunks), batch_size)]

    def run(batch: list[Chunk]) -> np.ndarray:
        out = np.asarray(embed([c.text for c in batch]), dtype=np.float64)
        if out.ndim != 2 or out.shape[0] != len(batch):
            raise IndexBuildError("embedder returned wrong number of vectors")
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    dims = {p.shape[1] for p in parts}
    if len(dims) != 1:
        raise IndexBuildError(f"embedding dimension mismatch across batches: {sorted(dims)}")
    return VectorIndex(chunks, np.vstack(parts), encoder_id, params)


def search(index: VectorIndex, query_vec: Sequence[float], k: int = DEFAULT_K) -> list[ScoredChunk]:
    """Top-k by cosine similarity; ties broken by chunk_id ascending."""
    if k < 1:
        raise IndexQueryError("k must be >= 1")
    if len(index) == 0:
        return []
    q = np.asarray(query_vec, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise IndexQueryError(f"query dim {q.shape[0]} != index dim {index.dim}")
    norm = np.sqrt((q * q).sum())
    if norm == 0 or not np.isfinite(norm):
        raise IndexQueryError("query vector must be finite and non-zero")
    q = q / norm
    # row-wise sum keeps identical rows bit-identical, so exact ties stay ties
    scores = (index.vectors * q).sum(axis=1)
    scores = np.clip(scores, -1.0, 1.0)
    order = np.lexsort((index._id_rank, -scores))[: min(k, len(index))]
    return [ScoredChunk(index.chunks[i], float(scores[i])) for i in order]
