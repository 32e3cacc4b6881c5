import numpy as np
import pytest

from iterrag.corpus import Chunk
from iterrag.index import IndexBuildError, IndexQueryError, VectorIndex, build_index


def _chunks(n):
    return [Chunk(f"c{i:03d}", "d", 0, 1, f"text {i}") for i in range(n)]


def test_search_orders_by_cosine_then_id():
    vecs = np.array([[1, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    idx = VectorIndex(_chunks(4), vecs)
    hits = idx.search([1, 0], k=3)
    assert [h.chunk_id for h in hits] == ["c000", "c001", "c003"]
    assert hits[0].score == pytest.approx(1.0)
    assert hits[2].score == pytest.approx(np.sqrt(0.5))


def test_k_larger_than_index():
    idx = VectorIndex(_chunks(2), np.eye(2))
    assert len(idx.search([1, 0], k=10)) == 2


def test_bad_inputs():
    with pytest.raises(IndexQueryError):
        VectorIndex(_chunks(2), np.eye(2)).search([1, 0], k=0)
    with pytest.raises(IndexBuildError):
        VectorIndex(_chunks(2), np.eye(3))
    with pytest.raises(IndexBuildError):
        VectorIndex(_chunks(2), np.array([[1, np.nan], [0, 1]]))


def test_save_load_roundtrip(tmp_path):
    idx = VectorIndex(_chunks(3), np.random.default_rng(0).normal(size=(3, 4)), "enc", {"window": 5})
    idx.save(tmp_path)
    back = VectorIndex.load(tmp_path)
    assert back.content_hash() == idx.content_hash()
    assert back.encoder_id == "enc" and back.params == {"window": 5}


def test_corrupt_index_detected(tmp_path):
    VectorIndex(_chunks(2), np.eye(2)).save(tmp_path)
    np.save(tmp_path / "vectors.npy", np.eye(2)[::-1])
    with pytest.raises(IndexBuildError, match="checksum"):
        VectorIndex.load(tmp_path)


def test_build_index_parallel_matches_serial():
    chunks = _chunks(50)

    def embed(texts):
        return [[len(t), sum(map(ord, t)) % 7 + 1.0] for t in texts]

    a = build_index(chunks, embed, batch_size=7, workers=1)
    b = build_index(chunks, embed, batch_size=7, workers=4)
    assert a.content_hash() == b.content_hash()
