import itertools

import numpy as np
import pytest

from lgmsv.data import DataError
from lgmsv.encoder import EncoderConfig, EncoderModel, encode
from lgmsv.lgm_loss import GMParams
from lgmsv.pipeline import (Utterance, chunk, default_chunk_frames, enroll, enroll_embeddings, pooled_whitening,
                            read_embeddings, read_embeddings_binary, score, utterance_embedding,
                            write_embeddings, write_embeddings_binary)


@pytest.fixture(scope="module")
def model():
    return EncoderModel.create(EncoderConfig(input_feat_dim=6, embedding_dim=10), seed=2)


def frames(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 6))


def test_chunk_examples():
    assert [c.shape[0] for c in chunk(frames(100), 100)] == [100]
    assert [c.shape[0] for c in chunk(frames(50), 100)] == [50]
    assert [c.shape[0] for c in chunk(frames(250), 100, min_frames=30)] == [100, 100, 50]


def test_chunk_merges_short_remainder():
    assert [c.shape[0] for c in chunk(frames(220), 100, min_frames=30)] == [100, 120]
    parts = chunk(frames(220), 100, min_frames=30)
    np.testing.assert_array_equal(np.concatenate(parts), frames(220))


def test_chunk_errors():
    with pytest.raises(DataError):
        chunk(frames(5), 100, min_frames=8)
    with pytest.raises(ValueError):
        chunk(frames(50), 4, min_frames=8)


def test_default_chunk_is_twenty_seconds():
    assert default_chunk_frames(100.0) == 2000


def test_single_chunk_embedding_is_raw_encoder_output(model):
    x = frames(32)
    np.testing.assert_array_equal(utterance_embedding(model, Utterance("u", x), 32), encode(model, x))


def test_identical_chunks_give_that_embedding(model):
    x = np.tile(frames(16), (3, 1))
    np.testing.assert_allclose(utterance_embedding(model, x, 16), encode(model, frames(16)), atol=1e-12)


def test_multi_chunk_embedding_unit_norm(model):
    for n in (40, 57, 100):
        assert abs(np.linalg.norm(utterance_embedding(model, frames(n, n), 16)) - 1) < 1e-9


def test_enroll_examples(model):
    u = Utterance("a", frames(24, 1))
    single = enroll(model, [u], 16)
    np.testing.assert_array_equal(single.embedding, utterance_embedding(model, u, 16))
    np.testing.assert_allclose(enroll(model, [u, u], 16).embedding, single.embedding, atol=1e-15)
    assert single.utterance_count == 1
    sm = enroll_embeddings("s", [[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(sm.embedding, [2 ** -0.5, 2 ** -0.5], atol=1e-15)
    with pytest.raises(ValueError):
        enroll(model, [], 16)


def test_enroll_permutation_invariant():
    embs = np.random.default_rng(3).standard_normal((4, 10))
    ref = enroll_embeddings("s", embs).embedding
    for perm in itertools.permutations(range(4)):
        assert np.max(np.abs(enroll_embeddings("s", embs[list(perm)]).embedding - ref)) <= 1e-12


def test_cosine_scores():
    e = np.array([0.6, 0.8])
    assert score(e, e) == pytest.approx(1.0, abs=1e-15)
    assert score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    with pytest.raises(ValueError):
        score(e, np.zeros(2))
    with pytest.raises(ValueError):
        score(e, np.ones(3))


def test_neg_mahalanobis_scores():
    gm = GMParams(np.zeros((3, 2)), np.zeros((3, 2)))
    w = pooled_whitening(gm)
    e = np.array([0.6, 0.8])
    assert score(e, e, "neg_mahalanobis", w) == 0.0
    vals = [score(e, e + d, "neg_mahalanobis", w) for d in (0.1, 0.5, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        score(e, e, "neg_mahalanobis")


def test_scores_symmetric():
    rng = np.random.default_rng(4)
    w = rng.uniform(0.5, 2, 5)
    for _ in range(20):
        a, b = rng.standard_normal((2, 5))
        assert score(a, b) == score(b, a)
        assert score(a, b, "neg_mahalanobis", w) == score(b, a, "neg_mahalanobis", w)


def test_embedding_files(tmp_path):
    embs = {"u1": np.array([0.1, -0.2, 1 / 3]), "u2": np.array([1.0, 0.0, 0.0])}
    write_embeddings(tmp_path / "e.txt", embs)
    back = read_embeddings(tmp_path / "e.txt")
    for k in embs:
        np.testing.assert_array_equal(back[k], embs[k])
    assert (tmp_path / "e.txt").read_text().splitlines()[0].startswith("u1\t")
    write_embeddings_binary(tmp_path / "bin", embs)
    back = read_embeddings_binary(tmp_path / "bin")
    np.testing.assert_array_equal(back["u1"], embs["u1"].astype(np.float32))
