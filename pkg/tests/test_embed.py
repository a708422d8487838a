import numpy as np
import pytest

from softlab.embed import (
    TsneConfig,
    conditional_affinities,
    extract_embeddings,
    perplexity_search,
    pairwise_sq_distances,
    subsample,
    symmetrize,
    tsne,
)
from softlab.errors import NumericError, ValidationError
from softlab.nnet import Network, init_network


def _simplex(n):
    """n points with all pairwise distances equal (scaled identity rows)."""
    return np.eye(n) * 3.0


def _two_clusters(n_per, d, gap, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, (n_per, d))
    b = rng.normal(0, 1, (n_per, d))
    b[:, 0] += gap
    return np.vstack([a, b])


def test_equidistant_points_give_uniform_rows():
    p, perp, done = perplexity_search(pairwise_sq_distances(_simplex(31)), 30.0)
    assert done.all()
    np.testing.assert_allclose(perp, 30.0, rtol=1e-12)
    off = ~np.eye(31, dtype=bool)
    np.testing.assert_allclose(p[off], 1 / 30, rtol=1e-12)
    assert np.all(np.diag(p) == 0)


def test_rows_sum_to_one_and_hit_perplexity():
    x = np.random.default_rng(0).normal(size=(200, 5))
    p, perp, done = perplexity_search(pairwise_sq_distances(x), 30.0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert done.all()
    assert np.max(np.abs(perp - 30.0)) <= 1e-3
    # independent recomputation of each row's perplexity as 2 ** entropy in bits
    off = ~np.eye(200, dtype=bool)
    rows = p[off].reshape(200, 199)
    bits = -(rows * np.log2(rows)).sum(axis=1)
    np.testing.assert_allclose(2.0**bits, 30.0, atol=1e-3)


def test_affinities_scale_invariant():
    x = np.random.default_rng(1).normal(size=(80, 4))
    np.testing.assert_allclose(conditional_affinities(x, 10.0), conditional_affinities(0.01 * x, 10.0), atol=1e-9)


def test_duplicate_points_handled():
    x = np.vstack([np.zeros((10, 3)), np.random.default_rng(2).normal(size=(30, 3))])
    p = conditional_affinities(x, 5.0)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_too_few_points():
    with pytest.raises(ValidationError):
        conditional_affinities(np.zeros((30, 2)), 30.0)


def test_symmetrize_cases():
    np.testing.assert_array_equal(symmetrize(np.array([[0.0, 1.0], [1.0, 0.0]])), [[0.0, 0.5], [0.5, 0.0]])
    x = np.random.default_rng(3).normal(size=(60, 3))
    p = symmetrize(conditional_affinities(x, 10.0))
    np.testing.assert_allclose(p, p.T)
    assert p.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(p >= 0) and np.all(np.diag(p) == 0)


def test_q_normalised_every_iteration():
    sums = []
    tsne(
        _two_clusters(30, 5, 10.0),
        TsneConfig(perplexity=10, iterations=300),
        callback=lambda it, y, q: sums.append(q.sum()),
    )
    assert len(sums) == 300
    np.testing.assert_allclose(sums, 1.0, atol=1e-6)


def test_clusters_separate():
    x = _two_clusters(50, 10, 12.0)
    y = tsne(x, TsneConfig(perplexity=20, iterations=1000)).points
    dist = np.linalg.norm(y[:, None] - y[None, :], axis=-1)
    within = np.concatenate([dist[:50, :50][np.triu_indices(50, 1)], dist[50:, 50:][np.triu_indices(50, 1)]])
    between = dist[:50, 50:].ravel()
    assert within.mean() < between.mean()


def test_objective_decreases_after_exaggeration():
    result = tsne(_two_clusters(100, 10, 10.0), TsneConfig(iterations=1000))
    assert result.objective_trace[-1] < result.objective_trace[250]


def test_deterministic():
    x = _two_clusters(40, 6, 8.0)
    cfg = TsneConfig(perplexity=15, iterations=200, seed=4)
    np.testing.assert_array_equal(tsne(x, cfg).points, tsne(x, cfg).points)


def test_affinities_translation_invariant():
    x = _two_clusters(40, 6, 8.0)
    np.testing.assert_allclose(conditional_affinities(x, 15.0), conditional_affinities(x + 100.0, 15.0), atol=1e-12)


def test_rejects_nonfinite():
    x = np.zeros((50, 3))
    x[3, 1] = np.nan
    with pytest.raises(NumericError):
        tsne(x, TsneConfig(perplexity=5, iterations=5))


def test_extract_embeddings_zero_network():
    net = init_network(0)
    zero = Network(net.layers, [np.zeros_like(p) for p in net.params])
    feats = extract_embeddings(zero, np.full((5, 32, 32, 3), 200, np.uint8))
    assert feats.shape == (5, 64)
    assert not feats.any()


def test_extract_embeddings_batch_independent():
    net = init_network(3)
    images = np.random.default_rng(0).integers(0, 256, (130, 32, 32, 3), dtype=np.uint8)
    big = extract_embeddings(net, images, batch_size=128)
    single = extract_embeddings(net, images, batch_size=1)
    np.testing.assert_allclose(big, single, atol=1e-6)
    assert big.shape[1] == net.embedding_dim == 64


def test_subsample_clamps():
    assert subsample(10, 50, 0).tolist() == list(range(10))
    pick = subsample(100, 20, 0)
    assert len(set(pick.tolist())) == 20 and np.all(np.diff(pick) > 0)
