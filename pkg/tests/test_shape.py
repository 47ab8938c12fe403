"""Shape recovery: labeling, Gram averaging, factorization, alignment."""

import numpy as np
import pytest

from conftest import centered_truth_points
from tomoshape.geometry import projector, sample_rotations
from tomoshape.shape import (
    Configuration,
    ShapeEstimate,
    factor,
    gram,
    hybrid_estimate,
    label,
    procrustes,
)
from tomoshape.spectral import ProfileDeconvolution


def test_gram_of_row_vectors(planar5):
    G = gram(planar5.locations)
    assert G.shape == (5, 5)
    # first centered component sits at (0.62, 0)
    np.testing.assert_allclose(G[0, 0], 0.3844, atol=1e-12)
    np.testing.assert_allclose(G, G.T, atol=0)
    np.testing.assert_allclose(gram(np.array([1.0, 2.0])), [[5.0]], atol=0)


def test_label_orders_by_descending_amplitude():
    res = ProfileDeconvolution(
        locations=np.array([[0.1, 0.2], [0.3, -0.1], [-0.2, 0.5], [0.0, 0.0]]),
        amplitudes=np.array([2.4, 4.0, 2.0, 3.0]),
    )
    (out,) = label([res])
    np.testing.assert_array_equal(out.amplitudes, [4.0, 3.0, 2.4, 2.0])
    np.testing.assert_array_equal(
        out.locations,
        [[0.3, -0.1], [0.0, 0.0], [0.1, 0.2], [-0.2, 0.5]],
    )
    assert out.flags == ()


def test_label_is_input_order_invariant():
    rng = np.random.default_rng(0)
    loc = rng.normal(size=(5, 1))
    amp = np.array([5.0, 1.0, 4.0, 2.0, 3.0])
    base = ProfileDeconvolution(locations=loc, amplitudes=amp)
    perm = rng.permutation(5)
    shuffled = ProfileDeconvolution(locations=loc[perm], amplitudes=amp[perm])
    (a,), (b,) = label([base]), label([shuffled])
    np.testing.assert_array_equal(a.locations, b.locations)
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)


def test_label_flags_ties_and_breaks_them_lexicographically():
    res = ProfileDeconvolution(
        locations=np.array([[0.5], [-0.3]]), amplitudes=np.array([1.0, 1.0])
    )
    (out,) = label([res])
    assert "ambiguous-label" in out.flags
    np.testing.assert_array_equal(out.locations, [[-0.3], [0.5]])


def test_hybrid_estimate_recovers_gram_within_monte_carlo_error(spatial4):
    # Projection shrinks Gram matrices by (d-1)/d in expectation; averaging
    # many projected configurations and rescaling recovers the truth.
    N = 20000
    H = projector(3)
    rng = np.random.default_rng(123)
    rotations = sample_rotations(3, N, rng)
    order = np.argsort(-spatial4.weights, kind="stable")
    V = spatial4.locations[order]  # (K, 3), weight-descending
    projected = np.einsum("ij,njk,lk->nli", H, rotations, V)  # (N, K, 2)
    labeled = [
        ProfileDeconvolution(locations=projected[n], amplitudes=spatial4.weights[order])
        for n in range(N)
    ]
    est = hybrid_estimate(labeled, d=3)
    truth = V @ V.T
    # empirical SE of each averaged entry, after the d/(d-1) rescale
    centered = projected - projected.mean(axis=1, keepdims=True)
    per_profile = 1.5 * np.einsum("nki,nli->nkl", centered, centered)
    se = per_profile.std(axis=0) / np.sqrt(N)
    assert np.all(np.abs(est.gram - truth) <= 4.0 * se + 1e-12)
    np.testing.assert_allclose(est.weights, spatial4.weights[order], rtol=1e-10)


def test_hybrid_estimate_weight_override_and_ordering():
    loc = np.array([[0.4], [-0.4]])
    labeled = [ProfileDeconvolution(locations=loc, amplitudes=np.array([1.0, 3.0]))]
    est = hybrid_estimate(labeled, d=2, weights=np.array([2.0, 5.0]))
    # components (and the Gram) are re-sorted by descending mass
    np.testing.assert_array_equal(est.weights, [5.0, 2.0])
    np.testing.assert_allclose(est.gram, 2.0 * np.array([[0.16, -0.16], [-0.16, 0.16]]))
    default = hybrid_estimate(labeled, d=2)
    np.testing.assert_array_equal(default.weights, [3.0, 1.0])


def test_hybrid_estimate_validation():
    loc = np.array([[0.4], [-0.4]])
    ok = ProfileDeconvolution(locations=loc, amplitudes=np.array([3.0, 1.0]))
    with pytest.raises(ValueError):
        hybrid_estimate([ok], d=4)
    with pytest.raises(ValueError):
        hybrid_estimate([], d=2)
    other = ProfileDeconvolution(locations=loc[:1], amplitudes=np.array([1.0]))
    with pytest.raises(ValueError):
        hybrid_estimate([ok, other], d=2)
    with pytest.raises(ValueError):
        hybrid_estimate([ok], d=3)  # needs d-1 = 2 coordinates
    with pytest.raises(ValueError):
        hybrid_estimate([ok], d=2, weights=np.ones(3))


def test_shape_estimate_validation():
    G = np.array([[1.0, -1.0], [-1.0, 1.0]])
    w = np.array([2.0, 1.0])
    ShapeEstimate(gram=G, weights=w)  # valid
    with pytest.raises(ValueError):
        ShapeEstimate(gram=G, weights=np.ones(3))
    with pytest.raises(ValueError):
        ShapeEstimate(gram=np.array([[1.0, 0.5], [-0.5, 1.0]]), weights=w)
    with pytest.raises(ValueError):  # negative eigenvalue beyond tolerance
        ShapeEstimate(gram=np.array([[1.0, -2.0], [-2.0, 1.0]]), weights=w)
    with pytest.raises(ValueError):  # row sums far from zero
        ShapeEstimate(gram=np.array([[1.0, 0.5], [0.5, 1.0]]), weights=w)
    with pytest.raises(ValueError):  # weights must descend
        ShapeEstimate(gram=G, weights=w[::-1])


def test_factor_round_trip(spatial4):
    V = centered_truth_points(spatial4)  # (3, 4)
    order = np.argsort(-spatial4.weights, kind="stable")
    est = ShapeEstimate(gram=V.T @ V, weights=spatial4.weights[order])
    config = factor(est, d=3)
    assert config.points.shape == (3, 4)
    np.testing.assert_allclose(config.points.T @ config.points, V.T @ V, atol=1e-10)
    # sign canonicalization: factoring twice gives the identical configuration
    again = factor(ShapeEstimate(gram=V.T @ V, weights=spatial4.weights[order]), d=3)
    np.testing.assert_array_equal(config.points, again.points)


def test_factor_zero_pads_deficient_rank():
    # three collinear points: rank-1 Gram in d = 2
    x = np.array([[-1.0, 0.0, 1.0]])
    G = x.T @ x
    est = ShapeEstimate(gram=G, weights=np.array([3.0, 2.0, 1.0]))
    config = factor(est, d=2)
    np.testing.assert_allclose(config.points[1], 0.0, atol=1e-12)
    np.testing.assert_allclose(config.points.T @ config.points, G, atol=1e-12)


def test_factor_warns_when_rank_exceeds_dimension():
    rng = np.random.default_rng(4)
    C = rng.normal(size=(3, 4))
    C -= C.mean(axis=1, keepdims=True)
    est = ShapeEstimate(gram=C.T @ C, weights=np.array([4.0, 3.0, 2.0, 1.0]))
    with pytest.warns(UserWarning, match="effective rank"):
        config = factor(est, d=2)
    assert config.points.shape == (2, 4)


def test_procrustes_aligns_rotated_copies():
    rng = np.random.default_rng(12)
    A = rng.normal(size=(3, 5))
    A -= A.mean(axis=1, keepdims=True)
    theta = 0.7
    # rotation about z composed with a reflection
    Q0 = np.array(
        [
            [np.cos(theta), -np.sin(theta), 0.0],
            [np.sin(theta), np.cos(theta), 0.0],
            [0.0, 0.0, -1.0],
        ]
    )
    B = Q0 @ A
    Q, resid = procrustes(Configuration(A), Configuration(B))
    assert resid < 1e-12
    np.testing.assert_allclose(Q, Q0, atol=1e-12)


def test_procrustes_residual_is_a_minimum():
    rng = np.random.default_rng(13)
    A = rng.normal(size=(2, 4))
    A -= A.mean(axis=1, keepdims=True)
    B = rng.normal(size=(2, 4))
    B -= B.mean(axis=1, keepdims=True)
    Q, resid = procrustes(Configuration(A), Configuration(B))
    np.testing.assert_allclose(Q @ Q.T, np.eye(2), atol=1e-12)
    assert resid <= np.linalg.norm(A - B) + 1e-12
    for _ in range(10):
        ang = rng.uniform(0, 2 * np.pi)
        R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        assert resid <= np.linalg.norm(R @ A - B) + 1e-12


def test_procrustes_shape_mismatch():
    A = Configuration(np.zeros((2, 3)))
    B = Configuration(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        procrustes(A, B)


def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration(np.ones((2, 3)))  # not centered
    with pytest.raises(ValueError):
        Configuration(np.zeros(3))
    c = Configuration(np.array([[1.0, -1.0], [0.5, -0.5]]))
    assert c.d == 2 and c.K == 2
    with pytest.raises(ValueError):
        c.points[0, 0] = 2.0
