"""Mixture density, projected profiles, and constructor contracts."""

import math

import numpy as np
import pytest
from scipy import integrate

from tomoshape import (
    GaussianKernel,
    Lattice,
    RadialMixture,
    eval_density,
    profile_function,
)
from tomoshape.geometry import projector, sample_rotation

from conftest import PLANAR5


def loop_density(weights, centers, sigma, x):
    """Independent plain-Python evaluation of the mixture density."""
    x = np.asarray(x, dtype=float)
    d = x.size
    total = 0.0
    for q, c in zip(weights, centers):
        sq = float(np.sum((x - np.asarray(c)) ** 2))
        total += q * math.exp(-sq / (2 * sigma**2)) / (2 * math.pi * sigma**2) ** (d / 2)
    return total


def test_kernel_density_is_unit_mass():
    kernel = GaussianKernel(0.4)
    val, _ = integrate.quad(lambda x: kernel.density(x * x, 1), -np.inf, np.inf)
    assert abs(val - 1.0) < 1e-10


def test_kernel_fourier_matches_quadrature():
    kernel = GaussianKernel(0.3)
    for kappa in (0.0, 1.0, 3.0):
        re, _ = integrate.quad(
            lambda x: kernel.density(x * x, 1) * np.cos(kappa * x), -np.inf, np.inf
        )
        assert abs(re - kernel.fourier(kappa)) < 1e-10


def test_kernel_fourier_is_strictly_positive_on_usable_band():
    # Positivity matters where the deconvolution divides by the transform;
    # far beyond that band float64 underflows to zero, which is fine.
    kernel = GaussianKernel(0.3)
    assert np.all(kernel.fourier(np.arange(0, 60)) > 0.0)


def test_kernel_rejects_nonpositive_sigma():
    for s in (0.0, -1.0):
        with pytest.raises(ValueError):
            GaussianKernel(s)


@pytest.mark.parametrize("d", [2, 3])
def test_single_centered_component_at_origin(d):
    m = RadialMixture(d=d, sigma=1.0, weights=[1.0], locations=[np.zeros(d)])
    assert abs(eval_density(m, np.zeros(d)) - (2 * np.pi) ** (-d / 2)) < 1e-14


def test_planar_density_matches_loop_oracle(planar5):
    # The published third mean, shifted by the centroid the constructor
    # removed, plus a few arbitrary points.
    pts = [np.array([-0.08, 0.1]), np.zeros(2), np.array([0.5, -0.7]), np.array([2.0, 1.0])]
    for x in pts:
        want = loop_density(planar5.weights, planar5.locations, planar5.sigma, x)
        assert abs(eval_density(planar5, x) - want) < 1e-13


def test_spatial_density_matches_loop_oracle(spatial4):
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.uniform(-1, 1, size=3)
        want = loop_density(spatial4.weights, spatial4.locations, spatial4.sigma, x)
        assert abs(eval_density(spatial4, x) - want) < 1e-13


@pytest.mark.parametrize("d", [2, 3])
def test_density_is_rotation_invariant(d, planar5, spatial4):
    m = planar5 if d == 2 else spatial4
    rng = np.random.default_rng(21)
    for _ in range(5):
        R = sample_rotation(d, rng)
        mr = RadialMixture(d=d, sigma=m.sigma, weights=m.weights, locations=m.locations @ R.T)
        x = rng.uniform(-1.5, 1.5, size=d)
        assert abs(eval_density(mr, R @ x) - eval_density(m, x)) < 1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_centered_single_component_profile_ignores_rotation(d):
    m = RadialMixture(d=d, sigma=0.7, weights=[2.0], locations=[np.zeros(d)])
    kernel = GaussianKernel(0.7)
    rng = np.random.default_rng(2)
    p = rng.uniform(-1, 1, size=(6, d - 1))
    want = 2.0 * kernel.density(np.sum(p * p, axis=-1), d - 1)
    for _ in range(4):
        R = sample_rotation(d, rng)
        assert np.allclose(profile_function(m, R, p), want, atol=1e-14)


def test_planar_profile_at_identity_matches_formula(planar5):
    # At R = I the projection keeps the first coordinate, so the profile is
    # an explicit five-term 1D Gaussian sum over the centered means.
    centers = [c[0] for c in PLANAR5["locations"]]
    centroid = sum(centers) / len(centers)
    xs = np.linspace(-2.0, 2.0, 41)
    got = profile_function(planar5, np.eye(2), xs[:, None])
    s2 = 2 * 0.3**2
    want = np.zeros_like(xs)
    for j, c in enumerate(centers, start=1):
        want += j * np.exp(-((xs - (c - centroid)) ** 2) / s2) / math.sqrt(math.pi * s2)
    assert np.allclose(got, want, atol=1e-12)


def test_profile_total_mass(planar5):
    lattice = Lattice(256)
    x = lattice.coordinates()[:, None]
    rng = np.random.default_rng(8)
    for _ in range(3):
        R = sample_rotation(2, rng)
        mass = profile_function(planar5, R, x).sum() * lattice.spacing
        assert abs(mass - planar5.weights.sum()) < 1e-6


@pytest.mark.parametrize("d", [2, 3])
def test_projection_rotation_commutation(d, planar5, spatial4):
    m = planar5 if d == 2 else spatial4
    rng = np.random.default_rng(31)
    p = rng.uniform(-1, 1, size=(5, d - 1))
    for _ in range(5):
        R0 = sample_rotation(d, rng)
        R = sample_rotation(d, rng)
        mr = RadialMixture(d=d, sigma=m.sigma, weights=m.weights, locations=m.locations @ R0.T)
        assert np.allclose(
            profile_function(mr, R, p), profile_function(m, R @ R0, p), atol=1e-12
        )


def test_image_marginal_is_planar_mixture_with_same_sigma():
    # Marginalizing one axis of the 2D profile of a spatial mixture leaves a
    # 1D Gaussian mixture with the same sigma and weights.  Locations are
    # kept small so window truncation sits far below the 1e-8 gate.
    m = RadialMixture(
        d=3,
        sigma=0.3,
        weights=[1.0, 2.5],
        locations=[[0.4, -0.2, 0.3], [-0.3, 0.5, -0.1]],
    )
    lattice = Lattice(128)
    pts = lattice.points(2)
    rng = np.random.default_rng(17)
    H = projector(3)
    for _ in range(3):
        R = sample_rotation(3, rng)
        image = profile_function(m, R, pts)
        marginal = image.sum(axis=1) * lattice.spacing  # integrate out y
        proj_x = (m.locations @ (H @ R).T)[:, 0]
        x = lattice.coordinates()
        want = np.zeros_like(x)
        for q, c in zip(m.weights, proj_x):
            want += q * np.exp(-((x - c) ** 2) / (2 * 0.09)) / math.sqrt(2 * math.pi * 0.09)
        assert np.abs(marginal - want).max() < 1e-8


def test_constructor_centers_locations(planar5):
    assert np.allclose(planar5.locations.mean(axis=0), 0.0, atol=1e-15)
    # the shift was (-0.02, 0): first published mean (0.6, 0) becomes (0.62, 0)
    assert np.allclose(planar5.locations[0], [0.62, 0.0], atol=1e-12)


def test_constructor_validation():
    with pytest.raises(ValueError):
        RadialMixture(d=4, sigma=1.0, weights=[1.0], locations=[[0.0] * 4])
    with pytest.raises(ValueError):
        RadialMixture(d=2, sigma=0.0, weights=[1.0], locations=[[0.0, 0.0]])
    with pytest.raises(ValueError):
        RadialMixture(d=2, sigma=1.0, weights=[1.0, -2.0], locations=[[0, 0], [1, 0]])
    with pytest.raises(ValueError):
        RadialMixture(d=2, sigma=1.0, weights=[2.0, 2.0], locations=[[0, 0], [1, 0]])
    with pytest.raises(ValueError):
        RadialMixture(d=2, sigma=1.0, weights=[1.0], locations=[[0.0, 0.0, 0.0]])
    with pytest.raises(ValueError):  # radius pi hit after centering
        RadialMixture(d=2, sigma=1.0, weights=[1.0, 2.0], locations=[[3.2, 0], [-3.2, 0]])


def test_mixture_arrays_are_read_only(planar5):
    with pytest.raises(ValueError):
        planar5.weights[0] = 9.0
    with pytest.raises(ValueError):
        planar5.locations[0, 0] = 9.0


def test_rotated_preserves_weights_and_shape(spatial4):
    R = sample_rotation(3, np.random.default_rng(4))
    mr = spatial4.rotated(R)
    assert np.array_equal(mr.weights, spatial4.weights)
    assert np.allclose(mr.locations, spatial4.locations @ R.T, atol=1e-15)
    assert np.allclose(
        np.linalg.norm(mr.locations, axis=1),
        np.linalg.norm(spatial4.locations, axis=1),
        atol=1e-12,
    )


def test_eval_density_rejects_wrong_dimension(planar5):
    with pytest.raises(ValueError):
        eval_density(planar5, np.zeros(3))
    with pytest.raises(ValueError):
        profile_function(planar5, np.eye(2), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        profile_function(planar5, np.eye(3), np.zeros((4, 1)))
