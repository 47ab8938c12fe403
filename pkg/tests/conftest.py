"""Shared fixtures: the two demo mixtures and spike-train helpers."""

import numpy as np
import pytest

from tomoshape import Lattice, Profile, RadialMixture

# The two demo configurations used throughout: a five-component planar
# mixture and a four-component spatial one.  Weights are unnormalized and
# pairwise distinct; locations are re-centered by the constructor.
PLANAR5 = dict(
    d=2,
    sigma=0.3,
    weights=[1.0, 2.0, 3.0, 4.0, 5.0],
    locations=[[0.6, 0.0], [0.6, 0.8], [-0.1, 0.1], [-1.0, -0.3], [-0.2, -0.6]],
)
SPATIAL4 = dict(
    d=3,
    sigma=0.46,
    weights=[2.0, 3.0, 2.4, 4.0],
    locations=[
        [0.0, 0.8, -0.3],
        [0.7, -0.4, -0.3],
        [-0.7, -0.4, -0.3],
        [0.0, 0.0, 0.8],
    ],
)


@pytest.fixture(scope="session")
def planar5() -> RadialMixture:
    return RadialMixture(**PLANAR5)


@pytest.fixture(scope="session")
def spatial4() -> RadialMixture:
    return RadialMixture(**SPATIAL4)


def centered_truth_points(mixture: RadialMixture) -> np.ndarray:
    """d x K truth configuration in canonical order (weights descending)."""
    order = np.argsort(-mixture.weights, kind="stable")
    return mixture.locations[order].T.copy()


def spike_profile(
    locations, amplitudes, sigma: float, T: int = 256, index: int = 0
) -> Profile:
    """1D profile of a known spike train: sum_k a_k N(x; mu_k, sigma^2).

    The blobs are wrapped onto the circle (2*pi-periodized, one image each
    side suffices for sigma << pi), so the lattice DFT coefficients are
    exactly a_k e^{-i kappa mu_k} times the kernel transform and the helper
    is accurate anywhere on the circle, not just away from the window edge.
    """
    lattice = Lattice(T)
    x = lattice.coordinates()
    loc = np.asarray(locations, dtype=float).reshape(-1)
    amp = np.asarray(amplitudes, dtype=float).reshape(-1)
    values = np.zeros(T)
    for m in (-1, 0, 1):
        sq = (x[:, None] - loc[None, :] - 2.0 * np.pi * m) ** 2
        values = values + np.exp(-sq / (2.0 * sigma * sigma)) @ amp
    values /= np.sqrt(2.0 * np.pi * sigma * sigma)
    return Profile(index=index, lattice=lattice, values=values)


def random_spike_train(rng, T: int = 256, max_k: int = 6, span: float = 1.0):
    """Spike train with min separation 4 lattice steps and amplitudes in [0.5, 5].

    Locations stay within [-span, span] so that window truncation cannot
    contaminate the deconvolved coefficients at the accuracy under test.
    """
    K = int(rng.integers(1, max_k + 1))
    min_gap = 4.0 * 2.0 * np.pi / T
    while True:
        loc = np.sort(rng.uniform(-span, span, size=K))
        if K == 1 or np.min(np.diff(loc)) >= min_gap:
            break
    amp = rng.uniform(0.5, 5.0, size=K)
    return loc, amp


def _dirichlet(delta: np.ndarray, kf: int) -> np.ndarray:
    """sum_{|kappa| <= kf} e^{i kappa delta}, computed stably."""
    delta = np.asarray(delta, dtype=float)
    num = np.sin((2 * kf + 1) * delta / 2.0)
    den = np.sin(delta / 2.0)
    small = np.abs(den) < 1e-12
    safe = np.where(small, 1.0, den)
    return np.where(small, float(2 * kf + 1), num / safe)


def grid_search_locations(w, K: int, kf: int, step: float = 1e-3) -> np.ndarray:
    """Exhaustive L2-misfit minimizer over spike locations for K <= 2.

    For each candidate location set the real amplitudes are profiled out in
    closed form (Dirichlet-kernel normal equations), so the scan is exact up
    to the grid step.  K=2 runs a coarse full scan followed by a fine scan of
    the winning cell at ``step``; the coarse pitch is far below the misfit
    basin width, so the two-stage scan finds the same minimizer as a flat
    scan at ``step``.
    """
    kappas = np.arange(-kf, kf + 1)
    wv = w.at(kappas)
    if K == 1:
        grid = np.arange(-np.pi, np.pi, step)
        b = (np.exp(1j * np.outer(grid, kappas)) @ wv).real
        alpha = b / (2 * kf + 1)
        misfit = -alpha * b  # ||w||^2 omitted: constant in mu
        return np.array([grid[np.argmin(misfit)]])
    if K != 2:
        raise ValueError("oracle implemented for K <= 2 only")

    def scan(grid1, grid2, min_gap):
        m1, m2 = np.meshgrid(grid1, grid2, indexing="ij")
        keep = (m2 - m1) >= min_gap
        m1, m2 = m1[keep], m2[keep]
        b1 = (np.exp(1j * np.outer(m1, kappas)) @ wv).real
        b2 = (np.exp(1j * np.outer(m2, kappas)) @ wv).real
        s0 = float(2 * kf + 1)
        s12 = _dirichlet(m2 - m1, kf)
        det = s0 * s0 - s12 * s12
        a1 = (s0 * b1 - s12 * b2) / det
        a2 = (s0 * b2 - s12 * b1) / det
        misfit = -(a1 * b1 + a2 * b2)
        j = np.argmin(misfit)
        return m1[j], m2[j]

    coarse = 2e-2
    g = np.arange(-np.pi, np.pi, coarse)
    c1, c2 = scan(g, g, 2 * coarse)
    f1 = np.arange(c1 - 1.5 * coarse, c1 + 1.5 * coarse, step)
    f2 = np.arange(c2 - 1.5 * coarse, c2 + 1.5 * coarse, step)
    r1, r2 = scan(f1, f2, 2 * step)
    return np.array([r1, r2])
