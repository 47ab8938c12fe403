"""Synthetic projection datasets at hidden random orientations.

Each record is the projected profile of the mixture at an independent Haar
rotation, sampled on a fixed periodic lattice and optionally corrupted by
i.i.d. Gaussian pixel noise.  The rotations are never part of the observed
record; they can be kept in a separate ground-truth block for verification.

Reproducibility: profile ``n`` consumes only child stream ``n`` of
``spawn_generators(seed, N)`` (rotation first, then noise), so datasets are
bit-identical across runs and independent of any parallel execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import projector, sample_rotation, spawn_generators
from .mixture import RadialMixture, profile_function

__all__ = ["Lattice", "Profile", "Truth", "Dataset", "simulate", "marginalize"]


@dataclass(frozen=True)
class Lattice:
    """Uniform periodic lattice x_t = -pi + 2*pi*t/T, t = 0..T-1 (T even)."""

    T: int

    def __post_init__(self) -> None:
        if self.T < 4 or self.T % 2 != 0:
            raise ValueError("lattice size must be an even integer >= 4")

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.T

    def coordinates(self) -> np.ndarray:
        return -np.pi + self.spacing * np.arange(self.T)

    def points(self, axes: int) -> np.ndarray:
        """Lattice points, shape (T, 1) for axes=1 or (T, T, 2) for axes=2.

        For two axes, entry [i, j] is (x_i, y_j): axis 0 of a profile array
        is the first hyperplane coordinate, axis 1 the second.
        """
        x = self.coordinates()
        if axes == 1:
            return x[:, None]
        if axes == 2:
            gx, gy = np.meshgrid(x, x, indexing="ij")
            return np.stack([gx, gy], axis=-1)
        raise ValueError("profiles have one or two axes")


@dataclass(frozen=True)
class Profile:
    """One observed projection sampled on the lattice.

    ``values`` has shape (T,) for planar data and (T, T) for image data with
    the [i, j] = (x_i, y_j) convention of :meth:`Lattice.points`.
    """

    index: int
    lattice: Lattice
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (1, 2) or any(s != self.lattice.T for s in v.shape):
            raise ValueError("values must be (T,) or (T, T) for the profile lattice")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def axes(self) -> int:
        return self.values.ndim


@dataclass(frozen=True)
class Truth:
    """Hidden ground truth kept apart from the observed record."""

    rotations: np.ndarray  # (N, d, d)
    projected: np.ndarray  # (N, K, d-1), rows H R_n mu_k
    weights: np.ndarray  # (K,)
    locations: np.ndarray  # (K, d), centered


@dataclass(frozen=True)
class Dataset:
    """Observed profiles plus the metadata needed to estimate from them.

    The estimator entry points accept ``dataset.profiles`` and the scalar
    metadata only; the optional ``truth`` block exists for verification code
    and is never consulted by estimation paths.
    """

    d: int
    sigma: float
    n_profiles: int
    T: int
    noise_sd: float
    seed: int
    profiles: tuple
    truth: Optional[Truth] = field(default=None, repr=False)


def simulate(
    mixture: RadialMixture,
    n_profiles: int,
    T: int,
    noise_sd: float,
    seed: int,
    include_truth: bool = False,
) -> Dataset:
    """Simulate projections of ``mixture`` at hidden Haar-random orientations.

    Parameters
    ----------
    n_profiles : int
        Number of independent projections (must be positive).
    T : int
        Lattice size per axis (even, >= 4).
    noise_sd : float
        Standard deviation of additive i.i.d. Gaussian pixel noise
        (0 for noiseless data).
    seed : int
        Master seed; see the module docstring for the splitting rule.
    include_truth : bool
        When set, the returned dataset carries the rotations, projected
        locations, weights and centered locations in a ``truth`` block.
    """
    if n_profiles <= 0:
        raise ValueError("n_profiles must be positive")
    if noise_sd < 0.0:
        raise ValueError("noise_sd must be nonnegative")
    lattice = Lattice(T)
    pts = lattice.points(mixture.d - 1)
    H = projector(mixture.d)
    streams = spawn_generators(seed, n_profiles)

    profiles = []
    rotations = np.empty((n_profiles, mixture.d, mixture.d))
    for n, rng in enumerate(streams):
        R = sample_rotation(mixture.d, rng)
        rotations[n] = R
        values = profile_function(mixture, R, pts)
        if noise_sd > 0.0:
            values = values + rng.normal(0.0, noise_sd, size=values.shape)
        profiles.append(Profile(index=n, lattice=lattice, values=values))

    truth = None
    if include_truth:
        projected = np.einsum("ij,njk,lk->nli", H, rotations, mixture.locations)
        truth = Truth(
            rotations=rotations,
            projected=projected,
            weights=mixture.weights.copy(),
            locations=mixture.locations.copy(),
        )
    return Dataset(
        d=mixture.d,
        sigma=mixture.sigma,
        n_profiles=n_profiles,
        T=T,
        noise_sd=noise_sd,
        seed=seed,
        profiles=tuple(profiles),
        truth=truth,
    )


def marginalize(profile: Profile, axis: int) -> Profile:
    """Numerically marginalize a two-axis profile down to the kept ``axis``.

    ``axis=0`` keeps the first hyperplane coordinate (sums over axis 1 times
    the lattice spacing), ``axis=1`` the second.  The returned profile lives
    on the same lattice.
    """
    if profile.axes != 2:
        raise ValueError("marginalize expects a two-axis profile")
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    values = profile.values.sum(axis=1 - axis) * profile.lattice.spacing
    return Profile(index=profile.index, lattice=profile.lattice, values=values)
