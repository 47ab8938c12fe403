"""Radial Gaussian mixtures and their projected profiles.

A mixture is a positive combination of isotropic Gaussian blobs sharing one
bandwidth ``sigma``.  Projecting the rotated mixture onto the imaging
hyperplane marginalizes each blob along the lost coordinate, which for an
isotropic Gaussian is again an isotropic Gaussian with the same ``sigma``:

    profile(p | R) = sum_k  q_k * N_{d-1}(p; H R mu_k, sigma^2 I).

Weights are stored as given (they need not sum to one); blob kernels are unit
mass, so component ``k`` contributes total mass ``q_k``.

Locations are re-centered to zero unweighted centroid at construction time:
the estimation target is the shape of the location cloud, which is invariant
under translation, and a common centroid convention makes ground-truth
comparisons well defined.  Centered locations must lie inside the ball of
radius pi so profiles fit the periodic lattice; the Gaussian tails extend
beyond any bounded window, which keeps the compact-support picture only
approximate (tail mass at the window edge is negligible for the bandwidths
used here, and is not enforced).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import projector

__all__ = ["GaussianKernel", "RadialMixture", "eval_density", "profile_function"]


@dataclass(frozen=True)
class GaussianKernel:
    """Isotropic Gaussian blob kernel with bandwidth ``sigma``."""

    sigma: float

    def __post_init__(self) -> None:
        if not (self.sigma > 0.0):
            raise ValueError("sigma must be positive")

    def density(self, sq_dist: np.ndarray, dim: int) -> np.ndarray:
        """Unit-mass Gaussian density in ``dim`` dimensions at squared radius."""
        s2 = self.sigma * self.sigma
        norm = (2.0 * np.pi * s2) ** (-0.5 * dim)
        return norm * np.exp(-0.5 * np.asarray(sq_dist) / s2)

    def fourier(self, kappa: np.ndarray) -> np.ndarray:
        """Fourier transform exp(-sigma^2 kappa^2 / 2) of the 1D marginal."""
        k = np.asarray(kappa, dtype=float)
        return np.exp(-0.5 * (self.sigma * k) ** 2)


@dataclass(frozen=True)
class RadialMixture:
    """A centered radial Gaussian mixture in dimension ``d`` (2 or 3).

    Parameters
    ----------
    d : int
        Ambient dimension.
    sigma : float
        Common blob bandwidth.
    weights : array_like, shape (K,)
        Positive, pairwise-distinct component masses.  Distinctness is what
        lets components be labeled across projections by amplitude rank.
    locations : array_like, shape (K, d)
        Blob centers.  Re-centered to zero unweighted centroid on
        construction; must then lie strictly inside the ball of radius pi.
    weights_normalized : bool
        Set when the loader rescaled the weights to unit sum.
    """

    d: int
    sigma: float
    weights: np.ndarray
    locations: np.ndarray
    weights_normalized: bool = field(default=False)

    def __post_init__(self) -> None:
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if not (self.sigma > 0.0):
            raise ValueError("sigma must be positive")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("mixture needs at least one component")
        if np.any(w <= 0.0):
            raise ValueError("weights must be positive")
        if np.unique(w).size != w.size:
            raise ValueError("weights must be pairwise distinct")
        loc = np.asarray(self.locations, dtype=float)
        if loc.shape != (w.size, self.d):
            raise ValueError(
                f"locations must have shape ({w.size}, {self.d}), got {loc.shape}"
            )
        loc = loc - loc.mean(axis=0)
        radii = np.linalg.norm(loc, axis=1)
        if np.any(radii >= np.pi):
            raise ValueError("centered locations must lie inside the ball of radius pi")
        w.setflags(write=False)
        loc.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "locations", loc)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def kernel(self) -> GaussianKernel:
        return GaussianKernel(self.sigma)

    def rotated(self, R: np.ndarray) -> "RadialMixture":
        """The mixture of the rotated density x -> rho(R^T x)."""
        R = np.asarray(R, dtype=float)
        if R.shape != (self.d, self.d):
            raise ValueError("rotation shape does not match the mixture dimension")
        return RadialMixture(
            d=self.d,
            sigma=self.sigma,
            weights=self.weights.copy(),
            locations=self.locations @ R.T,
            weights_normalized=self.weights_normalized,
        )


def _mixture_values(
    points: np.ndarray, centers: np.ndarray, weights: np.ndarray, kernel: GaussianKernel
) -> np.ndarray:
    # points (..., m), centers (K, m) -> weighted kernel sum over K.
    diff = points[..., None, :] - centers
    sq = np.einsum("...ki,...ki->...k", diff, diff)
    return kernel.density(sq, centers.shape[1]) @ weights


def eval_density(mixture: RadialMixture, x: np.ndarray) -> np.ndarray:
    """Evaluate the mixture density at points ``x`` of shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mixture.d:
        raise ValueError(f"points must have last dimension {mixture.d}")
    return _mixture_values(x, mixture.locations, mixture.weights, mixture.kernel)


def profile_function(mixture: RadialMixture, R: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Evaluate the projected profile of the R-rotated mixture.

    Parameters
    ----------
    R : array_like, shape (d, d)
        Orientation at which the mixture is viewed.
    p : array_like, shape (..., d-1)
        Hyperplane points.  For d = 2 the profile is a function of one
        coordinate; pass points of shape (..., 1).

    Returns
    -------
    numpy.ndarray
        ``sum_k q_k N_{d-1}(p; H R mu_k, sigma^2 I)`` with unit-mass kernels,
        evaluated at each point.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (mixture.d, mixture.d):
        raise ValueError("rotation shape does not match the mixture dimension")
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != mixture.d - 1:
        raise ValueError(f"profile points must have last dimension {mixture.d - 1}")
    H = projector(mixture.d)
    proj = mixture.locations @ (H @ R).T
    return _mixture_values(p, proj, mixture.weights, mixture.kernel)
