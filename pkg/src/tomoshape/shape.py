"""Shape estimation from labeled per-profile spike estimates.

The shape of the location cloud (its orbit under rigid motions with
reflections) is carried by the Gram matrix of the centered locations together
with the component masses.  Projection onto a Haar-random hyperplane shrinks
Gram matrices by (d-1)/d in expectation, so averaging per-profile Grams and
rescaling by d/(d-1) is an unbiased moment estimator:

    G_hat = (d / (d-1)) * (1/N) * sum_n Gram(centered locations of profile n).

The average needs a consistent component order across profiles, supplied by
descending amplitude rank (masses are pairwise distinct by assumption).  A
representative point configuration is recovered from the eigendecomposition
of G_hat, and configurations are compared after orthogonal alignment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .spectral import ProfileDeconvolution

__all__ = [
    "ShapeEstimate",
    "Configuration",
    "gram",
    "label",
    "hybrid_estimate",
    "factor",
    "procrustes",
]

_LABEL_TIE = 1e-9


@dataclass(frozen=True)
class ShapeEstimate:
    """Estimated squared shape: K x K Gram matrix plus component masses.

    Components are ordered by descending mass.  The Gram matrix is symmetric,
    positive semidefinite up to a small negative eigenvalue tolerance, and has
    near-zero row sums (it estimates the Gram of centered points).
    """

    gram: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        G = np.asarray(self.gram, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if G.shape != (w.size, w.size):
            raise ValueError("gram must be K x K matching the weights")
        scale = max(np.abs(G).max(), 1.0)
        if np.abs(G - G.T).max() > 1e-10 * scale:
            raise ValueError("gram must be symmetric")
        if np.linalg.eigvalsh(G).min() < -1e-8 * scale:
            raise ValueError("gram must be positive semidefinite within tolerance")
        if np.abs(G.sum(axis=0)).max() > 1e-6 * scale:
            raise ValueError("gram must have near-zero row sums (centered points)")
        if np.any(np.diff(w) > 1e-12):
            raise ValueError("weights must be ordered descending")
        G = G.copy()
        w = w.copy()
        G.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "gram", G)
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class Configuration:
    """A centered point configuration, one column per component (d x K)."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be a d x K matrix")
        scale = max(np.abs(pts).max(), 1.0)
        if np.abs(pts.mean(axis=1)).max() > 1e-12 * scale:
            raise ValueError("configuration must be centered")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def d(self) -> int:
        return self.points.shape[0]

    @property
    def K(self) -> int:
        return self.points.shape[1]


def gram(locations: np.ndarray) -> np.ndarray:
    """Gram matrix of row vectors: ``locations @ locations.T``."""
    loc = np.atleast_2d(np.asarray(locations, dtype=float))
    return loc @ loc.T


def label(results: Sequence[ProfileDeconvolution]) -> list[ProfileDeconvolution]:
    """Order each profile's components by descending amplitude.

    The result does not depend on the stored component order of the inputs:
    ties within 1e-9 are broken lexicographically by location and flagged
    ("ambiguous-label"), since rank labeling is unreliable there.
    """
    out = []
    for res in results:
        keys = [tuple(row) for row in res.locations]
        order = sorted(range(res.K), key=lambda i: (-res.amplitudes[i], keys[i]))
        amps = res.amplitudes[order]
        flags = res.flags
        if res.K > 1 and np.min(-np.diff(amps)) < _LABEL_TIE:
            if "ambiguous-label" not in flags:
                flags = flags + ("ambiguous-label",)
        out.append(
            ProfileDeconvolution(
                locations=res.locations[order], amplitudes=amps, flags=flags
            )
        )
    return out


def hybrid_estimate(
    labeled: Sequence[ProfileDeconvolution],
    d: int,
    weights: Optional[np.ndarray] = None,
) -> ShapeEstimate:
    """Moment estimate of the shape from labeled per-profile spikes.

    Each profile's locations are re-centered, their Gram matrices averaged,
    and the average rescaled by d/(d-1) to undo the projection shrinkage.
    ``weights`` overrides the mass estimate (shared-mode fits); otherwise
    masses are the across-profile means of the rank-k amplitudes.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    if len(labeled) == 0:
        raise ValueError("need at least one labeled profile")
    K = labeled[0].K
    grams = np.empty((len(labeled), K, K))
    amps = np.empty((len(labeled), K))
    for n, res in enumerate(labeled):
        if res.K != K:
            raise ValueError("all profiles must carry the same component count")
        if res.locations.shape[1] != d - 1:
            raise ValueError("labeled locations must have d-1 coordinates")
        centered = res.locations - res.locations.mean(axis=0)
        grams[n] = centered @ centered.T
        amps[n] = res.amplitudes
    G = (d / (d - 1)) * grams.mean(axis=0)
    G = 0.5 * (G + G.T)
    w = np.asarray(weights, dtype=float).reshape(-1) if weights is not None else amps.mean(axis=0)
    if w.size != K:
        raise ValueError("weights length must match the component count")
    order = np.argsort(-w, kind="stable")
    return ShapeEstimate(gram=G[np.ix_(order, order)], weights=w[order])


def factor(estimate: ShapeEstimate, d: int) -> Configuration:
    """Representative centered d x K configuration from a shape estimate.

    Eigendecomposes the Gram matrix, clamps negative eigenvalues at zero,
    keeps the top d eigenpairs, and forms ``diag(sqrt(lambda)) @ U.T``.  The
    sign of each eigenvector is canonicalized (largest-magnitude entry made
    positive, first such entry on ties) so the output is deterministic up to
    the O(d) ambiguity inherent in the shape.  Warns when more than d
    eigenvalues are materially positive (effective rank above d).
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    eigvals, eigvecs = np.linalg.eigh(estimate.gram)
    eigvals = np.clip(eigvals, 0.0, None)
    rank_tol = 1e-6 * max(eigvals.max(), 1.0)
    effective_rank = int(np.sum(eigvals > rank_tol))
    if effective_rank > d:
        warnings.warn(
            f"shape estimate has effective rank {effective_rank} > d = {d}; "
            "keeping the top d eigenpairs",
            stacklevel=2,
        )
    top = np.argsort(eigvals)[::-1][: min(d, estimate.K)]
    lam = eigvals[top]
    U = eigvecs[:, top]
    for j in range(U.shape[1]):
        pivot = np.argmax(np.abs(U[:, j]))
        if U[pivot, j] < 0.0:
            U[:, j] = -U[:, j]
    points = np.zeros((d, estimate.K))
    points[: top.size] = np.sqrt(lam)[:, None] * U.T
    points = points - points.mean(axis=1, keepdims=True)
    return Configuration(points=points)


def procrustes(A: Configuration, B: Configuration) -> tuple[np.ndarray, float]:
    """Best orthogonal alignment of configuration A onto B.

    Returns ``(Q, residual)`` with ``Q`` the orthogonal matrix (reflections
    allowed) minimizing ``||Q A - B||_F`` and ``residual`` that minimum.
    Evaluation-only: estimation never sees ground truth.
    """
    if A.points.shape != B.points.shape:
        raise ValueError("configurations must have matching shapes")
    M = B.points @ A.points.T
    U, _, Vt = np.linalg.svd(M)
    Q = U @ Vt
    residual = float(np.linalg.norm(Q @ A.points - B.points))
    return Q, residual
