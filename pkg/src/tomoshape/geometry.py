"""Haar-distributed rotations and projection onto the imaging hyperplane.

Conventions (pinned once, used everywhere):

* rotation matrices act on column vectors from the left, counterclockwise
  positive in the plane;
* the imaging hyperplane keeps the first ``d - 1`` coordinates of the rotated
  vector, i.e. the projector is ``H = eye(d-1, d)``;
* planar rotations are sampled by a uniform angle on ``[0, 2*pi)``, spatial
  rotations through uniform unit quaternions (the double cover is uniform, so
  the pushforward is Haar measure on the rotation group).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "projector",
    "sample_rotation",
    "sample_rotations",
    "is_rotation",
    "project_location",
    "spawn_generators",
]

_SUPPORTED_D = (2, 3)


def projector(d: int) -> np.ndarray:
    """Return the (d-1) x d matrix selecting the first d-1 coordinates."""
    if d not in _SUPPORTED_D:
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    H = np.eye(d - 1, d)
    H.setflags(write=False)
    return H


def sample_rotations(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent Haar-distributed rotations, shape (n, d, d).

    Parameters
    ----------
    d : int
        Ambient dimension, 2 or 3.
    n : int
        Number of draws.
    rng : numpy.random.Generator
        Source of randomness; consumed in a fixed draw order so results are
        reproducible for a given generator state.
    """
    if d not in _SUPPORTED_D:
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if d == 2:
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        c, s = np.cos(theta), np.sin(theta)
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
        out[:, 1, 1] = c
        return out
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return _quaternion_matrices(q)


def sample_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a single Haar-distributed d x d rotation matrix."""
    return sample_rotations(d, 1, rng)[0]


def _quaternion_matrices(q: np.ndarray) -> np.ndarray:
    # q rows are unit quaternions (w, x, y, z); output is the standard
    # left-action matrix, determinant +1 for either sign of q.
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3))
    out[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[:, 0, 1] = 2.0 * (x * y - w * z)
    out[:, 0, 2] = 2.0 * (x * z + w * y)
    out[:, 1, 0] = 2.0 * (x * y + w * z)
    out[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[:, 1, 2] = 2.0 * (y * z - w * x)
    out[:, 2, 0] = 2.0 * (x * z - w * y)
    out[:, 2, 1] = 2.0 * (y * z + w * x)
    out[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def is_rotation(R: np.ndarray, tol: float = 1e-12) -> bool:
    """True when R is orthogonal with determinant +1, within ``tol``."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        return False
    d = R.shape[0]
    if np.abs(R @ R.T - np.eye(d)).max() > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def project_location(mu: np.ndarray, R: np.ndarray, H: np.ndarray | None = None) -> np.ndarray:
    """Project a location through a rotation: returns ``H @ R @ mu``.

    ``mu`` may be a single d-vector or an array of shape (..., d); the
    projection applies along the last axis.
    """
    mu = np.asarray(mu, dtype=float)
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    if R.shape != (d, d):
        raise ValueError("rotation matrix must be square")
    if mu.shape[-1] != d:
        raise ValueError(f"location has dimension {mu.shape[-1]}, rotation acts on {d}")
    if H is None:
        H = projector(d)
    if H.shape != (d - 1, d):
        raise ValueError("projector shape does not match the rotation dimension")
    return mu @ (H @ R).T


def spawn_generators(seed: int, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child generators from a master seed.

    Splitting rule (the reproducibility contract): child ``i`` is
    ``PCG64(SeedSequence(seed).spawn(n)[i])``.  The mapping depends only on
    ``(seed, n, i)``, never on scheduling, so any parallel consumer that
    assigns stream ``i`` to unit-of-work ``i`` reproduces serial results.
    """
    seq = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(n)]
