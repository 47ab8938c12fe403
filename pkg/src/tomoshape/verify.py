"""Monte Carlo verification of the estimator's distributional claims.

Every check here draws its own randomness from a master seed through the same
splitting rule as the simulator (chunked sub-streams, deterministic
reduction), so reports are bit-for-bit reproducible.  Standard errors for
covariance-type statistics come from chunk replication: the draw budget is
split into J equal chunks, the statistic is computed per chunk, and the
spread of the chunk values estimates the Monte Carlo error of their mean.

Conventions shared with the estimator: ``P(A) = A^T H^T H A = I - r r^T``
with ``r`` the last row of the rotation, so the scaled projected Gram of a
configuration V is ``(d/(d-1)) V^T P V``, whose mean is ``V^T V`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import sample_rotations, spawn_generators
from .mixture import RadialMixture
from .shape import Configuration, ShapeEstimate, factor, hybrid_estimate, procrustes
from .spectral import ProfileDeconvolution

__all__ = [
    "MonteCarloReport",
    "BootstrapResult",
    "check_projection_identity",
    "estimate_gamma_covariance",
    "gram_clt_check",
    "fisher_matrix",
    "bootstrap_replicates",
]

_FLOOR = 1e-12


@dataclass(frozen=True)
class MonteCarloReport:
    """Outcome of one Monte Carlo check: estimates, references, errors."""

    name: str
    samples: int
    seed: int
    passed: bool
    empirical: dict
    reference: dict
    se: dict
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "samples": self.samples,
            "seed": self.seed,
            "passed": self.passed,
            "empirical": _jsonable(self.empirical),
            "reference": _jsonable(self.reference),
            "se": _jsonable(self.se),
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _chunk_sizes(total: int, chunks: int) -> list[int]:
    chunks = max(1, min(chunks, total))
    base, extra = divmod(total, chunks)
    return [base + (1 if i < extra else 0) for i in range(chunks)]


def _as_points(V) -> np.ndarray:
    pts = V.points if isinstance(V, Configuration) else np.asarray(V, dtype=float)
    if pts.ndim != 2 or pts.shape[0] not in (2, 3):
        raise ValueError("configuration must be d x K with d in {2, 3}")
    scale = max(np.abs(pts).max(), 1.0)
    if np.abs(pts.mean(axis=1)).max() > 1e-8 * scale:
        raise ValueError("configuration must be centered")
    return pts


def check_projection_identity(
    V, samples: int, seed: int, chunks: int = 50
) -> MonteCarloReport:
    """Check E[Gram(projected V)] == ((d-1)/d) Gram(V) at 3 standard errors.

    ``V`` is a centered d x K configuration (array or :class:`Configuration`).
    """
    pts = _as_points(V)
    d, K = pts.shape
    if samples < 2:
        raise ValueError("need at least two samples")
    ref = ((d - 1) / d) * (pts.T @ pts)
    total = np.zeros((K, K))
    total_sq = np.zeros((K, K))
    streams = spawn_generators(seed, len(_chunk_sizes(samples, chunks)))
    for size, rng in zip(_chunk_sizes(samples, chunks), streams):
        R = sample_rotations(d, size, rng)
        W = np.einsum("nij,jk->nik", R[:, : d - 1, :], pts)
        S = np.einsum("nik,nil->nkl", W, W)
        total += S.sum(axis=0)
        total_sq += (S * S).sum(axis=0)
    mean = total / samples
    var = np.clip((total_sq - samples * mean * mean) / (samples - 1), 0.0, None)
    se = np.sqrt(var / samples)
    gap = np.abs(mean - ref)
    passed = bool(np.all(gap <= 3.0 * se + _FLOOR))
    return MonteCarloReport(
        name="projection-identity",
        samples=samples,
        seed=seed,
        passed=passed,
        empirical={"mean_gram": mean},
        reference={"shrunk_gram": ref, "shrinkage": (d - 1) / d},
        se={"mean_gram": se},
        details={"max_standardized_gap": float((gap / np.maximum(se, _FLOOR)).max())},
    )


def _gamma_oracle_cov(scale: float) -> np.ndarray:
    """Exact Cov[vec(scale * (I - r r^T))] for r uniform on the 2-sphere.

    Fourth moments of a uniform unit vector in dimension 3:
    E[r_a r_b r_c r_d] = (delta_ab delta_cd + delta_ac delta_bd
    + delta_ad delta_bc) / 15, second moments delta_ab / 3.
    """
    eye = np.eye(3)
    cov = np.empty((9, 9))
    for a in range(3):
        for b in range(3):
            for c in range(3):
                for dd in range(3):
                    fourth = (
                        eye[a, b] * eye[c, dd]
                        + eye[a, c] * eye[b, dd]
                        + eye[a, dd] * eye[b, c]
                    ) / 15.0
                    second = eye[a, b] * eye[c, dd] / 9.0
                    cov[3 * a + b, 3 * c + dd] = scale * scale * (fourth - second)
    return cov


def estimate_gamma_covariance(
    samples: int, seed: int, chunks: int = 100
) -> MonteCarloReport:
    """Empirical mean and covariance of Gamma = 2 A^T H A over Haar draws (d=3).

    The pass condition is entrywise 3-SE agreement with the sphere-moment
    oracle (mean (4/3) I; covariance from exact fourth moments).  The report
    also carries the tabulated constants 1/9, 1/15, -1/18 quoted for the
    unscaled projector convention; they are shown for comparison only and not
    asserted (their diagonal entries disagree with the oracle under every
    scalar normalization).
    """
    if samples < 10:
        raise ValueError("need at least ten samples")
    sizes = _chunk_sizes(samples, chunks)
    streams = spawn_generators(seed, len(sizes))
    means = np.empty((len(sizes), 9))
    covs = np.empty((len(sizes), 9, 9))
    for j, (size, rng) in enumerate(zip(sizes, streams)):
        R = sample_rotations(3, size, rng)
        r = R[:, 2, :]
        gamma = 2.0 * (np.eye(3) - np.einsum("ni,nj->nij", r, r))
        flat = gamma.reshape(size, 9)
        means[j] = flat.mean(axis=0)
        covs[j] = np.cov(flat.T, ddof=1)
    J = len(sizes)
    mean = means.mean(axis=0)
    se_mean = means.std(axis=0, ddof=1) / np.sqrt(J)
    cov = covs.mean(axis=0)
    se_cov = covs.std(axis=0, ddof=1) / np.sqrt(J)
    ref_mean = (4.0 / 3.0) * np.eye(3).reshape(-1)
    ref_cov = _gamma_oracle_cov(2.0)
    ok_mean = np.all(np.abs(mean - ref_mean) <= 3.0 * se_mean + _FLOOR)
    ok_cov = np.all(np.abs(cov - ref_cov) <= 3.0 * se_cov + _FLOOR)
    return MonteCarloReport(
        name="gamma-covariance",
        samples=samples,
        seed=seed,
        passed=bool(ok_mean and ok_cov),
        empirical={"mean": mean.reshape(3, 3), "cov": cov},
        reference={
            "oracle_mean": ref_mean.reshape(3, 3),
            "oracle_cov": ref_cov,
            "oracle_constants": {
                "diag_var": 16.0 / 45.0,
                "offdiag_var": 4.0 / 15.0,
                "diag_cov": -8.0 / 45.0,
            },
            # Quoted for the unscaled projector convention; comparison only.
            "tabulated_constants": {
                "diag_var": 1.0 / 9.0,
                "offdiag_var": 1.0 / 15.0,
                "diag_cov": -1.0 / 18.0,
            },
        },
        se={"mean": se_mean.reshape(3, 3), "cov": se_cov},
        details={"chunks": J, "mean_ok": bool(ok_mean), "cov_ok": bool(ok_cov)},
    )


def gram_clt_check(
    mixture: RadialMixture,
    n_profiles: int,
    replications: int,
    seed: int,
    gamma_samples: int = 200_000,
    chunks: int = 20,
) -> MonteCarloReport:
    """Self-consistency of the CLT covariance of the moment estimator.

    Replicates the hidden-truth estimator ``G_hat = (d/(d-1)) mean_n S_n`` and
    compares the empirical covariance of ``sqrt(N) vec(G_hat - G)`` with the
    Kronecker transport ``(V^T (x) V^T) Cov[vec Gamma_d] (V (x) V)`` of an
    independently estimated covariance of ``Gamma_d = (d/(d-1)) A^T H A``.
    Both sides estimate the same matrix exactly, for any N; agreement is
    asserted entrywise at 3 combined standard errors.  Marginal skewness and
    excess kurtosis of the replicated entries are screened (reported, not
    asserted) as a normality diagnostic.
    """
    if replications < 2 * chunks:
        raise ValueError("need at least two replications per chunk")
    d = mixture.d
    K = mixture.K
    scale = d / (d - 1)
    V = mixture.locations.T  # d x K, centered by construction
    G = V.T @ V
    root = np.random.SeedSequence(seed).spawn(2)

    # Replication side.
    sizes = _chunk_sizes(replications, chunks)
    rep_streams = [np.random.Generator(np.random.PCG64(s)) for s in root[0].spawn(len(sizes))]
    rep_covs = np.empty((len(sizes), K * K, K * K))
    moment_sums = np.zeros((4, K * K))
    for j, (size, rng) in enumerate(zip(sizes, rep_streams)):
        R = sample_rotations(d, size * n_profiles, rng)
        W = np.einsum("nij,jk->nik", R[:, : d - 1, :], V)
        S = np.einsum("nik,nil->nkl", W, W).reshape(size, n_profiles, K, K)
        X = np.sqrt(n_profiles) * (scale * S.mean(axis=1) - G).reshape(size, K * K)
        rep_covs[j] = np.atleast_2d(np.cov(X.T, ddof=1))
        for p in range(4):
            moment_sums[p] += (X ** (p + 1)).sum(axis=0)
    J = len(sizes)
    emp = rep_covs.mean(axis=0)
    se_emp = rep_covs.std(axis=0, ddof=1) / np.sqrt(J)

    # Transported Gamma side.
    gamma_sizes = _chunk_sizes(gamma_samples, chunks)
    gamma_streams = [
        np.random.Generator(np.random.PCG64(s)) for s in root[1].spawn(len(gamma_sizes))
    ]
    T = np.kron(V.T, V.T)
    ref_covs = np.empty((len(gamma_sizes), K * K, K * K))
    for j, (size, rng) in enumerate(zip(gamma_sizes, gamma_streams)):
        R = sample_rotations(d, size, rng)
        r = R[:, d - 1, :]
        gamma = scale * (np.eye(d) - np.einsum("ni,nj->nij", r, r))
        ref_covs[j] = T @ np.cov(gamma.reshape(size, d * d).T, ddof=1) @ T.T
    J2 = len(gamma_sizes)
    ref = ref_covs.mean(axis=0)
    se_ref = ref_covs.std(axis=0, ddof=1) / np.sqrt(J2)

    se = np.sqrt(se_emp**2 + se_ref**2)
    gap = np.abs(emp - ref)
    passed = bool(np.all(gap <= 3.0 * se + _FLOOR))

    # Normality screen over all replications.
    m1 = moment_sums[0] / replications
    m2 = moment_sums[1] / replications - m1**2
    m3 = moment_sums[2] / replications - 3 * m1 * m2 - m1**3
    sd = np.sqrt(np.maximum(m2, _FLOOR))
    skew = m3 / sd**3
    m4 = (
        moment_sums[3] / replications
        - 4 * m1 * moment_sums[2] / replications
        + 6 * m1**2 * moment_sums[1] / replications
        - 3 * m1**4
    )
    kurt = m4 / np.maximum(m2, _FLOOR) ** 2 - 3.0
    skew_bound = 6.0 * np.sqrt(6.0 / replications)
    kurt_bound = 6.0 * np.sqrt(24.0 / replications)
    degenerate = m2 <= 1e-9 * max(float(m2.max()), 1.0)
    normal_ok = bool(
        np.all((np.abs(skew) <= skew_bound) | degenerate)
        and np.all((np.abs(kurt) <= kurt_bound) | degenerate)
    )

    return MonteCarloReport(
        name="gram-clt",
        samples=replications,
        seed=seed,
        passed=passed,
        empirical={"cov": emp},
        reference={"transported_cov": ref, "gram": G, "scale": scale},
        se={"combined": se, "replication": se_emp, "transport": se_ref},
        details={
            "n_profiles": n_profiles,
            "gamma_samples": gamma_samples,
            "skewness": skew.reshape(K, K),
            "excess_kurtosis": kurt.reshape(K, K),
            "normality_ok": normal_ok,
            "max_standardized_gap": float((gap / np.maximum(se, _FLOOR)).max()),
        },
    )


def fisher_matrix(
    mixture: RadialMixture, noise_sd: float, samples: int, seed: int, chunks: int = 50
) -> np.ndarray:
    """Monte Carlo Fisher information for the component masses.

    F_ij = E_A[ integral phi(x | mu_i(A)) phi(x | mu_j(A)) dx ] / (2 pi
    noise_sd^2), with the Gaussian product integral in closed form
    ``(4 pi sigma^2)^{-(d-1)/2} exp(-||mu_i - mu_j||^2 / (4 sigma^2))`` and the
    expectation over Haar rotations approximated by ``samples`` draws.
    """
    if not (noise_sd > 0.0):
        raise ValueError("noise_sd must be positive for Fisher information")
    if samples < 1:
        raise ValueError("need at least one sample")
    d = mixture.d
    s2 = mixture.sigma * mixture.sigma
    V = mixture.locations.T
    K = mixture.K
    norm = (4.0 * np.pi * s2) ** (-(d - 1) / 2.0)
    sizes = _chunk_sizes(samples, chunks)
    streams = spawn_generators(seed, len(sizes))
    total = np.zeros((K, K))
    for size, rng in zip(sizes, streams):
        R = sample_rotations(d, size, rng)
        W = np.einsum("nij,jk->nki", R[:, : d - 1, :], V)  # (n, K, d-1)
        diff = W[:, :, None, :] - W[:, None, :, :]
        sq = np.einsum("nklm,nklm->nkl", diff, diff)
        total += (norm * np.exp(-sq / (4.0 * s2))).sum(axis=0)
    F = total / samples / (2.0 * np.pi * noise_sd * noise_sd)
    return 0.5 * (F + F.T)


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap replicates aligned onto the point estimate."""

    point: Configuration
    estimates: tuple  # ShapeEstimates, one per replicate
    aligned: np.ndarray  # (B, d, K) aligned configurations
    dispersion: np.ndarray  # (d, K) per-coordinate standard deviation
    seed: int

    def to_dict(self) -> dict:
        return {
            "point": self.point.points.tolist(),
            "aligned": self.aligned.tolist(),
            "dispersion": self.dispersion.tolist(),
            "seed": self.seed,
            "replicates": len(self.estimates),
        }


def bootstrap_replicates(
    results: Sequence[ProfileDeconvolution],
    point: Configuration,
    B: int,
    seed: int,
    d: int,
    weights: Optional[np.ndarray] = None,
    indices: Optional[np.ndarray] = None,
) -> BootstrapResult:
    """Resample profiles with replacement and re-estimate the shape.

    Operates purely on cached per-profile deconvolution ``results``; no
    profile is ever deconvolved here, so replicates cost only the moment
    average and a small eigenproblem each.  ``weights`` pins the mass vector
    (shared-mode fits only re-average locations); ``indices`` (B x N) replaces
    the random resample, e.g. the identity resample reproduces the point
    estimate exactly.
    """
    n = len(results)
    if n == 0:
        raise ValueError("need cached per-profile results")
    if B < 1:
        raise ValueError("B must be positive")
    if indices is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        indices = rng.integers(0, n, size=(B, n))
    else:
        indices = np.asarray(indices, dtype=int)
        if indices.ndim != 2 or indices.shape[0] != B:
            raise ValueError("indices must have shape (B, N)")
        if indices.min() < 0 or indices.max() >= n:
            raise ValueError("resample indices out of range")
    estimates = []
    aligned = np.empty((B, point.d, point.K))
    for b in range(B):
        sel = [results[i] for i in indices[b]]
        est = hybrid_estimate(sel, d, weights=weights)
        config = factor(est, d)
        Q, _ = procrustes(config, point)
        estimates.append(est)
        aligned[b] = Q @ config.points
    dispersion = aligned.std(axis=0, ddof=1) if B > 1 else np.zeros((point.d, point.K))
    return BootstrapResult(
        point=point,
        estimates=tuple(estimates),
        aligned=aligned,
        dispersion=dispersion,
        seed=seed,
    )
