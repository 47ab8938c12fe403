"""Spectral deconvolution of blob profiles into spike trains.

A noiseless profile is a Gaussian-smoothed spike train

    p(x) = sum_k alpha_k * N1(x; mu_k, sigma^2),   alpha_k > 0,

so dividing its Fourier coefficients by the known kernel transform exposes the
exponential sum ``w(kappa) ~= sum_k alpha_k e^{-i kappa mu_k}``.  Any finite
window of such coefficients is the data of a classical trigonometric moment
problem, solved in three steps:

1. build the (K+1) x (K+1) Hermitian Toeplitz matrix ``C[i, j] = w(i - j)``
   (negative indices by conjugate symmetry); for exactly K spikes it is
   positive semidefinite with a one-dimensional null space;
2. the null eigenvector, read as polynomial coefficients
   ``v_0 + v_1 z + ... + v_K z^K``, has its K roots on the unit circle at
   ``e^{i mu_k}`` (roots found via the companion matrix);
3. the amplitudes follow from a linear least squares fit of the recovered
   exponentials to the coefficient window, which is solvable with more
   coefficients than the minimal K+1 and is used here with the
   conjugate-extended window kappa = -kappa_fit..kappa_fit.

Everything here is deterministic; the only failure modes are rank/geometry
degeneracies, reported as :class:`DeconvolutionError`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mixture import GaussianKernel
from .simulate import Profile, marginalize

__all__ = [
    "DeconvolutionError",
    "KernelBandwidthError",
    "SpikeResolutionError",
    "NoiseToleranceError",
    "ExponentialSumCoefficients",
    "SpikeTrain",
    "ProfileDeconvolution",
    "fourier_ratio",
    "pisarenko",
    "recover_amplitudes",
    "spike_train",
    "deconvolve_profile",
    "deconvolve_profile_2d",
    "usable_kappa",
]

# Division by the kernel transform below this level amplifies float noise
# past any useful accuracy.
_FOURIER_FLOOR = 1e-12

# Amplitude ties below this gap make rank pairing ambiguous.
_TIE_TOL = 1e-6


class DeconvolutionError(Exception):
    """Spectral deconvolution failed for a structural/numerical reason."""


class KernelBandwidthError(DeconvolutionError):
    """Requested frequencies fall below the kernel transform floor."""


class SpikeResolutionError(DeconvolutionError):
    """Fewer than the requested K spikes are resolvable in this profile."""


class NoiseToleranceError(DeconvolutionError):
    """Noise pushed the root structure outside the exact-recovery regime."""


@dataclass(frozen=True)
class ExponentialSumCoefficients:
    """Deconvolved Fourier coefficients w(0..kappa_max) of a spike train.

    ``at`` extends to negative frequencies by conjugate symmetry (the
    underlying measure is real).  ``w(0)`` equals the total spike mass and
    must be real positive; for a positive measure ``|w(kappa)| <= w(0)``,
    which observation noise can break, so violations warn instead of raising.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=complex).reshape(-1)
        if v.size < 1:
            raise ValueError("need at least the kappa = 0 coefficient")
        w0 = v[0]
        if not (w0.real > 0.0) or abs(w0.imag) > 1e-9 * max(abs(w0.real), 1e-300):
            raise ValueError("w(0) must be real and positive (total spike mass)")
        if np.abs(v).max() > w0.real * (1.0 + 1e-9):
            warnings.warn(
                "coefficient magnitudes exceed w(0); input is noisy or not a "
                "positive spike train",
                stacklevel=3,
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def kappa_max(self) -> int:
        return self.values.size - 1

    def at(self, kappa: np.ndarray) -> np.ndarray:
        k = np.atleast_1d(np.asarray(kappa, dtype=int))
        if np.abs(k).max(initial=0) > self.kappa_max:
            raise ValueError("frequency outside the stored window")
        out = self.values[np.abs(k)]
        return np.where(k < 0, np.conj(out), out)


@dataclass(frozen=True)
class SpikeTrain:
    """Recovered spikes, sorted by location ascending in (-pi, pi]."""

    locations: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        loc = np.asarray(self.locations, dtype=float).reshape(-1)
        amp = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if loc.size != amp.size or loc.size == 0:
            raise ValueError("locations and amplitudes must be nonempty and matched")
        if np.any(np.diff(loc) <= 0.0):
            raise ValueError("locations must be strictly increasing")
        if loc[0] <= -np.pi or loc[-1] > np.pi:
            raise ValueError("locations must lie in (-pi, pi]")
        if np.any(amp < 0.0):
            raise ValueError("amplitudes must be nonnegative")
        loc.setflags(write=False)
        amp.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def K(self) -> int:
        return self.locations.size


@dataclass(frozen=True)
class ProfileDeconvolution:
    """Per-profile estimate: K' locations of shape (K', d-1) with amplitudes.

    ``flags`` collects non-fatal anomalies ("merged", "amplitude-tie", ...).
    """

    locations: np.ndarray
    amplitudes: np.ndarray
    flags: tuple = ()

    def __post_init__(self) -> None:
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        amp = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if loc.shape[0] != amp.size:
            raise ValueError("one amplitude per location row required")
        loc = loc.copy()
        amp = amp.copy()
        loc.setflags(write=False)
        amp.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def K(self) -> int:
        return self.amplitudes.size


def usable_kappa(kernel: GaussianKernel) -> int:
    """Largest frequency at which the kernel transform stays above the floor."""
    return int(np.floor(np.sqrt(-2.0 * np.log(_FOURIER_FLOOR)) / kernel.sigma))


def fourier_ratio(
    profile: Profile, kernel: GaussianKernel, kappa_max: int
) -> ExponentialSumCoefficients:
    """Deconvolved coefficients w(kappa) = DFT(profile) / kernel transform.

    The lattice sum ``(2*pi/T) * sum_t p(x_t) e^{-i kappa x_t}`` approximates
    the continuous transform of the profile; on the lattice
    ``x_t = -pi + 2*pi*t/T`` it equals ``(-1)^kappa`` times numpy's FFT bin.

    Raises
    ------
    KernelBandwidthError
        If ``exp(-sigma^2 kappa^2 / 2)`` falls below 1e-12 within the window.
    ValueError
        If the window reaches the Nyquist frequency (kappa_max >= T/2).
    """
    if profile.axes != 1:
        raise ValueError("fourier_ratio expects a one-axis profile")
    T = profile.lattice.T
    if not (0 <= kappa_max < T // 2):
        raise ValueError("kappa_max must satisfy 0 <= kappa_max < T/2")
    kappas = np.arange(kappa_max + 1)
    phi = kernel.fourier(kappas)
    if phi[-1] < _FOURIER_FLOOR:
        raise KernelBandwidthError(
            f"kernel transform below {_FOURIER_FLOOR:g} at kappa = {kappa_max}; "
            f"usable window is kappa <= {usable_kappa(kernel)}"
        )
    bins = np.fft.fft(profile.values)[: kappa_max + 1]
    signs = np.where(kappas % 2 == 0, 1.0, -1.0)
    w = (2.0 * np.pi / T) * signs * bins / phi
    return ExponentialSumCoefficients(w)


def pisarenko(
    w: ExponentialSumCoefficients,
    K: int,
    circle_tol: float | None = 1e-6,
    project: bool = False,
) -> np.ndarray:
    """Spike locations from the null space of the Toeplitz coefficient matrix.

    Parameters
    ----------
    w : ExponentialSumCoefficients
        Needs at least the window kappa = 0..K.
    K : int
        Number of spikes to resolve.
    circle_tol : float or None
        Each root must satisfy ``| |z| - 1 | < circle_tol``; violations mean
        the coefficients are too noisy for exact recovery.  ``None`` skips
        the check (used when the result only seeds a refinement fit).
    project : bool
        Radially project roots onto the unit circle before reading angles.

    Returns
    -------
    numpy.ndarray
        The K root arguments, sorted ascending in (-pi, pi].
    """
    if K < 1:
        raise ValueError("K must be positive")
    if w.kappa_max < K:
        raise ValueError(f"need coefficients up to kappa = {K}, have {w.kappa_max}")
    idx = np.subtract.outer(np.arange(K + 1), np.arange(K + 1))
    C = w.at(idx.reshape(-1)).reshape(K + 1, K + 1)
    eigvals, eigvecs = np.linalg.eigh(C)
    scale = max(eigvals[-1], 1e-300)
    if eigvals[1] - eigvals[0] <= 1e-10 * scale:
        raise SpikeResolutionError(
            "null space of the coefficient matrix is not one-dimensional; "
            "fewer than K distinct spikes are resolvable"
        )
    v = eigvecs[:, 0]
    roots = np.roots(v[::-1])  # numpy wants the z^K coefficient first
    if roots.size != K:
        raise DeconvolutionError("null polynomial degenerated below degree K")
    if circle_tol is not None:
        off = np.abs(np.abs(roots) - 1.0).max()
        if off >= circle_tol:
            raise NoiseToleranceError(
                f"roots leave the unit circle by {off:.3g}; "
                "noise level too high for exact spectral recovery"
            )
    if project:
        roots = roots / np.abs(roots)
    return np.sort(np.angle(roots))


def recover_amplitudes(
    w: ExponentialSumCoefficients, locations: np.ndarray, kappa_fit: int
) -> np.ndarray:
    """Least squares spike amplitudes for known locations.

    Fits ``w(kappa) ~= sum_k alpha_k e^{-i kappa mu_k}`` over the
    conjugate-extended window ``kappa = -kappa_fit..kappa_fit`` with real
    unknowns.  Negative solutions are clipped at zero with a warning.
    """
    locations = np.asarray(locations, dtype=float).reshape(-1)
    if locations.size == 0:
        raise ValueError("need at least one location")
    if not (locations.size <= kappa_fit <= w.kappa_max):
        raise ValueError("kappa_fit must lie between K and the stored window")
    kappas = np.arange(-kappa_fit, kappa_fit + 1)
    E = np.exp(-1j * np.outer(kappas, locations))
    b = w.at(kappas)
    A = np.concatenate([E.real, E.imag])
    y = np.concatenate([b.real, b.imag])
    alpha, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < locations.size:
        raise SpikeResolutionError(
            "amplitude design is rank deficient (near-coincident locations)"
        )
    if np.any(alpha < 0.0):
        warnings.warn("negative amplitude solution clipped at zero", stacklevel=2)
        alpha = np.clip(alpha, 0.0, None)
    return alpha


def _merge_close(
    locations: np.ndarray, amplitudes: np.ndarray, tol: float
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Merge spikes closer than ``tol`` (circularly) into mass-weighted means."""
    loc = list(locations)
    amp = list(amplitudes)
    merged = False
    changed = True
    while changed and len(loc) > 1:
        changed = False
        order = np.argsort(loc)
        loc = [loc[i] for i in order]
        amp = [amp[i] for i in order]
        for i in range(len(loc)):
            j = (i + 1) % len(loc)
            if i == j:
                continue
            gap = loc[j] - loc[i] if j > i else loc[j] + 2.0 * np.pi - loc[i]
            if gap < tol:
                total = amp[i] + amp[j]
                # Weighted mean along the short arc; total mass can be 0
                # after clipping, then fall back to the plain midpoint.
                hi = loc[j] if j > i else loc[j] + 2.0 * np.pi
                pos = (amp[i] * loc[i] + amp[j] * hi) / total if total > 0 else 0.5 * (loc[i] + hi)
                pos = (pos + np.pi) % (2.0 * np.pi) - np.pi
                if pos == -np.pi:
                    pos = np.pi
                keep = [k for k in range(len(loc)) if k not in (i, j)]
                loc = [loc[k] for k in keep] + [pos]
                amp = [amp[k] for k in keep] + [total]
                merged = True
                changed = True
                break
    order = np.argsort(loc)
    return np.asarray(loc)[order], np.asarray(amp)[order], merged


def spike_train(
    profile: Profile, kernel: GaussianKernel, K: int, kappa_fit: int | None = None
) -> tuple[SpikeTrain, bool]:
    """Full 1D deconvolution: Fourier ratio, locations, amplitudes, merging.

    Returns the train and a flag telling whether near-coincident spikes
    (closer than one lattice spacing, 2*pi/T) were merged, in which case the
    train has K' < K spikes.
    """
    if kappa_fit is None:
        kappa_fit = min(3 * K, profile.lattice.T // 4, usable_kappa(kernel))
    kappa_fit = max(kappa_fit, K)
    w = fourier_ratio(profile, kernel, kappa_fit)
    locations = pisarenko(w, K)
    amplitudes = recover_amplitudes(w, locations, kappa_fit)
    loc, amp, merged = _merge_close(locations, amplitudes, profile.lattice.spacing)
    return SpikeTrain(locations=loc, amplitudes=amp), merged


def deconvolve_profile(
    profile: Profile, kernel: GaussianKernel, K: int
) -> ProfileDeconvolution:
    """Deconvolve a one-axis profile into K spikes with amplitudes.

    Raises :class:`DeconvolutionError` when merging leaves fewer than K
    spikes, since downstream labeling needs exactly K components.
    """
    train, merged = spike_train(profile, kernel, K)
    if train.K < K:
        raise SpikeResolutionError(
            f"only {train.K} of {K} spikes resolvable (separation below one "
            "lattice spacing)"
        )
    flags = ("merged",) if merged else ()
    return ProfileDeconvolution(
        locations=train.locations[:, None], amplitudes=train.amplitudes, flags=flags
    )


def deconvolve_profile_2d(
    profile: Profile, kernel: GaussianKernel, K: int
) -> ProfileDeconvolution:
    """Coordinate-wise deconvolution of a two-axis profile.

    Each marginal of the image is itself a blob profile whose spike
    amplitudes are the component masses, so the two axes are solved
    independently and paired by descending amplitude rank (valid because the
    masses are pairwise distinct).  Output rows are rank-ordered, amplitudes
    averaged over the axes.  Near-ties within 1e-6 make the pairing
    ambiguous; such profiles are flagged, not rejected.
    """
    if profile.axes != 2:
        raise ValueError("deconvolve_profile_2d expects a two-axis profile")
    flags: list[str] = []
    per_axis = []
    for axis in (0, 1):
        train, merged = spike_train(marginalize(profile, axis), kernel, K)
        if train.K < K:
            raise SpikeResolutionError(
                f"axis {axis}: only {train.K} of {K} spikes resolvable"
            )
        if merged:
            flags.append("merged")
        order = np.argsort(-train.amplitudes, kind="stable")
        if K > 1 and np.min(-np.diff(train.amplitudes[order])) < _TIE_TOL:
            flags.append("amplitude-tie")
        per_axis.append((train.locations[order], train.amplitudes[order]))
    locations = np.column_stack([per_axis[0][0], per_axis[1][0]])
    amplitudes = 0.5 * (per_axis[0][1] + per_axis[1][1])
    return ProfileDeconvolution(
        locations=locations, amplitudes=amplitudes, flags=tuple(dict.fromkeys(flags))
    )
