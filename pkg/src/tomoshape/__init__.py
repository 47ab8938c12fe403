"""tomoshape: shape estimation from projections at hidden random orientations.

Simulates projections of radial Gaussian mixtures viewed at unobserved
uniformly random rotations, recovers per-projection spike trains by spectral
deconvolution with optional least squares refinement, and estimates the
mixture's shape (Gram matrix of the centered blob centers plus the component
masses) by an unbiased moment average.  A Monte Carlo harness verifies the
distributional identities the estimator relies on.
"""

__version__ = "0.1.0"

from .geometry import (
    is_rotation,
    project_location,
    projector,
    sample_rotation,
    sample_rotations,
    spawn_generators,
)
from .mixture import GaussianKernel, RadialMixture, eval_density, profile_function
from .simulate import Dataset, Lattice, Profile, Truth, marginalize, simulate
from .spectral import (
    DeconvolutionError,
    ExponentialSumCoefficients,
    KernelBandwidthError,
    NoiseToleranceError,
    ProfileDeconvolution,
    SpikeResolutionError,
    SpikeTrain,
    deconvolve_profile,
    deconvolve_profile_2d,
    fourier_ratio,
    pisarenko,
    recover_amplitudes,
    spike_train,
)
from .mle import ConvergenceReport, DeconvParams, fit, objective, objective_with_grad
from .shape import (
    Configuration,
    ShapeEstimate,
    factor,
    gram,
    hybrid_estimate,
    label,
    procrustes,
)
from .verify import (
    BootstrapResult,
    MonteCarloReport,
    bootstrap_replicates,
    check_projection_identity,
    estimate_gamma_covariance,
    fisher_matrix,
    gram_clt_check,
)

__all__ = [
    "__version__",
    "projector",
    "sample_rotation",
    "sample_rotations",
    "is_rotation",
    "project_location",
    "spawn_generators",
    "GaussianKernel",
    "RadialMixture",
    "eval_density",
    "profile_function",
    "Lattice",
    "Profile",
    "Truth",
    "Dataset",
    "simulate",
    "marginalize",
    "DeconvolutionError",
    "KernelBandwidthError",
    "NoiseToleranceError",
    "SpikeResolutionError",
    "ExponentialSumCoefficients",
    "SpikeTrain",
    "ProfileDeconvolution",
    "fourier_ratio",
    "pisarenko",
    "recover_amplitudes",
    "spike_train",
    "deconvolve_profile",
    "deconvolve_profile_2d",
    "DeconvParams",
    "ConvergenceReport",
    "objective",
    "objective_with_grad",
    "fit",
    "ShapeEstimate",
    "Configuration",
    "gram",
    "label",
    "hybrid_estimate",
    "factor",
    "procrustes",
    "MonteCarloReport",
    "BootstrapResult",
    "check_projection_identity",
    "estimate_gamma_covariance",
    "gram_clt_check",
    "fisher_matrix",
    "bootstrap_replicates",
]
