"""Command line interface.

Verbs: simulate, estimate, verify {thm41,gamma,gram-clt,fisher}, bootstrap,
render.  Commands that consume randomness require --seed.  Exit codes:
0 success, 1 usage error, 2 I/O error, 3 numerical failure (partial outputs
are still written where possible).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, io
from .geometry import spawn_generators
from .mixture import GaussianKernel, RadialMixture
from .mle import fit
from .shape import Configuration, factor, hybrid_estimate, label, procrustes
from .spectral import (
    DeconvolutionError,
    ProfileDeconvolution,
    SpikeResolutionError,
    deconvolve_profile,
    deconvolve_profile_2d,
)
from .verify import (
    bootstrap_replicates,
    check_projection_identity,
    estimate_gamma_covariance,
    fisher_matrix,
    gram_clt_check,
)

_USAGE, _IO, _NUMERIC = 1, 2, 3


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help and usage errors
        return 0 if exc.code in (0, None) else _USAGE
    try:
        return args.run(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return _IO
    except DeconvolutionError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return _NUMERIC


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tomoshape",
        description="Simulate and estimate blob-mixture shapes from projections "
        "at hidden random orientations.",
    )
    parser.add_argument("--version", action="version", version=f"tomoshape {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a projection dataset")
    p.add_argument("--mixture", required=True, help="mixture config (JSON)")
    p.add_argument("--n", type=int, required=True, help="number of projections")
    p.add_argument("--lattice", type=int, default=None,
                   help="lattice size per axis (default 256 planar, 128 image)")
    p.add_argument("--noise", type=float, default=0.0, help="pixel noise sd")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--truth", action="store_true", help="embed the hidden truth block")
    p.add_argument("--binary", action="store_true", help="packed float64 payload")
    p.add_argument("--normalize", action="store_true", help="normalize weights on load")
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the shape from a dataset")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--k", type=int, required=True, help="number of components")
    p.add_argument("--method", default="pisarenko",
                   choices=["pisarenko", "mle", "pisarenko+mle"],
                   help="mle always starts from the spectral solution, so "
                   "'mle' and 'pisarenko+mle' are synonyms")
    p.add_argument("--mode", default="separate", choices=["shared", "separate"],
                   help="component masses shared across profiles or per profile")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap for per-profile deconvolution")
    p.add_argument("--max-failures", type=float, default=0.5,
                   help="tolerated fraction of undeconvolvable profiles")
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_estimate)

    p = sub.add_parser("verify", help="run a Monte Carlo verification check")
    vsub = p.add_subparsers(dest="check", required=True)

    v = vsub.add_parser("thm41", help="projection shrinkage identity")
    v.add_argument("--d", type=int, required=True, choices=[2, 3])
    v.add_argument("--k", type=int, default=4)
    v.add_argument("--configs", type=int, default=10)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(run=_cmd_verify_thm41)

    v = vsub.add_parser("gamma", help="covariance of the projected rotation matrix")
    v.add_argument("--samples", type=int, default=1_000_000)
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(run=_cmd_verify_gamma)

    v = vsub.add_parser("gram-clt", help="CLT covariance of the moment estimator")
    v.add_argument("--mixture", required=True)
    v.add_argument("--n", type=int, default=500, help="profiles per replication")
    v.add_argument("--replications", type=int, default=2000)
    v.add_argument("--gamma-samples", type=int, default=200_000)
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(run=_cmd_verify_gram_clt)

    v = vsub.add_parser("fisher", help="Fisher information for the masses")
    v.add_argument("--mixture", required=True)
    v.add_argument("--noise", type=float, required=True)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(run=_cmd_verify_fisher)

    p = sub.add_parser("bootstrap", help="bootstrap an existing estimate")
    p.add_argument("--estimate", required=True, help="estimate file")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_bootstrap)

    p = sub.add_parser("render", help="tabulate a density on a grid")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mixture", help="mixture config (JSON)")
    src.add_argument("--estimate", help="estimate file")
    p.add_argument("--gridsize", type=int, default=200)
    p.add_argument("--extent", type=float, default=float(np.pi))
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_render)

    return parser


def _cmd_simulate(args) -> int:
    from .simulate import simulate  # local import keeps startup light

    mixture = io.load_mixture(args.mixture, normalize=args.normalize)
    T = args.lattice if args.lattice is not None else (256 if mixture.d == 2 else 128)
    dataset = simulate(mixture, args.n, T, args.noise, args.seed, include_truth=args.truth)
    meta = io.manifest(
        command="simulate",
        params={
            "n": args.n,
            "lattice": T,
            "noise": args.noise,
            "truth": bool(args.truth),
            "normalize": bool(args.normalize),
        },
        seeds={"master": args.seed},
        inputs={"mixture": io.sha256_digest(args.mixture)},
    )
    io.save_dataset(args.out, dataset, meta, binary=args.binary)
    return 0


def _deconvolve_all(profiles, kernel, K, threads):
    """Per-profile spectral deconvolution; failures become flags, not aborts.

    Returns one ``(result, error)`` pair per profile, where exactly one of
    the two is None; ``error`` is the caught exception object.
    """

    def work(profile):
        try:
            if profile.axes == 1:
                return deconvolve_profile(profile, kernel, K), None
            return deconvolve_profile_2d(profile, kernel, K), None
        except DeconvolutionError as exc:
            return None, exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, profiles))
    else:
        outcomes = [work(p) for p in profiles]
    return outcomes


def _cmd_estimate(args) -> int:
    dataset, data_manifest = io.load_dataset(args.data)
    if args.k < 1:
        raise ValueError("--k must be positive")
    if not 0.0 <= args.max_failures <= 1.0:
        raise ValueError("--max-failures must lie in [0, 1]")
    kernel = GaussianKernel(dataset.sigma)
    profiles = list(dataset.profiles)

    per_profile: list[dict] = []
    kept_results: list[ProfileDeconvolution] = []
    kept_indices: list[int] = []
    convergence = None
    shared_weights = None

    if args.method == "pisarenko":
        outcomes = _deconvolve_all(profiles, kernel, args.k, args.threads)
        for profile, (res, err) in zip(profiles, outcomes):
            if res is None:
                per_profile.append(
                    {"index": profile.index, "flags": ["failed"], "error": str(err)}
                )
            else:
                kept_results.append(res)
                kept_indices.append(profile.index)
                per_profile.append(
                    {
                        "index": profile.index,
                        "locations": res.locations.tolist(),
                        "amplitudes": res.amplitudes.tolist(),
                        "flags": list(res.flags),
                    }
                )
    else:  # mle (always spectral-initialized)
        from .mle import DeconvParams, _spectral_start

        # Exact per-profile deconvolution seeds the refinement wherever it
        # succeeds, so on clean data the fit is a no-op and the survivor set
        # matches method=pisarenko.  Profiles rejected for noise (roots off
        # the unit circle) get a second chance through the noise-tolerant
        # start; profiles with fewer than K resolvable spikes stay excluded,
        # since the K-component model cannot be initialized there either.
        outcomes = _deconvolve_all(profiles, kernel, args.k, args.threads)
        starts, survivors = [], []
        for profile, (res, err) in zip(profiles, outcomes):
            if res is not None:
                order = np.argsort(-res.amplitudes, kind="stable")
                starts.append((res.locations[order], res.amplitudes[order]))
                survivors.append(profile)
                continue
            if isinstance(err, SpikeResolutionError):
                per_profile.append(
                    {"index": profile.index, "flags": ["failed"], "error": str(err)}
                )
                continue
            try:
                starts.append(_spectral_start(profile, kernel, args.k))
                survivors.append(profile)
            except DeconvolutionError as exc:
                per_profile.append(
                    {"index": profile.index, "flags": ["failed"], "error": f"{err}; {exc}"}
                )
        if not survivors:
            raise DeconvolutionError("no profile could be initialized")

        init = DeconvParams(
            mode="separate",
            locations=np.stack([s[0] for s in starts]),
            weights=np.stack([s[1] for s in starts]),
        )
        params, report = fit(survivors, kernel, args.k, mode=args.mode, init=init)
        convergence = {
            "iterations": report.iterations,
            "objective": report.objective,
            "grad_norm": report.grad_norm,
            "converged": report.converged,
            "fallback_steps": report.fallback_steps,
            "message": report.message,
        }
        if args.mode == "shared":
            shared_weights = params.weights
        for j, profile in enumerate(survivors):
            res = ProfileDeconvolution(
                locations=params.locations[j], amplitudes=params.weights_for(j)
            )
            kept_results.append(res)
            kept_indices.append(profile.index)
            per_profile.append(
                {
                    "index": profile.index,
                    "locations": res.locations.tolist(),
                    "amplitudes": res.amplitudes.tolist(),
                    "flags": [],
                }
            )

    failures = len(profiles) - len(kept_results)
    if not kept_results:
        raise DeconvolutionError("every profile failed to deconvolve")
    labeled = label(kept_results)
    estimate = hybrid_estimate(labeled, dataset.d, weights=shared_weights)
    config = factor(estimate, dataset.d)

    out = {
        "manifest": io.manifest(
            command="estimate",
            params={
                "k": args.k,
                "method": args.method,
                "mode": args.mode,
                "max_failures": args.max_failures,
            },
            seeds={"dataset": dataset.seed},
            inputs={"data": io.sha256_digest(args.data), "data_manifest": data_manifest},
        ),
        "d": dataset.d,
        "sigma": dataset.sigma,
        "k": args.k,
        "gram": estimate.gram.tolist(),
        "weights": estimate.weights.tolist(),
        "configuration": config.points.tolist(),
        "per_profile": sorted(per_profile, key=lambda r: r["index"]),
        "kept_indices": kept_indices,
        "failures": failures,
        "convergence": convergence,
    }
    io.save_estimate(args.out, out)

    if failures > args.max_failures * len(profiles):
        print(
            f"numerical failure: {failures}/{len(profiles)} profiles failed "
            f"deconvolution (partial estimate written to {args.out})",
            file=sys.stderr,
        )
        return _NUMERIC
    if convergence is not None and not convergence["converged"]:
        print(
            f"numerical failure: refinement did not converge "
            f"({convergence['message']}; report written to {args.out})",
            file=sys.stderr,
        )
        return _NUMERIC
    return 0


def _cmd_verify_thm41(args) -> int:
    streams = spawn_generators(args.seed, args.configs)
    reports = []
    for i, rng in enumerate(streams):
        pts = rng.standard_normal((args.d, args.k))
        pts -= pts.mean(axis=1, keepdims=True)
        reports.append(
            check_projection_identity(pts, args.samples, seed=args.seed * 1000 + i)
        )
    obj = {
        "manifest": io.manifest(
            command="verify thm41",
            params={"d": args.d, "k": args.k, "configs": args.configs, "samples": args.samples},
            seeds={"master": args.seed},
            inputs={},
        ),
        "passed": all(r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    io.save_json(args.out, obj)
    return 0 if obj["passed"] else _NUMERIC


def _cmd_verify_gamma(args) -> int:
    report = estimate_gamma_covariance(args.samples, args.seed)
    obj = {
        "manifest": io.manifest(
            command="verify gamma",
            params={"samples": args.samples},
            seeds={"master": args.seed},
            inputs={},
        ),
        "passed": report.passed,
        "report": report.to_dict(),
    }
    io.save_json(args.out, obj)
    return 0 if report.passed else _NUMERIC


def _cmd_verify_gram_clt(args) -> int:
    mixture = io.load_mixture(args.mixture)
    report = gram_clt_check(
        mixture, args.n, args.replications, args.seed, gamma_samples=args.gamma_samples
    )
    obj = {
        "manifest": io.manifest(
            command="verify gram-clt",
            params={
                "n": args.n,
                "replications": args.replications,
                "gamma_samples": args.gamma_samples,
            },
            seeds={"master": args.seed},
            inputs={"mixture": io.sha256_digest(args.mixture)},
        ),
        "passed": report.passed,
        "report": report.to_dict(),
    }
    io.save_json(args.out, obj)
    return 0 if report.passed else _NUMERIC


def _cmd_verify_fisher(args) -> int:
    mixture = io.load_mixture(args.mixture)
    F = fisher_matrix(mixture, args.noise, args.samples, args.seed)
    eigvals = np.linalg.eigvalsh(F)
    obj = {
        "manifest": io.manifest(
            command="verify fisher",
            params={"noise": args.noise, "samples": args.samples},
            seeds={"master": args.seed},
            inputs={"mixture": io.sha256_digest(args.mixture)},
        ),
        "fisher": F.tolist(),
        "eigenvalues": eigvals.tolist(),
        "positive_definite": bool(eigvals.min() > 0.0),
    }
    io.save_json(args.out, obj)
    return 0


def _cmd_bootstrap(args) -> int:
    est = io.load_estimate(args.estimate)
    results = []
    for rec in est["per_profile"]:
        if "locations" in rec:
            results.append(
                ProfileDeconvolution(
                    locations=np.asarray(rec["locations"], dtype=float),
                    amplitudes=np.asarray(rec["amplitudes"], dtype=float),
                    flags=tuple(rec.get("flags", [])),
                )
            )
    if not results:
        raise ValueError("estimate file carries no per-profile results to resample")
    point = Configuration(points=np.asarray(est["configuration"], dtype=float))
    labeled = label(results)
    shared = None
    if est.get("convergence") is not None and est["manifest"]["params"]["mode"] == "shared":
        shared = np.asarray(est["weights"], dtype=float)
    result = bootstrap_replicates(
        labeled, point, args.replicates, args.seed, est["d"], weights=shared
    )
    obj = {
        "manifest": io.manifest(
            command="bootstrap",
            params={"replicates": args.replicates},
            seeds={"master": args.seed},
            inputs={"estimate": io.sha256_digest(args.estimate)},
        ),
        "result": result.to_dict(),
    }
    io.save_json(args.out, obj)
    return 0


def _density_grid(d, sigma, weights, points, gridsize, extent):
    """Evaluate sum_k q_k N_d(x; p_k, sigma^2 I) on a [-extent, extent]^d grid."""
    kernel = GaussianKernel(sigma)
    axis = np.linspace(-extent, extent, gridsize)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack(grids, axis=-1)
    diff = pts[..., None, :] - points.T
    sq = np.einsum("...km,...km->...k", diff, diff)
    return kernel.density(sq, d) @ np.asarray(weights, dtype=float)


def _cmd_render(args) -> int:
    if args.gridsize < 2:
        raise ValueError("--gridsize must be at least 2")
    if not (args.extent > 0.0):
        raise ValueError("--extent must be positive")
    if args.mixture is not None:
        mixture = io.load_mixture(args.mixture)
        d, sigma = mixture.d, mixture.sigma
        weights, points = mixture.weights, mixture.locations.T
        source = {"mixture": io.sha256_digest(args.mixture)}
    else:
        est = io.load_estimate(args.estimate)
        d, sigma = int(est["d"]), float(est["sigma"])
        weights = np.asarray(est["weights"], dtype=float)
        points = np.asarray(est["configuration"], dtype=float)
        source = {"estimate": io.sha256_digest(args.estimate)}
    values = _density_grid(d, sigma, weights, points, args.gridsize, args.extent)
    meta = io.manifest(
        command="render",
        params={"gridsize": args.gridsize, "extent": args.extent},
        seeds={},
        inputs=source,
    )
    io.save_grid(args.out, values, args.extent, meta)
    return 0


if __name__ == "__main__":
    sys.exit(main())
