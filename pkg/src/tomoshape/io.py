"""File formats: mixture configs, datasets, estimates, reports, grids.

All formats are human-readable structured text.  Every output embeds a
manifest with the tool version, a parameter echo, the seeds used, and SHA-256
digests of the input files, and contains no timestamps, so a rerun with the
same inputs and seed is byte-identical.  Floats are written with ``repr``
(shortest round-trip form); JSON blocks use sorted keys and fixed separators.

Datasets are a line-oriented text format: three header lines (format tag,
manifest JSON, ground-truth JSON or null) followed by profile values as
space-delimited numeric text, one lattice row per line.  Large image datasets
can opt into a packed little-endian float64 payload instead (``binary=True``).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .mixture import RadialMixture
from .simulate import Dataset, Lattice, Profile, Truth

__all__ = [
    "sha256_digest",
    "manifest",
    "save_mixture",
    "load_mixture",
    "save_dataset",
    "load_dataset",
    "save_estimate",
    "load_estimate",
    "save_json",
    "load_json",
    "save_grid",
]

_DATASET_TAG = "tomoshape-dataset 1"


def sha256_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def manifest(command: str, params: dict, seeds: dict, inputs: dict) -> dict:
    """Standard provenance block embedded in every output file."""
    return {
        "tool": "tomoshape",
        "version": __version__,
        "command": command,
        "params": params,
        "seeds": seeds,
        "inputs": inputs,
    }


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_json(path, obj: dict) -> None:
    Path(path).write_text(_dumps(obj) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_mixture(path, mixture: RadialMixture) -> None:
    save_json(
        path,
        {
            "format": "tomoshape-mixture 1",
            "d": mixture.d,
            "sigma": mixture.sigma,
            "weights": mixture.weights.tolist(),
            "locations": mixture.locations.tolist(),
            "weights_normalized": mixture.weights_normalized,
        },
    )


def load_mixture(path, normalize: bool = False) -> RadialMixture:
    """Load a mixture config; locations are re-centered by the constructor.

    ``normalize=True`` rescales the weights to unit sum and records the fact
    on the returned mixture.
    """
    obj = load_json(path)
    for key in ("d", "sigma", "weights", "locations"):
        if key not in obj:
            raise ValueError(f"mixture file is missing the '{key}' field")
    weights = np.asarray(obj["weights"], dtype=float)
    normalized = bool(obj.get("weights_normalized", False))
    if normalize:
        weights = weights / weights.sum()
        normalized = True
    return RadialMixture(
        d=int(obj["d"]),
        sigma=float(obj["sigma"]),
        weights=weights,
        locations=np.asarray(obj["locations"], dtype=float),
        weights_normalized=normalized,
    )


def _format_row(row: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in row)


def save_dataset(path, dataset: Dataset, meta: dict, binary: bool = False) -> None:
    """Write a dataset: 3 header lines, then profile values.

    ``meta`` is the manifest dict (see :func:`manifest`); the
    dataset geometry is added to it.  The hidden-truth block, when present,
    goes in its own header line so estimation code that reads only profile
    rows can never touch it.
    """
    head = dict(meta)
    head["dataset"] = {
        "d": dataset.d,
        "sigma": dataset.sigma,
        "n_profiles": dataset.n_profiles,
        "T": dataset.T,
        "noise_sd": dataset.noise_sd,
        "seed": dataset.seed,
        "encoding": "binary" if binary else "text",
    }
    truth = None
    if dataset.truth is not None:
        truth = {
            "rotations": dataset.truth.rotations.tolist(),
            "projected": dataset.truth.projected.tolist(),
            "weights": dataset.truth.weights.tolist(),
            "locations": dataset.truth.locations.tolist(),
        }
    lines = [
        "# " + _DATASET_TAG,
        "# manifest " + _dumps(head),
        "# truth " + _dumps(truth),
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        if binary:
            payload = np.ascontiguousarray(
                np.stack([p.values for p in dataset.profiles]), dtype="<f8"
            )
            fh.write(payload.tobytes())
        else:
            rows = []
            for profile in dataset.profiles:
                values = np.atleast_2d(profile.values)
                rows.extend(_format_row(r) for r in values)
            fh.write(("\n".join(rows) + "\n").encode())


def load_dataset(path) -> tuple[Dataset, dict]:
    """Read a dataset file back; returns (dataset, manifest)."""
    with open(path, "rb") as fh:
        tag = fh.readline().decode().rstrip("\n")
        if tag != "# " + _DATASET_TAG:
            raise ValueError(f"not a dataset file: {path}")
        head = json.loads(fh.readline().decode().rstrip("\n")[len("# manifest ") :])
        truth_obj = json.loads(fh.readline().decode().rstrip("\n")[len("# truth ") :])
        geom = head["dataset"]
        d, T, n = int(geom["d"]), int(geom["T"]), int(geom["n_profiles"])
        shape = (n, T) if d == 2 else (n, T, T)
        if geom["encoding"] == "binary":
            raw = fh.read(int(np.prod(shape)) * 8)
            values = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        else:
            flat = np.loadtxt(fh, ndmin=2)
            values = flat.reshape(shape)
    lattice = Lattice(T)
    profiles = tuple(
        Profile(index=i, lattice=lattice, values=values[i]) for i in range(n)
    )
    truth = None
    if truth_obj is not None:
        truth = Truth(
            rotations=np.asarray(truth_obj["rotations"], dtype=float),
            projected=np.asarray(truth_obj["projected"], dtype=float),
            weights=np.asarray(truth_obj["weights"], dtype=float),
            locations=np.asarray(truth_obj["locations"], dtype=float),
        )
    dataset = Dataset(
        d=d,
        sigma=float(geom["sigma"]),
        n_profiles=n,
        T=T,
        noise_sd=float(geom["noise_sd"]),
        seed=int(geom["seed"]),
        profiles=profiles,
        truth=truth,
    )
    return dataset, head


def save_estimate(path, estimate: dict) -> None:
    """Estimates are plain JSON with a format tag."""
    obj = dict(estimate)
    obj["format"] = "tomoshape-estimate 1"
    save_json(path, obj)


def load_estimate(path) -> dict:
    obj = load_json(path)
    if obj.get("format") != "tomoshape-estimate 1":
        raise ValueError(f"not an estimate file: {path}")
    return obj


def save_grid(path, values: np.ndarray, extent: float, meta: dict) -> None:
    """Density table with a 3-line header: extent, grid size, axis order.

    2D grids are written row-per-line with [i, j] = (x_i, y_j); 3D grids are
    z-major: for each z index, G lines follow (x index per line, y along the
    columns).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim not in (2, 3) or len(set(values.shape)) != 1:
        raise ValueError("grid values must be square (G, G) or cubic (G, G, G)")
    G = values.shape[0]
    axes = "x,y" if values.ndim == 2 else "x,y,z"
    lines = [
        f"# extent {repr(float(extent))} (grid spans [-extent, extent] per axis)",
        f"# gridsize {G}",
        f"# axes {axes} | manifest " + _dumps(meta),
    ]
    if values.ndim == 2:
        lines.extend(_format_row(values[i]) for i in range(G))
    else:
        for iz in range(G):
            lines.extend(_format_row(values[ix, :, iz]) for ix in range(G))
    Path(path).write_text("\n".join(lines) + "\n")
