"""Persisting posterior samples to a directory.

A chain directory holds ``manifest.json`` and ``samples.bin``. The binary
container is a plain concatenation of little-endian float64 arrays in C
order; the manifest's ``arrays`` list gives each array's name, shape and
byte offset.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import GFAState, ModelOptions
from .preprocess import NormalizationRecord
from .sampler import PosteriorSamples, PruneEvent

FORMAT = "gfa-posterior"
VERSION = 1
CONTAINER = "samples.bin"


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _arrays(samples: PosteriorSamples) -> list[tuple[str, np.ndarray]]:
    snaps = samples.snapshots
    out = [("trace", np.asarray(samples.trace))]
    out.append(("X", samples.X))
    out.append(("z_X", np.stack([s.z_X for s in snaps])))
    out.append(("alpha", np.stack([s.alpha for s in snaps])))
    out.append(("pi_W", np.stack([s.pi_W for s in snaps])))
    out.append(("pi_X", np.stack([s.pi_X for s in snaps])))
    for m in range(len(samples.dims)):
        out.append((f"W/{m}", samples.W[m]))
        out.append((f"z_W/{m}", samples.z_W[m]))
        out.append((f"tau/{m}", samples.tau[m]))
    return out


def save_samples(samples: PosteriorSamples, directory) -> Path:
    """Write ``samples`` to ``directory`` (created if needed)."""
    if len(samples) == 0:
        raise DataError("refusing to save an empty sample set")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with (directory / CONTAINER).open("wb") as fh:
        for name, arr in _arrays(samples):
            buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(buf)
            offset += len(buf)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "storage": "packed-float64-le",
        "container": CONTAINER,
        "arrays": entries,
        "options": samples.options.to_dict(),
        "labels": list(samples.labels),
        "dims": list(samples.dims),
        "n_obs": samples.n_obs,
        "sample_names": list(samples.sample_names) if samples.sample_names else None,
        "feature_names": [list(f) for f in samples.feature_names] if samples.feature_names else None,
        "transposed": list(samples.transposed) if samples.transposed else None,
        "seed": samples.seed,
        "K_init": samples.K_init,
        "K_active": samples.K_active,
        "component_ids": samples.component_ids.tolist(),
        "n_snapshots": len(samples),
        "geweke_z": samples.geweke_z,
        "pruning": [{"sweep": e.sweep, "component": e.component, "reason": e.reason} for e in samples.pruning],
        "warnings": list(samples.warnings),
        "normalization": samples.normalization.to_dict() if samples.normalization else None,
    }
    dump_json(manifest, directory / "manifest.json")
    return directory


def load_samples(directory) -> PosteriorSamples:
    """Read a chain directory written by :func:`save_samples`."""
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise DataError(f"{directory} is not a chain directory (no manifest.json)")
    man = json.loads(path.read_text())
    if man.get("format") != FORMAT:
        raise DataError(f"{path} is not a {FORMAT} manifest")
    raw = (directory / man["container"]).read_bytes()
    arrays = {}
    for e in man["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"]).reshape(e["shape"]).astype(float)
        arrays[e["name"]] = a
    M = len(man["dims"])
    ids = np.asarray(man["component_ids"], dtype=int)
    snaps = []
    for s in range(man["n_snapshots"]):
        st = GFAState(
            X=arrays["X"][s], W=[arrays[f"W/{m}"][s] for m in range(M)],
            z_W=[arrays[f"z_W/{m}"][s] for m in range(M)], z_X=arrays["z_X"][s],
            alpha=arrays["alpha"][s], tau=[arrays[f"tau/{m}"][s] for m in range(M)],
            pi_W=arrays["pi_W"][s], pi_X=arrays["pi_X"][s], component_ids=ids.copy(),
        )
        for a in (st.X, st.z_X, st.alpha, st.pi_W, st.pi_X, st.component_ids, *st.W, *st.z_W, *st.tau):
            a.setflags(write=False)
        snaps.append(st)
    trace = arrays["trace"]
    trace.setflags(write=False)
    norm = man.get("normalization")
    return PosteriorSamples(
        snapshots=tuple(snaps),
        options=ModelOptions.from_dict(man["options"]),
        normalization=NormalizationRecord.from_dict(norm) if norm else None,
        labels=tuple(man["labels"]),
        dims=tuple(man["dims"]),
        n_obs=man["n_obs"],
        trace=trace,
        pruning=tuple(PruneEvent(**e) for e in man["pruning"]),
        geweke_z=man["geweke_z"],
        seed=man["seed"],
        K_init=man["K_init"],
        warnings=tuple(man["warnings"]),
        sample_names=tuple(man["sample_names"]) if man.get("sample_names") else None,
        feature_names=tuple(tuple(f) for f in man["feature_names"]) if man.get("feature_names") else None,
        transposed=tuple(man["transposed"]) if man.get("transposed") else None,
    )


def find_chain_dirs(path) -> list[Path]:
    """A chain directory itself, or the chain subdirectories of a run directory."""
    path = Path(path)
    if (path / "manifest.json").is_file():
        return [path]
    chains = sorted(p for p in path.glob("chain_*") if (p / "manifest.json").is_file())
    if not chains:
        raise DataError(f"no posterior samples found in {path}")
    return chains
