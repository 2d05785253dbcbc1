"""Interpretation of a fitted model: variance explained, component activity, exports.

``export_visualization`` writes the following files (``<label>`` is the
file-safe block label, ``<k>`` the two-digit component position)::

    activity.csv, activity.svg                       M x K activity indicators
    variance_explained.csv, variance_explained.svg   M x K variance fractions
    X.csv, X.svg                                     posterior mean of X
    W_<label>.csv, W_<label>.svg                     posterior mean of W per block
    effect_<k>_<label>.csv, effect_<k>_<label>.svg   component effects per block
    reconstruction_<label>.csv, reconstruction_<label>.svg
    index.json                                       this inventory

All values are on the normalized scale the model was fitted on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data_model import MultiViewData, safe_name, write_matrix
from .errors import DataError
from .robust import component_effects
from .sampler import PosteriorSamples

DEFAULT_ACTIVITY_THRESHOLD = 0.005


@dataclass(frozen=True, eq=False)
class ComponentSummary:
    activity: np.ndarray
    variance_explained: np.ndarray
    order: np.ndarray


def _check(samples: PosteriorSamples, data: MultiViewData):
    if data.dims != samples.dims or data.n_samples != samples.n_obs:
        raise DataError(f"data shape {data.shape} does not match the samples ({samples.n_obs}, {samples.dims})")


def variance_explained(samples: PosteriorSamples, data: MultiViewData) -> np.ndarray:
    """M x K fractions ``|E_k^(m)|^2 / |Y^(m)|^2`` over observed entries."""
    _check(samples, data)
    denom = data.observed_sq_norms
    if np.any(denom <= 0):
        bad = [lab for lab, d in zip(data.labels, denom) if d <= 0]
        raise DataError(f"blocks with zero observed variance: {bad}")
    effects = component_effects(samples)
    out = np.empty((len(effects), samples.K_active))
    for m, (e, o) in enumerate(zip(effects, data.observed)):
        out[m] = (e ** 2 * o).sum(axis=(1, 2)) / denom[m]
    return out


def component_activity(samples: PosteriorSamples, data: MultiViewData,
                       activity_threshold: float = DEFAULT_ACTIVITY_THRESHOLD) -> np.ndarray:
    """M x K boolean activity of each component in each block.

    Under element-wise spike-and-slab loadings a component is active in a
    block when some feature's posterior inclusion probability is at least
    0.5. Otherwise it is active when its variance fraction reaches
    ``activity_threshold`` (and is nonzero).
    """
    if samples.options.loading_sparsity == "element_spike_slab":
        return np.array([z.mean(axis=0).max(axis=0) >= 0.5 for z in samples.z_W])
    v = variance_explained(samples, data)
    return (v >= activity_threshold) & (v > 0)


def shared_components(activity: np.ndarray) -> np.ndarray:
    """Indices of components active in at least two blocks."""
    return np.flatnonzero(activity.sum(axis=0) >= 2)


def summarize_components(samples, data, activity_threshold: float = DEFAULT_ACTIVITY_THRESHOLD) -> ComponentSummary:
    v = variance_explained(samples, data)
    act = component_activity(samples, data, activity_threshold)
    order = np.argsort(-v.sum(axis=0), kind="stable")
    return ComponentSummary(act, v, order)


# --------------------------------------------------------------------------- SVG

_NEG = np.array([33, 102, 172])
_MID = np.array([247, 247, 247])
_POS = np.array([178, 24, 43])


def _color(t: float) -> str:
    end = _POS if t >= 0 else _NEG
    rgb = np.rint(_MID + abs(t) * (end - _MID)).astype(int)
    return "#%02x%02x%02x" % tuple(rgb)


def heatmap_svg(values, title: str = "") -> str:
    """Rectangle-grid heatmap, diverging colors centered at zero."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    rows, cols = v.shape
    vmax = float(np.nanmax(np.abs(v))) if v.size else 0.0
    cw = max(2, min(24, 800 // max(cols, 1)))
    ch = max(2, min(24, 800 // max(rows, 1)))
    top = 20 if title else 0
    width, height = cols * cw, rows * ch + top
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    if title:
        out.append(f'<text x="2" y="14" font-family="sans-serif" font-size="12">{escape(title)}</text>')
    for i in range(rows):
        for j in range(cols):
            x = v[i, j]
            t = 0.0 if vmax == 0 or np.isnan(x) else x / vmax
            out.append(f'<rect x="{j * cw}" y="{top + i * ch}" width="{cw}" height="{ch}" fill="{_color(t)}"/>')
    out.append("</svg>\n")
    return "\n".join(out)


def report_files(labels, K: int) -> list[str]:
    """The documented inventory of :func:`export_visualization`, in write order."""
    names = ["activity", "variance_explained", "X"]
    names += [f"W_{safe_name(lab)}" for lab in labels]
    names += [f"effect_{k:02d}_{safe_name(lab)}" for k in range(K) for lab in labels]
    names += [f"reconstruction_{safe_name(lab)}" for lab in labels]
    return [f"{n}.{ext}" for n in names for ext in ("csv", "svg")] + ["index.json"]


def export_visualization(samples: PosteriorSamples, data: MultiViewData, out_dir,
                         activity_threshold: float = DEFAULT_ACTIVITY_THRESHOLD) -> list[Path]:
    """Write plot-ready matrices and SVG heatmaps; returns the written paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_test"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write to {out_dir}: {exc}") from None
    summary = summarize_components(samples, data, activity_threshold)
    K = samples.K_active
    comp_names = [f"k{k:02d}" for k in range(K)]
    samples_names = list(data.sample_names)
    written = []

    def emit(name, values, rows, cols, title):
        written.append(write_matrix(out_dir / f"{name}.csv", values, rows, cols))
        path = out_dir / f"{name}.svg"
        path.write_text(heatmap_svg(values, title))
        written.append(path)

    labels = list(data.labels)
    emit("activity", summary.activity.astype(float), labels, comp_names, "component activity")
    emit("variance_explained", summary.variance_explained, labels, comp_names, "variance explained")
    emit("X", samples.X.mean(axis=0), samples_names, comp_names, "X (posterior mean)")
    for m, b in enumerate(data.blocks):
        emit(f"W_{safe_name(b.label)}", samples.W[m].mean(axis=0), b.feature_names, comp_names,
             f"W {b.label} (posterior mean)")
    effects = component_effects(samples)
    for k in range(K):
        for m, b in enumerate(data.blocks):
            emit(f"effect_{k:02d}_{safe_name(b.label)}", effects[m][k], samples_names, b.feature_names,
                 f"component {k} effect in {b.label}")
    for m, b in enumerate(data.blocks):
        emit(f"reconstruction_{safe_name(b.label)}", effects[m].sum(axis=0), samples_names, b.feature_names,
             f"reconstruction of {b.label}")
    index = out_dir / "index.json"
    index.write_text(json.dumps({"files": report_files(labels, K), "activity_threshold": activity_threshold,
                                 "component_ids": samples.component_ids.tolist()}, indent=2) + "\n")
    written.append(index)
    return written
