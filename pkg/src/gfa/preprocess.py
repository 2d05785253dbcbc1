"""Centering and scaling of multi-view data with an exact inverse.

Statistics are computed over observed entries only and missing entries stay
missing. Standard deviations use the n-1 denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import MultiViewData
from .errors import DataError

SCHEMES = ("center", "center_scale_features", "center_scale_blocks")


@dataclass(frozen=True, eq=False)
class NormalizationRecord:
    """Everything needed to undo :func:`normalize`.

    The transform for block m is ``(y - means[m]) / (feature_scales[m] * block_scales[m])``.
    """

    scheme: str
    means: tuple[np.ndarray, ...]
    feature_scales: tuple[np.ndarray, ...]
    block_scales: tuple[float, ...]

    def scale(self, m: int) -> np.ndarray:
        """Combined per-feature divisor of block ``m``."""
        return self.feature_scales[m] * self.block_scales[m]

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "means": [m.tolist() for m in self.means],
            "feature_scales": [s.tolist() for s in self.feature_scales],
            "block_scales": [float(s) for s in self.block_scales],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationRecord:
        return cls(
            scheme=d["scheme"],
            means=tuple(np.asarray(m, dtype=float) for m in d["means"]),
            feature_scales=tuple(np.asarray(s, dtype=float) for s in d["feature_scales"]),
            block_scales=tuple(float(s) for s in d["block_scales"]),
        )


def _observed_stats(values: np.ndarray, mask: np.ndarray):
    counts = mask.sum(axis=0)
    filled = np.where(mask, values, 0.0)
    means = filled.sum(axis=0) / counts
    dev = np.where(mask, values - means, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = (dev ** 2).sum(axis=0) / (counts - 1)
    return means, var, counts


def normalize(data: MultiViewData, scheme: str = "center") -> tuple[MultiViewData, NormalizationRecord]:
    """Center each feature and optionally rescale features or whole blocks.

    Parameters
    ----------
    data : MultiViewData
    scheme : {"center", "center_scale_features", "center_scale_blocks"}
        ``center_scale_features`` gives every feature unit sample standard
        deviation. ``center_scale_blocks`` divides each centered block by
        ``sqrt`` of its mean per-feature variance, so every block carries
        the same variance per feature.

    Returns
    -------
    (MultiViewData, NormalizationRecord)
    """
    if scheme not in SCHEMES:
        raise DataError(f"unknown normalization scheme {scheme!r}; expected one of {SCHEMES}")
    out, means, fscales, bscales = [], [], [], []
    for b in data.blocks:
        mask = b.mask
        if not mask.any(axis=0).all():
            bad = [b.feature_names[j] for j in np.flatnonzero(~mask.any(axis=0))]
            raise DataError(f"block {b.label!r}: features entirely missing: {bad}")
        mu, var, counts = _observed_stats(b.values, mask)
        fs = np.ones_like(mu)
        bs = 1.0
        if scheme == "center_scale_features":
            bad = np.flatnonzero(~(var > 0))
            if bad.size:
                names = [b.feature_names[j] for j in bad]
                raise DataError(f"block {b.label!r}: zero-variance features cannot be scaled: {names}")
            fs = np.sqrt(var)
        elif scheme == "center_scale_blocks":
            usable = counts > 1
            mean_var = var[usable].mean() if usable.any() else 0.0
            if not mean_var > 0:
                raise DataError(f"block {b.label!r} has zero variance and cannot be scaled")
            bs = float(np.sqrt(mean_var))
        out.append((b.values - mu) / (fs * bs))
        means.append(mu)
        fscales.append(fs)
        bscales.append(bs)
    record = NormalizationRecord(scheme, tuple(means), tuple(fscales), tuple(bscales))
    return data.with_values(out), record


def apply_normalization(data: MultiViewData, record: NormalizationRecord) -> MultiViewData:
    """Transform new data with statistics learned by :func:`normalize`."""
    _check_shapes([b.values for b in data.blocks], record)
    return data.with_values([(b.values - record.means[m]) / record.scale(m) for m, b in enumerate(data.blocks)])


def denormalize(values, record: NormalizationRecord) -> list[np.ndarray]:
    """Map matrices on the normalized scale back to the original scale."""
    values = [np.asarray(v, dtype=float) for v in values]
    _check_shapes(values, record)
    return [v * record.scale(m) + record.means[m] for m, v in enumerate(values)]


def denormalize_sd(sds, record: NormalizationRecord) -> list[np.ndarray]:
    """Rescale standard deviations (no shift) to the original scale."""
    sds = [np.asarray(s, dtype=float) for s in sds]
    _check_shapes(sds, record)
    return [s * record.scale(m) for m, s in enumerate(sds)]


def _check_shapes(values, record: NormalizationRecord):
    if len(values) != len(record.means):
        raise DataError(f"expected {len(record.means)} blocks, got {len(values)}")
    for m, v in enumerate(values):
        if v.ndim != 2 or v.shape[1] != record.means[m].shape[0]:
            raise DataError(f"block {m}: shape {v.shape} does not match {record.means[m].shape[0]} normalized features")
