"""Posterior-predictive reconstruction and fixed-projection prediction."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .data_model import DataBlock, MultiViewData
from .errors import DataError
from .model import make_rng
from .preprocess import denormalize as _denormalize
from .preprocess import denormalize_sd
from .sampler import PosteriorSamples, _cholesky


@dataclass(frozen=True, eq=False)
class PredictiveSummary:
    """Per-block predictive means and standard deviations."""

    mean: tuple[np.ndarray, ...]
    sd: tuple[np.ndarray, ...]
    n_samples: int
    labels: tuple[str, ...]
    denormalized: bool = False

    def __getitem__(self, label: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.labels.index(label)
        return self.mean[m], self.sd[m]


def _as_chains(samples) -> list[PosteriorSamples]:
    chains = [samples] if isinstance(samples, PosteriorSamples) else list(samples)
    if not chains or sum(len(c) for c in chains) == 0:
        raise DataError("no posterior samples to predict from")
    first = chains[0]
    for c in chains[1:]:
        if c.dims != first.dims or c.labels != first.labels or c.n_obs != first.n_obs:
            raise DataError("chains were trained on differently shaped data")
    return chains


def _aggregate(per_snapshot, noise_var, chains, denormalize) -> PredictiveSummary:
    """Mean and sd over snapshot predictions, accumulated in snapshot order.

    ``per_snapshot`` yields one list of block matrices per snapshot.
    """
    first = chains[0]
    sums = sq = None
    preds = []
    for pred in per_snapshot:
        preds.append(pred)
        sums = [p.copy() for p in pred] if sums is None else [s + p for s, p in zip(sums, pred)]
    n = len(preds)
    means = [s / n for s in sums]
    for pred in preds:
        dev = [(p - mu) ** 2 for p, mu in zip(pred, means)]
        sq = dev if sq is None else [s + d for s, d in zip(sq, dev)]
    sds = [np.sqrt(s / n + nv) for s, nv in zip(sq, noise_var)]
    record = first.normalization
    done = denormalize and record is not None
    if done:
        means = _denormalize(means, record)
        sds = denormalize_sd(sds, record)
    return PredictiveSummary(tuple(means), tuple(sds), n, first.labels, done)


def _noise_variance(chains) -> list[np.ndarray]:
    """Average of 1/tau over all snapshots, per block (scalar or per feature)."""
    out = []
    for m in range(len(chains[0].dims)):
        inv = np.concatenate([1.0 / c.tau[m] for c in chains], axis=0)
        out.append(inv.mean(axis=0))
    return out


def reconstruction(samples, denormalize: bool = True) -> PredictiveSummary:
    """Posterior-predictive summary of the training data, every entry included.

    The point estimate is the average of ``X W_m'`` over snapshots. The
    variance is the across-snapshot variance (denominator n) plus the average
    noise variance. ``samples`` may be a single chain or several chains
    trained on the same data, whose snapshots are pooled.
    """
    chains = _as_chains(samples)

    def per_snapshot():
        for c in chains:
            for s in c.snapshots:
                yield [s.X @ w.T for w in s.W]

    return _aggregate(per_snapshot(), _noise_variance(chains), chains, denormalize)


def prediction_batch(samples, observed: Mapping[str, np.ndarray], sample_names=None) -> MultiViewData:
    """Build a new-sample batch for :func:`predict_new_samples`.

    ``observed`` maps block labels to (normalized) matrices with the trained
    number of features; blocks not given are entirely missing.
    """
    chains = _as_chains(samples)
    first = chains[0]
    unknown = sorted(set(observed) - set(first.labels))
    if unknown:
        raise DataError(f"unknown block labels: {unknown}")
    n = {np.asarray(v).shape[0] for v in observed.values()}
    if len(n) != 1:
        raise DataError("observed blocks disagree on the number of new samples")
    n = n.pop()
    names = tuple(sample_names) if sample_names is not None else tuple(f"new{i + 1}" for i in range(n))
    blocks = []
    for m, (lab, d) in enumerate(zip(first.labels, first.dims)):
        v = np.asarray(observed[lab], dtype=float) if lab in observed else np.full((n, d), np.nan)
        fnames = first.feature_names[m] if first.feature_names else tuple(f"{lab}_{j + 1}" for j in range(d))
        blocks.append(DataBlock(lab, v, fnames, names))
    return MultiViewData(tuple(blocks))


def _latent_conditional(W: Sequence[np.ndarray], tau: Sequence[np.ndarray], batch: MultiViewData):
    """Precision factors and means of the new rows' latent Gaussian conditional."""
    Wc = np.vstack(W)
    tc = np.concatenate([np.broadcast_to(t, (w.shape[0],)) for t, w in zip(tau, W)])
    K = Wc.shape[1]
    Oc, Yc = batch.observed_all, batch.filled_all
    patterns, inverse = np.unique(Oc, axis=0, return_inverse=True)
    P = np.eye(K) + np.einsum("pd,dk,dl->pkl", patterns * tc, Wc, Wc)
    P = P[inverse.reshape(-1)]
    B = (Yc * tc) @ Wc
    mean = np.linalg.solve(P, B[..., None])[..., 0]
    return P, mean


def predict_new_samples(samples, new_batch: MultiViewData, point_estimate: bool = True,
                        use_mean_W: bool = False, seed: int = 0, denormalize: bool = True) -> PredictiveSummary:
    """Predict new samples with the trained projections held fixed.

    For every snapshot the latent rows of ``new_batch`` are set to (or, with
    ``point_estimate=False``, drawn from) their Gaussian conditional given
    the observed entries, and every block is predicted as ``X_new W_m'``.
    ``new_batch`` must be on the normalized scale of the training data.

    Parameters
    ----------
    samples : PosteriorSamples or sequence of them
    new_batch : MultiViewData
        Same labels and feature counts as the training data; unobserved
        blocks are all-NaN (see :func:`prediction_batch`).
    point_estimate : bool
        Conditional-mean latents (fast) versus sampled latents, whose
        spread then enters the predictive sd.
    use_mean_W : bool
        Use only the posterior-mean W and tau instead of every snapshot.
    """
    chains = _as_chains(samples)
    first = chains[0]
    if new_batch.labels != first.labels:
        raise DataError(f"block labels {new_batch.labels} do not match the trained {first.labels}")
    if new_batch.dims != first.dims:
        raise DataError(f"feature dimensions {new_batch.dims} do not match the trained {first.dims}")
    if not any(b.mask.any() for b in new_batch.blocks):
        raise DataError("the new batch has no observed blocks")
    rng = make_rng(seed)

    if use_mean_W:
        n_total = sum(len(c) for c in chains)
        Wbar = [sum(w.sum(axis=0) for w in (c.W[m] for c in chains)) / n_total for m in range(len(first.dims))]
        taubar = [1.0 / v for v in _noise_variance(chains)]
        params = [(Wbar, taubar)]
    else:
        params = [(s.W, s.tau) for c in chains for s in c.snapshots]

    def per_snapshot():
        for W, tau in params:
            P, mean = _latent_conditional(W, tau, new_batch)
            if point_estimate:
                x = mean
            else:
                L = _cholesky(P)
                eps = rng.standard_normal(mean.shape)
                x = mean + np.linalg.solve(np.swapaxes(L, -1, -2), eps[..., None])[..., 0]
            yield [x @ w.T for w in W]

    return _aggregate(per_snapshot(), _noise_variance(chains), chains, denormalize)
