"""Model options, sampler state and initialization.

Generative model (block m, sample n, feature d)::

    y[n, d] ~ Normal(sum_k x[n, k] w[d, k], 1 / tau)
    x[n, k] ~ Normal(0, 1)                 or z_X[n, k] * Normal(0, 1)
    w[d, k] ~ z_W[d, k] * Normal(0, 1 / alpha[m, k])
    alpha   ~ Gamma(a_alpha, b_alpha),  tau ~ Gamma(a_tau, b_tau)
    z       ~ Bernoulli(pi),            pi  ~ Beta(a_pi, b_pi)

Gamma distributions are parameterized by shape and rate.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .data_model import MultiViewData
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

K_CAP = 200

LOADING_SPARSITY = ("group_ard", "element_spike_slab")
LATENT_SPARSITY = ("dense", "element_spike_slab")
NOISE_POOLING = ("per_block", "per_feature")
ARD_POOLING = ("per_block", "global")


@dataclass(frozen=True)
class ModelOptions:
    """Prior hyperparameters, sparsity and pooling modes, and the sampling schedule.

    ``a_tau`` and ``b_tau`` are either scalars or one value per block (as
    returned by :func:`informative_noise_prior`). With ``group_spike`` the
    group-ARD prior is combined with one spike-and-slab indicator per
    (block, component), which is what lets unneeded components switch off
    and be pruned; set it to False for plain ARD.
    """

    K_init: int = 10
    iterations: int = 1000
    burn_in: int = 500
    thin: int = 5
    loading_sparsity: str = "group_ard"
    latent_sparsity: str = "dense"
    group_spike: bool = True
    noise_pooling: str = "per_block"
    ard_pooling: str = "per_block"
    a_alpha: float = 1e-2
    b_alpha: float = 1e-2
    a_tau: float | tuple[float, ...] = 1e-2
    b_tau: float | tuple[float, ...] = 1e-2
    a_pi: float = 1.0
    b_pi: float = 1.0
    convergence_check: bool = True
    prune_tolerance: float = 1e-6
    prune_patience: int = 20
    seed: int = 0
    verbose: bool = False

    def __post_init__(self):
        for name in ("a_tau", "b_tau"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple, np.ndarray)):
                object.__setattr__(self, name, tuple(float(x) for x in v))
        self.validate()

    def validate(self):
        """Raise :class:`ConfigError` naming the first offending field."""
        def bad(name, why):
            raise ConfigError(f"invalid option {name}: {why}")

        if int(self.K_init) != self.K_init or self.K_init < 1:
            bad("K_init", f"must be a positive integer, got {self.K_init!r}")
        if self.iterations < 1:
            bad("iterations", "must be positive")
        if not 0 <= self.burn_in < self.iterations:
            bad("burn_in", f"must satisfy 0 <= burn_in < iterations ({self.burn_in} vs {self.iterations})")
        if self.thin < 1:
            bad("thin", "must be >= 1")
        for name, allowed in (("loading_sparsity", LOADING_SPARSITY), ("latent_sparsity", LATENT_SPARSITY),
                              ("noise_pooling", NOISE_POOLING), ("ard_pooling", ARD_POOLING)):
            if getattr(self, name) not in allowed:
                bad(name, f"{getattr(self, name)!r} not in {allowed}")
        for name in ("a_alpha", "b_alpha", "a_tau", "b_tau", "a_pi", "b_pi", "prune_tolerance"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.size == 0 or not np.all(v > 0) or not np.all(np.isfinite(v)):
                bad(name, "must be positive and finite")
        if self.prune_patience < 1:
            bad("prune_patience", "must be >= 1")
        if self.seed < 0:
            bad("seed", "must be non-negative")

    def replace(self, **changes) -> ModelOptions:
        return dataclasses.replace(self, **changes)

    def tau_prior(self, n_blocks: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-block (a_tau, b_tau) arrays."""
        out = []
        for name in ("a_tau", "b_tau"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.size == 1:
                v = np.repeat(v, n_blocks)
            elif v.size != n_blocks:
                raise ConfigError(f"invalid option {name}: {v.size} values for {n_blocks} blocks")
            out.append(v)
        return out[0], out[1]

    @property
    def n_samples(self) -> int:
        """Number of snapshots a full run stores."""
        return len(range(self.burn_in, self.iterations, self.thin))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("a_tau", "b_tau"):
            if isinstance(d[name], tuple):
                d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelOptions:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown option(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class GFAState:
    """One Gibbs configuration. Mutated in place by the sampler kernels.

    ``tau[m]`` has length 1 under per-block noise pooling and D_m under
    per-feature pooling. ``component_ids`` tracks the original index of each
    surviving component through pruning.
    """

    X: np.ndarray
    W: list[np.ndarray]
    z_W: list[np.ndarray]
    z_X: np.ndarray
    alpha: np.ndarray
    tau: list[np.ndarray]
    pi_W: np.ndarray
    pi_X: np.ndarray
    component_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.component_ids is None:
            self.component_ids = np.arange(self.X.shape[1])

    @property
    def K_active(self) -> int:
        return self.X.shape[1]

    def copy(self) -> GFAState:
        return copy.deepcopy(self)

    def check(self):
        """Assert the shape and positivity invariants."""
        n, k = self.X.shape
        assert self.z_X.shape == (n, k)
        assert self.alpha.shape == (len(self.W), k) and np.all(self.alpha > 0)
        assert self.pi_W.shape == (len(self.W), k) and self.pi_X.shape == (k,)
        for w, z, t in zip(self.W, self.z_W, self.tau):
            assert w.shape[1] == k and z.shape == w.shape
            assert np.all(t > 0)
            assert np.all(w[z == 0] == 0)
        assert np.all(self.X[self.z_X == 0] == 0)

    def is_finite(self) -> bool:
        arrays = [self.X, self.alpha, self.pi_W, self.pi_X, *self.W, *self.tau]
        return all(np.all(np.isfinite(a)) for a in arrays)


def _shape(data_shape) -> tuple[int, tuple[int, ...]]:
    if isinstance(data_shape, MultiViewData):
        return data_shape.shape
    n, *rest = data_shape
    dims = tuple(rest[0]) if len(rest) == 1 and np.ndim(rest[0]) == 1 else tuple(rest)
    if n < 1 or not dims or min(dims) < 1:
        raise DataError(f"invalid data shape {data_shape!r}")
    return int(n), tuple(int(d) for d in dims)


def default_options(data_shape, bicluster: bool = False, **overrides) -> ModelOptions:
    """Default options for data of shape ``(N, (D_1, ..., D_M))``.

    ``K_init`` is ``floor(min(N, sum D_m) / 2)``, at least 1 and at most
    :data:`K_CAP`. ``bicluster=True`` switches X and W to element-wise
    spike-and-slab priors.
    """
    n, dims = _shape(data_shape)
    k = max(1, min(n, sum(dims)) // 2)
    if k > K_CAP:
        logger.info("default K_init %d capped at %d", k, K_CAP)
        k = K_CAP
    sparsity = "element_spike_slab" if bicluster else None
    opts = dict(
        K_init=k,
        loading_sparsity=sparsity or "group_ard",
        latent_sparsity=sparsity or "dense",
        noise_pooling="per_block",
        ard_pooling="per_block",
    )
    opts.update(overrides)
    return ModelOptions(**opts)


def informative_noise_prior(data: MultiViewData, signal_proportion: float, confidence: float = 1.0):
    """Gamma prior for the noise precisions encoding the expected signal share.

    For each block, with ``v`` its mean observed per-feature variance, the
    returned prior is ``a_tau = confidence`` and
    ``b_tau = confidence * (1 - signal_proportion) * v``, putting the prior
    mean residual variance near ``(1 - signal_proportion) * v``.

    Returns
    -------
    (a_tau, b_tau) : tuple of tuples, one entry per block
    """
    if not 0 < signal_proportion < 1:
        raise ConfigError(f"signal_proportion must lie in (0, 1), got {signal_proportion}")
    if not confidence > 0:
        raise ConfigError(f"confidence must be positive, got {confidence}")
    a, b = [], []
    for blk in data.blocks:
        mask = blk.mask
        counts = mask.sum(axis=0)
        filled = np.where(mask, blk.values, 0.0)
        means = filled.sum(axis=0) / np.maximum(counts, 1)
        if np.any(np.abs(means) > 1e-8 * (1 + np.abs(filled).max())):
            logger.warning("block %s does not look centered; the noise prior assumes centered data", blk.label)
        dev = np.where(mask, blk.values - means, 0.0)
        usable = counts > 1
        v = float(((dev ** 2).sum(axis=0)[usable] / (counts[usable] - 1)).mean())
        a.append(float(confidence))
        b.append(float(confidence * (1 - signal_proportion) * v))
    return tuple(a), tuple(b)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for one chain."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def init_state(data: MultiViewData, options: ModelOptions, seed=None) -> GFAState:
    """Draw an initial state.

    X is standard normal, W normal with variance 1/K, precisions at their
    prior means, all indicators on and inclusion probabilities at the Beta
    prior mean. ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(options.seed if seed is None else seed)
    n, dims = data.shape
    k = options.K_init
    m = len(dims)
    X = rng.standard_normal((n, k))
    W = [rng.standard_normal((d, k)) / np.sqrt(k) for d in dims]
    a_tau, b_tau = options.tau_prior(m)
    tau_len = (lambda d: 1) if options.noise_pooling == "per_block" else (lambda d: d)
    return GFAState(
        X=X,
        W=W,
        z_W=[np.ones((d, k)) for d in dims],
        z_X=np.ones((n, k)),
        alpha=np.full((m, k), options.a_alpha / options.b_alpha),
        tau=[np.full(tau_len(d), a_tau[i] / b_tau[i]) for i, d in enumerate(dims)],
        pi_W=np.full((m, k), options.a_pi / (options.a_pi + options.b_pi)),
        pi_X=np.full(k, options.a_pi / (options.a_pi + options.b_pi)),
    )
