"""Gibbs sampler for group factor analysis.

Each sweep runs, in order, :func:`update_latents`, :func:`update_loadings`,
:func:`update_inclusion_probs`, :func:`update_ard` and :func:`update_noise`;
during burn-in :func:`prune_components` then removes components that have
become empty. The kernels update a :class:`~gfa.model.GFAState` in place and
return it.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import expit

from .data_model import MultiViewData
from .errors import ComplexityWarning, ConvergenceWarning, NumericalError
from .model import GFAState, ModelOptions, init_state, make_rng
from .preprocess import NormalizationRecord

logger = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny
_PI_CLIP = 1e-12


def _logit(p):
    p = np.clip(p, _PI_CLIP, 1 - _PI_CLIP)
    return np.log(p) - np.log1p(-p)


def _cholesky(P: np.ndarray) -> np.ndarray:
    """Cholesky factor of one or a stack of SPD matrices, with a jitter fallback."""
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        k = P.shape[-1]
        scale = np.trace(P, axis1=-2, axis2=-1) / k
        jitter = 1e-10 * np.asarray(scale)[..., None, None] * np.eye(k)
        logger.info("Cholesky failed; retrying with jitter %.3g", float(np.max(jitter)))
        try:
            return np.linalg.cholesky(P + jitter)
        except np.linalg.LinAlgError:
            raise NumericalError("precision matrix is not positive definite") from None


def _gaussian_draw(P: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(P^-1 b, P^-1) for stacked precisions ``P`` (..., K, K) and ``b`` (..., K)."""
    L = _cholesky(P)
    eps = rng.standard_normal(b.shape)
    mean = np.linalg.solve(P, b[..., None])[..., 0]
    Lt = np.swapaxes(L, -1, -2)
    return mean + np.linalg.solve(Lt, eps[..., None])[..., 0]


def _tau_per_feature(state: GFAState, dims) -> np.ndarray:
    return np.concatenate([np.broadcast_to(t, (d,)) for t, d in zip(state.tau, dims)])


def _uses_group_spike(options: ModelOptions) -> bool:
    return options.loading_sparsity == "group_ard" and options.group_spike


def residuals(state: GFAState, data: MultiViewData) -> list[np.ndarray]:
    """Residual matrices, zero at missing entries."""
    return [(y - state.X @ w.T) * o for y, o, w in zip(data.filled, data.observed, state.W)]


def squared_error(state: GFAState, data: MultiViewData) -> np.ndarray:
    """Per-block sum of squared residuals over observed entries."""
    return np.array([float((r ** 2).sum()) for r in residuals(state, data)])


# --------------------------------------------------------------------------- kernels

def update_latents(state: GFAState, data: MultiViewData, options: ModelOptions,
                   rng: np.random.Generator) -> GFAState:
    """Redraw X (and z_X in spike-and-slab mode) from its full conditional.

    In dense mode each row of X is drawn jointly: its precision is
    ``I + sum_m W_m' diag(tau_m * observed_n) W_m``. Rows sharing an
    observation pattern share a factorization.
    """
    K = state.K_active
    Wc = np.vstack(state.W)
    tc = _tau_per_feature(state, data.dims)
    Yc, Oc = data.filled_all, data.observed_all

    if options.latent_sparsity == "dense":
        B = (Yc * tc) @ Wc
        if not data.has_missing:
            P = np.eye(K) + (Wc.T * tc) @ Wc
            state.X = _gaussian_draw(np.broadcast_to(P, (data.n_samples, K, K)), B, rng)
        else:
            patterns, inverse = np.unique(Oc, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            P = np.eye(K) + np.einsum("pd,dk,dl->pkl", patterns * tc, Wc, Wc)
            state.X = _gaussian_draw(P[inverse], B, rng)
        return state

    R = (Yc - state.X @ Wc.T) * Oc
    n = data.n_samples
    for k in range(K):
        wk = Wc[:, k]
        xk = state.X[:, k]
        Rk = R + np.outer(xk, wk) * Oc
        lam = 1.0 + Oc @ (tc * wk ** 2)
        mu = (Rk @ (tc * wk)) / lam
        logodds = _logit(state.pi_X[k]) - 0.5 * np.log(lam) + 0.5 * lam * mu ** 2
        z = rng.random(n) < expit(logodds)
        eps = rng.standard_normal(n)
        xk = np.where(z, mu + eps / np.sqrt(lam), 0.0)
        state.X[:, k] = xk
        state.z_X[:, k] = z
        R = Rk - np.outer(xk, wk) * Oc
    return state


def _loadings_joint(state, m, Y, O, t, inc, rng, has_missing):
    """Joint Gaussian redraw of the rows of W_m restricted to components ``inc``."""
    W = state.W[m]
    D = W.shape[0]
    Xi = state.X[:, inc]
    k = inc.size
    a = np.diag(state.alpha[m, inc])
    tb = np.broadcast_to(t, (D,))
    b = tb[:, None] * (Y.T @ Xi)
    if not has_missing:
        G = Xi.T @ Xi
        if t.size == 1:
            P = np.broadcast_to(a + t[0] * G, (D, k, k))
        else:
            P = a + tb[:, None, None] * G
    else:
        patterns, inverse = np.unique(O.T, axis=0, return_inverse=True)
        G = np.einsum("pn,nk,nl->pkl", patterns, Xi, Xi)
        P = a + tb[:, None, None] * G[inverse.reshape(-1)]
    W[:, inc] = _gaussian_draw(P, b, rng)


def update_loadings(state: GFAState, data: MultiViewData, options: ModelOptions,
                    rng: np.random.Generator) -> GFAState:
    """Redraw W (and z_W) block by block.

    ``element_spike_slab`` updates each element (d, k) with its inclusion
    odds ``pi/(1-pi) * sqrt(alpha/lam) * exp(lam mu^2 / 2)``. With a group
    spike, one indicator per (block, component) is drawn from the product of
    those per-feature factors, after which the included columns are redrawn
    jointly. Plain group ARD only does the joint redraw.
    """
    X = state.X
    K = state.K_active
    for m in range(len(state.W)):
        Y, O = data.filled[m], data.observed[m]
        W, Z = state.W[m], state.z_W[m]
        D = W.shape[0]
        t = state.tau[m]
        tb = np.broadcast_to(t, (D,))
        block_missing = not data.blocks[m].mask.all()

        if options.loading_sparsity == "group_ard" and not options.group_spike:
            _loadings_joint(state, m, Y, O, t, np.arange(K), rng, block_missing)
            continue

        element = options.loading_sparsity == "element_spike_slab"
        R = (Y - X @ W.T) * O
        x2 = (X ** 2).T @ O
        for k in range(K):
            xk = X[:, k]
            Rk = R + np.outer(xk, W[:, k]) * O
            alpha = state.alpha[m, k]
            lam = alpha + tb * x2[k]
            mu = tb * (xk @ Rk) / lam
            terms = 0.5 * (np.log(alpha) - np.log(lam)) + 0.5 * lam * mu ** 2
            if element:
                z = rng.random(D) < expit(_logit(state.pi_W[m, k]) + terms)
            else:
                z = np.full(D, rng.random() < expit(_logit(state.pi_W[m, k]) + terms.sum()))
            eps = rng.standard_normal(D)
            wk = np.where(z, mu + eps / np.sqrt(lam), 0.0)
            W[:, k] = wk
            Z[:, k] = z
            R = Rk - np.outer(xk, wk) * O

        if not element:
            inc = np.flatnonzero(Z[0] > 0)
            if inc.size:
                _loadings_joint(state, m, Y, O, t, inc, rng, block_missing)
    return state


def update_ard(state: GFAState, options: ModelOptions, rng: np.random.Generator) -> GFAState:
    """alpha[m, k] ~ Gamma(a + n_mk / 2, b + |w_mk|^2 / 2), n_mk the included count."""
    n = np.array([z.sum(axis=0) for z in state.z_W])
    ss = np.array([(w ** 2).sum(axis=0) for w in state.W])
    if options.ard_pooling == "global":
        n = np.broadcast_to(n.sum(axis=0), n.shape)
        ss = np.broadcast_to(ss.sum(axis=0), ss.shape)
        draw = rng.gamma(options.a_alpha + n[0] / 2, 1.0 / (options.b_alpha + ss[0] / 2))
        alpha = np.tile(draw, (n.shape[0], 1))
    else:
        alpha = rng.gamma(options.a_alpha + n / 2, 1.0 / (options.b_alpha + ss / 2))
    state.alpha = np.maximum(alpha, _TINY)
    return state


def update_noise(state: GFAState, data: MultiViewData, options: ModelOptions,
                 rng: np.random.Generator) -> GFAState:
    """tau ~ Gamma(a_tau + n_obs / 2, b_tau + SSR / 2) per block or per feature."""
    a_tau, b_tau = options.tau_prior(len(state.W))
    for m, r in enumerate(residuals(state, data)):
        O = data.observed[m]
        if options.noise_pooling == "per_block":
            shape = a_tau[m] + np.array([O.sum()]) / 2
            rate = b_tau[m] + np.array([(r ** 2).sum()]) / 2
        else:
            shape = a_tau[m] + O.sum(axis=0) / 2
            rate = b_tau[m] + (r ** 2).sum(axis=0) / 2
        state.tau[m] = np.maximum(rng.gamma(shape, 1.0 / rate), _TINY)
    return state


def update_inclusion_probs(state: GFAState, options: ModelOptions, rng: np.random.Generator) -> GFAState:
    """Beta updates of the inclusion probabilities of every spike-and-slab prior in use."""
    a, b = options.a_pi, options.b_pi
    if options.loading_sparsity == "element_spike_slab":
        ones = np.array([z.sum(axis=0) for z in state.z_W])
        total = np.array([z.shape[0] for z in state.z_W])[:, None]
        state.pi_W = rng.beta(a + ones, b + total - ones)
    elif _uses_group_spike(options):
        ones = np.array([z[0] for z in state.z_W])
        state.pi_W = rng.beta(a + ones, b + 1 - ones)
    if options.latent_sparsity == "element_spike_slab":
        ones = state.z_X.sum(axis=0)
        state.pi_X = rng.beta(a + ones, b + state.z_X.shape[0] - ones)
    return state


# --------------------------------------------------------------------------- pruning

@dataclass(frozen=True)
class PruneEvent:
    sweep: int
    component: int
    reason: str


@dataclass
class PruningHistory:
    """Pruning events plus the running count of low-variance sweeps per component."""

    events: list[PruneEvent] = field(default_factory=list)
    streaks: dict[int, int] = field(default_factory=dict)

    def __bool__(self):
        return bool(self.events)


def component_variance(state: GFAState, data: MultiViewData) -> np.ndarray:
    """Fraction of the total observed sum of squares carried by each component."""
    num = np.zeros(state.K_active)
    x2 = state.X ** 2
    for w, o in zip(state.W, data.observed):
        num += ((x2.T @ o) * (w ** 2).T).sum(axis=1)
    return num / data.observed_sq_norms.sum()


def _drop(state: GFAState, keep: np.ndarray):
    state.X = state.X[:, keep]
    state.z_X = state.z_X[:, keep]
    state.W = [w[:, keep] for w in state.W]
    state.z_W = [z[:, keep] for z in state.z_W]
    state.alpha = state.alpha[:, keep]
    state.pi_W = state.pi_W[:, keep]
    state.pi_X = state.pi_X[keep]
    state.component_ids = state.component_ids[keep]


def prune_components(state: GFAState, data: MultiViewData, options: ModelOptions,
                     history: PruningHistory, sweep: int) -> GFAState:
    """Remove components that are switched off or carry negligible variance.

    A component goes when every loading indicator is zero in every block
    (spike-and-slab modes), or when its variance fraction has stayed below
    ``prune_tolerance`` for ``prune_patience`` consecutive calls. The last
    component is never removed: when everything qualifies, the one with the
    largest variance fraction stays, so a structureless data set ends up as
    an empty model with one negligible component.
    """
    v = component_variance(state, data)
    spike = options.loading_sparsity == "element_spike_slab" or _uses_group_spike(options)
    excluded = np.all([~z.any(axis=0) for z in state.z_W], axis=0) if spike else np.zeros(state.K_active, bool)
    keep = np.ones(state.K_active, dtype=bool)
    for k, cid in enumerate(state.component_ids.tolist()):
        streak = history.streaks.get(cid, 0) + 1 if v[k] < options.prune_tolerance else 0
        history.streaks[cid] = streak
        if excluded[k]:
            reason = "all excluded"
        elif streak >= options.prune_patience:
            reason = "variance below tolerance"
        else:
            continue
        keep[k] = False
        history.events.append(PruneEvent(sweep, cid, reason))
        history.streaks.pop(cid, None)
    if not keep.any():
        k = int(np.argmax(v))
        keep[k] = True
        cid = int(state.component_ids[k])
        history.events = [e for e in history.events if not (e.sweep == sweep and e.component == cid)]
        logger.warning("sweep %d: every component qualified for pruning; keeping component %d "
                       "(the data may have no structure, or the noise prior is too strong)", sweep, cid)
    if not keep.all():
        _drop(state, keep)
        logger.debug("sweep %d: pruned to %d components", sweep, state.K_active)
    return state


# --------------------------------------------------------------------------- diagnostics

def geweke_diagnostic(trace, first: float = 0.1, last: float = 0.5) -> float:
    """Geweke z-score comparing the means of the first 10% and last 50% of a trace.

    Segment variances are plain sample variances divided by segment length.
    A constant trace gives 0.
    """
    x = np.asarray(trace, dtype=float).ravel()
    if x.size < 40:
        raise ValueError(f"trace too short: {x.size} points, need at least 40")
    if np.ptp(x) == 0:
        return 0.0
    a = x[: int(first * x.size)]
    b = x[x.size - int(last * x.size):]
    diff = a.mean() - b.mean()
    se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    if se == 0:
        return 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
    return float(diff / se)


# --------------------------------------------------------------------------- chains

@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Thinned post-burn-in snapshots of one chain, with diagnostics.

    All snapshots share the component set, since pruning stops at the end
    of burn-in.
    """

    snapshots: tuple[GFAState, ...]
    options: ModelOptions
    normalization: NormalizationRecord | None
    labels: tuple[str, ...]
    dims: tuple[int, ...]
    n_obs: int
    trace: np.ndarray
    pruning: tuple[PruneEvent, ...]
    geweke_z: float | None
    seed: int
    K_init: int
    warnings: tuple[str, ...] = ()
    sample_names: tuple[str, ...] | None = None
    feature_names: tuple[tuple[str, ...], ...] | None = None
    transposed: tuple[bool, ...] | None = None

    def __len__(self):
        return len(self.snapshots)

    @property
    def K_active(self) -> int:
        return self.snapshots[0].K_active if self.snapshots else 0

    @property
    def component_ids(self) -> np.ndarray:
        return self.snapshots[0].component_ids

    @property
    def empty_components(self) -> int:
        return self.K_init - self.K_active

    @cached_property
    def X(self) -> np.ndarray:
        """Stacked latent variables, shape (S, N, K)."""
        return np.stack([s.X for s in self.snapshots])

    @cached_property
    def W(self) -> list[np.ndarray]:
        """Stacked projections per block, shapes (S, D_m, K)."""
        return [np.stack([s.W[m] for s in self.snapshots]) for m in range(len(self.dims))]

    @cached_property
    def z_W(self) -> list[np.ndarray]:
        return [np.stack([s.z_W[m] for s in self.snapshots]) for m in range(len(self.dims))]

    @cached_property
    def tau(self) -> list[np.ndarray]:
        return [np.stack([s.tau[m] for s in self.snapshots]) for m in range(len(self.dims))]


def _frozen_copy(state: GFAState) -> GFAState:
    s = state.copy()
    for a in (s.X, s.z_X, s.alpha, s.pi_W, s.pi_X, s.component_ids, *s.W, *s.z_W, *s.tau):
        a.setflags(write=False)
    return s


def sweep(state: GFAState, data: MultiViewData, options: ModelOptions, rng: np.random.Generator) -> GFAState:
    """One full Gibbs sweep, without pruning."""
    update_latents(state, data, options, rng)
    update_loadings(state, data, options, rng)
    update_inclusion_probs(state, options, rng)
    update_ard(state, options, rng)
    update_noise(state, data, options, rng)
    return state


def run_chain(data: MultiViewData, options: ModelOptions, seed: int | None = None,
              normalization: NormalizationRecord | None = None) -> PosteriorSamples:
    """Run one Gibbs chain and collect thinned post-burn-in snapshots.

    Parameters
    ----------
    data : MultiViewData
        Usually the normalized data.
    options : ModelOptions
    seed : int, optional
        Overrides ``options.seed``.
    normalization : NormalizationRecord, optional
        Stored with the samples so predictions can be mapped back.

    Returns
    -------
    PosteriorSamples
    """
    seed = options.seed if seed is None else int(seed)
    rng = make_rng(seed)
    state = init_state(data, options, rng)
    history = PruningHistory()
    trace = np.empty(options.iterations)
    snapshots = []
    notes = []

    def complexity_check():
        if not history or state.K_active == options.K_init:
            msg = (f"no components were pruned during burn-in (K = {state.K_active}); "
                   "automatic complexity selection may not have worked, consider a larger K_init")
            warnings.warn(msg, ComplexityWarning, stacklevel=3)
            notes.append(msg)

    if options.burn_in == 0:
        complexity_check()
    for it in range(options.iterations):
        sweep(state, data, options, rng)
        if not state.is_finite():
            raise NumericalError(f"non-finite values in the sampler state at sweep {it}")
        if it < options.burn_in:
            prune_components(state, data, options, history, it)
            if it == options.burn_in - 1:
                complexity_check()
        trace[it] = squared_error(state, data).sum()
        if it >= options.burn_in and (it - options.burn_in) % options.thin == 0:
            snapshots.append(_frozen_copy(state))
        if options.verbose and (it + 1) % 100 == 0:
            logger.info("sweep %d/%d: K=%d, squared error %.4g", it + 1, options.iterations,
                        state.K_active, trace[it])

    z = None
    if options.convergence_check:
        post = trace[options.burn_in::options.thin]
        if post.size >= 40:
            z = geweke_diagnostic(post)
            if abs(z) >= 1.96:
                msg = f"Geweke z-score {z:.3f} of the reconstruction error suggests the chain has not converged"
                warnings.warn(msg, ConvergenceWarning, stacklevel=2)
                notes.append(msg)
        else:
            logger.info("only %d thinned post-burn-in sweeps; skipping the Geweke diagnostic", post.size)
    trace.setflags(write=False)
    return PosteriorSamples(
        snapshots=tuple(snapshots),
        options=options,
        normalization=normalization,
        labels=data.labels,
        dims=data.dims,
        n_obs=data.n_samples,
        trace=trace,
        pruning=tuple(history.events),
        geweke_z=z,
        seed=seed,
        K_init=options.K_init,
        warnings=tuple(notes),
        sample_names=data.sample_names,
        feature_names=tuple(b.feature_names for b in data.blocks),
        transposed=tuple(b.transposed for b in data.blocks),
    )


def _run_one(args):
    data, options, seed, normalization = args
    return run_chain(data, options, seed=seed, normalization=normalization)


def run_chains(data: MultiViewData, options: ModelOptions, n_chains: int, seed: int | None = None,
               normalization: NormalizationRecord | None = None, jobs: int = 1) -> list[PosteriorSamples]:
    """Independent chains with seeds ``seed + i``; results are in chain order.

    ``jobs > 1`` runs chains in worker processes. The results do not depend
    on ``jobs``.
    """
    base = options.seed if seed is None else int(seed)
    tasks = [(data, options, base + i, normalization) for i in range(n_chains)]
    if jobs <= 1 or n_chains <= 1:
        return [_run_one(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))
