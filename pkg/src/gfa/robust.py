"""Matching components across independently sampled chains.

Components are compared through their data-space effects ``x_k w_k'``, which
are unaffected by the permutation and sign ambiguities of the factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .sampler import PosteriorSamples


def component_effects(samples: PosteriorSamples) -> list[np.ndarray]:
    """Posterior-mean effects of all components, one (K, N, D_m) array per block."""
    if len(samples) == 0:
        raise DataError("no posterior samples")
    S = len(samples)
    return [np.einsum("snk,sdk->knd", samples.X, w) / S for w in samples.W]


def component_effect(samples: PosteriorSamples, k: int) -> list[np.ndarray]:
    """Average over snapshots of ``X[:, k] W_m[:, k]'`` for each block m."""
    if not 0 <= k < samples.K_active:
        raise DataError(f"component index {k} out of range for {samples.K_active} components")
    S = len(samples)
    return [np.einsum("sn,sd->nd", samples.X[:, :, k], w[:, :, k]) / S for w in samples.W]


def flatten_effects(effects: list[np.ndarray]) -> np.ndarray:
    """(K, N * total_D) matrix of per-component effects concatenated over blocks."""
    return np.concatenate([e.reshape(e.shape[0], -1) for e in effects], axis=1)


def correlation_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlations between the rows of ``a`` and of ``b``; zero for constant rows."""
    def standardize(v):
        v = v - v.mean(axis=1, keepdims=True)
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)
    return np.clip(standardize(a) @ standardize(b).T, -1.0, 1.0)


def match_components(reference: np.ndarray, other: np.ndarray, cor_thr: float) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching by absolute correlation.

    Pairs are taken in order of decreasing ``|corr|`` (ties by lower
    reference, then lower partner index) while both members are unused, and
    accepted when ``|corr| >= cor_thr``.

    Returns
    -------
    list of (reference index, other index, signed correlation)
    """
    C = correlation_matrix(reference, other)
    A = np.abs(C)
    i, j = np.nonzero(A >= cor_thr)
    order = np.lexsort((j, i, -A[i, j]))
    used_i, used_j, out = set(), set(), []
    for t in order:
        a, b = int(i[t]), int(j[t])
        if a in used_i or b in used_j:
            continue
        used_i.add(a)
        used_j.add(b)
        out.append((a, b, float(C[a, b])))
    return sorted(out)


@dataclass(frozen=True, eq=False)
class RobustSet:
    """Matched occurrences of one component across chains.

    ``members`` holds (chain, component, sign) triples; the first member is
    the reference component. ``effect`` is the sign-aligned average effect
    per block.
    """

    members: tuple[tuple[int, int, int], ...]
    correlations: tuple[float, ...]
    occurrence: float
    effect: tuple[np.ndarray, ...]

    @property
    def key(self) -> frozenset:
        return frozenset((c, k) for c, k, _ in self.members)


@dataclass(frozen=True, eq=False)
class RobustComponents:
    sets: tuple[RobustSet, ...]
    cor_thr: float
    match_thr: float
    n_chains: int

    def __len__(self):
        return len(self.sets)

    def to_dict(self) -> dict:
        return {
            "cor_thr": self.cor_thr,
            "match_thr": self.match_thr,
            "n_chains": self.n_chains,
            "sets": [
                {
                    "members": [{"chain": c, "component": k, "sign": s} for c, k, s in rs.members],
                    "correlations": list(rs.correlations),
                    "occurrence": rs.occurrence,
                }
                for rs in self.sets
            ],
        }


def _sets_for_reference(flat, effects, ref, cor_thr, match_thr):
    n_chains = len(flat)
    K_ref = flat[ref].shape[0]
    members = {k: [(ref, k, 1)] for k in range(K_ref)}
    cors = {k: [1.0] for k in range(K_ref)}
    for c in range(n_chains):
        if c == ref:
            continue
        for a, b, r in match_components(flat[ref], flat[c], cor_thr):
            members[a].append((c, b, 1 if r >= 0 else -1))
            cors[a].append(r)

    sets = []
    for k in range(K_ref):
        mem, cor = members[k], cors[k]
        # drop members that disagree with the consensus until it is stable
        while True:
            avg = sum(s * flat[c][j] for c, j, s in mem) / len(mem)
            r = correlation_matrix(avg[None], np.array([s * flat[c][j] for c, j, s in mem]))[0]
            keep = r >= cor_thr
            if keep.all() or not keep.any():
                break
            mem = [m for m, ok in zip(mem, keep) if ok]
            cor = [x for x, ok in zip(cor, keep) if ok]
        if not keep.all():
            continue
        occurrence = len(mem) / n_chains
        if len(mem) < 2 or occurrence < match_thr:
            continue
        effect = tuple(sum(s * effects[c][m][j] for c, j, s in mem) / len(mem) for m in range(len(effects[0])))
        sets.append(RobustSet(tuple(mem), tuple(cor), occurrence, effect))
    sets.sort(key=lambda rs: -sum(float((e ** 2).sum()) for e in rs.effect))
    return sets


def robust_components(chains, cor_thr: float = 0.9, match_thr: float = 0.5,
                      all_references: bool = False) -> RobustComponents:
    """Find components that recur across independently sampled chains.

    The first chain is the reference. Each of its components is matched to
    at most one component of every other chain (see
    :func:`match_components`); sets found in at least ``match_thr`` of the
    chains are reported with their sign-aligned average effect. With
    ``all_references`` the procedure is repeated with every chain as
    reference and only sets found every time are kept.
    """
    chains = list(chains)
    if len(chains) < 2:
        raise DataError("robust_components needs at least 2 chains")
    first = chains[0]
    for c in chains[1:]:
        if c.dims != first.dims or c.n_obs != first.n_obs:
            raise DataError("chains were trained on differently shaped data")
    if not 0 < cor_thr <= 1 or not 0 < match_thr <= 1:
        raise DataError("cor_thr and match_thr must lie in (0, 1]")
    effects = [component_effects(c) for c in chains]
    flat = [flatten_effects(e) for e in effects]
    sets = _sets_for_reference(flat, effects, 0, cor_thr, match_thr)
    if all_references:
        for ref in range(1, len(chains)):
            keys = {rs.key for rs in _sets_for_reference(flat, effects, ref, cor_thr, match_thr)}
            sets = [rs for rs in sets if rs.key in keys]
    return RobustComponents(tuple(sets), cor_thr, match_thr, len(chains))
