"""Synthetic multi-view data with known factorizations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import MultiViewData, assemble_dataset

# Per-(block, component) loading scales of the default design: three
# components shared by all blocks, each with its own strength profile over
# the blocks, followed by one component specific to each block. Shared
# components with identical profiles would only be identified up to a
# rotation among themselves.
DEFAULT_SCALES = np.array([
    [1.5, 1.0, 0.5, 1.0, 0.0, 0.0],
    [1.0, 0.5, 1.5, 0.0, 1.0, 0.0],
    [0.5, 1.5, 1.0, 0.0, 0.0, 1.0],
])


@dataclass(frozen=True, eq=False)
class SyntheticData:
    """Generated data with its ground-truth parameters."""

    data: MultiViewData
    X: np.ndarray
    W: tuple[np.ndarray, ...]
    noise_sd: float

    @property
    def activity(self) -> np.ndarray:
        """M x K boolean matrix of planted component activity."""
        return np.array([np.any(w != 0, axis=0) for w in self.W])

    @property
    def signal(self) -> list[np.ndarray]:
        return [self.X @ w.T for w in self.W]

    def effects(self) -> list[list[np.ndarray]]:
        """Per component, the per-block data-space effects x_k w_k'."""
        return [[np.outer(self.X[:, k], w[:, k]) for w in self.W] for k in range(self.X.shape[1])]


def generate_gfa(n: int = 100, dims=(40, 30, 20), scales=DEFAULT_SCALES, noise_sd: float = 1.0,
                 seed: int = 0) -> SyntheticData:
    """Dense latent factors with block-wise (group) sparse loadings.

    ``scales[m, k]`` is the standard deviation of the loadings of component
    k in block m; zero switches the component off in that block.
    """
    rng = np.random.default_rng(seed)
    scales = np.asarray(scales, dtype=float)
    if scales.shape[0] != len(dims):
        raise ValueError("scales needs one row per block")
    X = rng.standard_normal((n, scales.shape[1]))
    W = tuple(rng.standard_normal((d, scales.shape[1])) * scales[m] for m, d in enumerate(dims))
    Y = [X @ w.T + noise_sd * rng.standard_normal((n, w.shape[0])) for w in W]
    data = assemble_dataset([(f"view{m + 1}", y) for m, y in enumerate(Y)])
    return SyntheticData(data, X, W, noise_sd)


def generate_bicluster(n: int = 100, dims=(40, 30, 20), k: int = 4, density: float = 0.3,
                       noise_sd: float = 1.0, seed: int = 0) -> SyntheticData:
    """Element-wise sparse X and W: each component is a bicluster.

    Each entry of X and W is nonzero with probability ``density``. Nonzero
    latent values are standard normal; nonzero loadings have magnitude
    uniform on [1, 2] with a random sign.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, k)) * (rng.random((n, k)) < density)
    W = []
    for d in dims:
        mag = rng.uniform(1.0, 2.0, (d, k)) * rng.choice([-1.0, 1.0], (d, k))
        W.append(mag * (rng.random((d, k)) < density))
    W = tuple(W)
    Y = [X @ w.T + noise_sd * rng.standard_normal((n, w.shape[0])) for w in W]
    data = assemble_dataset([(f"view{m + 1}", y) for m, y in enumerate(Y)])
    return SyntheticData(data, X, W, noise_sd)
