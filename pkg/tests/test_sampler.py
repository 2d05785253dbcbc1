import warnings

import numpy as np
import pytest

from gfa.data_model import assemble_dataset
from gfa.errors import ComplexityWarning
from gfa.model import ModelOptions, init_state, make_rng
from gfa.predict import reconstruction
from gfa.preprocess import normalize
from gfa.sampler import (
    PruningHistory,
    component_variance,
    geweke_diagnostic,
    prune_components,
    run_chain,
    run_chains,
    sweep,
)
from gfa.store import find_chain_dirs, load_samples, save_samples
from gfa.synthetic import generate_gfa

from conftest import quiet_chain


def _noise_data(n=40, dims=(6, 5), seed=0):
    rng = np.random.default_rng(seed)
    return assemble_dataset([(f"b{m}", rng.standard_normal((n, d))) for m, d in enumerate(dims)])


# ---------------------------------------------------------------- pruning

def test_prune_zero_latent_column_after_patience():
    data = _noise_data()
    opts = ModelOptions(K_init=3, prune_patience=5)
    state = init_state(data, opts, 0)
    state.X[:, 1] = 0.0
    hist = PruningHistory()
    for it in range(4):
        prune_components(state, data, opts, hist, it)
    assert state.K_active == 3 and hist.streaks[1] == 4
    prune_components(state, data, opts, hist, 4)
    assert state.K_active == 2
    assert state.component_ids.tolist() == [0, 2]
    assert [(e.sweep, e.component, e.reason) for e in hist.events] == [(4, 1, "variance below tolerance")]


def test_streak_resets_when_variance_recovers():
    data = _noise_data()
    opts = ModelOptions(K_init=2, prune_patience=3)
    state = init_state(data, opts, 0)
    hist = PruningHistory()
    saved = state.X[:, 0].copy()
    state.X[:, 0] = 0
    prune_components(state, data, opts, hist, 0)
    prune_components(state, data, opts, hist, 1)
    state.X[:, 0] = saved
    prune_components(state, data, opts, hist, 2)
    assert hist.streaks[0] == 0 and state.K_active == 2


def test_prune_all_excluded_immediately():
    data = _noise_data()
    opts = ModelOptions(K_init=3, loading_sparsity="element_spike_slab")
    state = init_state(data, opts, 0)
    for w, z in zip(state.W, state.z_W):
        w[:, 2] = 0
        z[:, 2] = 0
    hist = PruningHistory()
    prune_components(state, data, opts, hist, 0)
    assert state.K_active == 2
    assert hist.events[0].reason == "all excluded"
    state.check()


def test_last_component_is_kept():
    data = _noise_data()
    opts = ModelOptions(K_init=3, prune_patience=1)
    state = init_state(data, opts, 0)
    state.X[:] = 0
    state.X[0, 2] = 1e-6
    hist = PruningHistory()
    prune_components(state, data, opts, hist, 0)
    assert state.component_ids.tolist() == [2]
    assert [e.component for e in hist.events] == [0, 1]


def test_component_variance_oracle():
    data = _noise_data(n=5, dims=(2, 3))
    state = init_state(data, ModelOptions(K_init=2), 3)
    total = sum(np.nansum(v ** 2) for v in data.values)
    expected = [sum(np.sum(np.outer(state.X[:, k], w[:, k]) ** 2) for w in state.W) / total for k in range(2)]
    np.testing.assert_allclose(component_variance(state, data), expected, rtol=1e-12)


# ---------------------------------------------------------------- Geweke

def test_geweke_constant_trace():
    assert geweke_diagnostic([3.0] * 100) == 0.0


def test_geweke_too_short():
    with pytest.raises(ValueError, match="trace too short"):
        geweke_diagnostic(np.arange(39.0))


def test_geweke_oracle():
    x = np.random.default_rng(0).normal(size=200)
    a, b = x[:20], x[100:]
    expected = (a.mean() - b.mean()) / np.sqrt(a.var(ddof=1) / 20 + b.var(ddof=1) / 100)
    assert geweke_diagnostic(x) == pytest.approx(expected, rel=1e-12)


def test_geweke_flags_trend():
    assert abs(geweke_diagnostic(np.arange(1.0, 1001.0))) > 10


# ---------------------------------------------------------------- chains

def test_run_chain_determinism():
    data = _noise_data()
    opts = ModelOptions(K_init=4, iterations=60, burn_in=30, thin=3, convergence_check=False)
    a = quiet_chain(data, opts, seed=7)
    b = quiet_chain(data, opts, seed=7)
    c = quiet_chain(data, opts, seed=8)
    np.testing.assert_array_equal(a.trace, b.trace)
    np.testing.assert_array_equal(a.X, b.X)
    for wa, wb in zip(a.W, b.W):
        np.testing.assert_array_equal(wa, wb)
    assert a.pruning == b.pruning
    assert not np.array_equal(a.trace, c.trace)


def test_run_chain_bookkeeping():
    data = _noise_data()
    opts = ModelOptions(K_init=4, iterations=50, burn_in=20, thin=4)
    s = quiet_chain(data, opts, seed=0)
    assert s.trace.shape == (50,)
    assert len(s) == opts.n_samples == 8
    assert s.geweke_z is None  # too few thinned points
    assert len({snap.K_active for snap in s.snapshots}) == 1
    with pytest.raises(ValueError):
        s.snapshots[0].X[0, 0] = 1.0


def test_invariants_and_monotone_pruning_every_sweep():
    syn = generate_gfa(n=50, dims=(10, 8, 6), seed=2)
    data, _ = normalize(syn.data, "center")
    for extra in ({}, {"loading_sparsity": "element_spike_slab", "latent_sparsity": "element_spike_slab"},
                  {"noise_pooling": "per_feature", "ard_pooling": "global", "group_spike": False}):
        opts = ModelOptions(K_init=8, iterations=80, burn_in=40, **extra)
        state = init_state(data, opts, make_rng(0))
        rng = make_rng(1)
        hist = PruningHistory()
        ks = []
        for it in range(opts.iterations):
            sweep(state, data, opts, rng)
            state.check()
            if it < opts.burn_in:
                prune_components(state, data, opts, hist, it)
            ks.append(state.K_active)
        assert all(a >= b for a, b in zip(ks, ks[1:]))
        assert len(set(ks[opts.burn_in:])) == 1


def test_missing_entries_are_ignored():
    # chains over data with holes stay finite and reproducible
    rng = np.random.default_rng(4)
    y = rng.standard_normal((20, 4))
    y[3, 1] = np.nan
    data = assemble_dataset({"A": y, "B": rng.standard_normal((20, 3))})
    opts = ModelOptions(K_init=3, iterations=30, burn_in=10, thin=2)
    s1 = quiet_chain(data, opts, seed=0)
    assert np.isfinite(s1.trace).all()
    s2 = quiet_chain(data, opts, seed=0)
    np.testing.assert_array_equal(s1.trace, s2.trace)


def test_pure_noise_prunes_without_complexity_warning():
    data, _ = normalize(_noise_data(n=100, dims=(40, 30, 20), seed=9), "center")
    opts = ModelOptions(K_init=10, iterations=400, burn_in=200, thin=5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = run_chain(data, opts, seed=0)
    assert s.pruning
    assert s.K_active < 10
    assert not [w for w in caught if issubclass(w.category, ComplexityWarning)]


def test_complexity_warning_when_nothing_pruned():
    data, _ = normalize(_noise_data(), "center")
    opts = ModelOptions(K_init=2, iterations=20, burn_in=5, prune_patience=1000, group_spike=False)
    with pytest.warns(ComplexityWarning):
        s = run_chain(data, opts, seed=0)
    assert s.warnings


def test_joint_recovery_reconstruction_rmse():
    syn = generate_gfa(seed=11)
    data, record = normalize(syn.data, "center")
    opts = ModelOptions(K_init=10, iterations=1000, burn_in=500, thin=5)
    s = quiet_chain(data, opts, seed=0, normalization=record)
    pred = reconstruction(s).mean
    err = np.concatenate([(p - y).ravel() for p, y in zip(pred, syn.data.values)])
    assert np.sqrt(np.mean(err ** 2)) <= 1.1 * syn.noise_sd


def test_run_chains_seeds_and_jobs_agree():
    data = _noise_data()
    opts = ModelOptions(K_init=3, iterations=30, burn_in=10, thin=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        serial = run_chains(data, opts, 2, seed=5)
        parallel = run_chains(data, opts, 2, seed=5, jobs=2)
        single = run_chain(data, opts, seed=6)
    assert [c.seed for c in serial] == [5, 6]
    np.testing.assert_array_equal(serial[1].trace, single.trace)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.trace, b.trace)


# ---------------------------------------------------------------- persistence

def test_store_round_trip(tmp_path, small_fit):
    s, _ = small_fit
    save_samples(s, tmp_path / "chain_000")
    back = load_samples(tmp_path / "chain_000")
    assert back.labels == s.labels and back.dims == s.dims and back.seed == s.seed
    assert back.options == s.options
    assert back.pruning == s.pruning and back.geweke_z == s.geweke_z
    np.testing.assert_array_equal(back.trace, s.trace)
    np.testing.assert_array_equal(back.X, s.X)
    for m in range(len(s.dims)):
        np.testing.assert_array_equal(back.W[m], s.W[m])
        np.testing.assert_array_equal(back.tau[m], s.tau[m])
    np.testing.assert_array_equal(back.component_ids, s.component_ids)
    for a, b in zip(back.normalization.means, s.normalization.means):
        np.testing.assert_array_equal(a, b)
    assert find_chain_dirs(tmp_path) == [tmp_path / "chain_000"]
    assert find_chain_dirs(tmp_path / "chain_000") == [tmp_path / "chain_000"]


def test_store_is_byte_stable(tmp_path, small_fit):
    s, _ = small_fit
    save_samples(s, tmp_path / "a")
    save_samples(load_samples(tmp_path / "a"), tmp_path / "b")
    for name in ("manifest.json", "samples.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
