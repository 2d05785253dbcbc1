import numpy as np
import pytest

from gfa.errors import DataError
from gfa.predict import reconstruction
from gfa.robust import (
    component_effect,
    component_effects,
    correlation_matrix,
    match_components,
    robust_components,
)

from oracles import fake_samples, permuted_chain, random_chain


def test_component_effect_outer_product():
    s = fake_samples([[[1.0, 0.0], [2.0, 0.0]]], [[[[3.0, 5.0]]]])
    np.testing.assert_array_equal(component_effect(s, 0)[0], [[3.0], [6.0]])
    np.testing.assert_array_equal(component_effect(s, 1)[0], 0.0)
    with pytest.raises(DataError):
        component_effect(s, 2)


def test_effects_sum_to_reconstruction(small_fit):
    samples, _ = small_fit
    rec = reconstruction(samples, denormalize=False)
    for m, e in enumerate(component_effects(samples)):
        np.testing.assert_allclose(e.sum(axis=0), rec.mean[m], rtol=0, atol=1e-10)
    for k in range(samples.K_active):
        np.testing.assert_allclose(component_effect(samples, k)[1], component_effects(samples)[1][k], atol=1e-12)


def test_correlation_matrix_oracle(rng):
    a, b = rng.standard_normal((3, 20)), rng.standard_normal((2, 20))
    expected = np.corrcoef(np.vstack([a, b]))[:3, 3:]
    np.testing.assert_allclose(correlation_matrix(a, b), expected, atol=1e-12)
    assert correlation_matrix(np.ones((1, 5)), a[:, :5])[0].tolist() == [0.0, 0.0, 0.0]


def test_matching_is_one_to_one_with_lower_index_ties():
    ref = np.array([[1.0, 2.0, 3.0, 4.0]])
    other = np.array([[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]])
    assert match_components(ref, other, 0.9) == [(0, 0, pytest.approx(1.0))]
    assert match_components(other, ref, 0.9) == [(0, 0, pytest.approx(1.0))]


def test_identical_chains_all_robust(small_fit):
    s, _ = small_fit
    out = robust_components([s, s], 0.9, 0.5)
    assert len(out) == s.K_active
    for rs in out.sets:
        assert rs.occurrence == 1.0
        assert np.allclose(rs.correlations, 1.0)


def test_permuted_and_flipped_chain(small_fit):
    s, _ = small_fit
    K = s.K_active
    perm = np.roll(np.arange(K), 1)
    signs = np.ones(K)
    signs[0] = -1
    t = permuted_chain(s, perm, signs)
    base = robust_components([s, s], 0.9, 0.5)
    out = robust_components([s, t], 0.9, 0.5)
    assert len(out) == len(base)
    for a, b in zip(base.sets, out.sets):
        (c0, k0, _), (c1, k1, sign) = b.members
        assert a.members[0][1] == k0
        assert perm[k1] == k0
        assert sign == signs[k1]
        assert abs(b.correlations[1]) == pytest.approx(1.0)
        for ea, eb in zip(a.effect, b.effect):
            np.testing.assert_allclose(eb, ea, atol=1e-12)


def test_null_chains_rarely_match():
    hits = [len(robust_components([random_chain(2 * t), random_chain(2 * t + 1)], 0.9, 0.5)) for t in range(20)]
    assert sum(h == 0 for h in hits) >= 19


def _canonical(out, relabel):
    return sorted(sorted((relabel[c], k, s) for c, k, s in rs.members) for rs in out.sets)


def test_invariant_to_order_of_other_chains(small_fit):
    s, _ = small_fit
    K = s.K_active
    t = permuted_chain(s, np.arange(K)[::-1], np.ones(K))
    u = random_chain(0, n=s.n_obs, dims=s.dims, K=3)
    a = robust_components([s, t, u], 0.9, 0.5)
    b = robust_components([s, u, t], 0.9, 0.5)
    assert _canonical(a, {0: 0, 1: 1, 2: 2}) == _canonical(b, {0: 0, 1: 2, 2: 1})


def test_set_average_correlates_with_members(small_fit):
    s, _ = small_fit
    K = s.K_active
    t = permuted_chain(s, np.arange(K), -np.ones(K))
    out = robust_components([s, t, s], 0.9, 0.5)
    for rs in out.sets:
        avg = np.concatenate([e.ravel() for e in rs.effect])
        for c, k, sign in rs.members:
            chain = (s, t, s)[c]
            member = np.concatenate([e.ravel() for e in component_effect(chain, k)]) * sign
            assert np.corrcoef(avg, member)[0, 1] >= 0.9


def test_all_references_mode(small_fit):
    s, _ = small_fit
    out = robust_components([s, s, s], 0.9, 0.5, all_references=True)
    assert len(out) == s.K_active


def test_rejections(small_fit):
    s, _ = small_fit
    with pytest.raises(DataError, match="at least 2"):
        robust_components([s])
    with pytest.raises(DataError, match="differently shaped"):
        robust_components([s, random_chain(0)])
    with pytest.raises(DataError):
        robust_components([s, s], cor_thr=0.0)


def test_thresholds_reported(small_fit):
    s, _ = small_fit
    d = robust_components([s, s], 0.8, 0.6).to_dict()
    assert (d["cor_thr"], d["match_thr"], d["n_chains"]) == (0.8, 0.6, 2)
