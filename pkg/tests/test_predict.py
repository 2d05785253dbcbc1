import numpy as np
import pytest

from gfa.data_model import assemble_dataset
from gfa.errors import DataError
from gfa.predict import predict_new_samples, prediction_batch, reconstruction
from gfa.preprocess import NormalizationRecord

from oracles import fake_samples


def test_single_snapshot_reconstruction():
    s = fake_samples([[[1.0], [2.0]]], [[[[3.0]]]])
    r = reconstruction(s)
    np.testing.assert_array_equal(r.mean[0], [[3.0], [6.0]])
    np.testing.assert_allclose(r.sd[0], 0.0, atol=1e-100)
    assert r.n_samples == 1


def test_two_point_variance_uses_n():
    s = fake_samples([[[0.0], [0.0]], [[1.0], [1.0]]], [[[[2.0]]], [[[2.0]]]])
    r = reconstruction(s)
    np.testing.assert_allclose(r.mean[0], 1.0)
    np.testing.assert_allclose(r.sd[0], 1.0)


def test_noise_floor_and_per_feature_noise():
    s = fake_samples([[[0.0], [1.0]], [[1.0], [3.0]]], [[np.array([[1.0], [2.0]])]] * 2,
                     taus=[[[4.0, 1.0]], [[4.0, 0.5]]])
    r = reconstruction(s)
    floor = np.array([1 / 4, (1 + 2) / 2])
    assert np.all(r.sd[0] ** 2 >= floor - 1e-12)
    # entry (0, 1): predictions 0 and 2, variance 1 plus floor 1.5
    assert r.sd[0][0, 1] == pytest.approx(np.sqrt(1 + 1.5))


def test_reconstruction_denormalizes():
    rec = NormalizationRecord("center_scale_features", (np.array([10.0]),), (np.array([2.0]),), (1.0,))
    s = fake_samples([[[1.0], [2.0]]], [[[[3.0]]]], taus=[[4.0]], normalization=rec)
    r = reconstruction(s)
    np.testing.assert_allclose(r.mean[0], [[16.0], [22.0]])
    np.testing.assert_allclose(r.sd[0], 2 * 0.5)
    raw = reconstruction(s, denormalize=False)
    assert not raw.denormalized and raw.mean[0][0, 0] == 3.0


def test_pooled_chains_must_match():
    a = fake_samples([[[1.0], [2.0]]], [[[[3.0]]]])
    b = fake_samples([[[1.0], [2.0], [3.0]]], [[[[3.0]]]])
    with pytest.raises(DataError):
        reconstruction([a, b])


def test_new_sample_conditional_mean_closed_form():
    w_obs = np.array([[0.7], [-1.2], [0.4]])
    w_miss = np.array([[2.0], [0.5]])
    tau = 3.0
    s = fake_samples([np.zeros((4, 1))], [[w_obs, w_miss]], taus=[[tau, tau]])
    y = np.array([[1.0, -0.5, 0.2], [0.0, 0.3, -2.0]])
    batch = prediction_batch(s, {"b0": y})
    out = predict_new_samples(s, batch, denormalize=False)
    w = w_obs[:, 0]
    x = tau * (y @ w) / (1 + tau * w @ w)
    np.testing.assert_allclose(out.mean[1], np.outer(x, w_miss[:, 0]), rtol=1e-12)
    np.testing.assert_allclose(out.mean[0], np.outer(x, w), rtol=1e-12)


def test_row_without_evidence_predicts_zero():
    s = fake_samples([np.zeros((4, 1))], [[np.ones((2, 1)), np.ones((3, 1))]], taus=[[1.0, 1.0]])
    y = np.array([[1.0, 2.0], [np.nan, np.nan]])
    out = predict_new_samples(s, prediction_batch(s, {"b0": y}), denormalize=False)
    np.testing.assert_array_equal(out.mean[1][1], 0.0)


def test_new_batch_validation():
    s = fake_samples([np.zeros((4, 1))], [[np.ones((2, 1)), np.ones((3, 1))]], taus=[[1.0, 1.0]])
    with pytest.raises(DataError, match="no observed blocks"):
        predict_new_samples(s, prediction_batch(s, {"b0": np.full((2, 2), np.nan)}))
    wrong = assemble_dataset({"b0": np.ones((2, 3)), "b1": np.ones((2, 3))})
    with pytest.raises(DataError, match="dimensions"):
        predict_new_samples(s, wrong)
    with pytest.raises(DataError, match="labels"):
        predict_new_samples(s, assemble_dataset({"x": np.ones((2, 2)), "b1": np.ones((2, 3))}))
    with pytest.raises(DataError, match="unknown"):
        prediction_batch(s, {"zz": np.ones((2, 2))})


def test_training_batch_agrees_with_reconstruction(small_fit):
    samples, data = small_fit
    rec = reconstruction(samples, denormalize=False)
    new = predict_new_samples(samples, data, denormalize=False)
    across = np.sqrt(np.maximum(rec.sd[0] ** 2 - np.mean(1 / samples.tau[0]), 0))
    se = across / np.sqrt(len(samples))
    inside = np.abs(new.mean[0] - rec.mean[0]) <= 3 * se + 1e-12
    assert inside.mean() >= 0.95


def test_sampled_latents_widen_intervals(small_fit):
    samples, data = small_fit
    batch = prediction_batch(samples, {data.labels[0]: data.values[0][:10]})
    point = predict_new_samples(samples, batch, denormalize=False)
    drawn = predict_new_samples(samples, batch, point_estimate=False, seed=3, denormalize=False)
    assert drawn.sd[1].mean() > point.sd[1].mean()
    again = predict_new_samples(samples, batch, point_estimate=False, seed=3, denormalize=False)
    np.testing.assert_array_equal(drawn.mean[1], again.mean[1])


def test_posterior_mean_projection_mode(small_fit):
    samples, data = small_fit
    batch = prediction_batch(samples, {data.labels[0]: data.values[0][:10]})
    out = predict_new_samples(samples, batch, use_mean_W=True, denormalize=False)
    assert out.n_samples == 1
    full = predict_new_samples(samples, batch, denormalize=False)
    assert np.corrcoef(out.mean[1].ravel(), full.mean[1].ravel())[0, 1] > 0.9
