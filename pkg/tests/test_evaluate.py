"""Metric tests: exactness, scale covariance, filtering, report determinism."""

import numpy as np
import pytest

from taalab import evaluate


def padded(arr):
    return np.concatenate([arr, arr[:, :1]], axis=1)


def make_sets(seed=0, n=4, zero_sample=None):
    rng = np.random.default_rng(seed)
    truth, pred = {}, {}
    for i in range(n):
        sid = f"p{i:03d}k0"
        t_ce = rng.uniform(0.0, 0.4, size=(9, 8))
        t_d = rng.uniform(0.0, 0.25, size=(9, 8))
        if zero_sample == i:
            t_ce = np.zeros((9, 8))
        truth[sid] = (padded(t_ce), padded(t_d))
        pred[sid] = (padded(t_ce + rng.normal(0, 0.01, t_ce.shape)),
                     padded(t_d + rng.normal(0, 0.01, t_d.shape)))
    return truth, pred


def test_perfect_prediction_is_zero():
    truth, _ = make_sets()
    mean, stacked, per_sample, excluded = evaluate.relative_l2(truth, truth)
    assert mean == {"theta_ce": 0.0, "theta_delta": 0.0}
    assert stacked == {"theta_ce": 0.0, "theta_delta": 0.0}
    assert not excluded


def test_doubling_gives_exactly_one():
    truth, _ = make_sets(seed=1)
    doubled = {sid: (2 * a, 2 * b) for sid, (a, b) in truth.items()}
    mean, stacked, _, _ = evaluate.relative_l2(doubled, truth)
    assert mean["theta_ce"] == 1.0 and mean["theta_delta"] == 1.0
    assert stacked["theta_ce"] == 1.0 and stacked["theta_delta"] == 1.0


def test_scale_covariance():
    truth, pred = make_sets(seed=2)
    mean_a, _, _, _ = evaluate.relative_l2(pred, truth)
    scaled_t = {sid: (7 * a, 7 * b) for sid, (a, b) in truth.items()}
    scaled_p = {sid: (7 * a, 7 * b) for sid, (a, b) in pred.items()}
    mean_b, _, _, _ = evaluate.relative_l2(scaled_p, scaled_t)
    for k in evaluate.INSULTS:
        assert mean_b[k] == pytest.approx(mean_a[k], rel=1e-14)


def test_zero_norm_sample_excluded_with_warning():
    truth, pred = make_sets(seed=3, zero_sample=1)
    with pytest.warns(UserWarning, match="zero-norm"):
        mean, _, per_sample, excluded = evaluate.relative_l2(pred, truth)
    assert any(e[0] == "p001k0" and e[1] == "theta_ce" for e in excluded)
    assert "theta_ce" not in per_sample["p001k0"]
    assert np.isfinite(mean["theta_ce"])


def test_missing_ids_error():
    truth, pred = make_sets(seed=4)
    pred.pop("p002k0")
    with pytest.raises(KeyError, match="p002k0"):
        evaluate.relative_l2(pred, truth)


def test_full_mask_equals_unfiltered():
    truth, pred = make_sets(seed=5)
    masks = {sid: np.ones((9, 8), dtype=bool) for sid in truth}
    mean_u, stacked_u, _, _ = evaluate.relative_l2(pred, truth)
    mean_f, stacked_f, _, _ = evaluate.filtered_relative_l2(pred, truth, masks)
    for k in evaluate.INSULTS:
        assert mean_f[k] == mean_u[k]
        assert stacked_f[k] == stacked_u[k]


def test_empty_mask_excluded():
    truth, pred = make_sets(seed=6, n=2)
    masks = {sid: np.zeros((9, 8), dtype=bool) for sid in truth}
    masks["p000k0"][3:5, 2:4] = True
    with pytest.warns(UserWarning, match="empty insult region"):
        mean, _, per_sample, excluded = evaluate.filtered_relative_l2(
            pred, truth, masks)
    assert "p001k0" not in per_sample
    assert np.isfinite(mean["theta_ce"])


def test_filtered_perfect_is_zero():
    truth, _ = make_sets(seed=7, n=2)
    masks = {sid: np.zeros((9, 8), dtype=bool) for sid in truth}
    for m in masks.values():
        m[2:6, 1:5] = True
    mean, _, _, _ = evaluate.filtered_relative_l2(truth, truth, masks)
    assert mean == {"theta_ce": 0.0, "theta_delta": 0.0}


def test_abs_error_maps():
    truth, pred = make_sets(seed=8, n=2)
    err = evaluate.abs_error_maps(pred, truth)
    sid = "p000k0"
    expected = np.asarray(pred[sid][0]) - np.asarray(truth[sid][0])
    assert np.array_equal(err[sid][0].values, expected)
    # identical arguments give the zero map
    zero = evaluate.abs_error_maps(truth, truth)[sid][0].values
    assert not zero.any()
    # constant offset shows up as a constant map
    off = {sid: (truth[sid][0] + 0.3, truth[sid][1]) for sid in truth}
    c = evaluate.abs_error_maps(off, truth)[sid][0].values
    assert np.allclose(c, 0.3, atol=1e-15)
    # swapping the arguments negates the map
    swapped = evaluate.abs_error_maps(truth, pred)[sid][0].values
    assert np.array_equal(swapped, -err[sid][0].values)


def test_report_round_trip_and_determinism(tmp_path):
    rep = evaluate.EvalReport(
        model_id="m", dataset_hash="abc",
        metrics={k: {"rel_l2_mean": 0.1, "rel_l2_stacked": 0.09,
                     "rel_l2_mean_filtered": 0.08,
                     "rel_l2_stacked_filtered": 0.07}
                 for k in evaluate.INSULTS},
        per_sample={"p000k0": {"theta_ce": 0.1}})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    rep.save(a)
    rep.save(b)
    assert a.read_bytes() == b.read_bytes()
    back = evaluate.EvalReport.load(a)
    assert back.metrics == rep.metrics
    table = evaluate.render_report_table([rep])
    assert "Eln Fiber Integrity" in table and "Mechanosensing" in table
    assert "0.1000" in table
