import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cyclecorr.metrics import (EmptyEvaluationError, depth_metrics, disparity_to_depth,
                               flow_metrics, garg_crop, stereo_vertical_diagnostic)


def const(h, w, u, v=0.0):
    f = np.zeros((h, w, 2))
    f[..., 0], f[..., 1] = u, v
    return f


def test_perfect_prediction():
    gt = const(5, 6, 3.0, -1.0)
    r = flow_metrics(gt, gt)
    assert r.epe_all == 0.0 and r.fl_all == 0.0


def test_fl_outlier_closed_forms():
    gt = const(4, 4, 6.0, 8.0)  # magnitude 10
    r = flow_metrics(gt + const(4, 4, 4.0), gt)
    assert r.epe_all == 4.0 and r.fl_all == 1.0
    r = flow_metrics(gt + const(4, 4, 2.0), gt)
    assert r.epe_all == 2.0 and r.fl_all == 0.0
    # large ground truth: 4 px error is below 5 % of magnitude 100
    big = const(4, 4, 100.0)
    assert flow_metrics(big + const(4, 4, 4.0), big).fl_all == 0.0


def test_splits_and_recombination():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(10, 12, 2)) * 5
    pred = gt + rng.normal(size=gt.shape)
    valid = rng.random((10, 12)) > 0.2
    noc = rng.random((10, 12)) > 0.3
    r = flow_metrics(pred, gt, valid, noc)
    assert r.n_noc + r.n_occ == r.n_all
    assert abs(r.epe_all * r.n_all - (r.epe_noc * r.n_noc + r.epe_occ * r.n_occ)) < 1e-12 * r.n_all * 10
    e = np.linalg.norm(pred - gt, axis=-1)
    assert r.epe_noc == pytest.approx(e[valid & noc].mean(), rel=1e-14)


def test_empty_evaluation():
    with pytest.raises(EmptyEvaluationError):
        flow_metrics(const(3, 3, 0), const(3, 3, 0), valid=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        flow_metrics(const(3, 3, 0), const(3, 4, 0))


vec = arrays(np.float64, (4, 5, 2), elements=st.floats(-20, 20))


@given(vec, vec, st.floats(-50, 50), st.floats(-50, 50))
def test_epe_translation_consistent(pred, gt, cu, cv):
    shift = const(4, 5, cu, cv)
    a = flow_metrics(pred, gt).epe_all
    b = flow_metrics(pred + shift, gt + shift).epe_all
    assert a == pytest.approx(b, abs=1e-9)


@given(vec, vec)
def test_fl_in_unit_interval(pred, gt):
    r = flow_metrics(pred, gt)
    assert 0.0 <= r.fl_all <= 1.0
    if np.all(np.linalg.norm(pred - gt, axis=-1) < 3):
        assert r.fl_all == 0.0


def test_depth_identity_and_closed_forms():
    fb = 100.0
    gt = np.full((4, 4), 10.0)
    r = depth_metrics(np.full((4, 4), fb / 10.0), gt, fb)
    assert (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) == (0.0, 0.0, 0.0, 0.0)
    assert (r.delta1, r.delta2, r.delta3) == (1.0, 1.0, 1.0)
    r = depth_metrics(np.full((4, 4), fb / 12.0), gt, fb)
    assert r.abs_rel == pytest.approx(0.2) and r.sq_rel == pytest.approx(0.4)
    assert r.rmse == pytest.approx(2.0)


def test_delta_is_strict():
    fb = 1.0
    gt = np.full((3, 3), 8.0)
    # predicted depth exactly 1.25 * gt; disparity chosen so fb / d is exact
    r = depth_metrics(np.full((3, 3), 0.1), gt, fb)
    assert 1.0 / 0.1 / 8.0 == 1.25
    assert r.delta1 == 0.0 and r.delta2 == 1.0 and r.delta3 == 1.0


def test_depth_uses_horizontal_magnitude_and_caps():
    corr = const(2, 2, -5.0, 3.0)
    r = depth_metrics(corr, np.full((2, 2), 20.0), 100.0)
    assert r.abs_rel == 0.0
    far = depth_metrics(np.full((2, 2), 1e-9), np.full((2, 2), 80.0), 100.0)
    assert far.abs_rel == 0.0  # both sides capped at 80 m


def test_depth_ignores_masked_and_cropped_pixels():
    gt = np.full((10, 10), 10.0)
    pred = np.full((10, 10), 10.0)
    pred[0, 0] = 1.0
    valid = np.ones((10, 10), bool)
    valid[0, 0] = False
    assert depth_metrics(pred, gt, 100.0, valid=valid).abs_rel == 0.0
    assert depth_metrics(pred, gt, 100.0, crop=(1, 10, 1, 10)).abs_rel == 0.0
    gt[5, 5] = 0.0
    assert depth_metrics(pred, gt, 100.0, valid=valid).n == 98
    with pytest.raises(ValueError):
        depth_metrics(pred, gt, 0.0)
    with pytest.raises(EmptyEvaluationError):
        depth_metrics(pred, np.zeros((10, 10)), 1.0)


@given(arrays(np.float64, (5, 5), elements=st.floats(0.5, 60)),
       arrays(np.float64, (5, 5), elements=st.floats(0.5, 60)))
def test_delta_rates_ordered(pred_depth, gt):
    r = depth_metrics(100.0 / pred_depth, gt, 100.0)
    assert r.delta1 <= r.delta2 <= r.delta3


def test_disparity_to_depth_and_crop():
    assert disparity_to_depth(np.array([4.0, -4.0]), 100.0).tolist() == [25.0, 25.0]
    t, b, l, r = garg_crop(375, 1242)
    assert 0 < t < b <= 375 and 0 < l < r <= 1242


def test_vertical_diagnostic():
    assert stereo_vertical_diagnostic(np.zeros((3, 3, 2))) == 0.0
    assert stereo_vertical_diagnostic(const(3, 3, 2.0, 0.5)) == 0.5
    f = np.random.default_rng(1).normal(size=(6, 7, 2))
    assert stereo_vertical_diagnostic(f) == pytest.approx(np.mean(np.abs(f[..., 1])), rel=1e-14)
