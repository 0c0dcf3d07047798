import json

import numpy as np
import pytest
from _oracles import (oracle_accuracy, oracle_cost_volume_loss,
                      oracle_disparity_loss, oracle_gradient_loss,
                      oracle_temporal_metrics)

from videostereo.cost_volume import CostVolume
from videostereo.errors import (ConfigurationError, DomainError,
                                UndefinedLossError)
from videostereo.geometry import CameraModel, Pose
from videostereo.metrics import (LossWeights, MetricsReport, accuracy_metrics,
                                 bilinear_sample, cost_volume_loss,
                                 disparity_loss, gradient_loss, psi,
                                 temporal_metrics, total_loss)
from videostereo.refinement import GradientField

CAM = CameraModel(fx=100.0, fy=100.0, cx=3.5, cy=3.5,
                  baseline=0.5, width=8, height=8)


def _volume(values):
    return CostVolume(np.asarray(values, dtype=np.float64))


# ------------------------------------------------------------------- psi

def test_psi_integer_returns_column_entry():
    col = np.linspace(-0.5, 0.9, 8)
    assert psi(col, 2.0) == col[2]
    assert psi(col, 0.0) == col[0]
    assert psi(col, 7.0) == col[7]   # top hypothesis must not index past the end


def test_psi_midpoint_and_quarter():
    col = np.zeros(6)
    col[2], col[3] = 0.8, 0.6
    assert psi(col, 2.5) == pytest.approx(0.7)
    assert psi(col, 2.25) == pytest.approx(0.75)


def test_psi_out_of_range_rejected():
    col = np.zeros(4)
    with pytest.raises(DomainError):
        psi(col, -0.1)
    with pytest.raises(DomainError):
        psi(col, 3.01)


def test_psi_piecewise_linear_within_cell():
    rng = np.random.default_rng(3)
    col = rng.uniform(-1, 1, size=10)
    d1, d2, alpha = 4.2, 4.9, 0.3
    blend = alpha * psi(col, d1) + (1 - alpha) * psi(col, d2)
    assert psi(col, alpha * d1 + (1 - alpha) * d2) == pytest.approx(blend)


# ------------------------------------------------------- cost volume loss

def test_volume_loss_perfect_volume_is_zero():
    values = np.full((1, 1, 16), 0.4)
    values[0, 0, 5] = 1.0
    gt = np.full((1, 1), 5.0)
    assert cost_volume_loss(_volume(values), gt) == pytest.approx(0.0)


def test_volume_loss_arithmetic_example():
    values = np.full((1, 1, 16), 0.5)
    values[0, 0, 5] = 0.6
    gt = np.full((1, 1), 5.0)
    # 1 - 0.6 + max(0.5 + 0.5 - 0.6, 0)
    assert cost_volume_loss(_volume(values), gt) == pytest.approx(0.8)


def test_volume_loss_empty_contribution_raises():
    values = np.zeros((2, 2, 8))
    gt = np.full((2, 2), 3.0)
    with pytest.raises(UndefinedLossError):
        cost_volume_loss(_volume(values), gt, valid_gt=np.zeros((2, 2), bool))


def test_volume_loss_skips_out_of_range_gt():
    values = np.full((1, 2, 8), 0.2)
    values[0, 0, 6] = 0.9
    gt = np.array([[6.0, 25.0]])
    loss = cost_volume_loss(_volume(values), gt)
    oracle = oracle_cost_volume_loss(values, gt, np.ones((1, 2), bool), 0.5)
    assert loss == pytest.approx(oracle)


def test_volume_loss_matches_enumeration_oracle():
    rng = np.random.default_rng(11)
    for _ in range(25):
        height, width, num = rng.integers(1, 7, 3)
        num = int(num) + 4
        values = rng.uniform(-1, 1, size=(int(height), int(width), num))
        gt = rng.uniform(0, num - 1, size=(int(height), int(width)))
        valid = rng.random((int(height), int(width))) > 0.2
        eta = float(rng.uniform(0.1, 0.9))
        try:
            expected = oracle_cost_volume_loss(values, gt, valid, eta)
        except ZeroDivisionError:
            continue
        got = cost_volume_loss(_volume(values), gt, valid_gt=valid, eta=eta)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got >= 0.0


# --------------------------------------------------------- disparity loss

def test_disparity_loss_plug_in_example():
    gt = np.zeros((2, 2))
    loss = disparity_loss(gt + 1.0, [gt + 0.5], [gt + 0.5], gt)
    assert loss == pytest.approx(0.1 + 0.5 + 0.6)


def test_disparity_loss_zero_when_outputs_equal_gt():
    gt = np.arange(6, dtype=np.float64).reshape(2, 3)
    assert disparity_loss(gt, [gt, gt], [gt, gt], gt) == pytest.approx(0.0)


def test_disparity_loss_decay_schedule():
    gt = np.zeros((2, 2))
    early = disparity_loss(gt, [gt + 1, gt], [gt, gt], gt)
    late = disparity_loss(gt, [gt, gt + 1], [gt, gt], gt)
    assert early == pytest.approx(0.9)
    assert late == pytest.approx(1.0)


def test_disparity_loss_no_iterations():
    gt = np.zeros((3, 3))
    assert disparity_loss(gt + 2.0, [], [], gt) == pytest.approx(0.2)


def test_disparity_loss_matches_scalar_oracle():
    rng = np.random.default_rng(12)
    for _ in range(10):
        shape = tuple(int(n) for n in rng.integers(2, 7, 2))
        gt = rng.uniform(0, 10, shape)
        n_iter = int(rng.integers(1, 4))
        d_dc = gt + rng.normal(0, 1, shape)
        d_dsr = [gt + rng.normal(0, 1, shape) for _ in range(n_iter)]
        d_gdp = [gt + rng.normal(0, 1, shape) for _ in range(n_iter)]
        valid = rng.random(shape) > 0.1
        if not valid.any():
            continue
        weights = LossWeights(gamma=float(rng.uniform(0.5, 1.0)))
        expected = oracle_disparity_loss(
            d_dc, d_dsr, d_gdp, gt, valid, weights.gamma,
            weights.lambda_dc, weights.lambda_gdp)
        got = disparity_loss(d_dc, d_dsr, d_gdp, gt, valid_gt=valid,
                             weights=weights)
        assert got == pytest.approx(expected, abs=1e-12)


def test_loss_weights_validation():
    with pytest.raises(ConfigurationError):
        LossWeights(gamma=0.0)
    with pytest.raises(ConfigurationError):
        LossWeights(eta=-0.1)


# ---------------------------------------------------------- gradient loss

def test_gradient_loss_zero_case():
    vv, uu = np.mgrid[0:5, 0:6].astype(np.float64)
    gt = 0.25 * uu + 0.5 * vv
    du = np.full_like(gt, 0.25)
    dv = np.full_like(gt, 0.5)
    field = GradientField(du, dv)
    assert gradient_loss(field, gt, gt) == pytest.approx(0.0, abs=1e-12)


def test_gradient_loss_constant_offset():
    vv, uu = np.mgrid[0:5, 0:6].astype(np.float64)
    gt = 0.25 * uu + 0.5 * vv
    field = GradientField(np.full_like(gt, 0.35), np.full_like(gt, 0.5))
    assert gradient_loss(field, gt, gt) == pytest.approx(0.1)


def test_gradient_loss_matches_scalar_oracle():
    rng = np.random.default_rng(13)
    for _ in range(10):
        gt = rng.uniform(0, 8, (4, 4))
        gdp = gt + rng.normal(0, 0.5, (4, 4))
        du = rng.normal(0, 1, (4, 4))
        dv = rng.normal(0, 1, (4, 4))
        valid = rng.random((4, 4)) > 0.2
        if not (valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1]).any():
            continue
        expected = oracle_gradient_loss(du, dv, gdp, gt, valid)
        got = gradient_loss(GradientField(du, dv), gdp, gt, valid_gt=valid)
        assert got == pytest.approx(expected, abs=1e-12)


def test_gradient_loss_no_valid_stencil_raises():
    gt = np.zeros((3, 3))
    field = GradientField(gt, gt)
    with pytest.raises(UndefinedLossError):
        gradient_loss(field, gt, gt, valid_gt=np.zeros((3, 3), bool))


# -------------------------------------------------------------- total loss

def test_total_loss_examples():
    assert total_loss(0.0, 0.0, 0.0) == 0.0
    assert total_loss(0.2, 1.2, 0.1) == pytest.approx(1.5)
    assert total_loss(0.1, 0.2, 0.3) == total_loss(0.3, 0.1, 0.2)


def test_total_loss_rejects_non_finite():
    with pytest.raises(ConfigurationError):
        total_loss(float("nan"), 0.0, 0.0)


# -------------------------------------------------------- accuracy metrics

def test_accuracy_perfect_estimate():
    gt = np.full((4, 4), 7.0)
    report = accuracy_metrics(gt, gt, np.ones((4, 4), bool))
    assert report.epe == 0.0
    assert report.bad1 == 0.0 and report.bad3 == 0.0 and report.d1 == 0.0
    assert report.n_pixels == 16


def test_accuracy_single_outlier():
    gt = np.full((2, 2), 10.0)
    disp = gt.copy()
    disp[0, 0] += 4.0
    report = accuracy_metrics(disp, gt, np.ones((2, 2), bool))
    assert report.epe == pytest.approx(1.0)
    assert report.bad3 == pytest.approx(25.0)
    assert report.bad1 == pytest.approx(25.0)


def test_accuracy_d1_needs_relative_error_too():
    gt = np.full((1, 2), 100.0)
    disp = np.array([[104.0, 106.0]])
    report = accuracy_metrics(disp, gt, np.ones((1, 2), bool))
    assert report.bad3 == pytest.approx(100.0)
    assert report.d1 == pytest.approx(50.0)   # 4px < 5% of 100, 6px > 5%


def test_accuracy_empty_region_absent():
    gt = np.zeros((3, 3))
    report = accuracy_metrics(gt, gt, np.zeros((3, 3), bool), region="OCC")
    assert report.n_pixels == 0
    assert report.epe is None and report.bad3 is None


def test_accuracy_matches_scalar_oracle():
    rng = np.random.default_rng(14)
    for _ in range(10):
        gt = rng.uniform(1, 40, (5, 6))
        disp = gt + rng.normal(0, 3, (5, 6))
        region = rng.random((5, 6)) > 0.3
        valid = rng.random((5, 6)) > 0.2
        expected = oracle_accuracy(disp, gt, region, valid)
        report = accuracy_metrics(disp, gt, region, valid_gt=valid)
        if expected is None:
            assert report.n_pixels == 0
            continue
        assert report.epe == pytest.approx(expected["epe"], abs=1e-12)
        assert report.bad1 == pytest.approx(expected["bad1"], abs=1e-12)
        assert report.bad3 == pytest.approx(expected["bad3"], abs=1e-12)
        assert report.d1 == pytest.approx(expected["d1"], abs=1e-12)
        assert report.n_pixels == expected["n"]


# -------------------------------------------------------- temporal metrics

def _static_setup(shape=(8, 8)):
    ones = np.ones(shape, bool)
    zeros = np.zeros(shape)
    return ones, zeros, Pose.identity(), Pose.identity()


def test_temporal_static_identity_alignment():
    ones, zeros, pose_a, pose_b = _static_setup()
    rng = np.random.default_rng(15)
    d = rng.uniform(2, 12, (8, 8))
    gt = rng.uniform(2, 12, (8, 8))
    report = temporal_metrics(d, d, zeros, zeros, ones, gt, gt, ones,
                              CAM, pose_a, pose_b)
    assert report.abs_dd == pytest.approx(0.0, abs=1e-9)
    assert report.relu_de == pytest.approx(0.0, abs=1e-9)
    assert report.n_pixels == 64


def test_temporal_shrinking_errors_relu_zero():
    ones, zeros, pose_a, pose_b = _static_setup()
    gt = np.full((8, 8), 6.0)
    report = temporal_metrics(gt + 2.0, gt + 1.0, zeros, zeros, ones,
                              gt, gt, ones, CAM, pose_a, pose_b)
    assert report.relu_de == pytest.approx(0.0, abs=1e-9)
    assert report.abs_dd == pytest.approx(1.0, abs=1e-9)


def test_temporal_two_by_two_hand_fixture():
    cam = CameraModel(fx=100.0, fy=100.0, cx=0.5, cy=0.5,
                      baseline=0.5, width=2, height=2)
    d_t = np.array([[4.0, 5.0], [6.0, 7.0]])
    d_t1 = np.array([[4.5, 5.5], [6.5, 7.5]])
    gt_t = np.array([[4.0, 5.0], [6.0, 7.0]])
    gt_t1 = np.array([[4.0, 5.0], [6.0, 7.0]])
    flow_u = np.full((2, 2), 1.0)
    flow_v = np.zeros((2, 2))
    ones = np.ones((2, 2), bool)
    report = temporal_metrics(d_t, d_t1, flow_u, flow_v, ones, gt_t, gt_t1,
                              ones, cam, Pose.identity(), Pose.identity())
    # only u=0 lands in bounds; d̃ = d_t1[:,1] = (5.5, 7.5); e_t = 0, ẽ = 0.5
    assert report.n_pixels == 2
    assert report.abs_dd == pytest.approx((1.5 + 1.5) / 2)
    assert report.relu_de == pytest.approx(0.5)


def test_temporal_matches_scalar_oracle_random():
    rng = np.random.default_rng(16)
    for _ in range(8):
        d_t = rng.uniform(2, 12, (8, 8))
        d_t1 = rng.uniform(2, 12, (8, 8))
        gt_t = rng.uniform(2, 12, (8, 8))
        gt_t1 = rng.uniform(2, 12, (8, 8))
        flow_u = rng.uniform(-2, 2, (8, 8))
        flow_v = rng.uniform(-2, 2, (8, 8))
        flow_valid = rng.random((8, 8)) > 0.15
        region = rng.random((8, 8)) > 0.3
        pose_t = Pose.from_quaternion(0.01, 0.0, 0.02, 1.0,
                                      np.array([0.1, -0.05, 0.3]))
        pose_t1 = Pose.from_quaternion(0.0, 0.015, 0.0, 1.0,
                                       np.array([0.15, 0.0, 0.42]))
        expected_dd, expected_de, expected_n = oracle_temporal_metrics(
            d_t, d_t1, flow_u, flow_v, flow_valid, gt_t, gt_t1, region,
            CAM, pose_t, pose_t1)
        report = temporal_metrics(d_t, d_t1, flow_u, flow_v, flow_valid,
                                  gt_t, gt_t1, region, CAM, pose_t, pose_t1)
        assert report.n_pixels == expected_n
        if expected_n == 0:
            assert report.abs_dd is None
            continue
        assert report.abs_dd == pytest.approx(expected_dd, abs=1e-9)
        assert report.relu_de == pytest.approx(expected_de, abs=1e-9)


def test_temporal_empty_overlap_absent():
    ones, zeros, pose_a, pose_b = _static_setup()
    flow_u = np.full((8, 8), 100.0)   # every sample lands out of bounds
    gt = np.full((8, 8), 5.0)
    report = temporal_metrics(gt, gt, flow_u, zeros, ones, gt, gt, ones,
                              CAM, pose_a, pose_b)
    assert report.n_pixels == 0
    assert report.abs_dd is None and report.relu_de is None


def test_temporal_nearest_sampling_option():
    ones, zeros, pose_a, pose_b = _static_setup()
    gt = np.full((8, 8), 5.0)
    report = temporal_metrics(gt, gt, zeros + 0.4, zeros, ones, gt, gt, ones,
                              CAM, pose_a, pose_b, sampling="nearest")
    assert report.abs_dd == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ConfigurationError):
        temporal_metrics(gt, gt, zeros, zeros, ones, gt, gt, ones,
                         CAM, pose_a, pose_b, sampling="cubic")


# ----------------------------------------------------------- report object

def test_bilinear_sample_values_and_bounds():
    field = np.array([[0.0, 1.0], [2.0, 3.0]])
    value, ok = bilinear_sample(field, np.array([0.5]), np.array([0.5]))
    assert value[0] == pytest.approx(1.5)
    assert ok[0]
    _, ok = bilinear_sample(field, np.array([1.25]), np.array([0.0]))
    assert not ok[0]


def test_report_merge_and_json_fields():
    acc = MetricsReport(region="ALL", n_pixels=10, epe=0.5, bad1=1.0,
                        bad3=0.0, d1=0.0)
    temp = MetricsReport(region="ALL", n_pixels=9, abs_dd=0.1, relu_de=0.02)
    merged = acc.merged_with(temp)
    assert merged.epe == 0.5 and merged.abs_dd == 0.1
    record = json.loads(merged.to_json_line(frame=3))
    for key in ("epe", "bad1", "bad3", "d1", "abs_dd", "relu_de",
                "region", "n_pixels"):
        assert key in record
    assert record["frame"] == 3
    with pytest.raises(ConfigurationError):
        acc.merged_with(MetricsReport(region="OCC", n_pixels=1))
