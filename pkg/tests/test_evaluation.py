import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rt60track.datagen import FeatureSet, ManifestEntry, smooth_gt_to_output
from rt60track.errors import ArgumentError
from rt60track.evaluation import (
    DYNAMIC_COLUMNS,
    STATIC_COLUMNS,
    MetricsReport,
    SampleResult,
    aligned_origin,
    evaluate_model,
    last_step_metrics,
    pearson,
    read_table,
    squared_error_stats,
    temporal_error_curve,
    write_curves,
    write_table,
)


def pearson_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


class TestLastStep:
    def test_perfect(self):
        g = np.array([0.3, 0.5, 0.9])
        m = last_step_metrics(g, g)
        assert (m.mse, m.rho, m.bias, m.mape) == (0.0, 1.0, 0.0, 0.0)

    def test_hand_values(self):
        m = last_step_metrics([1.1, 0.5], [1.0, 0.5])
        assert m.mse == pytest.approx(0.01 / 2)
        e, g = np.array([1.1]), np.array([1.0])
        assert np.mean((e - g) ** 2) == pytest.approx(0.01)
        assert np.mean(e - g) == pytest.approx(0.1)
        from rt60track.evaluation import mape

        assert mape(e, g) == pytest.approx(10.0)

    def test_pearson_oracle(self, rng):
        x, y = rng.standard_normal(1000), rng.standard_normal(1000) + 0.3 * np.arange(1000) / 1000
        assert abs(pearson(x, y) - pearson_oracle(list(x), list(y))) <= 1e-12

    def test_needs_two(self):
        with pytest.raises(ArgumentError):
            last_step_metrics([1.0], [1.0])

    def test_zero_truth(self):
        with pytest.raises(ArgumentError):
            last_step_metrics([1.0, 1.0], [0.0, 1.0])

    def test_constant_estimator(self, rng):
        g = rng.uniform(0.2, 0.8, 200)
        m = last_step_metrics(np.full(200, g.mean()), g)
        assert not m.rho_defined and m.rho == 0.0
        assert abs(m.bias) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(-10, 10))
    def test_rho_affine_invariant(self, seed, a, b):
        r = np.random.default_rng(seed)
        e, g = r.uniform(0.1, 1, 30), r.uniform(0.1, 1, 30)
        assert last_step_metrics(a * e + b, g).rho == pytest.approx(last_step_metrics(e, g).rho, abs=1e-9)


class TestSquaredErrorStats:
    def test_constant(self):
        assert squared_error_stats([np.full(5, 0.04), np.full(3, 0.04)]) == pytest.approx((0.04, 0.0))

    def test_hand_values(self):
        mu, sigma = squared_error_stats([np.array([0.0, 0.2]) ** 2])
        assert mu == pytest.approx(0.02) and sigma == pytest.approx(0.02)

    def test_permutation_invariant(self, rng):
        rows = [rng.uniform(0, 1, 10) for _ in range(6)]
        assert squared_error_stats(rows) == pytest.approx(squared_error_stats(rows[::-1]), rel=1e-14)

    def test_empty(self):
        with pytest.raises(ArgumentError):
            squared_error_stats([])


def dynamic_result(rt1, rt2, sid="s", est=None, frames=2999, switch=1500):
    gt = np.where(np.arange(frames) < switch, rt1, rt2)
    out = smooth_gt_to_output(gt)
    return SampleResult(sid, out.copy() if est is None else est, out, gt)


class TestTemporalCurve:
    def test_origin(self):
        assert aligned_origin(1500) == 44
        assert aligned_origin(10) == 0

    def test_length_and_alignment(self):
        frames, t, curve = temporal_error_curve([dynamic_result(0.3, 0.8)], "up")
        assert curve.size == 91 and frames[44] == 0 and t[45] == pytest.approx(0.064)

    def test_perfect_estimator_ramp_bound(self):
        frames, _, curve = temporal_error_curve([dynamic_result(0.3, 0.8)], "up")
        bump = curve[curve > 1e-15]
        assert bump.size > 0 and np.all(bump <= 0.5**2 + 1e-12)
        mid = curve[frames == 1]
        assert mid[0] <= 0.5**2 / 4 + 1e-12 or mid[0] <= np.max(bump)
        assert np.all(curve[frames < 0] == 0) and np.all(curve[frames > 3] == 0)

    def test_single_sample_is_its_error(self, rng):
        est = rng.uniform(0.2, 1, 91)
        r = dynamic_result(0.9, 0.4, est=est)
        _, _, curve = temporal_error_curve([r], "down")
        np.testing.assert_array_equal(curve, (est - r.step_reference()) ** 2)

    def test_partition(self, rng):
        rs = [dynamic_result(*rng.uniform(0.1, 1, 2), sid=str(i)) for i in range(9)]
        ups = sum(r.rt60_last > r.rt60_first for r in rs)
        downs = sum(r.rt60_last < r.rt60_first for r in rs)
        assert ups + downs == len(rs)

    def test_empty_subset(self):
        with pytest.raises(ArgumentError):
            temporal_error_curve([dynamic_result(0.3, 0.8)], "down")

    def test_mixed_switches(self):
        with pytest.raises(ArgumentError):
            temporal_error_curve([dynamic_result(0.3, 0.8), dynamic_result(0.3, 0.8, switch=1400)], "up")


class ConstantModel:
    def __init__(self, value):
        self.value = value

    def forward(self, xs, train=False):
        return np.full((xs.shape[0], (xs.shape[2] - 103) // 32 + 1), self.value)


def feature_set(results):
    entries = [ManifestEntry(r.id, "x", "s", 0, "a", None, None, "test") for r in results]
    inputs = [np.zeros((21, r.gt_input.size)) for r in results]
    return FeatureSet(entries, inputs, [r.gt_output for r in results], [r.gt_input for r in results])


class TestEvaluateModel:
    def test_dynamic_columns(self, rng):
        rs = [dynamic_result(*rng.uniform(0.1, 1, 2), sid=str(i)) for i in range(6)]
        report, curves = evaluate_model(ConstantModel(0.5), feature_set(rs), "test_dynamic6", "const")
        assert report.columns() == DYNAMIC_COLUMNS == ("μ", "σ", "MSE", "ρ", "Bias", "MAPE")
        assert set(curves) == {"up", "down"}
        last = np.array([r.rt60_last for r in rs])
        assert report.mse_last == pytest.approx(np.mean((0.5 - last) ** 2))
        assert not report.rho_defined

    def test_static_columns_and_determinism(self, rng):
        rs = []
        for i in range(5):
            gt = np.full(4999, rng.uniform(0.2, 0.9))
            rs.append(SampleResult(str(i), None, smooth_gt_to_output(gt), gt))
        a, curves = evaluate_model(ConstantModel(0.4), feature_set(rs), "test_static10")
        b, _ = evaluate_model(ConstantModel(0.4), feature_set(rs), "test_static10")
        assert a.columns() == STATIC_COLUMNS and curves is None and a == b

    def test_table_and_curves_csv(self, tmp_path, rng):
        rs = [dynamic_result(0.3, 0.8, sid="u"), dynamic_result(0.8, 0.3, sid="d")]
        rep, curves = evaluate_model(ConstantModel(0.5), feature_set(rs), "test_dynamic6", "m1")
        static = MetricsReport("m1", "test_static10", 3, 0.1, 0.5, 0.01, 12.0)
        write_table(tmp_path / "t.csv", [rep, static])
        rows = read_table(tmp_path / "t.csv")
        assert len(rows) == 1 and rows[0]["model"] == "m1"
        assert list(rows[0])[1:] == [f"test_dynamic6:{c}" for c in DYNAMIC_COLUMNS] + [
            f"test_static10:{c}" for c in STATIC_COLUMNS
        ]
        write_curves(tmp_path / "c.csv", curves)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "aligned_frame,t_seconds,mse_up,mse_down" and len(lines) == 92
