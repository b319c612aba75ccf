"""统计分析测试：Wilson 区间、每轮错误率、Λ 拟合、截断研究与结果文件"""

import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softdecoder.analysis import (
    LambdaFit,
    LambdaPoint,
    ResultRow,
    estimate_rate,
    fit_lambda,
    fits_from_rows,
    logical_rate_from_per_round,
    per_round_rate,
    rate_point,
    read_results_csv,
    threshold_increase,
    truncation_sweep,
    wilson_interval,
    write_results_csv,
    write_summary_json,
)
from softdecoder.code_model import CodeSpec
from softdecoder.decoding_graph import build_graph
from softdecoder.errors import DomainError, InsufficientDataError, ParseError, SaturationError, UndefinedRatioError
from softdecoder.measurement_model import symmetric_gaussian_model
from softdecoder.noise_model import NoiseParams, derive_edge_probabilities
from softdecoder.sampler import generate_shots


def _exact_points(lambda_factor, distances=(3, 5, 7, 9), eps_at_3=0.02):
    points = []
    for d in distances:
        eps = eps_at_3 / lambda_factor ** ((d // 2 + 1) - 2)
        points.append(LambdaPoint(d, eps, eps * 0.9, eps * 1.1, 100))
    return points


def _fit(lambda_factor, err):
    return LambdaFit(lambda_factor, err, 0.0, -math.log(lambda_factor), 1.0, ())


@pytest.mark.unit
class TestRates:
    def test_wilson_reference_values(self):
        low, high = wilson_interval(5, 1000, 0.68)
        assert low == pytest.approx(0.003218734, rel=1e-4)
        assert high == pytest.approx(0.007759356, rel=1e-4)

    def test_wilson_edges(self):
        assert wilson_interval(0, 100)[0] == 0.0
        assert wilson_interval(100, 100)[1] == 1.0

    def test_wilson_invalid(self):
        with pytest.raises(DomainError):
            wilson_interval(3, 0)
        with pytest.raises(DomainError):
            wilson_interval(5, 4)

    def test_estimate_contains_point(self):
        estimate = estimate_rate(37, 500)
        assert estimate.ci_low <= estimate.p_hat <= estimate.ci_high

    def test_per_round_inverse(self):
        for eps in (1e-5, 0.003, 0.1, 0.3):
            for rounds in (1, 2, 10, 50):
                p_l = logical_rate_from_per_round(eps, rounds)
                assert per_round_rate(p_l, rounds) == pytest.approx(eps, rel=1e-9)

    def test_single_round_is_identity(self):
        assert per_round_rate(0.123, 1) == pytest.approx(0.123)

    def test_saturation(self):
        with pytest.raises(SaturationError):
            per_round_rate(0.5, 10)
        with pytest.raises(SaturationError):
            rate_point(3, 60, 100, 10)

    def test_rate_point(self):
        point = rate_point(5, 40, 1000, 4)
        assert point.eps_l == pytest.approx(per_round_rate(0.04, 4))
        assert point.eps_low < point.eps_l < point.eps_high
        assert point.x == 3


@pytest.mark.unit
class TestLambdaFit:
    def test_exact_points(self):
        fit = fit_lambda(_exact_points(2.0))
        assert fit.lambda_factor == pytest.approx(2.0, rel=1e-9)
        assert fit.r_squared == pytest.approx(1.0)

    def test_low_count_points_excluded(self):
        points = _exact_points(3.0) + [LambdaPoint(11, 1e-7, 0.0, 1e-6, 1)]
        fit = fit_lambda(points)
        assert len(fit.excluded) == 1
        assert fit.lambda_factor == pytest.approx(3.0, rel=1e-9)

    def test_needs_two_distances(self):
        with pytest.raises(InsufficientDataError):
            fit_lambda(_exact_points(2.0, distances=(3,)))

    def test_noisy_points_have_error(self):
        points = _exact_points(2.0)
        points[1] = LambdaPoint(5, points[1].eps_l * 1.3, points[1].eps_l, points[1].eps_l * 1.6, 80)
        fit = fit_lambda(points)
        assert fit.lambda_err > 0
        assert fit.r_squared < 1.0

    def test_threshold_increase(self):
        assert threshold_increase(_fit(1.67, 0.0), _fit(1.36, 0.0)).value == pytest.approx(0.228, abs=1e-3)
        assert threshold_increase(_fit(1.83, 0.0), _fit(1.36, 0.0)).value == pytest.approx(0.346, abs=1e-3)

    def test_threshold_increase_error(self):
        inc = threshold_increase(_fit(2.0, 0.2), _fit(1.0, 0.1))
        assert inc.value == pytest.approx(1.0)
        assert inc.error == pytest.approx(2.0 * math.hypot(0.1, 0.1))

    @given(st.floats(1e-6, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariant(self, scale):
        points = _exact_points(2.5)
        points[2] = LambdaPoint(7, points[2].eps_l * 1.2, points[2].eps_l, points[2].eps_l * 1.5, 60)
        scaled = [LambdaPoint(p.distance, p.eps_l * scale, p.eps_low * scale, p.eps_high * scale, p.failures)
                  for p in points]
        base, moved = fit_lambda(points), fit_lambda(scaled)
        assert moved.lambda_factor == pytest.approx(base.lambda_factor, rel=1e-9)
        assert moved.lambda_err == pytest.approx(base.lambda_err, rel=1e-9)

    @given(st.floats(1.01, 10.0), st.floats(1.01, 10.0))
    @settings(max_examples=80, deadline=None)
    def test_threshold_increase_antisymmetry(self, lam_a, lam_b):
        forward = threshold_increase(_fit(lam_a, 0.0), _fit(lam_b, 0.0)).value
        backward = threshold_increase(_fit(lam_b, 0.0), _fit(lam_a, 0.0)).value
        assert forward == pytest.approx(-backward / (1.0 + backward), rel=1e-9, abs=1e-12)

    def test_interval_coverage_under_lognormal_noise(self):
        rng = np.random.default_rng(2024)
        sigma = 0.05
        covered = 0
        for _ in range(100):
            points = []
            for p in _exact_points(2.0):
                eps = p.eps_l * float(np.exp(rng.normal(0.0, sigma)))
                points.append(LambdaPoint(p.distance, eps, eps * math.exp(-sigma), eps * math.exp(sigma), 100))
            fit = fit_lambda(points)
            covered += abs(fit.lambda_factor - 2.0) <= 3.0 * fit.lambda_err
        assert covered >= 95


@pytest.mark.unit
class TestResultFiles:
    def _rows(self):
        rows = []
        for mode, lam in (("hard_calibrated", 1.5), ("soft", 2.0)):
            for point in _exact_points(lam):
                p_l = logical_rate_from_per_round(point.eps_l, 10)
                rows.append(ResultRow(mode, "Z", "plus", point.distance, -1, 10, 64, 100000,
                                      int(round(p_l * 100000)), p_l, p_l * 0.95, p_l * 1.05, point.eps_l))
        rows.append(ResultRow("soft", "Z", "plus", 3, 0, 10, 64, 100000, 5, 5e-5, 4e-5, 7e-5, 5e-6))
        return rows

    def test_csv_round_trip(self, temp_dir):
        path = Path(temp_dir) / "results.csv"
        rows = self._rows()
        write_results_csv(path, rows)
        assert read_results_csv(path) == rows
        assert path.read_text(encoding="utf-8").splitlines()[1].startswith("mode,basis,state,d,offset,T,b")

    def test_csv_missing_header(self, temp_dir):
        path = Path(temp_dir) / "results.csv"
        path.write_text("mode,basis\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_results_csv(path)

    def test_fits_from_pooled_rows(self):
        fits = fits_from_rows(self._rows())
        assert set(fits) == {("hard_calibrated", "Z", "plus", 10), ("soft", "Z", "plus", 10)}
        assert fits[("soft", "Z", "plus", 10)].lambda_factor == pytest.approx(2.0, rel=1e-6)

    def test_summary_json(self, temp_dir):
        fits = fits_from_rows(self._rows())
        path = Path(temp_dir) / "summary.json"
        increase = threshold_increase(fits[("soft", "Z", "plus", 10)], fits[("hard_calibrated", "Z", "plus", 10)])
        write_summary_json(path, {"shots": 100000}, fits, {"soft/hard_calibrated": increase})
        document = json.loads(path.read_text(encoding="utf-8"))
        assert document["config"] == {"shots": 100000}
        assert len(document["fits"]) == 2
        assert document["threshold_increase"]["soft/hard_calibrated"]["value"] == pytest.approx(1 / 3, rel=1e-6)


@pytest.mark.unit
class TestTruncationSweep:
    @pytest.fixture
    def shots_and_graph(self):
        spec = CodeSpec(distance=3, rounds=3)
        noise = NoiseParams(p_cx=0.02, p_1q=0.005, idle_us=1.0, p_h=0.03, p_s_mean=0.06)
        model = symmetric_gaussian_model(3.1, 1.0)
        shots = [(shot, spec) for shot in generate_shots(spec, noise, model, 300, seed=4)]
        return shots, build_graph(spec, derive_edge_probabilities(spec, noise))

    def test_full_precision_ratio_is_one(self, shots_and_graph):
        shots, graph = shots_and_graph
        (point,) = truncation_sweep(shots, graph, [64], n_bootstrap=200)
        assert point.ratio == 1.0
        assert point.failures == point.failures_full
        assert point.ci_low <= 1.0 <= point.ci_high

    def test_ratio_interval_contains_estimate(self, shots_and_graph):
        shots, graph = shots_and_graph
        points = truncation_sweep(shots, graph, [1, 2, 4], n_bootstrap=200, seed=1)
        assert [p.bits for p in points] == [1, 2, 4]
        for point in points:
            assert point.ci_low <= point.ratio <= point.ci_high
            assert point.shots == 300

    def test_no_failures_is_undefined(self):
        spec = CodeSpec(distance=3, rounds=2)
        model = symmetric_gaussian_model(20.0, 1.0, leakage=False)
        shots = [(shot, spec) for shot in generate_shots(spec, NoiseParams(), model, 10, seed=0)]
        graph = build_graph(spec, derive_edge_probabilities(spec, NoiseParams()))
        with pytest.raises(UndefinedRatioError):
            truncation_sweep(shots, graph, [4])

    def test_empty(self):
        spec = CodeSpec(distance=3, rounds=2)
        graph = build_graph(spec, derive_edge_probabilities(spec, NoiseParams()))
        with pytest.raises(InsufficientDataError):
            truncation_sweep([], graph, [4])
