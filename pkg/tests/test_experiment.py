"""标定流程与实验运行器测试"""

import io
import json
from pathlib import Path

import numpy as np
import pytest
from rich.console import Console

from softdecoder.analysis import LambdaFit, read_results_csv
from softdecoder.config import RuntimeSettings, load_experiment_config
from softdecoder.errors import InsufficientDataError
from softdecoder.experiment import Calibrator, ExperimentRunner, threshold_increases
from softdecoder.measurement_model import (
    IQPoint,
    classify,
    load_readout_model,
    sample_iq_many,
    separation_for_soft_rate,
    symmetric_gaussian_model,
)
from softdecoder.noise_model import load_noise, load_qubit_noise


def quiet_console():
    return Console(file=io.StringIO(), width=120)


def write_calibration(path, qubits=("q0", "q1"), n_per_state=2000, p_h=0.01, p_soft=0.02, seed=0):
    """按制备态采样：以 p_h 的概率态在第一次测量中翻转，第二次测量给出翻转后的态"""
    rng = np.random.default_rng(seed)
    model = symmetric_gaussian_model(separation_for_soft_rate(p_soft), 1.0, leakage=False)
    lines = []
    for qubit in qubits:
        for prepared in (0, 1):
            flipped = rng.random(n_per_state) < p_h
            true_state = (prepared ^ flipped).astype(np.uint8)
            points = sample_iq_many(true_state, model, rng)
            for (i, q), second in zip(points, true_state):
                lines.append(f"{qubit} {prepared} {i:.6f} {q:.6f} {int(second)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.mark.integration
class TestCalibrator:
    def test_recovers_flip_probabilities(self, temp_dir):
        source = write_calibration(Path(temp_dir) / "calib.txt")
        out = Path(temp_dir) / "out"
        report = Calibrator(quiet_console()).run(source, out)
        assert [q.qubit for q in report.usable] == ["q0", "q1"]
        assert report.noise.p_s_mean == pytest.approx(0.02, abs=0.008)
        # 翻转后的样本绝大多数仍被判为翻转后的态
        assert report.noise.p_h == pytest.approx(0.0098, abs=0.006)
        for name in ("readout_q0.sdgrid", "readout_q1.sdgrid", "counts.ini", "noise.ini"):
            assert (out / name).exists()
        assert load_noise(out / "noise.ini") == report.noise
        loaded = load_readout_model(out / "readout_q0.sdgrid")
        assert classify(IQPoint(-2.0, 0.0), loaded) == 0
        assert classify(IQPoint(2.0, 0.0), loaded) == 1

    def test_persists_per_qubit_flip_probabilities(self, temp_dir):
        source = write_calibration(Path(temp_dir) / "calib.txt")
        out = Path(temp_dir) / "out"
        report = Calibrator(quiet_console()).run(source, out)
        per_qubit = load_qubit_noise(out / "noise.ini")
        assert set(per_qubit) == {"q0", "q1"}
        assert per_qubit == report.per_qubit
        for item in report.usable:
            (s0, h0), (s1, h1) = item.flip_probs[0], item.flip_probs[1]
            assert per_qubit[item.qubit].p_s_mean == pytest.approx((s0 + s1) / 2)
            assert per_qubit[item.qubit].p_h == pytest.approx((h0 + h1) / 2)
        # 每个比特权重相同，逐比特均值再平均即链平均
        assert np.mean([n.p_s_mean for n in per_qubit.values()]) == pytest.approx(report.noise.p_s_mean)
        assert np.mean([n.p_h for n in per_qubit.values()]) == pytest.approx(report.noise.p_h)

    def test_missing_prepared_state(self):
        pairs = {0: [(IQPoint(0.0, 0.0), 0)] * 200, 1: []}
        with pytest.raises(InsufficientDataError):
            Calibrator(quiet_console()).calibrate_qubit("q0", pairs)

    def test_too_few_samples_is_reported_per_qubit(self, temp_dir):
        source = Path(temp_dir) / "calib.txt"
        write_calibration(source, qubits=("q0",), n_per_state=1000)
        with open(source, "a", encoding="utf-8") as f:
            f.write("q9 0 -1.0 0.0 0\nq9 1 1.0 0.0 1\n")
        report = Calibrator(quiet_console()).run(source, Path(temp_dir) / "out")
        bad = [q for q in report.qubits if q.qubit == "q9"][0]
        assert bad.error is not None
        assert [q.qubit for q in report.usable] == ["q0"]

    def test_no_usable_qubit(self, temp_dir):
        source = Path(temp_dir) / "calib.txt"
        source.write_text("q0 0 -1.0 0.0 0\nq0 1 1.0 0.0 1\n", encoding="utf-8")
        with pytest.raises(InsufficientDataError):
            Calibrator(quiet_console()).run(source, Path(temp_dir) / "out")


@pytest.mark.integration
class TestExperimentRunner:
    def _runner(self, path):
        return ExperimentRunner(load_experiment_config(path), quiet_console(),
                                RuntimeSettings(workers=1, bootstrap=50))

    def test_run_writes_pooled_rows(self, temp_dir, write_config):
        csv_path = Path(temp_dir) / "results.csv"
        summary = Path(temp_dir) / "summary.json"
        rows = self._runner(write_config()).run(csv_path, summary)
        assert [r.mode for r in rows] == ["hard_calibrated", "hard_data_informed", "soft"]
        assert all(r.offset == -1 and r.b == 64 and r.shots == 20 for r in rows)
        assert read_results_csv(csv_path) == rows
        document = json.loads(summary.read_text(encoding="utf-8"))
        assert set(document["soft_statistics"]) == {"2"}
        assert 0.0 < document["soft_statistics"]["2"]["mean_p_soft"] < 0.5
        assert document["config"]["distance"] == 3

    def test_per_offset_rows(self, temp_dir, write_config):
        rows = self._runner(write_config(sub_distances="2, 3", modes="soft")).run(Path(temp_dir) / "r.csv")
        assert [(r.d, r.offset) for r in rows] == [(2, -1), (2, 0), (2, 1), (3, -1)]
        pooled = rows[0]
        assert pooled.shots == rows[1].shots + rows[2].shots
        assert pooled.failures == rows[1].failures + rows[2].failures

    def test_deterministic(self, temp_dir, write_config):
        path = write_config(modes="hard_calibrated, soft")
        first = self._runner(path).run(Path(temp_dir) / "a.csv")
        second = self._runner(path).run(Path(temp_dir) / "b.csv")
        assert first == second

    def test_sweep_truncation(self, temp_dir, write_config):
        path = write_config(shots=400, truncation_bits="1, 64", modes="soft",
                            separation=separation_for_soft_rate(0.1))
        rows = self._runner(path).sweep_truncation(Path(temp_dir) / "trunc.csv")
        assert [r.b for r in rows] == [1, 64]
        assert rows[1].p_hat == 1.0
        for row in rows:
            assert row.mode == "soft"
            assert row.shots == 400
            assert row.ci_low <= row.p_hat <= row.ci_high


@pytest.mark.unit
class TestThresholdIncreases:
    def test_keys_against_calibrated_hard(self):
        def fit(lam):
            return LambdaFit(lam, 0.1, 0.0, 0.0, 1.0, ())
        fits = {
            ("hard_calibrated", "Z", "plus", 10): fit(1.5),
            ("soft", "Z", "plus", 10): fit(2.0),
            ("hard_data_informed", "Z", "plus", 10): fit(1.8),
            ("soft", "Z", "plus", 20): fit(2.0),
        }
        increases = threshold_increases(fits)
        assert set(increases) == {
            "soft/hard_calibrated@Z/plus/T=10",
            "hard_data_informed/hard_calibrated@Z/plus/T=10",
        }
        assert increases["soft/hard_calibrated@Z/plus/T=10"].value == pytest.approx(2.0 / 1.5 - 1.0)
