"""Pauli 帧采样与实验统计测试"""

import numpy as np
import pytest

from softdecoder.code_model import CodeSpec, LogicalState, compute_detectors, subsample
from softdecoder.errors import BoundsError, DomainError
from softdecoder.decoding_graph import ShotWeighting, build_graph
from softdecoder.matching_decoder import decode
from softdecoder.measurement_model import separation_for_soft_rate, symmetric_gaussian_model
from softdecoder.noise_model import FaultStage, NoiseParams, derive_edge_probabilities
from softdecoder.sampler import (
    CircuitModel,
    DecoderMode,
    ExperimentTally,
    generate_shots,
    injection_chooser,
    random_chooser,
    run_experiment,
    sample_shot,
    shot_seed,
)

ALL_MODES = [DecoderMode.HARD_CALIBRATED, DecoderMode.HARD_DATA_INFORMED, DecoderMode.SOFT]


class InlineExecutor:
    """在当前进程内顺序执行的进程池替身"""

    def __init__(self, max_workers=None):
        self.max_workers = max_workers

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def map(self, fn, iterable):
        return map(fn, iterable)


@pytest.fixture
def sharp_model():
    """两态几乎不重叠的读出模型"""
    return symmetric_gaussian_model(20.0, 1.0, leakage=False)


@pytest.mark.unit
class TestCircuitModel:
    def test_noiseless(self, small_spec):
        measured, readout = CircuitModel(small_spec, NoiseParams()).run(random_chooser(np.random.default_rng(0)))
        assert not measured.any()
        assert not readout.any()

    def test_idle_flip_on_last_data_qubit(self, small_spec, desk_noise):
        circuit = CircuitModel(small_spec, desk_noise)
        measured, readout = circuit.run(injection_chooser(FaultStage.IDLE, 1, 2, 0))
        assert measured.tolist() == [[0, 0], [0, 1]]
        assert readout.tolist() == [0, 0, 1]

    def test_ancilla_flip_persists_without_reset(self, desk_noise):
        spec = CodeSpec(distance=3, rounds=3)
        measured, readout = CircuitModel(spec, desk_noise).run(injection_chooser(FaultStage.MEASURE, 1, 0, 0))
        assert measured[:, 0].tolist() == [1, 1, 1]
        assert not readout.any()

    def test_readout_flip_only_touches_final_data(self, small_spec, desk_noise):
        measured, readout = CircuitModel(small_spec, desk_noise).run(injection_chooser(FaultStage.READOUT, 3, 1, 0))
        assert not measured.any()
        assert readout.tolist() == [0, 1, 0]

    def test_random_chooser_rate(self):
        spec = CodeSpec(distance=4, rounds=1)
        circuit = CircuitModel(spec, NoiseParams(p_1q=0.3))
        rng = np.random.default_rng(1)
        flips = np.array([circuit.run(random_chooser(rng))[1] for _ in range(3000)])
        # 只有编码翻转，概率 2/3·p_1q
        assert flips.mean() == pytest.approx(0.2, abs=0.015)


@pytest.mark.unit
class TestSampleShot:
    def test_seed_derivation(self):
        assert shot_seed(7, 3) == shot_seed(7, 3)
        assert shot_seed(7, 3) != shot_seed(7, 4)
        assert shot_seed(7, 3) != shot_seed(8, 3)

    def test_reproducible(self, small_spec, desk_noise, gaussian_model):
        first = sample_shot(small_spec, desk_noise, gaussian_model, 1234)
        second = sample_shot(small_spec, desk_noise, gaussian_model, 1234)
        assert np.array_equal(first.outcome.bits(), second.outcome.bits())
        assert np.array_equal(first.stabilizer_soft.p_soft, second.stabilizer_soft.p_soft)

    def test_noiseless_shot(self, small_spec, sharp_model):
        shot = sample_shot(small_spec, NoiseParams(), sharp_model, 5)
        assert compute_detectors(shot.outcome, small_spec).n_events == 0
        assert shot.truth_logical_flip == 0
        assert shot.stabilizer_soft.shape == small_spec.ancilla_shape
        assert np.all(shot.stabilizer_soft.p_soft < 1e-6)

    def test_minus_state(self, sharp_model):
        spec = CodeSpec(distance=3, rounds=2, logical_state=LogicalState.MINUS)
        shot = sample_shot(spec, NoiseParams(), sharp_model, 5)
        assert shot.outcome.final_data.tolist() == [1, 1, 1]
        assert shot.truth_logical_flip == 0
        assert compute_detectors(shot.outcome, spec).n_events == 0

    def test_window_matches_subsample(self, desk_noise, gaussian_model):
        spec = CodeSpec(distance=5, rounds=3)
        shot = sample_shot(spec, desk_noise, gaussian_model, 99)
        window, sub_spec = shot.window(spec, 3, 1)
        expected, _ = subsample(shot.outcome, spec, 3, 1)
        assert sub_spec.distance == 3
        assert np.array_equal(window.outcome.bits(), expected.bits())
        assert window.stabilizer_soft.shape == (3, 2)
        assert window.truth_logical_flip == int(shot.code_soft.z_hat[3])

    def test_leakage_raises_soft_flip_rate(self, small_spec, gaussian_model):
        # 泄漏密度位于两态中点，泄漏的测量表现为高软翻转概率
        clean = generate_shots(small_spec, NoiseParams(), gaussian_model, 100, seed=2)
        leaky = generate_shots(small_spec, NoiseParams(p_leak=0.5), gaussian_model, 100, seed=2)
        assert np.mean([s.stabilizer_soft.p_soft.mean() for s in clean]) < 0.04
        assert np.mean([s.stabilizer_soft.p_soft.mean() for s in leaky]) > 0.05

    def test_misclassification_signatures(self):
        # 无 Pauli 噪声时探测事件只来自判错，每个判错贡献固定的一对事件
        spec = CodeSpec(distance=5, rounds=4)
        model = symmetric_gaussian_model(separation_for_soft_rate(0.15), 1.0, leakage=False)
        rounds, n_stab = spec.rounds, spec.distance - 1
        n_wrong = 0
        for seed in range(20):
            shot = sample_shot(spec, NoiseParams(), model, seed)
            expected = np.zeros(spec.detector_shape, dtype=np.uint8)
            for t, a in np.argwhere(shot.stabilizer_soft.z_hat):
                expected[t, a] ^= 1
                expected[min(t + 2, rounds), a] ^= 1
            for i in np.flatnonzero(shot.code_soft.z_hat ^ spec.logical_value):
                for a in (i - 1, i):
                    if 0 <= a < n_stab:
                        expected[rounds, a] ^= 1
            n_wrong += int(shot.stabilizer_soft.z_hat.sum() + (shot.code_soft.z_hat ^ spec.logical_value).sum())
            assert np.array_equal(compute_detectors(shot.outcome, spec).detectors, expected)
        assert n_wrong > 20

    def test_truth_follows_classified_readout_under_leakage(self, small_spec, gaussian_model):
        noise = NoiseParams(p_leak=0.4)
        leaked_final = 0
        for seed in range(40):
            shot = sample_shot(small_spec, noise, gaussian_model, seed)
            assert shot.truth_logical_flip == int(shot.code_soft.z_hat[-1]) ^ small_spec.logical_value
            leaked_final += int(shot.code_soft.leaked[-1])
        assert leaked_final > 0

    def test_zero_defect_shots_are_not_failures(self, desk_noise, gaussian_model):
        spec = CodeSpec(distance=5, rounds=3)
        weighting = ShotWeighting.static(build_graph(spec, derive_edge_probabilities(spec, desk_noise)))
        quiet = 0
        for shot in generate_shots(spec, desk_noise, gaussian_model, 200, seed=8):
            syndrome = compute_detectors(shot.outcome, spec)
            if syndrome.n_events:
                continue
            quiet += 1
            assert decode(weighting, syndrome).logical_flip == 0
            assert shot.truth_logical_flip == 0
        assert quiet > 20


@pytest.mark.unit
class TestTally:
    def test_record_and_pool(self):
        tally = ExperimentTally()
        tally.record(("soft", 3, 0), True)
        tally.record(("soft", 3, 1), False)
        tally.record(("soft", 3, 1), True)
        assert tally.pooled(DecoderMode.SOFT, 3) == (2, 3)
        assert tally.get(DecoderMode.SOFT, 3, 1) == (1, 2)
        assert tally.get(DecoderMode.HARD_CALIBRATED, 3, 0) == (0, 0)

    def test_merge_adds(self):
        a, b = ExperimentTally(), ExperimentTally()
        a.record(("soft", 3, 0), True)
        b.record(("soft", 3, 0), False)
        a.n_measurements, a.p_soft_sums = 10, [1.0]
        b.n_measurements, b.p_soft_sums, b.n_leaked = 10, [3.0], 2
        merged = a.merge(b)
        assert merged.get(DecoderMode.SOFT, 3, 0) == (1, 2)
        assert merged.mean_p_soft == pytest.approx(0.2)
        assert merged.leaked_fraction == pytest.approx(0.1)


@pytest.mark.unit
class TestRunExperiment:
    def test_counts_every_shot_and_window(self, desk_noise, gaussian_model):
        spec = CodeSpec(distance=5, rounds=2)
        tally = run_experiment(spec, desk_noise, gaussian_model, 12, ALL_MODES, seed=3, sub_distances=[3, 5])
        for mode in ALL_MODES:
            for offset in range(3):
                assert tally.get(mode, 3, offset)[1] == 12
            assert tally.pooled(mode, 5) == (tally.get(mode, 5, 0)[0], 12)

    def test_noiseless_never_fails(self, small_spec, sharp_model):
        tally = run_experiment(small_spec, NoiseParams(), sharp_model, 20, ALL_MODES, seed=0)
        assert all(tally.pooled(mode, 3)[0] == 0 for mode in ALL_MODES)

    def test_deterministic_in_seed(self, small_spec, desk_noise, gaussian_model):
        first = run_experiment(small_spec, desk_noise, gaussian_model, 30, ALL_MODES, seed=11)
        second = run_experiment(small_spec, desk_noise, gaussian_model, 30, ALL_MODES, seed=11)
        assert first.failures == second.failures
        assert first.mean_p_soft == second.mean_p_soft

    def test_independent_of_sharding(self, mocker, small_spec, desk_noise, gaussian_model):
        pool = mocker.patch("softdecoder.sampler.ProcessPoolExecutor", InlineExecutor)
        serial = run_experiment(small_spec, desk_noise, gaussian_model, 24, ALL_MODES, seed=5)
        sharded = run_experiment(small_spec, desk_noise, gaussian_model, 24, ALL_MODES, seed=5,
                                 workers=4, shard_size=5)
        assert pool is InlineExecutor
        assert serial.failures == sharded.failures
        assert serial.shots == sharded.shots
        assert serial.mean_p_soft == pytest.approx(sharded.mean_p_soft, rel=1e-12)

    def test_progress_callback(self, small_spec, desk_noise, gaussian_model):
        seen = []
        run_experiment(small_spec, desk_noise, gaussian_model, 7, [DecoderMode.SOFT], seed=1,
                       shard_size=3, progress=seen.append)
        assert seen == [3, 3, 1]

    def test_invalid_arguments(self, small_spec, desk_noise, gaussian_model):
        with pytest.raises(DomainError):
            run_experiment(small_spec, desk_noise, gaussian_model, 0, ALL_MODES, seed=0)
        with pytest.raises(DomainError):
            run_experiment(small_spec, desk_noise, gaussian_model, 5, [], seed=0)
        with pytest.raises(BoundsError):
            run_experiment(small_spec, desk_noise, gaussian_model, 5, ALL_MODES, seed=0, sub_distances=[4])


@pytest.mark.integration
class TestProcessPool:
    def test_real_pool_matches_serial(self, small_spec, desk_noise, gaussian_model):
        serial = run_experiment(small_spec, desk_noise, gaussian_model, 12, ALL_MODES, seed=21)
        pooled = run_experiment(small_spec, desk_noise, gaussian_model, 12, ALL_MODES, seed=21,
                                workers=2, shard_size=5)
        assert serial.failures == pooled.failures
        assert serial.shots == pooled.shots
        assert serial.n_leaked == pooled.n_leaked
        assert serial.mean_p_soft == pytest.approx(pooled.mean_p_soft, rel=1e-12)
