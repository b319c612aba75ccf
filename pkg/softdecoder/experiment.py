"""
实验编排模块

把标定、模拟、解码、分析串成完整流程，并负责结果文件与控制台输出。
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from .analysis import (
    LambdaFit,
    ResultRow,
    ThresholdIncrease,
    estimate_rate,
    fits_from_rows,
    per_round_rate,
    threshold_increase,
    truncation_sweep,
    write_results_csv,
    write_summary_json,
)
from .code_model import subsample_windows
from .config import ExperimentConfig, RuntimeSettings
from .decoding_graph import build_graph
from .errors import DataError, InsufficientDataError, SaturationError
from .measurement_model import (
    IQPoint,
    LeakageSettings,
    ReadoutModel,
    count_outcome_pairs,
    filter_hard_flips,
    fit_kde,
    mean_soft_flip_prob,
    read_calibration_file,
    save_readout_model,
)
from .noise_model import (
    CalibrationCounts,
    NoiseParams,
    derive_edge_probabilities,
    estimate_flip_probs,
    noise_from_calibration,
    save_calibration_counts,
    save_noise,
)
from .sampler import DecoderMode, ExperimentTally, generate_shots, run_experiment

FULL_PRECISION_BITS = 64


def threshold_increases(fits: Dict[Tuple[str, str, str, int], LambdaFit]) -> Dict[str, ThresholdIncrease]:
    """各解码方式相对校准硬解码的阈值提升，按 (基, 逻辑态, 轮数) 分别给出"""
    increases = {}
    reference = DecoderMode.HARD_CALIBRATED.value
    for (mode, basis, state, rounds), fit in fits.items():
        base = fits.get((reference, basis, state, rounds))
        if mode == reference or base is None:
            continue
        increases[f"{mode}/{reference}@{basis}/{state}/T={rounds}"] = threshold_increase(fit, base)
    return increases


@dataclass
class QubitCalibration:
    """单个比特的标定结果"""
    qubit: str
    counts: Optional[CalibrationCounts] = None
    model: Optional[ReadoutModel] = None
    flip_probs: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class CalibrationReport:
    """整条链的标定结果"""
    qubits: List[QubitCalibration]
    noise: Optional[NoiseParams] = None
    per_qubit: Dict[str, NoiseParams] = field(default_factory=dict)

    @property
    def usable(self) -> List[QubitCalibration]:
        return [q for q in self.qubits if q.error is None]


class Calibrator:
    """双测量标定：拟合读出密度并估计软/硬翻转概率"""

    def __init__(self, console: Optional[Console] = None, outlier_fraction: float = 0.01, seed: int = 0):
        self.console = console or Console()
        self.err_console = Console(stderr=True)
        self.outlier_fraction = outlier_fraction
        self.seed = seed

    def calibrate_qubit(self, qubit: str, pairs: Dict[int, List[Tuple[IQPoint, int]]]) -> QubitCalibration:
        missing = [z for z in (0, 1) if not pairs.get(z)]
        if missing:
            raise InsufficientDataError(
                f"比特 {qubit} 缺少制备态 {', '.join(f'|{z}⟩' for z in missing)} 的数据，两种制备态都需要")
        result = QubitCalibration(qubit)
        try:
            f0 = fit_kde(filter_hard_flips(pairs[0], 0), seed=self.seed)
            f1 = fit_kde(filter_hard_flips(pairs[1], 1), seed=self.seed)
        except DataError as e:
            result.error = str(e)
            return result
        result.model = ReadoutModel(f0, f1, leakage=LeakageSettings(self.outlier_fraction))
        result.counts = CalibrationCounts(
            qubit=qubit,
            prepared0=count_outcome_pairs(pairs[0], result.model),
            prepared1=count_outcome_pairs(pairs[1], result.model),
        )
        result.flip_probs = {z: estimate_flip_probs(result.counts, z) for z in (0, 1)}
        return result

    def run(self, input_file: Union[str, Path], output_dir: Union[str, Path],
            base: Optional[NoiseParams] = None) -> CalibrationReport:
        data = read_calibration_file(input_file)
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        self.console.print(f"[blue]读取标定数据: {len(data)} 个比特[/blue]")

        qubits = []
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      console=self.console) as progress:
            task = progress.add_task("拟合读出密度...", total=len(data))
            for qubit in sorted(data):
                progress.update(task, description=f"拟合比特 {qubit}...")
                qubits.append(self.calibrate_qubit(qubit, data[qubit]))
                progress.advance(task)

        report = CalibrationReport(qubits)
        for item in qubits:
            if item.error:
                self.err_console.print(f"[yellow]⚠️  比特 {item.qubit}: {item.error}[/yellow]")
                continue
            save_readout_model(output_dir / f"readout_{item.qubit}.sdgrid", item.model)
        usable = report.usable
        if not usable:
            raise InsufficientDataError("没有任何比特完成标定")
        save_calibration_counts(output_dir / "counts.ini", [q.counts for q in usable])
        report.noise = noise_from_calibration([q.counts for q in usable], base)
        report.per_qubit = {q.qubit: noise_from_calibration([q.counts], base) for q in usable}
        save_noise(output_dir / "noise.ini", report.noise, report.per_qubit)
        self._print_report(report)
        self.console.print(f"[green]✅ 标定完成，结果写入 {output_dir}[/green]")
        return report

    def _print_report(self, report: CalibrationReport) -> None:
        table = Table(title="标定结果")
        table.add_column("比特", style="cyan")
        table.add_column("p_s |0⟩", justify="right")
        table.add_column("p_h |0⟩", justify="right")
        table.add_column("p_s |1⟩", justify="right")
        table.add_column("p_h |1⟩", justify="right")
        table.add_column("平均 p_soft", justify="right")
        for item in report.usable:
            (s0, h0), (s1, h1) = item.flip_probs[0], item.flip_probs[1]
            table.add_row(item.qubit, f"{s0:.4f}", f"{h0:.4f}", f"{s1:.4f}", f"{h1:.4f}",
                          f"{mean_soft_flip_prob(item.model):.4f}")
        table.add_row("链平均", f"{report.noise.p_s_mean:.4f}", f"{report.noise.p_h:.4f}", "", "", "")
        self.console.print(table)


class ExperimentRunner:
    """按配置运行模拟实验、截断研究并汇总分析"""

    def __init__(self, config: ExperimentConfig, console: Optional[Console] = None,
                 runtime: Optional[RuntimeSettings] = None):
        self.config = config
        self.console = console or Console()
        self.err_console = Console(stderr=True)
        self.runtime = runtime or RuntimeSettings.from_env()
        self.noise = config.noise_params()
        self.model = config.readout.build()

    @property
    def workers(self) -> int:
        return self.config.worker_count(self.runtime)

    def _progress(self) -> Progress:
        return Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                        BarColumn(), TextColumn("{task.completed}/{task.total}"),
                        console=self.console, transient=True)

    def run_tallies(self) -> Dict[int, ExperimentTally]:
        """对每个轮数运行全部解码方式，返回 {T: tally}"""
        cfg = self.config
        passes = 2 if DecoderMode.HARD_DATA_INFORMED in cfg.modes else 1
        tallies = {}
        with self._progress() as progress:
            for rounds in cfg.effective_rounds:
                spec = cfg.code_spec(rounds)
                task = progress.add_task(f"d={spec.distance} T={rounds}", total=cfg.shots * passes)
                tallies[rounds] = run_experiment(
                    spec, self.noise, self.model, cfg.shots, cfg.modes, cfg.seed,
                    sub_distances=cfg.effective_sub_distances, workers=self.workers,
                    progress=lambda n, task=task: progress.advance(task, n),
                )
        return tallies

    def rows_from_tallies(self, tallies: Dict[int, ExperimentTally]) -> List[ResultRow]:
        cfg = self.config
        rows: List[ResultRow] = []
        for rounds, tally in tallies.items():
            spec = cfg.code_spec(rounds)
            for mode in cfg.modes:
                for ds in cfg.effective_sub_distances:
                    failures, shots = tally.pooled(mode, ds)
                    rows.append(self._row(mode, ds, -1, rounds, failures, shots))
                    offsets = subsample_windows(spec, ds)
                    if len(offsets) > 1:
                        for offset in offsets:
                            failures, shots = tally.get(mode, ds, offset)
                            rows.append(self._row(mode, ds, offset, rounds, failures, shots))
        fits = fits_from_rows(rows)
        for row in rows:
            fit = fits.get((row.mode, row.basis, row.state, row.T))
            if fit is not None and row.offset == -1:
                row.lambda_ = fit.lambda_factor
                row.lambda_err = fit.lambda_err
        return rows

    def _row(self, mode: DecoderMode, ds: int, offset: int, rounds: int, failures: int, shots: int) -> ResultRow:
        cfg = self.config
        estimate = estimate_rate(failures, shots, cfg.confidence)
        try:
            eps = per_round_rate(estimate.p_hat, rounds)
        except SaturationError:
            eps = None
        return ResultRow(mode.value, cfg.basis.value, cfg.logical_state.value, ds, offset, rounds,
                         FULL_PRECISION_BITS, shots, failures, estimate.p_hat, estimate.ci_low,
                         estimate.ci_high, eps)

    def run(self, output_csv: Union[str, Path], summary_json: Optional[Union[str, Path]] = None) -> List[ResultRow]:
        cfg = self.config
        self.console.print(f"[blue]运行实验: d={cfg.distance}, T={cfg.effective_rounds}, "
                           f"shots={cfg.shots}, modes={[m.value for m in cfg.modes]}[/blue]")
        tallies = self.run_tallies()
        rows = self.rows_from_tallies(tallies)
        write_results_csv(output_csv, rows)
        fits = fits_from_rows(rows)
        for key, fit in fits.items():
            for point in fit.excluded:
                self.err_console.print(f"[yellow]⚠️  {key[0]} T={key[3]} d={point.distance}: "
                                       f"失败次数 {point.failures} 不足，不参与拟合[/yellow]")
        increases = threshold_increases(fits)
        if summary_json:
            stats = {
                str(rounds): {"mean_p_soft": t.mean_p_soft, "leaked_fraction": t.leaked_fraction}
                for rounds, t in tallies.items()
            }
            write_summary_json(summary_json, self.effective_config(), fits, increases,
                               {"soft_statistics": stats})
        self.print_summary(rows, fits, increases)
        self.console.print(f"[green]✅ 结果已写入 {output_csv}[/green]")
        return rows

    def sweep_truncation(self, output_csv: Union[str, Path]) -> List[ResultRow]:
        """保存一批实验，对每个截断位数配对比较"""
        cfg = self.config
        bits = list(cfg.truncation_bits)
        rows: List[ResultRow] = []
        for rounds in cfg.effective_rounds:
            spec = cfg.code_spec(rounds)
            with self._progress() as progress:
                progress.add_task(f"生成实验 d={spec.distance} T={rounds}", total=None)
                shots = generate_shots(spec, self.noise, self.model, cfg.shots, cfg.seed)
            for ds in cfg.effective_sub_distances:
                sub_spec = spec.model_copy(update={"distance": ds})
                graph = build_graph(sub_spec, derive_edge_probabilities(sub_spec, self.noise))
                windows = [shot.window(spec, ds, offset)
                           for shot in shots for offset in subsample_windows(spec, ds)]
                self.console.print(f"[blue]截断研究 d={ds} T={rounds}: {len(windows)} 个样本[/blue]")
                points = truncation_sweep(windows, graph, bits, cfg.confidence,
                                          n_bootstrap=self.runtime.bootstrap, seed=cfg.seed)
                for point in points:
                    rows.append(ResultRow(
                        "soft", cfg.basis.value, cfg.logical_state.value, ds, -1, rounds, point.bits,
                        point.shots, point.failures, point.ratio, point.ci_low, point.ci_high,
                    ))
        write_results_csv(output_csv, rows)
        self._print_truncation(rows)
        self.console.print(f"[green]✅ 截断研究结果已写入 {output_csv}[/green]")
        return rows

    def effective_config(self) -> Dict[str, object]:
        return self.config.model_dump(mode="json")

    def print_summary(self, rows: List[ResultRow], fits: Dict[Tuple[str, str, str, int], LambdaFit],
                      increases: Dict[str, ThresholdIncrease]) -> None:
        table = Table(title="逻辑错误率")
        for column in ("解码方式", "d", "T", "shots", "failures", "P_L", "ε_L"):
            table.add_column(column, justify="right")
        for row in rows:
            if row.offset != -1:
                continue
            table.add_row(row.mode, str(row.d), str(row.T), str(row.shots), str(row.failures),
                          f"{row.p_hat:.3e}", "-" if row.eps_L is None else f"{row.eps_L:.3e}")
        self.console.print(table)
        if fits:
            fit_table = Table(title="Λ 拟合")
            for column in ("解码方式", "T", "Λ", "R²"):
                fit_table.add_column(column, justify="right")
            for (mode, _, _, rounds), fit in fits.items():
                fit_table.add_row(mode, str(rounds), f"{fit.lambda_factor:.3f} ± {fit.lambda_err:.3f}",
                                  f"{fit.r_squared:.3f}")
            self.console.print(fit_table)
        for name, inc in increases.items():
            self.console.print(f"[green]阈值提升 {name}: {inc.value:+.1%} ± {inc.error:.1%}[/green]")

    def _print_truncation(self, rows: List[ResultRow]) -> None:
        table = Table(title="截断精度 P_L^b / P_L^64")
        for column in ("d", "T", "b", "ratio", "区间"):
            table.add_column(column, justify="right")
        for row in rows:
            table.add_row(str(row.d), str(row.T), str(row.b), f"{row.p_hat:.4f}",
                          f"[{row.ci_low:.4f}, {row.ci_high:.4f}]")
        self.console.print(table)
