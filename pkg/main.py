#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
软信息重复码解码器 - 主程序入口
"""

import functools
import sys
import traceback
from pathlib import Path

import click
from rich.console import Console
from rich.table import Table

from softdecoder import __version__
from softdecoder.analysis import fits_from_rows, read_results_csv, write_summary_json
from softdecoder.code_model import RECORD_MAGIC, SyndromeMatrix, compute_detectors, iter_records_text, read_records_binary
from softdecoder.config import ExperimentConfig, load_experiment_config
from softdecoder.decoding_graph import build_graph, dump_graph, load_graph
from softdecoder.errors import ConfigValidationError, DimensionError, SoftDecoderError
from softdecoder.experiment import Calibrator, ExperimentRunner, threshold_increases
from softdecoder.matching_decoder import MatchingDecoder
from softdecoder.noise_model import derive_edge_probabilities, load_noise

console = Console()
err_console = Console(stderr=True)


def handle_errors(func):
    """把库异常映射为退出码：2 配置，3 数据，4 内部错误"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except SoftDecoderError as e:
            err_console.print(f"[red]❌ {type(e).__name__}: {e}[/red]")
            sys.exit(e.exit_code)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except Exception as e:
            err_console.print(f"[red]程序执行错误：{e}[/red]")
            traceback.print_exc()
            sys.exit(4)
    return wrapper


@click.group()
@click.version_option(version=__version__)
def cli():
    """软信息重复码解码器 - 标定、模拟、匹配解码与分析"""
    pass


@cli.command()
@click.option('-i', '--input', 'input_file', required=True, type=click.Path(exists=True, dir_okay=False),
              help='标定 IQ 数据文件（qubit prepared I Q second）')
@click.option('-o', '--output-dir', required=True, type=click.Path(file_okay=False), help='输出目录')
@click.option('--base-noise', type=click.Path(dir_okay=False), help='提供其余噪声参数的噪声文件')
@click.option('--outlier-fraction', default=0.01, show_default=True, type=float, help='泄漏判别的离群比例')
@click.option('--seed', default=0, show_default=True, type=int, help='KDE 带宽选择的划分种子')
@handle_errors
def calibrate(input_file, output_dir, base_noise, outlier_fraction, seed):
    """由双测量标定数据拟合读出模型并估计软/硬翻转概率"""
    base = load_noise(base_noise) if base_noise else None
    Calibrator(console, outlier_fraction=outlier_fraction, seed=seed).run(input_file, output_dir, base)


def _run(config_file, output, summary, effective_config):
    config = load_experiment_config(config_file)
    if effective_config:
        Path(effective_config).write_text(config.to_ini(), encoding="utf-8")
    ExperimentRunner(config, console).run(output, summary)


_run_options = [
    click.option('-c', '--config', 'config_file', required=True, type=click.Path(dir_okay=False), help='实验配置文件'),
    click.option('-o', '--output', required=True, type=click.Path(dir_okay=False), help='结果 CSV 路径'),
    click.option('--summary', type=click.Path(dir_okay=False), help='JSON 摘要路径'),
    click.option('--effective-config', type=click.Path(dir_okay=False), help='写出生效配置（INI）'),
]


def _with_run_options(func):
    for option in reversed(_run_options):
        func = option(func)
    return func


@cli.command()
@_with_run_options
@handle_errors
def run(config_file, output, summary, effective_config):
    """按配置运行模拟实验并输出逻辑错误率与 Λ 拟合"""
    _run(config_file, output, summary, effective_config)


@cli.command()
@_with_run_options
@handle_errors
def simulate(config_file, output, summary, effective_config):
    """run 的别名"""
    _run(config_file, output, summary, effective_config)


@cli.command('sweep-truncation')
@click.option('-c', '--config', 'config_file', required=True, type=click.Path(dir_okay=False), help='实验配置文件')
@click.option('-o', '--output', required=True, type=click.Path(dir_okay=False), help='比值 CSV 路径')
@handle_errors
def sweep_truncation(config_file, output):
    """软翻转概率截断精度研究"""
    config = load_experiment_config(config_file)
    if not config.truncation_bits:
        raise ConfigValidationError("experiment.truncation_bits", "截断研究需要给出位数列表")
    ExperimentRunner(config, console).sweep_truncation(output)


def _iter_syndromes(records_file, spec):
    with open(records_file, "rb") as f:
        magic = f.read(len(RECORD_MAGIC))
    if magic == RECORD_MAGIC:
        (d, rounds), records = read_records_binary(records_file)
        if (d, rounds) != (spec.distance, spec.rounds):
            raise DimensionError(f"记录文件 d={d} T={rounds} 与解码图 d={spec.distance} T={spec.rounds} 不一致")
    else:
        records = iter_records_text(records_file, spec)
    for record in records:
        yield compute_detectors(record, spec)


@cli.command()
@click.option('-g', '--graph', 'graph_file', required=True, type=click.Path(exists=True, dir_okay=False), help='解码图文件')
@click.option('-r', '--records', 'records_file', type=click.Path(exists=True, dir_okay=False),
              help='测量记录文件（文本或二进制）')
@click.option('-s', '--syndrome', 'syndrome_text', help='单个综合征，按行用 / 分隔，例如 01/00/10')
@handle_errors
def decode(graph_file, records_file, syndrome_text):
    """用静态解码图对测量记录或综合征做最小权匹配"""
    if (records_file is None) == (syndrome_text is None):
        raise click.UsageError("必须且只能给出 --records 或 --syndrome 之一")
    graph = load_graph(graph_file)
    decoder = MatchingDecoder(graph)
    if syndrome_text is not None:
        syndrome = SyndromeMatrix.from_text(syndrome_text, graph.spec)
        console.print(decoder.decode_text(syndrome), markup=False, highlight=False)
        return
    flips = 0
    n = 0
    for n, syndrome in enumerate(_iter_syndromes(records_file, graph.spec), start=1):
        result = decoder.decode(syndrome)
        flips += result.logical_flip
        console.print(f"# shot {n}", markup=False, highlight=False)
        console.print(decoder.decode_text(syndrome), markup=False, highlight=False)
    console.print(f"[green]✅ 解码 {n} 次实验，预测逻辑翻转 {flips} 次[/green]")


@cli.command()
@click.option('-i', '--input', 'input_file', required=True, type=click.Path(exists=True, dir_okay=False), help='结果 CSV')
@click.option('-o', '--output', type=click.Path(dir_okay=False), help='JSON 摘要路径')
@handle_errors
def analyze(input_file, output):
    """重新读取结果 CSV，输出 Λ 拟合与阈值提升"""
    rows = read_results_csv(input_file)
    fits = fits_from_rows(rows)
    if not fits:
        console.print("[yellow]⚠️  没有可拟合的数据组（每组至少需要两个失败次数足够的码距）[/yellow]")
    increases = threshold_increases(fits)
    if output:
        write_summary_json(output, {"source": str(input_file)}, fits, increases)
        console.print(f"[green]✅ 摘要已写入 {output}[/green]")
    table = Table(title="Λ 拟合")
    for column in ("解码方式", "基", "逻辑态", "T", "Λ", "R²", "剔除点"):
        table.add_column(column, justify="right")
    for (mode, basis, state, rounds), fit in fits.items():
        table.add_row(mode, basis, state, str(rounds), f"{fit.lambda_factor:.3f} ± {fit.lambda_err:.3f}",
                      f"{fit.r_squared:.3f}", str(len(fit.excluded)))
    console.print(table)
    for name, inc in increases.items():
        console.print(f"[green]阈值提升 {name}: {inc.value:+.1%} ± {inc.error:.1%}[/green]")


@cli.command()
@click.option('-c', '--config', 'config_file', required=True, type=click.Path(dir_okay=False), help='实验配置文件')
@click.option('--dump-graph', 'graph_out', type=click.Path(dir_okay=False), help='写出静态解码图')
@handle_errors
def info(config_file, graph_out):
    """显示生效配置与边概率表"""
    config: ExperimentConfig = load_experiment_config(config_file)
    console.print("[blue]生效配置[/blue]")
    console.print(config.to_ini(), markup=False, highlight=False)
    spec = config.code_spec()
    table_data = derive_edge_probabilities(spec, config.noise_params())
    table = Table(title=f"边概率 d={spec.distance} T={spec.rounds} basis={spec.basis.value}")
    table.add_column("类型", style="cyan")
    table.add_column("编号", justify="right")
    table.add_column("轮", justify="right")
    table.add_column("概率", justify="right")
    table.add_column("动态", justify="center")
    for key, entry in table_data.items():
        table.add_row(key.kind.value, str(key.index), str(key.round), f"{entry.probability:.6g}",
                      "✓" if entry.is_dynamic else "")
    console.print(table)
    if graph_out:
        dump_graph(build_graph(spec, table_data), graph_out)
        console.print(f"[green]✅ 解码图已写入 {graph_out}[/green]")


if __name__ == '__main__':
    cli()
