"""
Attention cost: analytic model and wall-clock measurement.

Local reconstruction attends inside n windows of m×m patches, costing
hw + n·m⁴; global reconstruction attends over all hw patches, costing
(hw)². The measured proxy is forward+backward of one attention layer with
contextual RPE, excluding patch embedding.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
from pathlib import Path
import platform
import statistics
import time
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import psutil

from src.core.numerics import Tensor, backward, precision
from src.models.models import CostModel, EncoderConfig, ScalingReport, ScalingRow
from src.models.weights import init_encoder
from src.services.encoder_service import attention
from src.utils.error_handling import (
    InputValidator, MeasurementError, ParameterError, with_artifact_retry
)
from src.utils.logging_config import get_logger, log_operation, performance_monitor
from src.utils.seeding import derive_rng

logger = get_logger(__name__)

SCALING_CSV_HEADER = ['config', 'analytic_local', 'analytic_global', 'measured_local_s', 'measured_global_s']

# Measured medians must exceed the clock resolution by this factor
RESOLUTION_FACTOR = 20.0


@dataclass
class BenchConfig:
    grid_sides: Tuple[int, ...] = (8, 14, 28)
    window_side: int = 7
    n_views: int = 4
    n_sweep: Tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    embed_dim: int = 64
    num_heads: int = 4
    repetitions: int = 5
    warmup: int = 1
    parallel: bool = False
    seed: int = 0

    def __post_init__(self):
        InputValidator.positive_int("bench.window_side", self.window_side)
        InputValidator.positive_int("bench.n_views", self.n_views)
        InputValidator.positive_int("bench.repetitions", self.repetitions)
        InputValidator.non_negative_int("bench.warmup", self.warmup)
        for side in self.grid_sides:
            if side < self.window_side:
                raise ParameterError(f"grid side {side} is smaller than the window side {self.window_side}")


def attention_cost(h: int, w: int, n: int, m: int) -> CostModel:
    """local = hw + n·m⁴, global = (hw)², unit constant."""
    for name, value in (('h', h), ('w', w), ('n', n), ('m', m)):
        InputValidator.positive_int(name, value)
    if m > min(h, w):
        raise ParameterError(f"window side {m} exceeds the {h}×{w} grid")
    hw = h * w
    return CostModel(grid_h=h, grid_w=w, n_windows=n, window_side=m,
                     local_cost=float(hw + n * m ** 4), global_cost=float(hw * hw))


class AttentionProbe:
    """One attention layer at a given window side, with random input blocks."""

    def __init__(self, side: int, embed_dim: int, num_heads: int, blocks: int, seed: int):
        cfg = EncoderConfig(embed_dim=embed_dim, num_heads=num_heads, num_layers=1, k=side)
        rng = derive_rng(seed, 'bench', side, blocks)
        with precision(np.float32):
            weights = init_encoder(cfg, rng)
            # Non-zero RPE so the bias path does real work
            for table in weights.rpe:
                table.data[...] = rng.normal(0.0, 0.02, size=table.shape)
            self.weights = weights
            self.inputs = [Tensor(rng.normal(size=(side * side, embed_dim)), requires_grad=True)
                           for _ in range(blocks)]
        self.side = side
        self.num_heads = num_heads

    def __call__(self) -> None:
        # Shadows keep gradient buffers private to each call
        weights = self.weights.shadow()
        with precision(np.float32):
            for x in self.inputs:
                block = Tensor(x.data, requires_grad=True)
                out = attention(block, weights.layers[0], weights.rpe[0], self.side, self.num_heads)
                backward(out.sum())


def time_call(fn: Callable[[], None], repetitions: int, warmup: int = 1, parallel: bool = False) -> float:
    """Median wall-clock seconds of `fn`."""
    for _ in range(warmup):
        fn()

    def once(_):
        start = time.perf_counter()
        fn()
        return time.perf_counter() - start

    if parallel:
        with ThreadPoolExecutor(max_workers=repetitions) as pool:
            samples = list(pool.map(once, range(repetitions)))
    else:
        samples = [once(i) for i in range(repetitions)]
    median = statistics.median(samples)
    resolution = time.get_clock_info('perf_counter').resolution
    if median < RESOLUTION_FACTOR * resolution:
        raise MeasurementError(
            f"median {median:.3e}s is below {RESOLUTION_FACTOR:g}× the timer resolution {resolution:.1e}s"
        )
    return median


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2:
        return float('nan')
    slope, _ = np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)
    return float(slope)


def linear_r2(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return float('nan')
    coeffs = np.polyfit(x, y, 1)
    residual = y - np.polyval(coeffs, x)
    total = np.sum((y - y.mean()) ** 2)
    if total == 0:
        return 1.0
    return float(1.0 - np.sum(residual ** 2) / total)


def machine_metadata() -> Dict[str, object]:
    memory = psutil.virtual_memory()
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'cpu_physical': psutil.cpu_count(logical=False),
        'cpu_logical': psutil.cpu_count(logical=True),
        'memory_total_mb': round(memory.total / 2 ** 20),
        'rss_mb': round(psutil.Process().memory_info().rss / 2 ** 20, 1),
    }


def _row(config: str, cost: CostModel, local_s: float, global_s: float) -> ScalingRow:
    return ScalingRow(config=config, analytic_local=cost.local_cost, analytic_global=cost.global_cost,
                      measured_local_s=local_s, measured_global_s=global_s,
                      patches=cost.grid_h * cost.grid_w, n_windows=cost.n_windows)


@log_operation("scaling_bench")
def run_scaling_bench(bench: BenchConfig = None) -> ScalingReport:
    """
    Measure local and global attention time.

    Rows: one per grid side at the default view count, then one per extra
    view count of the n-sweep on the largest grid.
    """
    bench = bench or BenchConfig()
    m, reps = bench.window_side, bench.repetitions
    local_cache: Dict[int, float] = {}

    def local_time(n: int) -> float:
        if n not in local_cache:
            probe = AttentionProbe(m, bench.embed_dim, bench.num_heads, n, bench.seed)
            with performance_monitor("bench_local", n=n):
                local_cache[n] = time_call(probe, reps, bench.warmup, bench.parallel)
        return local_cache[n]

    rows: List[ScalingRow] = []
    global_by_side: Dict[int, float] = {}
    for side in bench.grid_sides:
        probe = AttentionProbe(side, bench.embed_dim, bench.num_heads, 1, bench.seed)
        with performance_monitor("bench_global", side=side):
            global_s = time_call(probe, reps, bench.warmup, bench.parallel)
        global_by_side[side] = global_s
        cost = attention_cost(side, side, bench.n_views, m)
        rows.append(_row(f"grid{side}_m{m}_n{bench.n_views}", cost, local_time(bench.n_views), global_s))
        logger.info(f"⏱️ grid {side}×{side}: global {global_s * 1e3:.2f}ms, "
                    f"local n={bench.n_views} {local_time(bench.n_views) * 1e3:.2f}ms")

    largest = max(bench.grid_sides)
    for n in bench.n_sweep:
        if n == bench.n_views:
            continue
        cost = attention_cost(largest, largest, n, m)
        rows.append(_row(f"grid{largest}_m{m}_n{n}", cost, local_time(n), global_by_side[largest]))

    sides = sorted(global_by_side)
    patches = [s * s for s in sides]
    global_times = [global_by_side[s] for s in sides]

    sweep = sorted(set(bench.n_sweep) | {bench.n_views})
    sweep_times = [local_time(n) for n in sweep]
    report = ScalingReport(
        rows=rows,
        global_exponent=loglog_slope(patches, global_times),
        local_exponent=loglog_slope(sweep, sweep_times),
        local_views_r2=linear_r2(sweep, sweep_times),
        metadata=machine_metadata(),
    )
    logger.info(f"📈 global exponent {report.global_exponent:.2f}, local-vs-n exponent "
                f"{report.local_exponent:.2f} (R² {report.local_views_r2:.3f})",
                extra={'report': report.metadata})
    return report


@with_artifact_retry
def write_scaling_csv(report: ScalingReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(SCALING_CSV_HEADER)
        for row in report.rows:
            writer.writerow([row.config, row.analytic_local, row.analytic_global,
                             f"{row.measured_local_s:.6e}", f"{row.measured_global_s:.6e}"])
    return path


def read_scaling_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))
