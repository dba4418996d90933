"""
Ablation sweeps over mask ratio and window side.

Each point pretrains a fresh model for the same number of steps, then
probes it. Results go to CSV; no optimum is asserted.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

from src.models.models import VIEWS_TABLE, TrainConfig, views_for
from src.services.config_service import dump_config, parse_config
from src.services.corpus_service import LabeledImage, images_of
from src.services.metrics_service import smooth
from src.services.probe_service import ProbeConfig, linear_probe
from src.services.trainer_service import Trainer
from src.utils.error_handling import InputValidator, with_artifact_retry
from src.utils.logging_config import get_logger, log_operation

logger = get_logger(__name__)

DEFAULT_RATIOS = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
ABLATION_CSV_HEADER = ['axis', 'value', 'k', 'n_views', 'mask_ratio', 'steps', 'final_loss', 'probe_accuracy']


@dataclass
class AblationRow:
    axis: str
    value: float
    k: int
    n_views: int
    mask_ratio: float
    steps: int
    final_loss: float
    probe_accuracy: float


def _with(cfg: TrainConfig, overrides: Sequence[str]) -> TrainConfig:
    return parse_config(dump_config(cfg), overrides)


def _run_point(axis: str, value: float, cfg: TrainConfig, items: Sequence[LabeledImage], steps: int,
               probe: ProbeConfig, threads: Optional[int]) -> AblationRow:
    trainer = Trainer(cfg, images_of(items), threads=threads)
    rows = trainer.run(steps=steps)
    final_loss = float(smooth([r[2] for r in rows])[-1]) if rows else float('nan')
    acc = linear_probe(trainer.model, items, cfg, probe)
    logger.info(f"🧪 {axis}={value}: loss {final_loss:.4f}, probe {acc:.3f}")
    return AblationRow(axis=axis, value=value, k=cfg.sampler.k, n_views=cfg.sampler.n_views,
                       mask_ratio=cfg.sampler.mask_ratio, steps=steps,
                       final_loss=final_loss, probe_accuracy=acc)


@log_operation("mask_ratio_sweep")
def mask_ratio_sweep(cfg: TrainConfig, items: Sequence[LabeledImage], steps: int,
                     ratios: Sequence[float] = DEFAULT_RATIOS, probe: ProbeConfig = None,
                     threads: Optional[int] = None) -> List[AblationRow]:
    InputValidator.positive_int("steps", steps)
    probe = probe or ProbeConfig(seed=cfg.seed)
    return [
        _run_point('mask_ratio', ratio, _with(cfg, [f"sampler.mask_ratio={ratio!r}"]), items, steps, probe, threads)
        for ratio in ratios
    ]


@log_operation("window_sweep")
def window_sweep(cfg: TrainConfig, items: Sequence[LabeledImage], steps: int,
                 sides: Sequence[int] = tuple(VIEWS_TABLE), probe: ProbeConfig = None,
                 threads: Optional[int] = None) -> List[AblationRow]:
    """Window sides with their default view counts; sides larger than the grid are skipped."""
    InputValidator.positive_int("steps", steps)
    probe = probe or ProbeConfig(seed=cfg.seed)
    grid = cfg.data.grid_side
    rows = []
    for k in sides:
        if k > grid:
            logger.info(f"⏭️ Skipping window side {k}: grid is {grid}×{grid}")
            continue
        views = views_for(k, cfg.data.image_size, cfg.data.patch_size)
        point = _with(cfg, [f"sampler.k={k}", f"encoder.k={k}", f"sampler.n_views={views}"])
        rows.append(_run_point('window', k, point, items, steps, probe, threads))
    return rows


@with_artifact_retry
def write_ablation_csv(rows: Sequence[AblationRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(ABLATION_CSV_HEADER)
        for row in rows:
            writer.writerow([row.axis, row.value, row.k, row.n_views, row.mask_ratio, row.steps,
                             f"{row.final_loss:.6f}", f"{row.probe_accuracy:.4f}"])
    return path
