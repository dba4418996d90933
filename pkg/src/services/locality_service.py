"""
Where does the encoder look when it reconstructs a masked patch?

For a masked target inside a window, the head-averaged post-softmax attention
row at one layer is profiled against the within-window distance from the
target: mean distance and cumulative mass within each radius. A uniform
attention row gives the baseline profile.
"""

import csv
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from src.core.numerics import no_grad
from src.models.models import EncoderConfig, LocalityStat, MaskPlan, PatchGrid, WindowSpec
from src.models.weights import LomarModel
from src.services.encoder_service import encoder_forward
from src.services.patchify_service import embed_patches
from src.services.sampler_service import gather_window, make_mask_plan, sample_windows
from src.utils.error_handling import ContractError, InputValidator, ParameterError, with_artifact_retry
from src.utils.logging_config import get_logger, log_operation
from src.utils.seeding import derive_rng

logger = get_logger(__name__)

METRICS = ('chebyshev', 'euclidean')
DEFAULT_RADIUS = 2


def window_distances(k: int, target: int, metric: str = 'chebyshev') -> np.ndarray:
    """Distance from window-local index `target` to every cell, in raster order."""
    InputValidator.choice("metric", metric, METRICS)
    rows, cols = np.divmod(np.arange(k * k), k)
    tr, tc = divmod(target, k)
    dr, dc = np.abs(rows - tr), np.abs(cols - tc)
    if metric == 'chebyshev':
        return np.maximum(dr, dc).astype(np.float64)
    return np.sqrt(dr ** 2 + dc ** 2)


def profile(mass: np.ndarray, k: int, target: int, metric: str = 'chebyshev', layer: int = 0) -> LocalityStat:
    """Mean distance and mass-within-radius r for r = 0 .. k−1."""
    distances = window_distances(k, target, metric)
    radii = np.arange(k)
    within = np.array([mass[distances <= r].sum() for r in radii])
    return LocalityStat(target=divmod(target, k), attention_mass=mass, distances=distances,
                        mean_distance=float(np.dot(mass, distances)), mass_within_radius=within,
                        layer=layer, metric=metric)


def uniform_baseline(k: int, target: int, metric: str = 'chebyshev') -> LocalityStat:
    """Profile of attention spread evenly over the window."""
    return profile(np.full(k * k, 1.0 / (k * k)), k, target, metric)


def attention_locality(model: LomarModel, grid: PatchGrid, window: WindowSpec, plan: MaskPlan,
                       target: int, layer: int, cfg: EncoderConfig,
                       metric: str = 'chebyshev') -> LocalityStat:
    """
    Locality profile of the attention row of masked `target` at `layer`.

    Raises:
        ContractError: target is not masked
        ParameterError: layer out of range
    """
    if target not in plan.masked:
        raise ContractError(f"target {target} is not in the mask set")
    if not 0 <= layer < cfg.num_layers:
        raise ParameterError(f"layer must lie in [0, {cfg.num_layers}), got {layer}")
    captured: List[np.ndarray] = []
    with no_grad():
        embeddings = embed_patches(grid, model.embed)
        fill = model.mask_token if model.mask_token is not None else model.embed.bias
        tokens, _, _ = gather_window(embeddings, grid, window, plan, fill)
        encoder_forward(tokens, model.encoder, cfg, capture=captured)
    mass = captured[layer][:, target, :].astype(np.float64).mean(axis=0)
    return profile(mass, cfg.k, target, metric, layer)


def beats_uniform(stat: LocalityStat, radius: int = DEFAULT_RADIUS) -> bool:
    k = int(round(np.sqrt(stat.attention_mass.size)))
    if not 0 <= radius < k:
        raise ParameterError(f"radius must lie in [0, {k}), got {radius}")
    baseline = uniform_baseline(k, stat.target[0] * k + stat.target[1], stat.metric)
    return bool(stat.mass_within_radius[radius] > baseline.mass_within_radius[radius])


@log_operation("locality_survey")
def locality_survey(model: LomarModel, grids: Sequence[PatchGrid], cfg: EncoderConfig, mask_ratio: float,
                    layer: int, seed: int, windows_per_grid: int = 2, targets_per_window: int = 4,
                    radius: int = DEFAULT_RADIUS, metric: str = 'chebyshev') -> Tuple[float, List[LocalityStat]]:
    """
    Fraction of sampled masked targets whose within-radius mass beats uniform attention.

    Returns:
        (fraction, every profile)
    """
    InputValidator.positive_int("windows_per_grid", windows_per_grid)
    InputValidator.positive_int("targets_per_window", targets_per_window)
    # Windows smaller than the radius are compared on their full extent
    radius = min(radius, cfg.k - 1)
    stats: List[LocalityStat] = []
    for gi, grid in enumerate(grids):
        rng = derive_rng(seed, 'windows', gi)
        for spec in sample_windows(grid.grid_h, grid.grid_w, cfg.k, windows_per_grid, rng):
            plan = make_mask_plan(cfg.k, mask_ratio, rng)
            if not plan.masked:
                raise ContractError("locality survey needs a non-zero mask ratio")
            picks = rng.choice(plan.masked, size=min(targets_per_window, len(plan.masked)), replace=False)
            for target in picks:
                stats.append(attention_locality(model, grid, spec, plan, int(target), layer, cfg, metric))
    wins = sum(beats_uniform(s, radius) for s in stats)
    fraction = wins / len(stats)
    logger.info(f"🔍 Locality: {wins}/{len(stats)} targets beat uniform within radius {radius} "
                f"at layer {layer} ({fraction:.1%})")
    return fraction, stats


@with_artifact_retry
def write_locality_csv(stats: Sequence[LocalityStat], path: Union[str, Path]) -> Path:
    """One row per (target, radius): layer, target row/col, radius, mass within radius, mean distance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['sample', 'layer', 'target_row', 'target_col', 'metric',
                         'radius', 'mass_within_radius', 'mean_distance'])
        for index, stat in enumerate(stats):
            for radius, mass in enumerate(stat.mass_within_radius):
                writer.writerow([index, stat.layer, stat.target[0], stat.target[1], stat.metric,
                                 radius, f"{mass:.6f}", f"{stat.mean_distance:.6f}"])
    return path


def summarize(stats: Sequence[LocalityStat]) -> Dict[str, float]:
    if not stats:
        return {'samples': 0}
    return {
        'samples': len(stats),
        'mean_distance': float(np.mean([s.mean_distance for s in stats])),
        'mass_within_2': float(np.mean([s.mass_within_radius[min(2, len(s.mass_within_radius) - 1)]
                                        for s in stats])),
    }
