"""
Window sampling and per-window mask plans.

Windows are drawn independently (overlap allowed) and every window gets its
own mask plan. Masked tokens are the embedding of a zeroed patch, which is the
projection bias, unless a learnable mask token is supplied.
"""

from typing import List, Tuple

import numpy as np

from src.core.numerics import Tensor, mul, add
from src.models.models import MaskPlan, PatchGrid, WindowSpec, mask_count
from src.utils.error_handling import ContractError, DimensionError, InputValidator, ParameterError


def sample_windows(grid_h: int, grid_w: int, k: int, n: int, rng: np.random.Generator) -> List[WindowSpec]:
    """n windows with (top, left) uniform over the valid range."""
    InputValidator.positive_int("k", k)
    InputValidator.positive_int("n", n)
    if k > min(grid_h, grid_w):
        raise DimensionError(f"window side {k} exceeds the {grid_h}×{grid_w} patch grid")
    specs = []
    for _ in range(n):
        top = int(rng.integers(0, grid_h - k + 1))
        left = int(rng.integers(0, grid_w - k + 1))
        specs.append(WindowSpec(top=top, left=left, k=k))
    return specs


def make_mask_plan(k: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """floor(ratio·k²) distinct window-local indices, uniform without replacement."""
    InputValidator.positive_int("k", k)
    InputValidator.probability("ratio", ratio)
    count = mask_count(k, ratio)
    chosen = rng.choice(k * k, size=count, replace=False) if count else np.empty(0, dtype=int)
    return MaskPlan(window_len=k * k, masked=tuple(sorted(int(i) for i in chosen)), ratio=float(ratio))


def tile_windows(grid_h: int, grid_w: int, k: int) -> List[WindowSpec]:
    """Windows covering the whole grid; the last row/column of tiles is flush with the edge."""
    if k > min(grid_h, grid_w):
        raise DimensionError(f"window side {k} exceeds the {grid_h}×{grid_w} patch grid")

    def starts(extent: int) -> List[int]:
        points = list(range(0, extent - k + 1, k))
        if points[-1] != extent - k:
            points.append(extent - k)
        return points

    return [WindowSpec(top, left, k) for top in starts(grid_h) for left in starts(grid_w)]


def window_to_global(spec: WindowSpec, j: int, grid_w: int) -> int:
    return (spec.top + j // spec.k) * grid_w + (spec.left + j % spec.k)


def global_to_window(spec: WindowSpec, index: int, grid_w: int) -> int:
    row, col = divmod(index, grid_w)
    dr, dc = row - spec.top, col - spec.left
    if not (0 <= dr < spec.k and 0 <= dc < spec.k):
        raise ParameterError(f"patch {index} lies outside window {spec}")
    return dr * spec.k + dc


def gather_window(embeddings: Tensor, targets: PatchGrid, spec: WindowSpec, plan: MaskPlan,
                  fill: Tensor) -> Tuple[Tensor, Tensor, MaskPlan]:
    """
    Window tokens in window-local raster order, masked rows replaced by `fill`.

    Args:
        embeddings: (grid_h·grid_w) × d patch embeddings
        targets: Patch grid supplying normalized targets
        spec: Window location
        plan: Mask plan for this window
        fill: d-vector standing in for masked patches (projection bias or mask token)

    Returns:
        (tokens k²×d, targets k²×patch_dim, plan)
    """
    spec.check_fits(targets.grid_h, targets.grid_w)
    if plan.window_len != spec.k * spec.k:
        raise ContractError(f"mask plan for {plan.window_len} tokens used on a k={spec.k} window")
    if embeddings.shape[0] != targets.num_patches:
        raise DimensionError(f"{embeddings.shape[0]} embeddings for {targets.num_patches} patches")
    index = spec.global_indices(targets.grid_w)
    rows = embeddings[index]
    window_targets = Tensor(targets.normalized_targets[index], dtype=embeddings.dtype)
    if not plan.masked:
        return rows, window_targets, plan

    masked = Tensor(plan.mask_vector(), dtype=embeddings.dtype)
    tokens = add(mul(rows, 1.0 - masked), mul(masked, fill))
    return tokens, window_targets, plan


def format_mask_plan(plan: MaskPlan) -> str:
    """Debug line: `k ratio i0 i1 ...`."""
    return " ".join([str(plan.k), repr(plan.ratio), *[str(i) for i in plan.masked]])


def parse_mask_plan(line: str) -> MaskPlan:
    parts = line.split()
    if len(parts) < 2:
        raise ContractError(f"mask plan line needs at least k and ratio: {line!r}")
    try:
        k, ratio = int(parts[0]), float(parts[1])
        masked = tuple(int(p) for p in parts[2:])
    except ValueError:
        raise ContractError(f"malformed mask plan line: {line!r}")
    return MaskPlan(window_len=k * k, masked=masked, ratio=ratio)
