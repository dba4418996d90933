"""
Four-panel reconstruction figure: original image, sampled window, masked
window (masked patches black) and the denormalized reconstruction.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.core.numerics import no_grad
from src.models.models import EncoderConfig, Image, MaskPlan, PatchGrid, WindowSpec
from src.models.weights import LomarModel
from src.services.encoder_service import encoder_forward
from src.services.head_loss_service import denormalize_prediction, reconstruct
from src.services.patchify_service import embed_patches, patchify, save_image, unpatchify
from src.services.sampler_service import gather_window
from src.utils.error_handling import DimensionError
from src.utils.logging_config import get_logger, log_operation

logger = get_logger(__name__)

PANEL_GAP = 4
GAP_VALUE = 1.0

Box = Tuple[int, int, int, int]


@dataclass
class RenderResult:
    path: Path
    height: int
    width: int
    # (top, left, height, width) of each panel in the figure
    panels: List[Box]


def window_patches(grid: PatchGrid, spec: WindowSpec) -> np.ndarray:
    return grid.patches[spec.global_indices(grid.grid_w)]


def masked_panel(grid: PatchGrid, spec: WindowSpec, plan: MaskPlan) -> Image:
    patches = window_patches(grid, spec).copy()
    patches[list(plan.masked)] = 0.0
    return unpatchify(patches, spec.k, spec.k, grid.patch_size, grid.channels)


def reconstruction_panel(model: LomarModel, grid: PatchGrid, spec: WindowSpec, plan: MaskPlan,
                         cfg: EncoderConfig, visible_copy: bool = False) -> Image:
    """Predicted window in pixel space, each patch mapped back with its own mean/std."""
    index = spec.global_indices(grid.grid_w)
    with no_grad():
        embeddings = embed_patches(grid, model.embed)
        fill = model.mask_token if model.mask_token is not None else model.embed.bias
        tokens, _, _ = gather_window(embeddings, grid, spec, plan, fill)
        preds = reconstruct(encoder_forward(tokens, model.encoder, cfg), model.head)
    pixels = denormalize_prediction(preds.data.astype(np.float64),
                                    grid.patch_mean[index], grid.patch_std[index])
    if visible_copy:
        visible = list(plan.visible)
        pixels[visible] = grid.patches[index][visible]
    return unpatchify(pixels, spec.k, spec.k, grid.patch_size, grid.channels)


def compose(panels: List[Image]) -> Tuple[np.ndarray, List[Box]]:
    """Panels side by side, top-aligned, separated by white gaps."""
    channels = max(p.channels for p in panels)
    height = max(p.height for p in panels)
    width = sum(p.width for p in panels) + PANEL_GAP * (len(panels) - 1)
    canvas = np.full((height, width, channels), GAP_VALUE)
    boxes, left = [], 0
    for panel in panels:
        pixels = panel.pixels if panel.channels == channels else np.repeat(panel.pixels, channels, axis=2)
        canvas[:panel.height, left:left + panel.width] = pixels
        boxes.append((0, left, panel.height, panel.width))
        left += panel.width + PANEL_GAP
    return canvas, boxes


@log_operation("render_reconstruction")
def render_reconstruction(model: LomarModel, image: Image, window: WindowSpec, plan: MaskPlan,
                          out_path: Union[str, Path], cfg: EncoderConfig, patch_size: int,
                          per_channel: bool = False, visible_copy: bool = False) -> RenderResult:
    """Write the four-panel PNG; returns its size and panel boxes."""
    grid = patchify(image, patch_size, per_channel)
    window.check_fits(grid.grid_h, grid.grid_w)
    if plan.window_len != window.k * window.k:
        raise DimensionError(f"plan for {plan.window_len} tokens, window has {window.k * window.k}")

    crop = unpatchify(window_patches(grid, window), window.k, window.k, patch_size, grid.channels)
    panels = [
        image,
        crop,
        masked_panel(grid, window, plan),
        reconstruction_panel(model, grid, window, plan, cfg, visible_copy),
    ]
    canvas, boxes = compose(panels)
    path = save_image(Image(canvas), out_path)
    logger.info(f"🖼️ Reconstruction figure → {path}")
    return RenderResult(path=Path(path), height=canvas.shape[0], width=canvas.shape[1], panels=boxes)
