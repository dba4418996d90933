"""
Reconstruction head and masked-patch MSE objective.
"""

from typing import Union

import numpy as np

from src.core.numerics import Tensor, gelu
from src.models.models import LossValue, MaskPlan
from src.models.weights import HeadWeights
from src.utils.error_handling import ContractError, DimensionError


def reconstruct(latents: Tensor, head: HeadWeights) -> Tensor:
    """Per-token pixel prediction: Linear → GELU → Linear, or one Linear when no hidden layer."""
    d = latents.shape[-1]
    first = head.w_hidden if head.w_hidden is not None else head.w_out
    if first.shape[0] != d:
        raise DimensionError(f"head expects {first.shape[0]}-dim latents, got {d}")
    x = latents
    if head.w_hidden is not None:
        x = gelu(x @ head.w_hidden + head.b_hidden)
    return x @ head.w_out + head.b_out


def masked_mse(preds: Tensor, targets: Tensor, plan: MaskPlan, all_patches: bool = False) -> LossValue:
    """
    Mean over masked rows of the per-row mean squared error.

    Visible rows are never read, so they cannot change the loss. With
    all_patches every row counts.
    """
    if preds.shape != targets.shape:
        raise DimensionError(f"predictions {preds.shape} vs targets {targets.shape}")
    if preds.shape[0] != plan.window_len:
        raise DimensionError(f"{preds.shape[0]} predictions for a {plan.window_len}-token window")

    if all_patches:
        diff = preds - targets
        count = plan.window_len
    else:
        if not plan.masked:
            raise ContractError("masked MSE is undefined for an empty mask set")
        rows = np.asarray(plan.masked)
        diff = preds[rows] - targets[rows]
        count = len(plan.masked)

    loss = (diff * diff).mean()
    return LossValue(value=loss.item(), masked_count=count, tensor=loss)


def denormalize_prediction(pred: Union[np.ndarray, Tensor], mean, std) -> np.ndarray:
    """pred·std + mean, clipped to [0, 1]."""
    values = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    return np.clip(values * np.asarray(std) + np.asarray(mean), 0.0, 1.0)
