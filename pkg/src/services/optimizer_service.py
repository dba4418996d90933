"""
Learning-rate schedule and AdamW with decoupled weight decay.
"""

import math
from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from src.core.numerics import Tensor
from src.models.models import OptimizerState, TrainConfig
from src.models.weights import is_decayed
from src.utils.error_handling import ContractError, NumericError, InputValidator


def schedule_bounds(steps_per_epoch: int, cfg: TrainConfig) -> Tuple[int, int]:
    """(warmup steps, total steps) for a run."""
    if cfg.max_steps is not None:
        total = cfg.max_steps
        return int(round(total * cfg.warmup_epochs / cfg.epochs)), total
    return cfg.warmup_epochs * steps_per_epoch, cfg.epochs * steps_per_epoch


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """
    Linear warmup from 0 to the peak rate, then half-cosine decay to 0.

    The peak is base_lr, scaled by batch/256 when lr_scaling is on. Both
    pieces give the peak at step == warmup.
    """
    InputValidator.non_negative_int("step", step)
    InputValidator.positive_int("steps_per_epoch", steps_per_epoch)
    peak = cfg.effective_lr
    warmup, total = schedule_bounds(steps_per_epoch, cfg)
    if step < warmup:
        return peak * step / warmup
    if step >= total:
        return 0.0
    progress = (step - warmup) / max(1, total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(
    params: Sequence[Tuple[str, Tensor]],
    grads: Dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    cfg,
    decay_filter: Callable[[str], bool] = is_decayed,
) -> OptimizerState:
    """
    One AdamW update, in place.

    Args:
        params: (name, parameter) pairs
        grads: Gradient per parameter name
        state: Moment buffers and step counter; updated in place
        lr: Learning rate for this step
        cfg: Anything with betas, adam_eps and weight_decay
        decay_filter: Names that receive decoupled weight decay

    Raises:
        NumericError: if any gradient is non-finite; nothing is updated
    """
    for name, p in params:
        if name not in grads:
            raise ContractError(f"no gradient for parameter {name}")
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")

    beta1, beta2 = cfg.betas
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for name, p in params:
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            v = state.v[name] = np.zeros_like(p.data)

        if cfg.weight_decay and decay_filter(name):
            p.data *= p.dtype.type(1.0 - lr * cfg.weight_decay)

        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype, copy=False)

    return state
