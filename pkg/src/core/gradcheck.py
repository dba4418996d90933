"""
Central finite-difference checking of analytic gradients.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from src.core.numerics import Tensor, backward
from src.utils.error_handling import ContractError, InputValidator
from src.utils.logging_config import get_logger

logger = get_logger(__name__)

# Gradients below this magnitude are compared on an absolute scale
RELATIVE_ERROR_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    op_name: str
    max_relative_error: float
    tolerance: float
    passed: bool = field(init=False)
    worst_coordinate: Tuple[int, ...] = ()
    coordinates_checked: int = 0

    def __post_init__(self):
        self.passed = bool(self.max_relative_error <= self.tolerance)

    def to_row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.op_name:<28} {self.max_relative_error:>12.3e} {self.tolerance:>10.1e} "
                f"{status:>6}  {self.worst_coordinate}")


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_ERROR_FLOOR)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-6,
    tol: float = 1e-6,
    op_name: str = "f",
    analytic_scale: float = 1.0,
) -> GradCheckReport:
    """
    Compare analytic gradients of a scalar function against central differences.

    Args:
        f: Zero-argument function rebuilding the scalar loss from `params`
        params: Leaf tensors with requires_grad=True; perturbed in place
        step: Perturbation δ for (f(θ+δ) − f(θ−δ)) / 2δ
        tol: Maximum accepted relative error
        op_name: Label for the report
        analytic_scale: Multiplier applied to the analytic gradient; anything
            other than 1.0 is a negative control that must fail

    Returns:
        GradCheckReport; worst_coordinate is (param index, *array index)
    """
    InputValidator.positive_real("step", step)
    for p in params:
        if not p.requires_grad:
            raise ContractError(f"{op_name}: every checked parameter needs requires_grad=True")
        if p.dtype != np.float64:
            logger.warning(f"⚠️ {op_name}: finite differences at {p.dtype} are unreliable; use float64")

    first = f()
    if first.data.size != 1:
        raise ContractError(f"{op_name}: f must return a scalar, got shape {first.shape}")
    if f().item() != first.item():
        raise ContractError(f"{op_name}: f is not deterministic (fix its random generators)")

    for p in params:
        p.zero_grad()
    backward(first)
    analytic: List[np.ndarray] = [p.grad.copy() * analytic_scale for p in params]

    worst, worst_coord, checked = 0.0, (), 0
    for pi, p in enumerate(params):
        for ci in range(p.data.size):
            original = p.data.flat[ci]
            p.data.flat[ci] = original + step
            plus = f().item()
            p.data.flat[ci] = original - step
            minus = f().item()
            p.data.flat[ci] = original
            numeric = (plus - minus) / (2.0 * step)
            err = relative_error(float(analytic[pi].reshape(-1)[ci]), numeric)
            checked += 1
            if err > worst:
                worst = err
                worst_coord = (pi, *np.unravel_index(ci, p.shape))

    report = GradCheckReport(op_name=op_name, max_relative_error=worst, tolerance=tol,
                             worst_coordinate=tuple(int(c) for c in worst_coord),
                             coordinates_checked=checked)
    logger.debug(f"gradcheck {op_name}: max rel err {worst:.3e} over {checked} coordinates")
    return report
