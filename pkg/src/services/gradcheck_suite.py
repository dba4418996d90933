"""
Finite-difference checks for every differentiable operation and for the
whole pretraining loss, run at 64-bit precision.

The suite passes when every check passes and the negative control (analytic
gradient scaled by 1.01) fails.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from src.core.gradcheck import GradCheckReport, finite_diff_check
from src.core.numerics import (
    Tensor, concat, gelu, layer_norm, log_softmax_rows, precision, softmax_rows, take_along_rows
)
from src.models.models import EncoderConfig, Image, WindowSpec
from src.models.weights import build_model
from src.services.encoder_service import attention, encoder_forward, relative_offset_index, rpe_bias
from src.services.head_loss_service import masked_mse, reconstruct
from src.services.patchify_service import embed_patches, patchify
from src.services.sampler_service import gather_window, make_mask_plan
from src.utils.logging_config import get_logger, log_operation
from src.utils.seeding import derive_rng

logger = get_logger(__name__)

OP_TOLERANCE = 1e-6
PIPELINE_TOLERANCE = 1e-3
NEGATIVE_CONTROL_SCALE = 1.01

# Full-pipeline check shape: L=2, d=16, H=2, k=4 on a 4×4-patch image
PIPELINE_ENCODER = dict(embed_dim=16, num_heads=2, num_layers=2, mlp_ratio=2.0, k=4)
PIPELINE_PATCH = 2


@dataclass
class SuiteResult:
    reports: List[GradCheckReport] = field(default_factory=list)
    control: GradCheckReport = None

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports) and self.control is not None and not self.control.passed

    def table(self) -> str:
        lines = [f"{'check':<28} {'max rel err':>12} {'tol':>10} {'status':>6}  worst"]
        lines += [r.to_row() for r in self.reports]
        if self.control is not None:
            verdict = "expected FAIL" if not self.control.passed else "UNEXPECTED PASS"
            lines.append(f"{self.control.to_row()}  ({verdict})")
        return "\n".join(lines)


def _leaf(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def op_checks(seed: int = 0) -> List[Tuple[str, Callable[[], Tensor], List[Tensor], float]]:
    """(name, loss function, parameters, tolerance) for each primitive."""
    rng = derive_rng(seed, 'init', 1)
    checks = []

    a, b = _leaf(rng, 5, 7), _leaf(rng, 7, 3)
    w_mm = Tensor(rng.normal(size=(5, 3)))
    checks.append(("matmul", lambda: ((a @ b) * w_mm).sum(), [a, b], OP_TOLERANCE))

    x_sm = _leaf(rng, 4, 4)
    w_sm = Tensor(rng.normal(size=(4, 4)))
    checks.append(("softmax_rows", lambda: (softmax_rows(x_sm) * w_sm).sum(), [x_sm], OP_TOLERANCE))

    x_ls = _leaf(rng, 3, 5)
    w_ls = Tensor(rng.normal(size=(3, 5)))
    checks.append(("log_softmax_rows", lambda: (log_softmax_rows(x_ls) * w_ls).sum(), [x_ls], OP_TOLERANCE))

    x_ln, g_ln, b_ln = _leaf(rng, 3, 8), _leaf(rng, 8), _leaf(rng, 8)
    w_ln = Tensor(rng.normal(size=(3, 8)))
    checks.append(("layer_norm", lambda: (layer_norm(x_ln, g_ln, b_ln, 1e-6) * w_ln).sum(),
                   [x_ln, g_ln, b_ln], OP_TOLERANCE))

    x_ge = _leaf(rng, 16)
    w_ge = Tensor(rng.normal(size=16))
    checks.append(("gelu", lambda: (gelu(x_ge) * w_ge).sum(), [x_ge], 1e-5))

    k = 2
    offsets = relative_offset_index(k)
    scores = _leaf(rng, k * k, (2 * k - 1) ** 2)
    w_tr = Tensor(rng.normal(size=(k * k, k * k)))
    checks.append(("take_along_rows", lambda: (take_along_rows(scores, offsets) * w_tr).sum(),
                   [scores], OP_TOLERANCE))

    q, table = _leaf(rng, k * k, 3), _leaf(rng, (2 * k - 1) ** 2, 3)
    w_rb = Tensor(rng.normal(size=(k * k, k * k)))
    checks.append(("rpe_bias", lambda: (rpe_bias(q, table, offsets) * w_rb).sum(), [q, table], OP_TOLERANCE))

    c1, c2 = _leaf(rng, 3, 2), _leaf(rng, 3, 4)
    w_cc = Tensor(rng.normal(size=(3, 6)))
    checks.append(("concat", lambda: (concat([c1, c2], axis=1) * w_cc).sum(), [c1, c2], OP_TOLERANCE))

    e1, e2 = _leaf(rng, 3, 4), _leaf(rng, 4)
    w_el = Tensor(rng.normal(size=(3, 4)))
    checks.append(("add_mul_div_broadcast",
                   lambda: (((e1 + e2) * e1 / (e2 * e2 + 2.0)) * w_el).sum(), [e1, e2], OP_TOLERANCE))

    xc, wc = _leaf(rng, 4, 4), _leaf(rng, 4, 4)
    targets = Tensor(rng.normal(size=(4, 4)))
    checks.append(("matmul_softmax_mse_chain",
                   lambda: ((softmax_rows(xc @ wc) - targets) * (softmax_rows(xc @ wc) - targets)).mean(),
                   [xc, wc], 1e-5))
    return checks


def attention_check(seed: int = 0):
    rng = derive_rng(seed, 'init', 2)
    cfg = EncoderConfig(embed_dim=8, num_heads=2, num_layers=1, mlp_ratio=2.0, k=2)
    model = build_model(cfg.embed_dim, 4, cfg, 0, rng)
    layer, table = model.encoder.layers[0], model.encoder.rpe[0]
    table.data[...] = rng.normal(0.0, 0.3, size=table.shape)
    for p in (layer.wq, layer.wk, layer.wv, layer.wo):
        p.data[...] = rng.normal(0.0, 0.5, size=p.shape)
    x = _leaf(rng, cfg.window_len, cfg.embed_dim)
    w = Tensor(rng.normal(size=(cfg.window_len, cfg.embed_dim)))
    params = [x, layer.wq, layer.wk, layer.wv, layer.wo, layer.bo, table]
    return ("attention", lambda: (attention(x, layer, table, cfg.k, cfg.num_heads) * w).sum(), params, OP_TOLERANCE)


def pipeline_check(seed: int = 0, mask_token: bool = False):
    """Embed → window → encoder → head → masked MSE on a 4×4 window."""
    rng = derive_rng(seed, 'init', 3)
    cfg = EncoderConfig(**PIPELINE_ENCODER)
    side = cfg.k * PIPELINE_PATCH
    grid = patchify(Image(rng.uniform(0.0, 1.0, size=(side, side, 1))), PIPELINE_PATCH)
    model = build_model(cfg.embed_dim, grid.patch_dim, cfg, 2 * cfg.embed_dim, rng, mask_token=mask_token)
    # Larger weights than the training init so every path carries signal
    for name, p in model.named_parameters():
        p.data[...] = p.data + rng.normal(0.0, 0.2, size=p.shape)
    plan = make_mask_plan(cfg.k, 0.5, rng)
    spec = WindowSpec(0, 0, cfg.k)

    def loss() -> Tensor:
        embeddings = embed_patches(grid, model.embed)
        fill = model.mask_token if model.mask_token is not None else model.embed.bias
        tokens, targets, _ = gather_window(embeddings, grid, spec, plan, fill)
        preds = reconstruct(encoder_forward(tokens, model.encoder, cfg), model.head)
        return masked_mse(preds, targets, plan).tensor

    name = "full_pipeline_mask_token" if mask_token else "full_pipeline"
    return (name, loss, model.parameters(), PIPELINE_TOLERANCE)


@log_operation("gradcheck_suite")
def run_suite(seed: int = 0, step: float = 1e-5) -> SuiteResult:
    result = SuiteResult()
    with precision(np.float64):
        checks = op_checks(seed) + [attention_check(seed), pipeline_check(seed),
                                        pipeline_check(seed, mask_token=True)]
        for name, f, params, tol in checks:
            report = finite_diff_check(f, params, step=step, tol=tol, op_name=name)
            result.reports.append(report)
            level = logger.info if report.passed else logger.error
            level(f"{'✅' if report.passed else '❌'} {name}: max rel err {report.max_relative_error:.2e}")

        name, f, params, _ = op_checks(seed)[0]
        result.control = finite_diff_check(f, params, step=step, tol=OP_TOLERANCE,
                                           op_name=f"{name}_x{NEGATIVE_CONTROL_SCALE}_control",
                                           analytic_scale=NEGATIVE_CONTROL_SCALE)
    return result
