"""
Parameter containers for patch embedding, encoder and reconstruction head.

Every container exposes `named_parameters()` with stable dotted names; the
optimizer, the checkpoint format and the gradient merge all key on them.
"""

from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.core.numerics import Tensor
from src.models.models import EncoderConfig
from src.utils.error_handling import DimensionError

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float = INIT_STD, dtype=None) -> Tensor:
    """Normal(0, std) truncated to ±2·std."""
    values = rng.normal(0.0, std, size=shape)
    values = np.clip(values, -2.0 * std, 2.0 * std)
    return Tensor(values, requires_grad=True, dtype=dtype)


def zeros(shape: Tuple[int, ...], dtype=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def ones(shape: Tuple[int, ...], dtype=None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype)


def _shadow(t: Tensor) -> Tensor:
    """New leaf sharing `t`'s data, with a private gradient buffer."""
    out = Tensor.__new__(Tensor)
    out.data = t.data
    out.requires_grad = t.requires_grad
    out.grad = None
    out.name = t.name
    out.op = None
    out._parents = ()
    out._backward = None
    return out


class _ParameterGroup:
    """Dataclass mixin: every Tensor field is a parameter."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                yield prefix + f.name, value
            elif isinstance(value, _ParameterGroup):
                yield from value.named_parameters(f"{prefix}{f.name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, _ParameterGroup):
                        yield from item.named_parameters(f"{prefix}{f.name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{prefix}{f.name}.{i}", item

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def shadow(self):
        """Copy whose leaves share data but keep their own gradients."""
        changes = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                changes[f.name] = _shadow(value)
            elif isinstance(value, _ParameterGroup):
                changes[f.name] = value.shadow()
            elif isinstance(value, list):
                changes[f.name] = [
                    item.shadow() if isinstance(item, _ParameterGroup)
                    else _shadow(item) if isinstance(item, Tensor) else item
                    for item in value
                ]
        return replace(self, **changes)


@dataclass
class PatchEmbedWeights(_ParameterGroup):
    projection: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.projection.ndim != 2 or self.bias.shape != (self.projection.shape[1],):
            raise DimensionError(
                f"patch embedding: projection {self.projection.shape} vs bias {self.bias.shape}"
            )

    @property
    def patch_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[1]


@dataclass
class LayerWeights(_ParameterGroup):
    """One pre-norm Transformer block."""
    ln1_gamma: Tensor
    ln1_beta: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class EncoderWeights(_ParameterGroup):
    layers: List[LayerWeights]
    # one (H, (2k−1)², head_dim) table, or one per layer
    rpe: List[Tensor]
    final_gamma: Tensor
    final_beta: Tensor

    def rpe_for(self, layer: int) -> Tensor:
        return self.rpe[layer] if len(self.rpe) > 1 else self.rpe[0]

    def check(self, cfg: EncoderConfig) -> None:
        d, side = cfg.embed_dim, 2 * cfg.k - 1
        if len(self.layers) != cfg.num_layers:
            raise DimensionError(f"encoder has {len(self.layers)} layers, config says {cfg.num_layers}")
        if self.final_gamma.shape != (d,):
            raise DimensionError(f"final LayerNorm has dim {self.final_gamma.shape}, expected ({d},)")
        for table in self.rpe:
            if table.shape != (cfg.num_heads, side * side, cfg.head_dim):
                raise DimensionError(
                    f"RPE table {table.shape} does not match "
                    f"({cfg.num_heads}, {side * side}, {cfg.head_dim})"
                )
        for layer in self.layers:
            if layer.wq.shape != (d, d) or layer.w1.shape != (d, cfg.mlp_hidden):
                raise DimensionError("layer weights do not match the encoder config")


@dataclass
class HeadWeights(_ParameterGroup):
    w_out: Tensor
    b_out: Tensor
    w_hidden: Optional[Tensor] = None
    b_hidden: Optional[Tensor] = None

    @property
    def patch_dim(self) -> int:
        return self.w_out.shape[1]


@dataclass
class LomarModel(_ParameterGroup):
    """Everything trained during pretraining."""
    embed: PatchEmbedWeights
    encoder: EncoderWeights
    head: HeadWeights
    mask_token: Optional[Tensor] = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise DimensionError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise DimensionError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]


def init_patch_embed(patch_dim: int, embed_dim: int, rng: np.random.Generator, dtype=None) -> PatchEmbedWeights:
    return PatchEmbedWeights(projection=trunc_normal(rng, (patch_dim, embed_dim), dtype=dtype),
                             bias=zeros((embed_dim,), dtype=dtype))


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, dtype=None) -> EncoderWeights:
    """Truncated-normal projections, zero biases and RPE tables, unit LayerNorm gains."""
    d, hidden = cfg.embed_dim, cfg.mlp_hidden
    layers = []
    for _ in range(cfg.num_layers):
        layers.append(LayerWeights(
            ln1_gamma=ones((d,), dtype), ln1_beta=zeros((d,), dtype),
            wq=trunc_normal(rng, (d, d), dtype=dtype), wk=trunc_normal(rng, (d, d), dtype=dtype),
            wv=trunc_normal(rng, (d, d), dtype=dtype), wo=trunc_normal(rng, (d, d), dtype=dtype),
            bo=zeros((d,), dtype),
            ln2_gamma=ones((d,), dtype), ln2_beta=zeros((d,), dtype),
            w1=trunc_normal(rng, (d, hidden), dtype=dtype), b1=zeros((hidden,), dtype),
            w2=trunc_normal(rng, (hidden, d), dtype=dtype), b2=zeros((d,), dtype),
        ))
    side = 2 * cfg.k - 1
    n_tables = max(1, cfg.num_layers) if cfg.per_layer_rpe else 1
    rpe = [zeros((cfg.num_heads, side * side, cfg.head_dim), dtype) for _ in range(n_tables)]
    return EncoderWeights(layers=layers, rpe=rpe, final_gamma=ones((d,), dtype), final_beta=zeros((d,), dtype))


def init_head(embed_dim: int, patch_dim: int, hidden_dim: int, rng: np.random.Generator, dtype=None) -> HeadWeights:
    if hidden_dim == 0:
        return HeadWeights(w_out=trunc_normal(rng, (embed_dim, patch_dim), dtype=dtype),
                           b_out=zeros((patch_dim,), dtype))
    return HeadWeights(
        w_hidden=trunc_normal(rng, (embed_dim, hidden_dim), dtype=dtype),
        b_hidden=zeros((hidden_dim,), dtype),
        w_out=trunc_normal(rng, (hidden_dim, patch_dim), dtype=dtype),
        b_out=zeros((patch_dim,), dtype),
    )


def is_decayed(name: str) -> bool:
    """Weight decay applies to projection matrices only (no LN, biases, RPE, mask token)."""
    leaf = name.rsplit(".", 1)[-1]
    if name.startswith("encoder.rpe") or name == "mask_token":
        return False
    return leaf in {"projection", "wq", "wk", "wv", "wo", "w1", "w2", "w_out", "w_hidden"}


def build_model(embed_dim: int, patch_dim: int, encoder_cfg: EncoderConfig, head_hidden: int,
                rng: np.random.Generator, mask_token: bool = False, dtype=None) -> LomarModel:
    """Fresh model; parameters are drawn from `rng` in a fixed order."""
    embed = init_patch_embed(patch_dim, embed_dim, rng, dtype)
    encoder = init_encoder(encoder_cfg, rng, dtype)
    head = init_head(embed_dim, patch_dim, head_hidden, rng, dtype)
    token = trunc_normal(rng, (embed_dim,), dtype=dtype) if mask_token else None
    return LomarModel(embed=embed, encoder=encoder, head=head, mask_token=token)
