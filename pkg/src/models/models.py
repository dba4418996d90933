"""
Data models for images, patch grids, windows, masks and run configuration.
"""

from dataclasses import dataclass, field
import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.utils.error_handling import (
    ConfigError, ContractError, DimensionError, IngestionError, InputValidator, ParameterError
)

# Window side → views per image, keeping roughly 196 window cells per image
VIEWS_TABLE: Dict[int, int] = {5: 8, 7: 4, 9: 3, 11: 2, 14: 1}

# Views used for k=7 at higher resolutions with 16-pixel patches
HIGH_RES_VIEWS: Dict[int, int] = {384: 6, 448: 9}

# Pretraining epochs → warmup epochs
WARMUP_TABLE: Dict[int, int] = {1600: 40, 800: 20, 400: 10}

# Tolerates float noise such as 0.29 * 100 = 28.999999999999996
_MASK_COUNT_SLACK = 1e-9


def views_for(k: int, image_size: Optional[int] = None, patch_size: int = 16) -> int:
    """Default number of views for a window side."""
    if k == 7 and patch_size == 16 and image_size in HIGH_RES_VIEWS:
        return HIGH_RES_VIEWS[image_size]
    if k in VIEWS_TABLE:
        return VIEWS_TABLE[k]
    return max(1, round(196 / (k * k)))


def default_warmup_epochs(epochs: int) -> int:
    if epochs in WARMUP_TABLE:
        return WARMUP_TABLE[epochs]
    return max(1, round(epochs / 40))


def mask_count(k: int, ratio: float) -> int:
    """floor(ratio · k²): 44 of 49 at 90%, 39 of 49 at 80%."""
    return int(math.floor(ratio * k * k + _MASK_COUNT_SLACK))


@dataclass
class Image:
    """
    An image as height × width × channels floats in [0, 1].
    """
    pixels: np.ndarray

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise IngestionError(f"image must be H×W×C with C in (1, 3), got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise IngestionError("image contains non-finite pixels")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise IngestionError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class PatchGrid:
    """
    An image cut into grid_h × grid_w patches in raster order.
    Row i of `patches` is the patch at grid coordinates (i // grid_w, i % grid_w).
    """
    grid_h: int
    grid_w: int
    patch_size: int
    channels: int
    patches: np.ndarray
    normalized_targets: np.ndarray
    patch_mean: np.ndarray
    patch_std: np.ndarray
    per_channel: bool = False

    def __post_init__(self):
        expected = (self.grid_h * self.grid_w, self.patch_dim)
        if self.patches.shape != expected or self.normalized_targets.shape != expected:
            raise DimensionError(
                f"patch grid expects {expected} rows, got {self.patches.shape} / {self.normalized_targets.shape}"
            )

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    def coords(self, index: int) -> Tuple[int, int]:
        return divmod(index, self.grid_w)

    def index(self, row: int, col: int) -> int:
        return row * self.grid_w + col


@dataclass(frozen=True)
class WindowSpec:
    """A k × k window of patches with its origin on the patch grid."""
    top: int
    left: int
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"window side must be ≥ 1, got {self.k}")
        if self.top < 0 or self.left < 0:
            raise ParameterError(f"window origin must be non-negative, got ({self.top}, {self.left})")

    def check_fits(self, grid_h: int, grid_w: int) -> None:
        if self.top > grid_h - self.k or self.left > grid_w - self.k:
            raise DimensionError(
                f"window ({self.top}, {self.left}, k={self.k}) does not fit a {grid_h}×{grid_w} grid"
            )

    def global_indices(self, grid_w: int) -> np.ndarray:
        """Global patch index of every window-local raster position."""
        j = np.arange(self.k * self.k)
        return (self.top + j // self.k) * grid_w + (self.left + j % self.k)


@dataclass(frozen=True)
class MaskPlan:
    """Window-local indices whose patches are masked."""
    window_len: int
    masked: Tuple[int, ...]
    ratio: float

    def __post_init__(self):
        k = math.isqrt(self.window_len)
        if k * k != self.window_len:
            raise ContractError(f"window_len must be a square, got {self.window_len}")
        if list(self.masked) != sorted(set(self.masked)):
            raise ContractError("masked indices must be sorted and unique")
        if self.masked and (self.masked[0] < 0 or self.masked[-1] >= self.window_len):
            raise ContractError("masked index out of range")
        if len(self.masked) != mask_count(k, self.ratio):
            raise ContractError(
                f"{len(self.masked)} masked indices, floor({self.ratio}·{self.window_len}) expected"
            )

    @property
    def k(self) -> int:
        return math.isqrt(self.window_len)

    @property
    def visible(self) -> Tuple[int, ...]:
        hidden = set(self.masked)
        return tuple(i for i in range(self.window_len) if i not in hidden)

    def mask_vector(self) -> np.ndarray:
        """1.0 at masked positions, 0.0 elsewhere, as a column."""
        column = np.zeros((self.window_len, 1))
        column[list(self.masked), 0] = 1.0
        return column


@dataclass
class SamplerConfig:
    k: int = 7
    n_views: Optional[int] = None
    mask_ratio: float = 0.8
    seed: int = 0
    mask_token: bool = False

    def __post_init__(self):
        InputValidator.positive_int("sampler.k", self.k, ConfigError)
        InputValidator.probability("sampler.mask_ratio", self.mask_ratio, ConfigError)
        # None is resolved by TrainConfig, which knows the image and patch size
        if self.n_views is not None:
            InputValidator.positive_int("sampler.n_views", self.n_views, ConfigError)


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 4
    mlp_ratio: float = 4.0
    k: int = 7
    per_layer_rpe: bool = False
    ln_eps: float = 1e-6

    def __post_init__(self):
        InputValidator.positive_int("encoder.embed_dim", self.embed_dim, ConfigError)
        InputValidator.positive_int("encoder.num_heads", self.num_heads, ConfigError)
        InputValidator.non_negative_int("encoder.num_layers", self.num_layers, ConfigError)
        InputValidator.positive_real("encoder.mlp_ratio", self.mlp_ratio, ConfigError)
        InputValidator.positive_int("encoder.k", self.k, ConfigError)
        if self.embed_dim % self.num_heads:
            raise ConfigError("encoder.num_heads",
                              f"embed_dim {self.embed_dim} is not divisible by {self.num_heads} heads")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def mlp_hidden(self) -> int:
        return max(1, int(round(self.mlp_ratio * self.embed_dim)))

    @property
    def window_len(self) -> int:
        return self.k * self.k


@dataclass
class HeadConfig:
    # 0 selects a single linear layer
    hidden_dim: Optional[int] = None

    def __post_init__(self):
        if self.hidden_dim is not None:
            InputValidator.non_negative_int("head.hidden_dim", self.hidden_dim, ConfigError)


@dataclass
class DataConfig:
    image_size: int = 64
    patch_size: int = 8
    channels: int = 3
    crop_scale_lo: float = 0.2
    crop_scale_hi: float = 1.0
    corpus_size: int = 512
    num_classes: int = 10
    normalize_per_channel: bool = False
    augment: bool = True

    def __post_init__(self):
        InputValidator.positive_int("data.image_size", self.image_size, ConfigError)
        InputValidator.positive_int("data.patch_size", self.patch_size, ConfigError)
        InputValidator.choice("data.channels", self.channels, (1, 3), ConfigError)
        InputValidator.positive_int("data.corpus_size", self.corpus_size, ConfigError)
        InputValidator.positive_int("data.num_classes", self.num_classes, ConfigError)
        if self.image_size % self.patch_size:
            raise ConfigError("data.patch_size", f"{self.patch_size} does not divide image_size {self.image_size}")
        if not 0.0 < self.crop_scale_lo <= self.crop_scale_hi <= 1.0:
            raise ConfigError("data.crop_scale_lo", "need 0 < crop_scale_lo ≤ crop_scale_hi ≤ 1")

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass
class TrainConfig:
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    betas: Tuple[float, float] = (0.9, 0.95)
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 400
    warmup_epochs: Optional[int] = None
    seed: int = 0
    max_steps: Optional[int] = None
    lr_scaling: bool = True
    all_patch_loss: bool = False
    dtype: str = "float32"
    checkpoint_every: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        InputValidator.positive_real("train.base_lr", self.base_lr, ConfigError)
        InputValidator.non_negative_real("train.weight_decay", self.weight_decay, ConfigError)
        InputValidator.positive_int("train.batch_size", self.batch_size, ConfigError)
        InputValidator.positive_int("train.epochs", self.epochs, ConfigError)
        InputValidator.non_negative_int("train.checkpoint_every", self.checkpoint_every, ConfigError)
        InputValidator.choice("train.dtype", self.dtype, ("float32", "float64"), ConfigError)
        if self.warmup_epochs is None:
            self.warmup_epochs = default_warmup_epochs(self.epochs)
        InputValidator.non_negative_int("train.warmup_epochs", self.warmup_epochs, ConfigError)
        if self.warmup_epochs >= self.epochs:
            raise ConfigError("train.warmup_epochs",
                              f"warmup_epochs ({self.warmup_epochs}) must be smaller than epochs ({self.epochs})")
        if self.max_steps is not None:
            InputValidator.positive_int("train.max_steps", self.max_steps, ConfigError)
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("train.betas", f"need two values in [0, 1), got {self.betas}")
        if self.encoder.k != self.sampler.k:
            raise ConfigError("encoder.k", f"encoder.k ({self.encoder.k}) must equal sampler.k ({self.sampler.k})")
        if self.sampler.k > self.data.grid_side:
            raise ConfigError("sampler.k",
                              f"window side {self.sampler.k} exceeds the {self.data.grid_side}-patch grid")
        if self.sampler.n_views is None:
            self.sampler.n_views = views_for(self.sampler.k, self.data.image_size, self.data.patch_size)
        self.sampler.seed = self.seed

    @property
    def mask_ratio(self) -> float:
        return self.sampler.mask_ratio

    @property
    def effective_lr(self) -> float:
        """base_lr · batch / 256 when lr_scaling is on."""
        return self.base_lr * self.batch_size / 256.0 if self.lr_scaling else self.base_lr

    @property
    def head_hidden(self) -> int:
        return 2 * self.encoder.embed_dim if self.head.hidden_dim is None else self.head.hidden_dim

    def steps_per_epoch(self) -> int:
        return max(1, math.ceil(self.data.corpus_size / self.batch_size))

    def total_steps(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return self.epochs * self.steps_per_epoch()

    def warmup_steps(self) -> int:
        if self.max_steps is not None:
            return int(round(self.total_steps() * self.warmup_epochs / self.epochs))
        return self.warmup_epochs * self.steps_per_epoch()


@dataclass
class OptimizerState:
    """AdamW moments, keyed like the model's named parameters."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class LossValue:
    value: float
    masked_count: int
    tensor: Any = None

    def __post_init__(self):
        if self.value < 0:
            raise ContractError(f"loss must be non-negative, got {self.value}")


@dataclass
class CostModel:
    grid_h: int
    grid_w: int
    n_windows: int
    window_side: int
    local_cost: float
    global_cost: float

    @property
    def local_attention_term(self) -> float:
        return self.local_cost - self.grid_h * self.grid_w


@dataclass
class ScalingRow:
    config: str
    analytic_local: float
    analytic_global: float
    measured_local_s: float
    measured_global_s: float
    patches: int = 0
    n_windows: int = 0


@dataclass
class ScalingReport:
    rows: List[ScalingRow] = field(default_factory=list)
    global_exponent: float = float("nan")
    local_exponent: float = float("nan")
    local_views_r2: float = float("nan")
    metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass
class LocalityStat:
    target: Tuple[int, int]
    attention_mass: np.ndarray
    distances: np.ndarray
    mean_distance: float
    mass_within_radius: np.ndarray
    layer: int = 0
    metric: str = "chebyshev"


@dataclass
class Checkpoint:
    version: int
    config_text: str
    tensors: Dict[str, np.ndarray]
    optimizer: OptimizerState
    rng_state: Dict[str, Any]
    step: int
