"""
Frozen-encoder linear probe.

Features are the mean over all grid patches of the encoder output, with
windows tiled to cover the grid and no masking. A standardized linear
softmax classifier is trained on them and scored on a held-out split.
"""

from dataclasses import dataclass
import math
from typing import List, Sequence, Tuple

import numpy as np

from src.core.numerics import Tensor, log_softmax_rows, no_grad, precision
from src.models.models import Image, MaskPlan, OptimizerState, TrainConfig
from src.models.weights import LomarModel
from src.services.corpus_service import LabeledImage
from src.services.encoder_service import encoder_forward
from src.services.optimizer_service import adamw_step
from src.services.patchify_service import embed_patches, patchify, resize_bilinear
from src.services.sampler_service import gather_window, tile_windows
from src.utils.error_handling import ContractError, InputValidator
from src.utils.logging_config import get_logger, log_operation, performance_monitor
from src.utils.seeding import derive_rng

logger = get_logger(__name__)


@dataclass
class ProbeConfig:
    epochs: int = 200
    lr: float = 0.05
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    holdout: float = 0.25
    seed: int = 0

    def __post_init__(self):
        InputValidator.positive_int("probe.epochs", self.epochs)
        InputValidator.positive_real("probe.lr", self.lr)
        if not 0.0 < self.holdout < 1.0:
            raise ContractError(f"holdout fraction must lie in (0, 1), got {self.holdout}")


def _fit_size(img: Image, size: int) -> Image:
    if img.height == size and img.width == size:
        return img
    return Image(resize_bilinear(img.pixels, (0, 0, img.height, img.width), size))


def extract_features(model: LomarModel, img: Image, cfg: TrainConfig) -> np.ndarray:
    """Mean-pooled encoder output over every patch of the grid."""
    img = _fit_size(img, cfg.data.image_size)
    k = cfg.encoder.k
    with no_grad():
        grid = patchify(img, cfg.data.patch_size, cfg.data.normalize_per_channel)
        embeddings = embed_patches(grid, model.embed)
        sums = np.zeros((grid.num_patches, cfg.encoder.embed_dim))
        counts = np.zeros(grid.num_patches)
        visible = MaskPlan(window_len=k * k, masked=(), ratio=0.0)
        for spec in tile_windows(grid.grid_h, grid.grid_w, k):
            tokens, _, _ = gather_window(embeddings, grid, spec, visible, model.embed.bias)
            out = encoder_forward(tokens, model.encoder, cfg.encoder)
            index = spec.global_indices(grid.grid_w)
            sums[index] += out.data
            counts[index] += 1
    return (sums / counts[:, None]).mean(axis=0)


def feature_matrix(model: LomarModel, items: Sequence[LabeledImage], cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    with performance_monitor("probe_features", slow_threshold_ms=120000.0):
        features = np.stack([extract_features(model, item.image, cfg) for item in items])
    labels = np.array([item.label for item in items], dtype=np.int64)
    return features, labels


def split_indices(n: int, holdout: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    order = derive_rng(seed, 'probe').permutation(n)
    n_test = min(n - 1, max(1, int(round(holdout * n))))
    return order[n_test:], order[:n_test]


def train_classifier(features: np.ndarray, labels: np.ndarray, num_classes: int,
                     probe: ProbeConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Full-batch softmax regression with AdamW and cosine-decayed rate; returns (W, b)."""
    n, d = features.shape
    with precision(np.float64):
        weight = Tensor(np.zeros((d, num_classes)), requires_grad=True)
        bias = Tensor(np.zeros(num_classes), requires_grad=True)
        x = Tensor(features)
        rows = (np.arange(n), labels)
        state = OptimizerState()
        named = [('weight', weight), ('bias', bias)]
        for epoch in range(probe.epochs):
            weight.grad = None
            bias.grad = None
            log_probs = log_softmax_rows(x @ weight + bias)
            loss = -log_probs[rows].mean()
            loss.backward()
            lr = probe.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / probe.epochs))
            adamw_step(named, {'weight': weight.grad, 'bias': bias.grad}, state, lr, probe,
                       decay_filter=lambda name: name == 'weight')
    return weight.data.copy(), bias.data.copy()


def accuracy(features: np.ndarray, labels: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> float:
    predicted = np.argmax(features @ weight + bias, axis=1)
    return float(np.mean(predicted == labels))


@log_operation("linear_probe")
def linear_probe(model: LomarModel, labeled: Sequence[LabeledImage], cfg: TrainConfig,
                 probe: ProbeConfig = None) -> float:
    """
    Held-out accuracy of a linear classifier on frozen features.

    Raises:
        ContractError: fewer than two classes in `labeled`
    """
    probe = probe or ProbeConfig(seed=cfg.seed)
    classes = sorted({item.label for item in labeled})
    if len(classes) < 2:
        raise ContractError(f"linear probe needs at least two classes, got {len(classes)}")
    remap = {label: i for i, label in enumerate(classes)}
    items = [LabeledImage(item.image, remap[item.label]) for item in labeled]

    features, labels = feature_matrix(model, items, cfg)
    train_idx, test_idx = split_indices(len(items), probe.holdout, probe.seed)

    mean = features[train_idx].mean(axis=0)
    std = features[train_idx].std(axis=0) + 1e-6
    standardized = (features - mean) / std

    weight, bias = train_classifier(standardized[train_idx], labels[train_idx], len(classes), probe)
    train_acc = accuracy(standardized[train_idx], labels[train_idx], weight, bias)
    test_acc = accuracy(standardized[test_idx], labels[test_idx], weight, bias)
    logger.info(f"🎯 Probe: train {train_acc:.3f}, held-out {test_acc:.3f} "
                f"({len(train_idx)}/{len(test_idx)} images, {len(classes)} classes)")
    return test_acc


def shuffled_labels(items: Sequence[LabeledImage], seed: int) -> List[LabeledImage]:
    """Same images with labels permuted; a chance-level control."""
    labels = np.array([item.label for item in items])
    permuted = derive_rng(seed, 'probe', 1).permutation(labels)
    return [LabeledImage(item.image, int(label)) for item, label in zip(items, permuted)]
