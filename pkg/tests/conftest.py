"""
Shared fixtures: tiny run configs, a small labelled corpus, seeded generators
a 64-bit precision context and one desk-preset pretraining run for the
slow end-to-end checks.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pytest

from src.core.numerics import precision
from src.models.models import EncoderConfig, TrainConfig
from src.models.weights import LomarModel, build_model
from src.services.checkpoint_service import load_checkpoint
from src.services.config_service import parse_config
from src.services.corpus_service import LabeledImage, images_of, synthetic_corpus
from src.services.trainer_service import Trainer, model_from_checkpoint
from src.utils.seeding import derive_rng

# 16×16 images, 4-pixel patches → 4×4 grid, 2×2 windows
TINY_OVERRIDES: List[str] = [
    "train.batch_size=4",
    "train.epochs=4",
    "train.warmup_epochs=1",
    "train.base_lr=1e-3",
    "train.lr_scaling=false",
    "sampler.k=2",
    "sampler.n_views=2",
    "sampler.mask_ratio=0.5",
    "encoder.embed_dim=8",
    "encoder.num_heads=2",
    "encoder.num_layers=1",
    "encoder.mlp_ratio=2.0",
    "head.hidden_dim=8",
    "data.image_size=16",
    "data.patch_size=4",
    "data.corpus_size=8",
    "data.num_classes=2",
]


def tiny_config(*extra: str) -> TrainConfig:
    return parse_config("", TINY_OVERRIDES + list(extra))


def model_for(cfg: TrainConfig, dtype=np.float64, seed: int = 0) -> LomarModel:
    with precision(dtype):
        return build_model(cfg.encoder.embed_dim, cfg.data.patch_dim, cfg.encoder, cfg.head_hidden,
                           derive_rng(seed, 'init'), mask_token=cfg.sampler.mask_token, dtype=dtype)


def randomize(model: LomarModel, rng: np.random.Generator, scale: float = 0.3) -> LomarModel:
    """Perturb every parameter so attention and RPE paths carry signal."""
    for _, p in model.named_parameters():
        p.data[...] = p.data + rng.normal(0.0, scale, size=p.shape)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return tiny_config()


@pytest.fixture
def tiny_cfg64() -> TrainConfig:
    return tiny_config("train.dtype=float64")


@pytest.fixture
def tiny_corpus() -> List[LabeledImage]:
    return synthetic_corpus(8, size=16, channels=3, num_classes=2, seed=0)


@pytest.fixture
def encoder_cfg() -> EncoderConfig:
    return EncoderConfig(embed_dim=16, num_heads=2, num_layers=2, mlp_ratio=2.0, k=7)


DESK_CONFIG = Path(__file__).resolve().parent.parent / "config" / "desk.cfg"


@dataclass
class DeskRun:
    """A finished desk-preset pretraining run, reloaded from its last checkpoint."""
    cfg: TrainConfig
    items: List[LabeledImage]
    rows: List[Tuple[int, float, float]]
    model: LomarModel


def desk_config(*extra: str) -> TrainConfig:
    return parse_config(DESK_CONFIG.read_text(encoding="utf-8"), list(extra))


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> DeskRun:
    cfg = desk_config()
    data = cfg.data
    items = synthetic_corpus(data.corpus_size, data.image_size, data.channels, data.num_classes, cfg.seed)
    out = tmp_path_factory.mktemp("desk")
    rows = Trainer(cfg, images_of(items)).run(checkpoint_dir=out)
    model, _ = model_from_checkpoint(load_checkpoint(out / "last.lmck"))
    return DeskRun(cfg=cfg, items=items, rows=rows, model=model)
