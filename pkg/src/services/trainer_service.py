"""
Pretraining loop.

Each step takes a batch of images; per image: augment → patchify → embed →
sample windows → mask → encode → reconstruct → masked MSE. Images run on a
thread pool, each against a shadow copy of the parameters (shared data,
private gradients). Gradients are summed in image order, so results do not
depend on how many workers there are. One AdamW step follows.

Every random draw comes from derive_rng(seed, purpose, step, slot); the
step counter is therefore the whole RNG state of a run.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import LOMAR_THREADS
from src.core.numerics import Tensor, backward, precision
from src.models.models import Checkpoint, Image, LossValue, OptimizerState, TrainConfig
from src.models.weights import LomarModel, build_model
from src.services.checkpoint_service import VERSION, save_checkpoint
from src.services.config_service import dump_config, parse_config
from src.services.encoder_service import encoder_forward
from src.services.head_loss_service import masked_mse, reconstruct
from src.services.metrics_service import MetricsStream
from src.services.optimizer_service import adamw_step, lr_at
from src.services.patchify_service import embed_patches, patchify, random_resized_crop
from src.services.sampler_service import gather_window, make_mask_plan, sample_windows
from src.utils.error_handling import ContractError, InputValidator
from src.utils.logging_config import get_logger, log_operation, performance_monitor
from src.utils.seeding import derive_rng

logger = get_logger(__name__)


@dataclass
class ImageResult:
    loss: float
    windows: int
    masked_per_window: List[int]
    grads: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def augment(img: Image, cfg: TrainConfig, rng: np.random.Generator) -> Image:
    data = cfg.data
    if not data.augment:
        return img
    return random_resized_crop(img, data.image_size, (data.crop_scale_lo, data.crop_scale_hi), rng)


def window_losses(model: LomarModel, img: Image, cfg: TrainConfig, step: int, slot: int) -> List[LossValue]:
    """Loss of every sampled window of one image; graphs are recorded."""
    seed = cfg.seed
    img = augment(img, cfg, derive_rng(seed, 'augment', step, slot))
    grid = patchify(img, cfg.data.patch_size, cfg.data.normalize_per_channel)
    embeddings = embed_patches(grid, model.embed)
    fill = model.mask_token if model.mask_token is not None else model.embed.bias

    specs = sample_windows(grid.grid_h, grid.grid_w, cfg.sampler.k, cfg.sampler.n_views,
                           derive_rng(seed, 'windows', step, slot))
    mask_rng = derive_rng(seed, 'masks', step, slot)
    losses = []
    for spec in specs:
        plan = make_mask_plan(cfg.sampler.k, cfg.sampler.mask_ratio, mask_rng)
        tokens, targets, _ = gather_window(embeddings, grid, spec, plan, fill)
        latents = encoder_forward(tokens, model.encoder, cfg.encoder)
        preds = reconstruct(latents, model.head)
        losses.append(masked_mse(preds, targets, plan, cfg.all_patch_loss))
    return losses


def image_step(model: LomarModel, img: Image, cfg: TrainConfig, step: int, slot: int) -> ImageResult:
    """Forward and backward for one image against a private shadow of `model`."""
    shadow = model.shadow()
    losses = window_losses(shadow, img, cfg, step, slot)
    total: Tensor = losses[0].tensor
    for item in losses[1:]:
        total = total + item.tensor
    image_loss = total * (1.0 / len(losses))
    backward(image_loss)
    grads = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in shadow.named_parameters()
    }
    return ImageResult(loss=image_loss.item(), windows=len(losses),
                       masked_per_window=[item.masked_count for item in losses], grads=grads)


def train_step(batch: Sequence[Image], model: LomarModel, state: OptimizerState, cfg: TrainConfig,
               steps_per_epoch: Optional[int] = None, threads: int = 1) -> Tuple[LossValue, Dict]:
    """
    One optimizer step on `batch`.

    The step index used for randomness and the schedule is state.step before
    the update.

    Returns:
        (batch loss averaged over images, metrics dict with step, lr, loss, masked_per_window)
    """
    if not batch:
        raise ContractError("train_step needs a non-empty batch")
    steps_per_epoch = steps_per_epoch or cfg.steps_per_epoch()
    step = state.step
    lr = lr_at(step, steps_per_epoch, cfg)

    if threads > 1 and len(batch) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(batch))) as pool:
            results = list(pool.map(lambda args: image_step(model, args[1], cfg, step, args[0]),
                                    enumerate(batch)))
    else:
        results = [image_step(model, img, cfg, step, slot) for slot, img in enumerate(batch)]

    named = list(model.named_parameters())
    scale = 1.0 / len(results)
    merged = {}
    for name, p in named:
        acc = np.zeros_like(p.data)
        for r in results:
            acc += r.grads[name]
        merged[name] = acc * p.dtype.type(scale)

    adamw_step(named, merged, state, lr, cfg)

    loss = float(sum(r.loss for r in results) * scale)
    masked = [m for r in results for m in r.masked_per_window]
    metrics = {'step': state.step, 'lr': lr, 'loss': loss, 'masked_per_window': masked}
    return LossValue(value=loss, masked_count=sum(masked)), metrics


class Trainer:
    """
    Owns the model, optimizer state and data order of one pretraining run.
    """

    def __init__(self, cfg: TrainConfig, images: Sequence[Image], model: Optional[LomarModel] = None,
                 state: Optional[OptimizerState] = None, threads: Optional[int] = None):
        if not images:
            raise ContractError("trainer needs at least one image")
        self.cfg = cfg
        self.images = list(images)
        self.dtype = np.dtype(cfg.dtype)
        self.threads = threads or LOMAR_THREADS
        # Steps per epoch follow the images actually supplied
        self.steps_per_epoch = max(1, math.ceil(len(self.images) / cfg.batch_size))
        if model is None:
            with precision(self.dtype):
                model = build_model(cfg.encoder.embed_dim, cfg.data.patch_dim, cfg.encoder,
                                    cfg.head_hidden, derive_rng(cfg.seed, 'init'),
                                    mask_token=cfg.sampler.mask_token, dtype=self.dtype)
        self.model = model
        self.state = state or OptimizerState()
        self.history: List[Tuple[int, float, float]] = []

    @property
    def step(self) -> int:
        return self.state.step

    def batch_for(self, step: int) -> List[Image]:
        """Epoch-wise permutation of the corpus, sliced into batches."""
        epoch, index = divmod(step, self.steps_per_epoch)
        order = derive_rng(self.cfg.seed, 'data', epoch).permutation(len(self.images))
        chosen = order[index * self.cfg.batch_size:(index + 1) * self.cfg.batch_size]
        return [self.images[i] for i in chosen]

    def train_step(self) -> Tuple[LossValue, Dict]:
        with performance_monitor("train_step", slow_threshold_ms=60000.0, step=self.step):
            with precision(self.dtype):
                loss, metrics = train_step(self.batch_for(self.step), self.model, self.state, self.cfg,
                                           self.steps_per_epoch, self.threads)
        self.history.append((metrics['step'], metrics['lr'], metrics['loss']))
        return loss, metrics

    @log_operation("pretrain")
    def run(self, steps: Optional[int] = None, metrics: Optional[MetricsStream] = None,
            checkpoint_dir: Optional[Union[str, Path]] = None) -> List[Tuple[int, float, float]]:
        """
        Train until `steps` total optimizer steps (default: the config's total).

        Returns the (step, lr, loss) rows produced by this call.
        """
        target = steps if steps is not None else (self.cfg.max_steps or self.cfg.epochs * self.steps_per_epoch)
        InputValidator.non_negative_int("steps", target)
        every = self.cfg.checkpoint_every
        rows = []
        logger.info(f"🚀 Pretraining from step {self.step} to {target} "
                    f"({self.threads} threads, {self.cfg.dtype})")
        while self.step < target:
            _, m = self.train_step()
            rows.append((m['step'], m['lr'], m['loss']))
            if metrics is not None:
                metrics.write(m['step'], m['lr'], m['loss'])
            if m['step'] == 1 or m['step'] % 10 == 0:
                logger.info(f"step {m['step']:>6}  lr {m['lr']:.3e}  loss {m['loss']:.4f}",
                            extra={'step': m['step']})
            if checkpoint_dir is not None and every and m['step'] % every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"step_{m['step']:06d}.lmck", self.to_checkpoint())
        if checkpoint_dir is not None and rows:
            save_checkpoint(Path(checkpoint_dir) / "last.lmck", self.to_checkpoint())
        return rows

    def to_checkpoint(self) -> Checkpoint:
        epoch, index = divmod(self.step, self.steps_per_epoch)
        rng_state = {
            'seed': self.cfg.seed,
            'data_epoch': epoch,
            'data_cursor': index,
            'steps_per_epoch': self.steps_per_epoch,
        }
        return Checkpoint(
            version=VERSION,
            config_text=dump_config(self.cfg),
            tensors={name: p.data.copy() for name, p in self.model.named_parameters()},
            optimizer=OptimizerState(m={k: v.copy() for k, v in self.state.m.items()},
                                     v={k: v.copy() for k, v in self.state.v.items()},
                                     step=self.state.step),
            rng_state=rng_state,
            step=self.step,
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, images: Sequence[Image],
                        threads: Optional[int] = None) -> "Trainer":
        """Resume exactly where `ckpt` was taken."""
        cfg = parse_config(ckpt.config_text)
        trainer = cls(cfg, images, threads=threads)
        if ckpt.rng_state.get('steps_per_epoch', trainer.steps_per_epoch) != trainer.steps_per_epoch:
            raise ContractError("resume needs the same image set the checkpoint was trained on")
        trainer.model.load_state_dict(ckpt.tensors)
        trainer.state = OptimizerState(
            m={k: v.astype(trainer.dtype) for k, v in ckpt.optimizer.m.items()},
            v={k: v.astype(trainer.dtype) for k, v in ckpt.optimizer.v.items()},
            step=ckpt.optimizer.step,
        )
        logger.info(f"🔁 Resumed at step {trainer.step}")
        return trainer


def model_from_checkpoint(ckpt: Checkpoint) -> Tuple[LomarModel, TrainConfig]:
    """Model weights and config of a checkpoint, for evaluation commands."""
    cfg = parse_config(ckpt.config_text)
    dtype = np.dtype(cfg.dtype)
    with precision(dtype):
        model = build_model(cfg.encoder.embed_dim, cfg.data.patch_dim, cfg.encoder, cfg.head_hidden,
                            derive_rng(cfg.seed, 'init'), mask_token=cfg.sampler.mask_token, dtype=dtype)
    model.load_state_dict(ckpt.tensors)
    return model, cfg
