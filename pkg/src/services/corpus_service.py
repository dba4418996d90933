"""
Labelled image sets: a seeded synthetic shape corpus and a directory loader.

Synthetic images are colored geometric shapes drawn with Pillow over a
textured background (smooth gradient plus pixel noise). The class is the
shape; color, size, position and texture vary per image.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image as PILImage, ImageDraw

from src.models.models import Image
from src.services.patchify_service import load_image, save_container, save_image
from src.utils.error_handling import ContractError, IngestionError, InputValidator
from src.utils.logging_config import get_logger, log_operation
from src.utils.seeding import derive_rng

logger = get_logger(__name__)

SHAPE_CLASSES = (
    'disc', 'square', 'triangle', 'cross', 'ring',
    'diamond', 'h_stripes', 'v_stripes', 'checker', 'ellipse',
)

IMAGE_SUFFIXES = ('.png', '.lmt')


@dataclass
class LabeledImage:
    image: Image
    label: int


def _color(rng: np.random.Generator, channels: int) -> Tuple[int, ...]:
    values = tuple(int(v) for v in rng.integers(40, 256, size=3))
    return values if channels == 3 else (values[0],)


def _background(size: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(1, size - 1)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    base = rng.uniform(0.05, 0.35, size=channels)
    span = rng.uniform(0.05, 0.2, size=channels)
    pixels = base + span * ramp[:, :, None]
    pixels = pixels + rng.normal(0.0, 0.03, size=pixels.shape)
    return np.clip(pixels, 0.0, 1.0)


def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, box: Tuple[int, int, int, int], fill) -> None:
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) // 2, (y0 + y1) // 2
    w, h = x1 - x0, y1 - y0
    if shape == 'disc':
        draw.ellipse(box, fill=fill)
    elif shape == 'square':
        draw.rectangle(box, fill=fill)
    elif shape == 'triangle':
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=fill)
    elif shape == 'cross':
        bar = max(1, w // 4)
        draw.rectangle((cx - bar, y0, cx + bar, y1), fill=fill)
        draw.rectangle((x0, cy - bar, x1, cy + bar), fill=fill)
    elif shape == 'ring':
        draw.ellipse(box, outline=fill, width=max(2, w // 6))
    elif shape == 'diamond':
        draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=fill)
    elif shape == 'h_stripes':
        step = max(2, h // 5)
        for y in range(y0, y1, 2 * step):
            draw.rectangle((x0, y, x1, min(y1, y + step - 1)), fill=fill)
    elif shape == 'v_stripes':
        step = max(2, w // 5)
        for x in range(x0, x1, 2 * step):
            draw.rectangle((x, y0, min(x1, x + step - 1), y1), fill=fill)
    elif shape == 'checker':
        cell = max(2, w // 4)
        for i, y in enumerate(range(y0, y1, cell)):
            for j, x in enumerate(range(x0, x1, cell)):
                if (i + j) % 2 == 0:
                    draw.rectangle((x, y, min(x1, x + cell - 1), min(y1, y + cell - 1)), fill=fill)
    elif shape == 'ellipse':
        pad = h // 4
        draw.ellipse((x0, y0 + pad, x1, y1 - pad), fill=fill)
    else:
        raise ContractError(f"unknown shape class {shape!r}")


def synthetic_image(label: int, size: int, channels: int, rng: np.random.Generator) -> Image:
    """One image of class `label`."""
    background = _background(size, channels, rng)
    mode = 'RGB' if channels == 3 else 'L'
    layer = PILImage.new(mode, (size, size), 0)
    mask = PILImage.new('L', (size, size), 0)

    extent = int(rng.integers(size // 3, max(size // 3 + 1, (3 * size) // 4)))
    x0 = int(rng.integers(0, size - extent + 1))
    y0 = int(rng.integers(0, size - extent + 1))
    box = (x0, y0, x0 + extent - 1, y0 + extent - 1)
    color = _color(rng, channels)

    shape = SHAPE_CLASSES[label % len(SHAPE_CLASSES)]
    _draw_shape(ImageDraw.Draw(layer), shape, box, color if channels == 3 else color[0])
    _draw_shape(ImageDraw.Draw(mask), shape, box, 255)

    foreground = np.asarray(layer, dtype=np.float64).reshape(size, size, channels) / 255.0
    alpha = (np.asarray(mask, dtype=np.float64) / 255.0)[:, :, None]
    return Image(alpha * foreground + (1.0 - alpha) * background)


@log_operation("synthetic_corpus")
def synthetic_corpus(count: int, size: int = 64, channels: int = 3, num_classes: int = 10,
                     seed: int = 0) -> List[LabeledImage]:
    """
    `count` images with balanced labels 0..num_classes−1 (label = index mod num_classes).
    Image i depends only on (seed, i).
    """
    InputValidator.positive_int("count", count)
    InputValidator.positive_int("size", size)
    if not 2 <= num_classes <= len(SHAPE_CLASSES):
        raise ContractError(f"num_classes must lie in [2, {len(SHAPE_CLASSES)}], got {num_classes}")
    items = []
    for i in range(count):
        label = i % num_classes
        items.append(LabeledImage(synthetic_image(label, size, channels, derive_rng(seed, 'corpus', i)), label))
    logger.info(f"🎨 Synthetic corpus: {count} images, {num_classes} classes, {size}px")
    return items


def load_directory(root: Union[str, Path]) -> Tuple[List[LabeledImage], List[str]]:
    """
    Read `<root>/<class>/*.png|*.lmt`. Classes are the sorted subdirectory names.

    Returns:
        (items, class names)
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise IngestionError(f"{root} has no class subdirectories")
    items = []
    for label, name in enumerate(classes):
        for path in sorted((root / name).iterdir()):
            if path.suffix.lower() in IMAGE_SUFFIXES:
                items.append(LabeledImage(load_image(path), label))
    if not items:
        raise IngestionError(f"{root} contains no .png or .lmt images")
    logger.info(f"📂 Loaded {len(items)} images in {len(classes)} classes from {root}")
    return items, classes


def write_directory(items: Sequence[LabeledImage], root: Union[str, Path], fmt: str = 'png') -> Path:
    """Inverse of load_directory; class folders are named class_<label>."""
    InputValidator.choice("fmt", fmt, ('png', 'lmt'))
    writer: Callable = save_image if fmt == 'png' else save_container
    root = Path(root)
    counters: Dict[int, int] = {}
    for item in items:
        index = counters.get(item.label, 0)
        counters[item.label] = index + 1
        writer(item.image, root / f"class_{item.label:02d}" / f"{index:05d}.{fmt}")
    return root


def images_of(items: Sequence[LabeledImage]) -> List[Image]:
    return [item.image for item in items]
