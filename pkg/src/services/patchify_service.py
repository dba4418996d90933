"""
Image ingestion, RandomResizedCrop augmentation, raster-order patch
extraction, per-patch target normalization and linear patch embedding.

Raw tensor container (.lmt): magic b"LMT1", u32 LE rank, u32 LE dims,
then float32 LE values in [0, 1]. Rank 2 is read as a single channel.
"""

import math
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from src.core.numerics import Tensor
from src.models.models import Image, PatchGrid
from src.models.weights import PatchEmbedWeights
from src.utils.error_handling import (
    DimensionError, IngestionError, ParameterError, with_artifact_retry
)
from src.utils.logging_config import get_logger

logger = get_logger(__name__)

CONTAINER_MAGIC = b"LMT1"
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
MAX_SIDE = 1 << 15
TARGET_EPS = 1e-6

# torchvision's RandomResizedCrop aspect-ratio range and attempt budget
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)
CROP_ATTEMPTS = 10
DEFAULT_CROP_SCALE = (0.2, 1.0)

PathLike = Union[str, Path]


def load_image(source: PathLike) -> Image:
    """Read an .lmt container or a PNG file into an Image with pixels in [0, 1]."""
    path = Path(source)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}")

    if raw.startswith(CONTAINER_MAGIC):
        return decode_container(raw, str(path))
    if raw.startswith(PNG_SIGNATURE):
        return _decode_png(path)
    raise IngestionError(f"{path}: unknown magic bytes {raw[:4]!r}")


def decode_container(raw: bytes, label: str = "<bytes>") -> Image:
    offset = len(CONTAINER_MAGIC)
    if len(raw) < offset + 4:
        raise IngestionError(f"{label}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if rank not in (2, 3):
        raise IngestionError(f"{label}: rank must be 2 or 3, got {rank}")
    if len(raw) < offset + 4 * rank:
        raise IngestionError(f"{label}: truncated dimensions")
    dims = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    if any(d == 0 or d > MAX_SIDE for d in dims):
        raise IngestionError(f"{label}: dimension overflow {dims}")
    count = math.prod(dims)
    if len(raw) - offset != 4 * count:
        raise IngestionError(f"{label}: payload has {len(raw) - offset} bytes, {4 * count} expected")
    pixels = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
    return Image(pixels.astype(np.float64))


def encode_container(img: Image) -> bytes:
    header = CONTAINER_MAGIC + struct.pack("<I", 3) + struct.pack("<3I", *img.pixels.shape)
    return header + img.pixels.astype("<f4").tobytes()


@with_artifact_retry
def save_container(img: Image, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(img))
    return path


def _decode_png(path: Path) -> Image:
    try:
        with PILImage.open(path) as pil:
            mode = pil.mode
            if mode in ("L", "I;16", "I"):
                pil = pil.convert("L")
            elif mode != "RGB":
                pil = pil.convert("RGB")
            pixels = np.asarray(pil, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise IngestionError(f"{path}: unreadable PNG ({e})")
    return Image(pixels)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


@with_artifact_retry
def save_image(img: Image, path: PathLike) -> Path:
    """Write an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_uint8(img.pixels)
    pil = PILImage.fromarray(np.ascontiguousarray(data[:, :, 0]) if img.channels == 1 else data)
    pil.save(path, format="PNG")
    return path


def _crop_box(height: int, width: int, scale: Tuple[float, float],
              rng: np.random.Generator) -> Tuple[int, int, int, int]:
    """(top, left, h, w) following torchvision's sampling, with a centered fallback."""
    area = height * width
    log_ratio = (math.log(CROP_RATIO[0]), math.log(CROP_RATIO[1]))
    for _ in range(CROP_ATTEMPTS):
        target_area = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(*log_ratio))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w

    in_ratio = width / height
    if in_ratio < CROP_RATIO[0]:
        w, h = width, int(round(width / CROP_RATIO[0]))
    elif in_ratio > CROP_RATIO[1]:
        h, w = height, int(round(height * CROP_RATIO[1]))
    else:
        w, h = width, height
    return (height - h) // 2, (width - w) // 2, h, w


def resize_bilinear(pixels: np.ndarray, box: Tuple[int, int, int, int], out_size: int) -> np.ndarray:
    """Crop (top, left, h, w) and resize each channel to out_size² with Pillow's bilinear filter."""
    top, left, h, w = box
    channels = []
    for c in range(pixels.shape[2]):
        plane = PILImage.fromarray(np.ascontiguousarray(pixels[:, :, c], dtype=np.float32))
        resized = plane.resize((out_size, out_size), resample=PILImage.BILINEAR,
                               box=(left, top, left + w, top + h))
        channels.append(np.asarray(resized, dtype=np.float64))
    return np.clip(np.stack(channels, axis=-1), 0.0, 1.0)


def random_resized_crop(img: Image, out_size: int, scale_range: Tuple[float, float],
                        rng: np.random.Generator) -> Image:
    """Crop a random sub-rectangle covering a scale_range fraction of the area and resize it."""
    lo, hi = scale_range
    if not 0.0 < lo <= hi <= 1.0:
        raise ParameterError(f"scale range must satisfy 0 < lo ≤ hi ≤ 1, got {scale_range}")
    if lo * img.height * img.width < 1.0:
        raise ParameterError(f"scale {lo} of a {img.height}×{img.width} image is a sub-pixel crop")
    if out_size < 1:
        raise ParameterError(f"out_size must be positive, got {out_size}")
    box = _crop_box(img.height, img.width, (lo, hi), rng)
    return Image(resize_bilinear(img.pixels, box, out_size))


def normalize_patches(patches: np.ndarray, channels: int = 1, per_channel: bool = False,
                      eps: float = TARGET_EPS) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Standardize each patch row: (x − mean) / sqrt(var + eps).

    Statistics pool all patch values, or each channel separately when
    per_channel is set. Returns (targets, mean, std) with mean/std broadcastable
    against the rows.
    """
    if per_channel:
        n, dim = patches.shape
        grouped = patches.reshape(n, dim // channels, channels)
        mean = grouped.mean(axis=1, keepdims=True)
        std = np.sqrt(grouped.var(axis=1, keepdims=True) + eps)
        targets = ((grouped - mean) / std).reshape(n, dim)
        return targets, np.broadcast_to(mean, grouped.shape).reshape(n, dim), np.broadcast_to(std, grouped.shape).reshape(n, dim)
    mean = patches.mean(axis=1, keepdims=True)
    std = np.sqrt(patches.var(axis=1, keepdims=True) + eps)
    return (patches - mean) / std, mean, std


def patchify(img: Image, patch_size: int, per_channel: bool = False) -> PatchGrid:
    """Cut an image into non-overlapping patches in raster order (no padding)."""
    if patch_size < 1:
        raise ParameterError(f"patch_size must be positive, got {patch_size}")
    if img.height % patch_size or img.width % patch_size:
        raise DimensionError(
            f"{img.height}×{img.width} image is not divisible into {patch_size}-pixel patches"
        )
    gh, gw, c = img.height // patch_size, img.width // patch_size, img.channels
    patches = (img.pixels.reshape(gh, patch_size, gw, patch_size, c)
               .transpose(0, 2, 1, 3, 4)
               .reshape(gh * gw, patch_size * patch_size * c))
    targets, mean, std = normalize_patches(patches, c, per_channel)
    return PatchGrid(grid_h=gh, grid_w=gw, patch_size=patch_size, channels=c,
                     patches=patches, normalized_targets=targets,
                     patch_mean=mean, patch_std=std, per_channel=per_channel)


def unpatchify(patches: np.ndarray, grid_h: int, grid_w: int, patch_size: int, channels: int) -> Image:
    """Inverse assembly of raster-order patch rows."""
    if patches.shape != (grid_h * grid_w, patch_size * patch_size * channels):
        raise DimensionError(f"cannot assemble {patches.shape} into a {grid_h}×{grid_w} grid")
    pixels = (patches.reshape(grid_h, grid_w, patch_size, patch_size, channels)
              .transpose(0, 2, 1, 3, 4)
              .reshape(grid_h * patch_size, grid_w * patch_size, channels))
    return Image(np.clip(pixels, 0.0, 1.0))


def embed_patches(grid: PatchGrid, weights: PatchEmbedWeights) -> Tensor:
    """Row i = patches[i] · projection + bias."""
    if weights.patch_dim != grid.patch_dim:
        raise DimensionError(
            f"projection expects {weights.patch_dim}-dim patches, grid has {grid.patch_dim}"
        )
    patches = Tensor(grid.patches, dtype=weights.projection.dtype)
    return patches @ weights.projection + weights.bias
