"""
Tests for image ingestion, augmentation, patch extraction and embedding.
"""

import struct

import numpy as np
import pytest

from src.core.numerics import Tensor
from src.models.models import Image
from src.models.weights import PatchEmbedWeights
from src.services.patchify_service import (
    CONTAINER_MAGIC, decode_container, embed_patches, encode_container, load_image,
    patchify, random_resized_crop, save_container, save_image, unpatchify
)
from src.utils.error_handling import DimensionError, IngestionError, ParameterError


@pytest.fixture
def rgb(rng) -> Image:
    return Image(rng.uniform(0.0, 1.0, size=(16, 24, 3)))


# =============================================================================
# Image and container ingestion
# =============================================================================

class TestIngestion:

    def test_pixels_out_of_range(self):
        with pytest.raises(IngestionError):
            Image(np.full((4, 4, 3), 1.5))

    def test_two_dimensional_is_single_channel(self):
        assert Image(np.zeros((4, 5))).channels == 1

    def test_container_round_trip(self, rgb, tmp_path):
        path = save_container(rgb, tmp_path / "img.lmt")
        loaded = load_image(path)
        np.testing.assert_allclose(loaded.pixels, rgb.pixels.astype(np.float32), atol=0)

    def test_container_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lmt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(IngestionError):
            load_image(path)

    def test_container_truncated_payload(self, rgb):
        raw = encode_container(rgb)
        with pytest.raises(IngestionError):
            decode_container(raw[:-4])

    def test_container_zero_dimension(self):
        raw = CONTAINER_MAGIC + struct.pack("<I", 2) + struct.pack("<2I", 0, 4)
        with pytest.raises(IngestionError):
            decode_container(raw)

    def test_png_round_trip(self, rgb, tmp_path):
        path = save_image(rgb, tmp_path / "img.png")
        loaded = load_image(path)
        assert loaded.pixels.shape == rgb.pixels.shape
        np.testing.assert_allclose(loaded.pixels, rgb.pixels, atol=0.5 / 255 + 1e-9)

    def test_grayscale_png(self, tmp_path):
        img = Image(np.linspace(0.0, 1.0, 64).reshape(8, 8, 1))
        assert load_image(save_image(img, tmp_path / "gray.png")).channels == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_image(tmp_path / "absent.png")


# =============================================================================
# Augmentation
# =============================================================================

class TestRandomResizedCrop:

    def test_output_size_and_range(self, rgb, rng):
        out = random_resized_crop(rgb, 8, (0.2, 1.0), rng)
        assert out.pixels.shape == (8, 8, 3)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_deterministic_given_generator(self, rgb):
        a = random_resized_crop(rgb, 8, (0.2, 1.0), np.random.default_rng(5))
        b = random_resized_crop(rgb, 8, (0.2, 1.0), np.random.default_rng(5))
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_full_scale_identity_size(self):
        img = Image(np.full((8, 8, 1), 0.25))
        out = random_resized_crop(img, 8, (1.0, 1.0), np.random.default_rng(0))
        np.testing.assert_allclose(out.pixels, 0.25, atol=1e-6)

    @pytest.mark.parametrize("scale", [(0.0, 1.0), (0.8, 0.5), (0.5, 1.2)])
    def test_invalid_scale(self, rgb, rng, scale):
        with pytest.raises(ParameterError):
            random_resized_crop(rgb, 8, scale, rng)


# =============================================================================
# Patch extraction
# =============================================================================

class TestPatchify:

    def test_raster_order(self):
        pixels = np.arange(16.0).reshape(4, 4, 1) / 16.0
        grid = patchify(Image(pixels), 2)
        assert (grid.grid_h, grid.grid_w) == (2, 2)
        # Patch 1 is the top-right 2×2 block
        np.testing.assert_allclose(grid.patches[1], np.array([2, 3, 6, 7]) / 16.0)
        np.testing.assert_allclose(grid.patches[2], np.array([8, 9, 12, 13]) / 16.0)

    def test_channels_interleaved_per_pixel(self, rgb):
        grid = patchify(rgb, 8)
        np.testing.assert_allclose(grid.patches[0][:3], rgb.pixels[0, 0])

    def test_unpatchify_inverts(self, rgb):
        grid = patchify(rgb, 4)
        back = unpatchify(grid.patches, grid.grid_h, grid.grid_w, 4, 3)
        np.testing.assert_array_equal(back.pixels, rgb.pixels)

    def test_indivisible(self, rgb):
        with pytest.raises(DimensionError):
            patchify(rgb, 5)

    def test_targets_standardized(self, rgb):
        grid = patchify(rgb, 4)
        np.testing.assert_allclose(grid.normalized_targets.mean(axis=1), 0.0, atol=1e-5)
        np.testing.assert_allclose(grid.normalized_targets.var(axis=1), 1.0, atol=1e-3)

    def test_constant_patch_targets_near_zero(self):
        grid = patchify(Image(np.full((4, 4, 3), 0.6)), 2)
        np.testing.assert_allclose(grid.normalized_targets, 0.0, atol=1e-6)

    def test_per_channel_statistics(self, rng):
        pixels = rng.uniform(0.0, 1.0, size=(4, 4, 3))
        pixels[:, :, 2] = 0.5 * pixels[:, :, 2] + 0.4
        grid = patchify(Image(pixels), 4, per_channel=True)
        per_channel = grid.normalized_targets[0].reshape(16, 3)
        np.testing.assert_allclose(per_channel.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(per_channel.var(axis=0), 1.0, atol=1e-3)

    def test_denormalize_recovers_patches(self, rgb):
        grid = patchify(rgb, 4)
        recovered = grid.normalized_targets * grid.patch_std + grid.patch_mean
        np.testing.assert_allclose(recovered, grid.patches, atol=1e-12)


class TestEmbedding:

    def test_linear_projection(self, rgb, rng, f64):
        grid = patchify(rgb, 4)
        proj = Tensor(rng.normal(size=(grid.patch_dim, 6)), requires_grad=True)
        bias = Tensor(rng.normal(size=6), requires_grad=True)
        out = embed_patches(grid, PatchEmbedWeights(proj, bias))
        assert out.shape == (grid.num_patches, 6)
        np.testing.assert_allclose(out.data, grid.patches @ proj.data + bias.data, atol=1e-12)

    def test_patch_dim_mismatch(self, rgb, f64):
        grid = patchify(rgb, 4)
        weights = PatchEmbedWeights(Tensor(np.zeros((5, 6))), Tensor(np.zeros(6)))
        with pytest.raises(DimensionError):
            embed_patches(grid, weights)
