"""
Tests for the windowed Transformer encoder with contextual relative
position bias.
"""

import math

import numpy as np
import pytest

from src.core.numerics import Tensor, layer_norm, precision
from src.models.models import EncoderConfig, Image, MaskPlan, WindowSpec
from src.models.weights import init_encoder
from src.services.encoder_service import (
    attention, encoder_forward, offset_of, relative_offset_index, rpe_bias
)
from src.services.patchify_service import embed_patches, patchify
from src.services.sampler_service import gather_window
from src.utils.error_handling import DimensionError
from src.utils.seeding import derive_rng

from conftest import model_for, randomize


def naive_attention(x, layer, table, k, num_heads):
    """Scalar double loop over (query, key) pairs."""
    t, d = x.shape
    hd = d // num_heads
    q, kk, v = x @ layer.wq.data, x @ layer.wk.data, x @ layer.wv.data
    out = np.zeros((t, d))
    for h in range(num_heads):
        cols = slice(h * hd, (h + 1) * hd)
        for i in range(t):
            ri, ci = divmod(i, k)
            logits = np.empty(t)
            for j in range(t):
                rj, cj = divmod(j, k)
                r = table[h, (rj - ri + k - 1) * (2 * k - 1) + (cj - ci + k - 1)]
                logits[j] = (q[i, cols] @ kk[j, cols] + q[i, cols] @ r) / math.sqrt(hd)
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            for j in range(t):
                out[i, cols] += weights[j] * v[j, cols]
    return out @ layer.wo.data + layer.bo.data


@pytest.fixture
def weights(encoder_cfg):
    with precision(np.float64):
        enc = init_encoder(encoder_cfg, derive_rng(3, 'init'))
    draw = np.random.default_rng(4)
    for table in enc.rpe:
        table.data[...] = draw.normal(0.0, 0.5, size=table.shape)
    for layer in enc.layers:
        for p in (layer.wq, layer.wk, layer.wv, layer.wo):
            p.data[...] = draw.normal(0.0, 0.3, size=p.shape)
    return enc


class TestOffsets:

    def test_diagonal_is_zero_offset(self):
        index = relative_offset_index(7)
        assert index.shape == (49, 49)
        assert set(np.diag(index).tolist()) == {6 * 13 + 6}
        assert offset_of(int(index[0, 0]), 7) == (0, 0)

    def test_corner_offsets(self):
        index = relative_offset_index(7)
        assert offset_of(int(index[0, 48]), 7) == (6, 6)
        assert offset_of(int(index[48, 0]), 7) == (-6, -6)
        assert offset_of(int(index[6, 42]), 7) == (6, -6)
        assert index.min() == 0 and index.max() == 13 * 13 - 1

    def test_same_offset_same_index(self):
        index = relative_offset_index(4)
        # (0,0)→(1,1) and (2,1)→(3,2) share offset (+1, +1)
        assert index[0, 5] == index[9, 14]

    def test_read_only(self):
        with pytest.raises(ValueError):
            relative_offset_index(3)[0, 0] = 1


class TestAttention:

    @pytest.mark.parametrize("trial", range(100))
    def test_matches_naive_double_loop(self, weights, encoder_cfg, trial):
        x = np.random.default_rng(100 + trial).normal(size=(49, encoder_cfg.embed_dim))
        with precision(np.float64):
            out = attention(Tensor(x), weights.layers[0], weights.rpe[0], 7, encoder_cfg.num_heads)
        expected = naive_attention(x, weights.layers[0], weights.rpe[0].data, 7, encoder_cfg.num_heads)
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_rows_sum_to_one(self, weights, encoder_cfg, rng):
        captured = []
        with precision(np.float64):
            attention(Tensor(rng.normal(size=(49, 16))), weights.layers[0], weights.rpe[0], 7, 2, captured)
        probs = captured[0]
        assert probs.shape == (2, 49, 49)
        np.testing.assert_allclose(probs.sum(axis=2), 1.0, atol=1e-6)

    def test_rpe_bias_scaled_by_head_dim(self, rng, f64):
        q = Tensor(rng.normal(size=(4, 3)))
        table = Tensor(rng.normal(size=(9, 3)))
        offsets = relative_offset_index(2)
        bias = rpe_bias(q, table, offsets)
        expected = (q.data @ table.data.T)[np.arange(4)[:, None], offsets] / math.sqrt(3)
        np.testing.assert_allclose(bias.data, expected)

    def test_rpe_table_shape_mismatch(self, rng, f64):
        with pytest.raises(DimensionError):
            rpe_bias(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(9, 2))), relative_offset_index(2))

    def test_token_count(self, weights, rng, f64):
        with pytest.raises(DimensionError):
            attention(Tensor(rng.normal(size=(48, 16))), weights.layers[0], weights.rpe[0], 7, 2)

    def test_zero_scores_average_values(self, weights, rng, f64):
        layer = weights.layers[0]
        layer.wq.data[...] = 0.0
        layer.wk.data[...] = 0.0
        table = Tensor(np.zeros(weights.rpe[0].shape))
        x = rng.normal(size=(49, 16))
        captured = []
        out = attention(Tensor(x), layer, table, 7, 2, captured)
        np.testing.assert_allclose(captured[0], 1.0 / 49)
        mean_v = (x @ layer.wv.data).mean(axis=0)
        expected = np.tile(mean_v @ layer.wo.data + layer.bo.data, (49, 1))
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_single_token_is_value_projection(self, weights, rng, f64):
        layer = weights.layers[0]
        x = rng.normal(size=(1, 16))
        table = Tensor(rng.normal(size=(2, 1, 8)))
        out = attention(Tensor(x), layer, table, 1, 2)
        np.testing.assert_allclose(out.data, x @ layer.wv.data @ layer.wo.data + layer.bo.data, atol=1e-12)

    def test_zero_table_gives_zero_bias(self, rng, f64):
        q = Tensor(rng.normal(size=(9, 4)))
        bias = rpe_bias(q, Tensor(np.zeros((25, 4))), relative_offset_index(3))
        np.testing.assert_array_equal(bias.data, np.zeros((9, 9)))
        single = rpe_bias(Tensor(rng.normal(size=(1, 4))), Tensor(np.zeros((1, 4))), relative_offset_index(1))
        np.testing.assert_array_equal(single.data, np.zeros((1, 1)))

    def test_token_permutation_changes_output(self, weights, rng, f64):
        layer, table = weights.layers[0], weights.rpe[0]
        x = rng.normal(size=(49, 16))
        perm = rng.permutation(49)
        out = attention(Tensor(x), layer, table, 7, 2).data
        permuted = attention(Tensor(x[perm]), layer, table, 7, 2).data
        assert not np.allclose(permuted, out[perm], atol=1e-6)
        # without position bias attention is permutation equivariant
        flat = Tensor(np.zeros(table.shape))
        out = attention(Tensor(x), layer, flat, 7, 2).data
        permuted = attention(Tensor(x[perm]), layer, flat, 7, 2).data
        np.testing.assert_allclose(permuted, out[perm], atol=1e-10)


class TestEncoder:

    def test_shape_preserved(self, weights, encoder_cfg, rng, f64):
        out = encoder_forward(Tensor(rng.normal(size=(49, 16))), weights, encoder_cfg)
        assert out.shape == (49, 16)

    def test_captures_every_layer(self, weights, encoder_cfg, rng, f64):
        captured = []
        encoder_forward(Tensor(rng.normal(size=(49, 16))), weights, encoder_cfg, capture=captured)
        assert len(captured) == encoder_cfg.num_layers

    def test_zero_layers_is_final_norm(self, rng, f64):
        cfg = EncoderConfig(embed_dim=8, num_heads=2, num_layers=0, k=3)
        enc = init_encoder(cfg, rng)
        x = Tensor(rng.normal(size=(9, 8)))
        out = encoder_forward(x, enc, cfg)
        np.testing.assert_allclose(out.data, layer_norm(x, enc.final_gamma, enc.final_beta, cfg.ln_eps).data)

    def test_wrong_token_shape(self, weights, encoder_cfg, rng, f64):
        with pytest.raises(DimensionError):
            encoder_forward(Tensor(rng.normal(size=(49, 8))), weights, encoder_cfg)

    def test_config_mismatch(self, weights, f64, rng):
        other = EncoderConfig(embed_dim=16, num_heads=2, num_layers=2, mlp_ratio=2.0, k=5)
        with pytest.raises(DimensionError):
            encoder_forward(Tensor(rng.normal(size=(25, 16))), weights, other)

    def test_per_layer_tables(self, rng):
        cfg = EncoderConfig(embed_dim=8, num_heads=2, num_layers=3, k=3, per_layer_rpe=True)
        enc = init_encoder(cfg, rng)
        assert len(enc.rpe) == 3
        assert enc.rpe_for(2) is enc.rpe[2]

    def test_translation_invariance(self, tiny_cfg, rng):
        """Identical window content at two grid positions encodes identically."""
        cfg = tiny_cfg
        model = randomize(model_for(cfg), rng)
        pixels = rng.uniform(0.0, 1.0, size=(16, 16, 3))
        # window (0, 0) copied to window (2, 1) on the 4×4 patch grid, 4-pixel patches
        pixels[8:16, 4:12] = pixels[0:8, 0:8]
        plan = MaskPlan(window_len=4, masked=(1, 2), ratio=0.5)
        with precision(np.float64):
            grid = patchify(Image(pixels), cfg.data.patch_size)
            embeddings = embed_patches(grid, model.embed)
            outputs = []
            for spec in (WindowSpec(0, 0, 2), WindowSpec(2, 1, 2)):
                tokens, _, _ = gather_window(embeddings, grid, spec, plan, model.embed.bias)
                outputs.append(encoder_forward(tokens, model.encoder, cfg.encoder).data)
        np.testing.assert_array_equal(outputs[0], outputs[1])
