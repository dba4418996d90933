"""
Tests for attention locality profiles around masked targets.
"""

import csv

import numpy as np
import pytest

from conftest import model_for, randomize
from src.models.models import WindowSpec
from src.services.corpus_service import synthetic_corpus
from src.services.locality_service import (
    attention_locality, beats_uniform, locality_survey, profile, summarize, uniform_baseline,
    window_distances, write_locality_csv
)
from src.services.patchify_service import patchify
from src.services.sampler_service import make_mask_plan
from src.utils.error_handling import ContractError, ParameterError


@pytest.fixture
def grids(tiny_cfg, tiny_corpus):
    return [patchify(item.image, tiny_cfg.data.patch_size) for item in tiny_corpus[:2]]


@pytest.fixture
def model(tiny_cfg, rng):
    return randomize(model_for(tiny_cfg), rng)


class TestProfiles:

    def test_uniform_centre_baseline(self):
        stat = uniform_baseline(7, 24)
        assert stat.target == (3, 3)
        assert stat.mean_distance == pytest.approx(112 / 49)
        np.testing.assert_allclose(stat.mass_within_radius[:4], [1 / 49, 9 / 49, 25 / 49, 1.0])
        np.testing.assert_allclose(stat.mass_within_radius[4:], 1.0)

    def test_corner_distances(self):
        distances = window_distances(3, 0)
        np.testing.assert_array_equal(distances.reshape(3, 3), [[0, 1, 2], [1, 1, 2], [2, 2, 2]])

    def test_euclidean(self):
        distances = window_distances(3, 4, metric='euclidean')
        assert distances[0] == pytest.approx(np.sqrt(2.0))
        assert distances[1] == 1.0

    def test_unknown_metric(self):
        with pytest.raises(ParameterError):
            window_distances(3, 0, metric='manhattan')

    def test_delta_beats_uniform(self):
        mass = np.zeros(49)
        mass[24] = 1.0
        stat = profile(mass, 7, 24)
        assert stat.mean_distance == 0.0
        assert beats_uniform(stat)
        assert not beats_uniform(uniform_baseline(7, 24))

    def test_radius_outside_window(self):
        with pytest.raises(ParameterError):
            beats_uniform(uniform_baseline(3, 4), radius=3)


class TestAttentionLocality:

    def test_mass_is_a_distribution(self, f64, model, tiny_cfg, grids, rng):
        plan = make_mask_plan(2, 0.5, rng)
        target = plan.masked[0]
        stat = attention_locality(model, grids[0], WindowSpec(1, 1, 2), plan, target, 0, tiny_cfg.encoder)
        assert stat.attention_mass.shape == (4,)
        assert stat.attention_mass.sum() == pytest.approx(1.0, abs=1e-5)
        assert stat.mass_within_radius[-1] == pytest.approx(1.0, abs=1e-5)
        assert stat.layer == 0

    def test_target_must_be_masked(self, f64, model, tiny_cfg, grids, rng):
        plan = make_mask_plan(2, 0.5, rng)
        with pytest.raises(ContractError):
            attention_locality(model, grids[0], WindowSpec(0, 0, 2), plan, plan.visible[0], 0, tiny_cfg.encoder)

    def test_layer_out_of_range(self, f64, model, tiny_cfg, grids, rng):
        plan = make_mask_plan(2, 0.5, rng)
        with pytest.raises(ParameterError):
            attention_locality(model, grids[0], WindowSpec(0, 0, 2), plan, plan.masked[0], 1, tiny_cfg.encoder)


class TestSurvey:

    def test_counts_and_csv(self, f64, model, tiny_cfg, grids, tmp_path):
        fraction, stats = locality_survey(model, grids, tiny_cfg.encoder, 0.5, layer=0, seed=0,
                                          windows_per_grid=2, targets_per_window=4, radius=0)
        # two masked cells per 2x2 window at ratio 0.5
        assert len(stats) == 2 * 2 * 2
        assert 0.0 <= fraction <= 1.0
        assert summarize(stats)['samples'] == 8

        path = write_locality_csv(stats, tmp_path / "locality.csv")
        with open(path, newline='', encoding='utf-8') as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 8 * 2
        assert rows[0]['metric'] == 'chebyshev'

    def test_zero_ratio(self, f64, model, tiny_cfg, grids):
        with pytest.raises(ContractError):
            locality_survey(model, grids, tiny_cfg.encoder, 0.0, layer=0, seed=0)

    def test_summary_of_nothing(self):
        assert summarize([]) == {'samples': 0}


@pytest.mark.slow
def test_trained_attention_is_local(desk_run):
    cfg = desk_run.cfg
    data = cfg.data
    held_out = synthetic_corpus(16, data.image_size, data.channels, data.num_classes, cfg.seed + 1)
    grids = [patchify(item.image, data.patch_size, data.normalize_per_channel) for item in held_out]
    fraction, stats = locality_survey(desk_run.model, grids, cfg.encoder, cfg.sampler.mask_ratio,
                                      layer=cfg.encoder.num_layers - 1, seed=cfg.seed, radius=2)
    assert len(stats) == 16 * 2 * 4
    assert fraction >= 0.7
