"""
Tests for the mask-ratio and window-side sweeps.
"""

import csv

import pytest

from src.services.ablation_service import (
    ABLATION_CSV_HEADER, mask_ratio_sweep, window_sweep, write_ablation_csv
)
from src.services.probe_service import ProbeConfig
from src.utils.error_handling import ParameterError


@pytest.fixture
def probe():
    return ProbeConfig(epochs=5)


def test_mask_ratio_sweep(tiny_cfg, tiny_corpus, probe, tmp_path):
    rows = mask_ratio_sweep(tiny_cfg, tiny_corpus, steps=1, ratios=(0.25, 0.75), probe=probe, threads=1)
    assert [row.mask_ratio for row in rows] == [0.25, 0.75]
    assert all(row.axis == 'mask_ratio' and row.steps == 1 for row in rows)
    assert all(0.0 <= row.probe_accuracy <= 1.0 for row in rows)

    path = write_ablation_csv(rows, tmp_path / "ablation.csv")
    with open(path, newline='', encoding='utf-8') as handle:
        table = list(csv.reader(handle))
    assert table[0] == ABLATION_CSV_HEADER
    assert len(table) == 3


def test_window_sweep_skips_large_sides(tiny_cfg, tiny_corpus, probe):
    rows = window_sweep(tiny_cfg, tiny_corpus, steps=1, sides=(2, 5, 7), probe=probe, threads=1)
    assert [row.k for row in rows] == [2]
    assert rows[0].n_views == 49


def test_steps_must_be_positive(tiny_cfg, tiny_corpus):
    with pytest.raises(ParameterError):
        mask_ratio_sweep(tiny_cfg, tiny_corpus, steps=0)
