"""
Tests for the binary checkpoint format.
"""

import struct

import numpy as np
import pytest

from src.models.models import Checkpoint, OptimizerState
from src.services.checkpoint_service import (
    MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
)
from src.utils.error_handling import (
    CheckpointError, CheckpointMagicError, CheckpointTruncatedError, CheckpointVersionError
)


@pytest.fixture
def ckpt(rng):
    tensors = {
        'embed.projection': rng.normal(size=(12, 8)).astype(np.float32),
        'embed.bias': np.zeros(8, dtype=np.float32),
        'encoder.rpe.0': rng.normal(size=(2, 9, 4)),
    }
    return Checkpoint(
        version=1,
        config_text="[train]\nseed = 3\n",
        tensors=tensors,
        optimizer=OptimizerState(m={k: v * 0.1 for k, v in tensors.items()},
                                 v={k: v * v for k, v in tensors.items()}, step=17),
        rng_state={'seed': 3, 'data_epoch': 1, 'data_cursor': 2},
        step=17,
    )


class TestRoundTrip:

    def test_bitwise(self, ckpt):
        back = decode_checkpoint(encode_checkpoint(ckpt))
        assert back.config_text == ckpt.config_text
        assert back.step == 17 and back.optimizer.step == 17
        assert back.rng_state == ckpt.rng_state
        for table, original in ((back.tensors, ckpt.tensors), (back.optimizer.m, ckpt.optimizer.m),
                                (back.optimizer.v, ckpt.optimizer.v)):
            assert set(table) == set(original)
            for name in original:
                assert table[name].dtype == original[name].dtype
                np.testing.assert_array_equal(table[name], original[name])

    def test_file_round_trip_leaves_no_temporary(self, ckpt, tmp_path):
        path = save_checkpoint(tmp_path / "run" / "last.lmck", ckpt)
        assert path.read_bytes()[:4] == MAGIC
        assert [p.name for p in path.parent.iterdir()] == ["last.lmck"]
        np.testing.assert_array_equal(load_checkpoint(path).tensors['encoder.rpe.0'],
                                      ckpt.tensors['encoder.rpe.0'])

    def test_overwrite(self, ckpt, tmp_path):
        path = tmp_path / "c.lmck"
        save_checkpoint(path, ckpt)
        ckpt.step = 18
        save_checkpoint(path, ckpt)
        assert load_checkpoint(path).step == 18


class TestCorruption:

    def test_bad_magic(self, ckpt):
        raw = encode_checkpoint(ckpt)
        with pytest.raises(CheckpointMagicError):
            decode_checkpoint(b"XXXX" + raw[4:])

    def test_version_mismatch(self, ckpt):
        ckpt.version = 2
        with pytest.raises(CheckpointVersionError):
            decode_checkpoint(encode_checkpoint(ckpt))

    @pytest.mark.parametrize("cut", [6, 40, 200, 1])
    def test_truncated(self, ckpt, cut):
        raw = encode_checkpoint(ckpt)
        with pytest.raises(CheckpointTruncatedError):
            decode_checkpoint(raw[:-cut])

    def test_trailing_bytes(self, ckpt):
        with pytest.raises(CheckpointError):
            decode_checkpoint(encode_checkpoint(ckpt) + b"\x00")

    def test_unknown_dtype_tag(self, ckpt):
        raw = bytearray(encode_checkpoint(ckpt))
        config_len = struct.unpack_from("<I", raw, 8)[0]
        # first table entry: u32 count, u16 name length, name, then the dtype tag
        offset = 12 + config_len + 8 + 4
        name_len = struct.unpack_from("<H", raw, offset)[0]
        raw[offset + 2 + name_len] = 9
        with pytest.raises(CheckpointError):
            decode_checkpoint(bytes(raw))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.lmck")

    def test_exit_code(self):
        assert CheckpointTruncatedError("x").exit_code == 7
