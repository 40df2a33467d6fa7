"""Checkpoint container: round trip and corruption handling."""

import struct

import numpy as np
import pytest

from oimep import EpConfig, HardwareConfig, init_network
from oimep.checkpoint import (
    MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def saved(tmp_path):
    net = init_network(6, 4, 3, seed=9)
    net.b_h[:] = [0.1, -0.2, 0.3, 0.0]
    cfg = EpConfig(beta=0.07, epochs=12, seed=9)
    hw = HardwareConfig(noise_xi=0.2, phase_bits=4, noise_seed=9)
    path = tmp_path / "run.oimck"
    save_checkpoint(path, net, cfg, hw, epoch=7, seed=9)
    return path, net, cfg, hw


class TestRoundTrip:
    def test_everything_restored_exactly(self, saved):
        path, net, cfg, hw = saved
        loaded_net, loaded_cfg, loaded_hw, epoch, seed = load_checkpoint(path)
        for name in ("w_xh", "w_hy", "b_h", "b_y"):
            np.testing.assert_array_equal(getattr(loaded_net, name), getattr(net, name))
        assert loaded_cfg == cfg
        assert loaded_hw == hw
        assert epoch == 7 and seed == 9

    def test_magic_begins_file(self, saved):
        path = saved[0]
        assert path.read_bytes().startswith(MAGIC)


class TestCorruption:
    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(CheckpointError, match="not an oimep checkpoint"):
            load_checkpoint(path)

    def test_version_mismatch(self, saved):
        path = saved[0]
        raw = bytearray(path.read_bytes())
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = raw[12 : 12 + hlen].decode()
        bumped = header.replace('"version": 1', '"version": 99')
        assert bumped != header
        path.write_bytes(raw[:8] + struct.pack("<I", len(bumped)) +
                         bumped.encode() + raw[12 + hlen :])
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_payload(self, saved):
        path = saved[0]
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError, match="payload"):
            load_checkpoint(path)
