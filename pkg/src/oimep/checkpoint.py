"""Portable training checkpoints.

Layout of a checkpoint file (all multi-byte integers little-endian):

    bytes 0..7    magic b"OIMEPCK1"
    bytes 8..11   uint32 header length L
    bytes 12..12+L-1   UTF-8 JSON header
    remainder     tensor payload

The JSON header holds the format version, layer sizes, epoch counter
(number of completed epochs), master seed, the protocol and hardware
configs, and the tensor order.  The payload is the four parameter
tensors as raw float64 little-endian bytes, C (row-major) order,
concatenated in the fixed order w_xh, w_hy, b_h, b_y.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .hardware import HardwareConfig
from .network import EpConfig, NetworkParams

MAGIC = b"OIMEPCK1"
FORMAT_VERSION = 1
TENSOR_ORDER = ("w_xh", "w_hy", "b_h", "b_y")


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or wrong-version checkpoint."""


def save_checkpoint(
    path,
    net: NetworkParams,
    cfg: EpConfig,
    hw: HardwareConfig,
    epoch: int,
    seed: int,
) -> None:
    """Write a checkpoint; `epoch` counts completed training epochs."""
    header = {
        "version": FORMAT_VERSION,
        "sizes": {"n_x": net.n_x, "n_h": net.n_h, "n_y": net.n_y},
        "epoch": int(epoch),
        "seed": int(seed),
        "ep_config": dataclasses.asdict(cfg),
        "hardware": dataclasses.asdict(hw),
        "tensor_order": list(TENSOR_ORDER),
        "dtype": "<f8",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in TENSOR_ORDER:
            tensor = np.ascontiguousarray(getattr(net, name), dtype="<f8")
            fh.write(tensor.tobytes())


def load_checkpoint(path):
    """Read a checkpoint -> (net, cfg, hw, epoch, seed).

    Raises CheckpointError for a bad magic, an unsupported format
    version, or a payload that does not match the declared sizes.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an oimep checkpoint")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(raw) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('version')!r}, "
            f"this build reads version {FORMAT_VERSION}"
        )
    sizes = header["sizes"]
    n_x, n_h, n_y = sizes["n_x"], sizes["n_h"], sizes["n_y"]
    shapes = {
        "w_xh": (n_x, n_h),
        "w_hy": (n_h, n_y),
        "b_h": (n_h,),
        "b_y": (n_y,),
    }
    payload = raw[start + hlen :]
    expected = sum(int(np.prod(s)) for s in shapes.values()) * 8
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    tensors = {}
    offset = 0
    for name in header["tensor_order"]:
        shape = shapes[name]
        count = int(np.prod(shape))
        tensors[name] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += count * 8
    net = NetworkParams(**tensors)
    cfg = EpConfig(**header["ep_config"])
    hw = HardwareConfig(**header["hardware"])
    return net, cfg, hw, int(header["epoch"]), int(header["seed"])
