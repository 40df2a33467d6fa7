"""Hardware non-idealities: phase noise and quantization.

Three effects are modeled, each individually switchable:

* Gaussian phase noise injected into the dynamics, with the
  Euler-Maruyama scaling std = xi * sqrt(epsilon) per step so that
  trajectory statistics do not depend on the step size.
* Phase quantization: a b-bit phase detector reads phases on a uniform
  grid of 2**b levels over [0, 2pi).  By default this applies only at
  measurement (update readout, prediction readout), never inside the
  dynamics; `quantize_dynamics` forces it into every step for
  sensitivity studies.
* Parameter quantization: trainable tensors clipped to [-r, +r] and
  rounded to 2**b uniform levels, reapplied after every update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkParams

TWO_PI = 2.0 * np.pi

# Stream labels for deriving independent noise generators.
PHASE_FREE = 0
PHASE_PLUS = 1
PHASE_MINUS = 2
PHASE_EVAL = 3


@dataclass(frozen=True)
class HardwareConfig:
    """Hardware-realism knobs.  The default is an ideal machine.

    `phase_bits` / `param_bits` of None mean no quantization;
    `noise_xi` = 0 means noiseless dynamics.  `param_range` is the
    symmetric clipping bound r applied to every trainable tensor.
    """

    noise_xi: float = 0.0
    phase_bits: int | None = None
    param_bits: int | None = None
    param_range: float = 1.0
    noise_seed: int = 0
    quantize_dynamics: bool = False

    def __post_init__(self):
        if self.noise_xi < 0:
            raise ValueError("noise_xi must be non-negative")
        if self.phase_bits is not None and self.phase_bits < 1:
            raise ValueError("phase_bits must be >= 1")
        if self.param_bits is not None and self.param_bits < 1:
            raise ValueError("param_bits must be >= 1")
        if self.param_range <= 0:
            raise ValueError("param_range must be positive")

    @property
    def is_ideal(self) -> bool:
        return (
            self.noise_xi == 0.0
            and self.phase_bits is None
            and self.param_bits is None
        )


def noise_rng(noise_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, epoch, example, phase) tuple.

    Streams are derived through numpy's SeedSequence, so any two
    distinct keys give statistically independent, reproducible streams.
    """
    return np.random.default_rng(np.random.SeedSequence((noise_seed, *key)))


def noise_increment(
    n: int, xi: float, epsilon: float, rng: np.random.Generator
) -> np.ndarray:
    """Per-oscillator Gaussian increments with std xi * sqrt(epsilon)."""
    if xi < 0:
        raise ValueError("xi must be non-negative")
    if xi == 0.0:
        return np.zeros(n)
    return (xi * np.sqrt(epsilon)) * rng.standard_normal(n)


@dataclass
class PhaseNoise:
    """Noise source for the integrator; one instance per relaxation."""

    xi: float
    rng: np.random.Generator

    def increment(self, n: int, epsilon: float) -> np.ndarray:
        return noise_increment(n, self.xi, epsilon, self.rng)


def quantize_phase(phases: np.ndarray, bits: int) -> np.ndarray:
    """Snap phases to the nearest of 2**bits detector levels.

    Input phases may be unwrapped; they are reduced to [0, 2pi) first.
    Levels sit at k * 2pi / 2**bits, and the wrap point 2pi maps back
    to level 0.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    levels = 1 << bits
    spacing = TWO_PI / levels
    index = np.rint(np.mod(phases, TWO_PI) / spacing).astype(np.int64) % levels
    return index * spacing


def quantize_tensor(values: np.ndarray, bits: int, range_r: float) -> np.ndarray:
    """Clip to [-r, +r] and round to 2**bits uniform levels (ends included)."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if range_r <= 0:
        raise ValueError("range_r must be positive")
    spacing = 2.0 * range_r / ((1 << bits) - 1)
    clipped = np.clip(values, -range_r, range_r)
    return np.rint((clipped + range_r) / spacing) * spacing - range_r


def quantize_params(net: NetworkParams, bits: int, range_r: float) -> NetworkParams:
    """Quantize all four trainable tensors onto the hardware grid."""
    return NetworkParams(
        w_xh=quantize_tensor(net.w_xh, bits, range_r),
        w_hy=quantize_tensor(net.w_hy, bits, range_r),
        b_h=quantize_tensor(net.b_h, bits, range_r),
        b_y=quantize_tensor(net.b_y, bits, range_r),
    )
