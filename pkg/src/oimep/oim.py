"""Oscillator Ising machine phase dynamics.

An OIM is a network of coupled phase oscillators.  In dimensionless time
the phases evolve by

    dphi_i/dt = -sum_j J_ij sin(phi_i - phi_j) - h_i sin(phi_i)
                - S_i sin(2 phi_i)

which is exact gradient descent on the energy

    V = -1/2 sum_ij J_ij cos(phi_i - phi_j) - sum_i h_i cos(phi_i)
        - sum_i S_i/2 cos(2 phi_i)

(the 1/2 on the coupling sum counts each unordered pair once, since J is
symmetric).  This module provides the energy, its gradient flow, an
explicit-Euler integrator with optional additive noise, and fixed-length
relaxation.

Phases are plain float64 numpy arrays, stored unwrapped: no modular
reduction happens during integration, so trajectories are smooth.
Wrapping to [0, 2pi) is a readout concern (see `oimep.hardware`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when the integrator produces non-finite or runaway phases.

    `index` identifies the offending position (oscillator index for a
    single machine, example index for a batched run) when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class OimParams:
    """Physical configuration of one machine.

    Attributes:
        coupling: (n, n) symmetric matrix with zero diagonal (J_ij).
        bias: (n,) per-oscillator bias field (h_i), favoring phase 0 or pi.
        sync: (n,) second-harmonic synchronization field (S_i), favoring
            binary 0/pi phases.
    """

    coupling: np.ndarray
    bias: np.ndarray
    sync: np.ndarray

    def __post_init__(self):
        coupling = np.asarray(self.coupling, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        sync = np.asarray(self.sync, dtype=np.float64)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "sync", sync)
        n = bias.shape[0]
        if coupling.shape != (n, n) or sync.shape != (n,):
            raise ValueError(
                f"inconsistent shapes: coupling {coupling.shape}, "
                f"bias {bias.shape}, sync {sync.shape}"
            )
        if not np.array_equal(coupling, coupling.T):
            raise ValueError("coupling matrix must be exactly symmetric")
        if np.any(np.diagonal(coupling) != 0.0):
            raise ValueError("coupling matrix must have a zero diagonal")
        for name, arr in (("coupling", coupling), ("bias", bias), ("sync", sync)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.bias.shape[0]


@dataclass(frozen=True)
class IntegratorConfig:
    """Explicit-Euler integration settings.

    `steps` is a fixed length: relaxation always runs exactly that many
    steps and reports the residual max_i |dphi_i/dt| at the end, rather
    than stopping early.  `divergence_guard` bounds |phi_i|; explicit
    Euler with too large a step blows up, and we fail loudly.
    """

    epsilon: float
    steps: int
    convergence_threshold: float = 1e-3
    record_trajectory: bool = False
    divergence_guard: float = 1e6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.convergence_threshold < 0:
            raise ValueError("convergence_threshold must be non-negative")


@dataclass
class RelaxResult:
    """Outcome of a fixed-length relaxation."""

    phases: np.ndarray
    residual: float
    converged: bool
    trajectory: np.ndarray | None = None


def _check_state(params: OimParams, phases: np.ndarray) -> np.ndarray:
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != (params.n,):
        raise ValueError(
            f"phase vector has shape {phases.shape}, expected ({params.n},)"
        )
    return phases


def energy(params: OimParams, phases: np.ndarray) -> float:
    """Energy V of the machine at the given phases."""
    phases = _check_state(params, phases)
    diff = phases[:, None] - phases[None, :]
    coupling_term = -0.5 * float(np.sum(params.coupling * np.cos(diff)))
    bias_term = -float(params.bias @ np.cos(phases))
    sync_term = -0.5 * float(params.sync @ np.cos(2.0 * phases))
    return coupling_term + bias_term + sync_term


def velocity(params: OimParams, phases: np.ndarray) -> np.ndarray:
    """Phase velocity dphi/dt; analytically equal to -dV/dphi.

    Uses sin(a - b) = sin(a)cos(b) - cos(a)sin(b) so the coupling sum
    becomes two matrix-vector products instead of an n x n table.
    """
    phases = _check_state(params, phases)
    s, c = np.sin(phases), np.cos(phases)
    coupling = s * (params.coupling @ c) - c * (params.coupling @ s)
    return -coupling - params.bias * s - params.sync * np.sin(2.0 * phases)


def velocity_jacobian(params: OimParams, phases: np.ndarray) -> np.ndarray:
    """d(velocity)/d(phases), i.e. the negated Hessian of the energy.

    Off-diagonal (i, k): J_ik cos(phi_i - phi_k).  Diagonal (i, i):
    -(sum_j J_ij cos(phi_i - phi_j) + h_i cos(phi_i) + 2 S_i cos(2 phi_i)).
    Symmetric, as any Hessian must be.
    """
    phases = _check_state(params, phases)
    diff = phases[:, None] - phases[None, :]
    jac = params.coupling * np.cos(diff)
    diag = (
        jac.sum(axis=1)
        + params.bias * np.cos(phases)
        + 2.0 * params.sync * np.cos(2.0 * phases)
    )
    jac[np.diag_indices_from(jac)] = -diag
    return jac


def euler_step(
    params: OimParams,
    phases: np.ndarray,
    epsilon: float,
    noise=None,
) -> np.ndarray:
    """One explicit-Euler step phi' = phi + eps * velocity(phi) (+ noise).

    `noise`, when given, must expose ``increment(n, epsilon)`` returning
    per-oscillator additive increments (see `oimep.hardware.PhaseNoise`);
    a seeded source makes the step deterministic.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    new = phases + epsilon * velocity(params, phases)
    if noise is not None:
        new += noise.increment(params.n, epsilon)
    bad = ~np.isfinite(new)
    if np.any(bad):
        first = int(np.argmax(bad))
        raise DivergenceError(f"non-finite phase at oscillator {first}", index=first)
    return new


def relax(
    params: OimParams,
    phases: np.ndarray,
    cfg: IntegratorConfig,
    noise=None,
) -> RelaxResult:
    """Run exactly `cfg.steps` Euler steps and report the final residual.

    The residual is max_i |dphi_i/dt| at the final state; `converged`
    means it is at or below `cfg.convergence_threshold`.  When
    `cfg.record_trajectory` is set, the returned trajectory holds all
    `steps` + 1 states, initial state included.
    """
    phases = _check_state(params, phases).copy()
    trajectory = None
    if cfg.record_trajectory:
        trajectory = np.empty((cfg.steps + 1, params.n))
        trajectory[0] = phases
    for step in range(cfg.steps):
        phases = euler_step(params, phases, cfg.epsilon, noise)
        if np.max(np.abs(phases)) > cfg.divergence_guard:
            worst = int(np.argmax(np.abs(phases)))
            raise DivergenceError(
                f"phase magnitude exceeded {cfg.divergence_guard:g} rad at "
                f"oscillator {worst} (step {step + 1})",
                index=worst,
            )
        if trajectory is not None:
            trajectory[step + 1] = phases
    residual = float(np.max(np.abs(velocity(params, phases)))) if params.n else 0.0
    return RelaxResult(
        phases=phases,
        residual=residual,
        converged=residual <= cfg.convergence_threshold,
        trajectory=trajectory,
    )
