"""Independent gradient oracles for validating the EP estimator.

Two oracles, deliberately on separate routes:

* `fd_loss_gradient` brute-forces dl/dtheta by central differences,
  re-running the full free relaxation for every perturbed parameter.
  O(#params) relaxations; toy networks only.
* `bptt_loss_gradient` reverse-accumulates dl/dtheta through the
  recorded Euler trajectory: with the step map
  phi_{t+1} = phi_t + eps * v(phi_t), the adjoint runs
  lam_T = dl/dphi_T,  lam_t = (I + eps * dv/dphi(phi_t))^T lam_{t+1},
  and each step contributes eps * (dv/dtheta(phi_t))^T lam_{t+1}.

Both return raw loss gradients dl/dtheta; the EP estimate approximates
the NEGATED loss gradient, so comparisons negate one side.

`instantaneous_ep_curve` tracks the contrast estimate over the nudged
steps t against the truncated adjoint sum after t backward steps, the
correspondence that makes EP a physical implementation of
backpropagation through time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import EpConfig, EpGradient, Example, NetworkParams, build_oim, ep_gradient, loss
from .oim import IntegratorConfig, relax, velocity_jacobian

TENSORS = ("g_w_xh", "g_w_hy", "g_b_h", "g_b_y")


def _reference(n: int) -> np.ndarray:
    return np.full(n, np.pi / 2.0)


def _free_config(cfg: EpConfig, record: bool) -> IntegratorConfig:
    return IntegratorConfig(
        epsilon=cfg.epsilon,
        steps=cfg.free_steps,
        convergence_threshold=cfg.convergence_threshold,
        record_trajectory=record,
    )


def _tensor_slices(net: NetworkParams) -> dict[str, slice]:
    sizes = [net.n_x * net.n_h, net.n_h * net.n_y, net.n_h, net.n_y]
    slices, start = {}, 0
    for name, size in zip(TENSORS, sizes):
        slices[name] = slice(start, start + size)
        start += size
    return slices


def _unflatten(vec: np.ndarray, net: NetworkParams) -> EpGradient:
    sl = _tensor_slices(net)
    return EpGradient(
        g_w_xh=vec[sl["g_w_xh"]].reshape(net.n_x, net.n_h),
        g_w_hy=vec[sl["g_w_hy"]].reshape(net.n_h, net.n_y),
        g_b_h=vec[sl["g_b_h"]].copy(),
        g_b_y=vec[sl["g_b_y"]].copy(),
    )


def fd_loss_gradient(
    net: NetworkParams, example: Example, cfg: EpConfig, delta: float = 1e-5
) -> EpGradient:
    """Central-difference dl/dtheta through the relaxed free state.

    Every probe rebuilds the machine and relaxes from the reference
    state, so the derivative is taken through the fixed point exactly
    as the training protocol sees it.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    net = net.copy()  # probed in place; never touch the caller's tensors
    icfg = _free_config(cfg, record=False)

    def loss_at(params: NetworkParams) -> float:
        machine = build_oim(params, example.x, 0.0)
        result = relax(machine, _reference(machine.n), icfg)
        return loss(result.phases[params.n_h :], example.target)

    grad = EpGradient.zeros_like(net)
    for name in ("w_xh", "w_hy", "b_h", "b_y"):
        tensor = getattr(net, name)
        out = getattr(grad, "g_" + name)
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            original = tensor[ix]
            tensor[ix] = original + delta
            plus = loss_at(net)
            tensor[ix] = original - delta
            minus = loss_at(net)
            tensor[ix] = original
            out[ix] = (plus - minus) / (2.0 * delta)
    return grad


def _loss_phase_gradient(phi: np.ndarray, target: np.ndarray, n_h: int) -> np.ndarray:
    lam = np.zeros_like(phi)
    phi_y = phi[n_h:]
    lam[n_h:] = (np.cos(phi_y) - target) * (-np.sin(phi_y))
    return lam


def _accumulate_step(
    acc: EpGradient,
    phi: np.ndarray,
    lam_next: np.ndarray,
    x: np.ndarray,
    epsilon: float,
    n_h: int,
) -> None:
    """Add eps * (dv/dtheta at phi)^T lam_{t+1} into `acc` (in place)."""
    phi_h, phi_y = phi[:n_h], phi[n_h:]
    lam_h, lam_y = lam_next[:n_h], lam_next[n_h:]
    pull_h = epsilon * lam_h * (-np.sin(phi_h))
    acc.g_b_h += pull_h
    acc.g_w_xh += np.outer(x, pull_h)
    acc.g_b_y += epsilon * lam_y * (-np.sin(phi_y))
    sin_d = np.sin(phi_h[:, None] - phi_y[None, :])
    acc.g_w_hy += epsilon * sin_d * (lam_y[None, :] - lam_h[:, None])


def bptt_loss_gradient(
    net: NetworkParams, example: Example, cfg: EpConfig
) -> EpGradient:
    """dl(phi_T)/dtheta by reverse accumulation through the free phase.

    Noiseless by construction.  The velocity Jacobian and the
    parameter sensitivities are the analytic derivatives of the
    dynamics under the MLP mapping (theta enters through the coupling
    block and the bias fields).
    """
    machine = build_oim(net, example.x, 0.0)
    result = relax(machine, _reference(machine.n), _free_config(cfg, record=True))
    if result.trajectory is None:
        raise RuntimeError("free phase must be run with a recorded trajectory")
    traj = result.trajectory
    n_h = net.n_h
    lam = _loss_phase_gradient(traj[-1], example.target, n_h)
    acc = EpGradient.zeros_like(net)
    for t in range(cfg.free_steps - 1, -1, -1):
        phi_t = traj[t]
        _accumulate_step(acc, phi_t, lam, example.x, cfg.epsilon, n_h)
        lam = lam + cfg.epsilon * (velocity_jacobian(machine, phi_t).T @ lam)
    return acc


@dataclass
class EpBpttCurve:
    """Per-step EP estimates vs truncated adjoint sums, per beta.

    `ep[beta]` and `bptt` are (K+1, P) arrays of flattened parameter
    vectors (row t = estimate after t nudged / backward steps); both
    are oriented as update directions, i.e. -dl/dtheta in the limit.
    """

    nudge_steps: int
    betas: tuple[float, ...]
    ep: dict[float, np.ndarray]
    bptt: np.ndarray
    slices: dict[str, slice]

    def max_deviation(self, beta: float) -> float:
        return float(np.max(np.abs(self.ep[beta] - self.bptt)))

    def rows(self):
        """CSV rows: (step, beta, tensor, ep_norm, bptt_norm, max_abs_diff)."""
        for beta in self.betas:
            ep = self.ep[beta]
            for t in range(self.nudge_steps + 1):
                for name, sl in self.slices.items():
                    e, b = ep[t, sl], self.bptt[t, sl]
                    yield (
                        t,
                        beta,
                        name,
                        float(np.linalg.norm(e)),
                        float(np.linalg.norm(b)),
                        float(np.max(np.abs(e - b))),
                    )


def instantaneous_ep_curve(
    net: NetworkParams,
    example: Example,
    cfg: EpConfig,
    betas,
) -> EpBpttCurve:
    """Reproduce the EP-BPTT correspondence data on one example.

    For each beta: relax the two nudged machines from the free fixed
    point, recording every step, and form the symmetric contrast
    estimate at each step t.  Against it, the adjoint partial sum
    truncated to the last t free-phase steps (negated, so both columns
    are update directions).  As beta shrinks the two curves coincide.
    """
    machine = build_oim(net, example.x, 0.0)
    free = relax(machine, _reference(machine.n), _free_config(cfg, record=True))
    traj = free.trajectory
    n_h = net.n_h
    k = cfg.nudge_steps
    n_params = net.n_x * net.n_h + net.n_h * net.n_y + net.n_h + net.n_y

    bptt = np.zeros((k + 1, n_params))
    lam = _loss_phase_gradient(traj[-1], example.target, n_h)
    acc = EpGradient.zeros_like(net)
    back = min(k, cfg.free_steps)
    for u in range(1, back + 1):
        phi_t = traj[cfg.free_steps - u]
        _accumulate_step(acc, phi_t, lam, example.x, cfg.epsilon, n_h)
        lam = lam + cfg.epsilon * (velocity_jacobian(machine, phi_t).T @ lam)
        bptt[u] = -acc.flat()
    bptt[back + 1 :] = bptt[back]

    nudge_cfg = IntegratorConfig(
        epsilon=cfg.epsilon, steps=k, record_trajectory=True
    )
    ep_curves: dict[float, np.ndarray] = {}
    for beta in betas:
        plus = relax(
            build_oim(net, example.x, +beta, example.target), free.phases, nudge_cfg
        )
        minus = relax(
            build_oim(net, example.x, -beta, example.target), free.phases, nudge_cfg
        )
        series = np.zeros((k + 1, n_params))
        for t in range(1, k + 1):
            series[t] = ep_gradient(
                plus.trajectory[t], minus.trajectory[t], example.x, beta, n_h
            ).flat()
        ep_curves[float(beta)] = series

    return EpBpttCurve(
        nudge_steps=k,
        betas=tuple(float(b) for b in betas),
        ep=ep_curves,
        bptt=bptt,
        slices=_tensor_slices(net),
    )


def write_curve_csv(curve: EpBpttCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "beta", "tensor", "ep_value_norm", "bptt_value_norm", "max_abs_diff"]
        )
        for row in curve.rows():
            writer.writerow(row)


@dataclass
class GradComparison:
    """Similarity of two parameter-shaped gradients.

    Cosine similarity and relative L2 error over the flattened
    concatenation of all four tensors, plus a per-tensor breakdown of
    the same pair.  `degenerate` flags zero-norm inputs (similarity is
    then reported as 0).
    """

    cosine_similarity: float
    relative_l2_error: float
    per_tensor: dict[str, tuple[float, float]]
    degenerate: bool = False


def _cos_rel(a: np.ndarray, b: np.ndarray) -> tuple[float, float, bool]:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        denom = max(na, nb)
        rel = float(np.linalg.norm(a - b)) / denom if denom > 0 else 0.0
        return 0.0, rel, True
    cos = float(a @ b) / (na * nb)
    rel = float(np.linalg.norm(a - b)) / max(na, nb)
    return cos, rel, False


def compare(a: EpGradient, b: EpGradient) -> GradComparison:
    """Cosine similarity and relative L2 error, overall and per tensor."""
    per_tensor = {}
    for name in TENSORS:
        ta, tb = getattr(a, name), getattr(b, name)
        if ta.shape != tb.shape:
            raise ValueError(f"{name} shapes differ: {ta.shape} vs {tb.shape}")
        cos_t, rel_t, _ = _cos_rel(ta.ravel(), tb.ravel())
        per_tensor[name] = (cos_t, rel_t)
    cos, rel, degenerate = _cos_rel(a.flat(), b.flat())
    return GradComparison(
        cosine_similarity=cos,
        relative_l2_error=rel,
        per_tensor=per_tensor,
        degenerate=degenerate,
    )
