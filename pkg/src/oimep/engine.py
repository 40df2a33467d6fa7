"""Batched simulation engine and the three-phase training loop.

The machines built for an MLP are bipartite: couplings exist only
between hidden and output oscillators.  The engine exploits that
structure and evolves a whole mini-batch of independent machines as one
(B, n_h + n_y) phase array, so each Euler step is a handful of
vectorized operations instead of per-example Python.  Float32 dynamics
are the default (transcendentals vectorize several times faster than
float64); master parameters stay float64, and `oimep.oim.relax` on the
dense machine remains the semantic reference the engine is tested
against.

Within a batch the examples are mathematically independent: rows never
interact, and per-example noise streams are keyed by (seed, epoch,
example, phase), so results do not depend on batch composition or
evaluation order.  Gradient averaging sums rows in a fixed order, which
keeps whole runs reproducible bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import hardware
from .hardware import HardwareConfig, quantize_phase, quantize_params
from .network import EpConfig, EpGradient, Example, NetworkParams, init_network, sgd_step
from .oim import DivergenceError

_CHUNK = 512  # steps between noise refills / divergence checks


@dataclass
class BatchSystem:
    """Per-batch machine fields, pre-cast to the engine dtype.

    drive is the full per-oscillator bias field [hidden | output];
    sync_y is the per-row output sync field (None for free systems).
    """

    w_hy: np.ndarray  # (n_h, n_y)
    drive: np.ndarray  # (B, n_h + n_y)
    sync_y: np.ndarray | None  # (B, 1)
    n_h: int
    n_y: int

    @property
    def batch(self) -> int:
        return self.drive.shape[0]

    @property
    def n(self) -> int:
        return self.n_h + self.n_y


def free_system(
    net: NetworkParams, xs: np.ndarray, dtype=np.float32
) -> BatchSystem:
    """Machines for a batch of inputs with the loss switched off."""
    xs = np.asarray(xs, dtype=np.float64)
    drive = np.empty((xs.shape[0], net.n_h + net.n_y))
    drive[:, : net.n_h] = xs @ net.w_xh + net.b_h
    drive[:, net.n_h :] = net.b_y
    return BatchSystem(
        w_hy=net.w_hy.astype(dtype),
        drive=drive.astype(dtype),
        sync_y=None,
        n_h=net.n_h,
        n_y=net.n_y,
    )


def nudged_pair_system(
    free: BatchSystem, net: NetworkParams, targets: np.ndarray, beta: float
) -> BatchSystem:
    """Stack the +beta and -beta machines of a batch into one system.

    Rows [0, B) are the +beta machines, rows [B, 2B) the -beta ones.
    Only the output fields differ from the free system: bias gains
    +/- beta * target and the sync field becomes -/+ beta/2.
    """
    b, n_h = free.batch, free.n_h
    dtype = free.drive.dtype
    targets = np.asarray(targets, dtype=np.float64)
    drive = np.concatenate([free.drive, free.drive], axis=0)
    shift = (beta * targets).astype(dtype)
    drive[:b, n_h:] += shift
    drive[b:, n_h:] -= shift
    sync = np.empty((2 * b, 1), dtype=dtype)
    sync[:b] = -beta / 2.0
    sync[b:] = +beta / 2.0
    return BatchSystem(free.w_hy, drive, sync, n_h, free.n_y)


def batch_velocity(phi: np.ndarray, sys: BatchSystem) -> np.ndarray:
    """dphi/dt for every machine in the batch (same math as oim.velocity)."""
    n_h = sys.n_h
    s, c = np.sin(phi), np.cos(phi)
    jc = np.empty_like(phi)
    js = np.empty_like(phi)
    jc[:, :n_h] = c[:, n_h:] @ sys.w_hy.T
    jc[:, n_h:] = c[:, :n_h] @ sys.w_hy
    js[:, :n_h] = s[:, n_h:] @ sys.w_hy.T
    js[:, n_h:] = s[:, :n_h] @ sys.w_hy
    v = c * js - s * jc - sys.drive * s
    if sys.sync_y is not None:
        v[:, n_h:] -= (2.0 * sys.sync_y) * (s[:, n_h:] * c[:, n_h:])
    return v


def _check_guard(phi: np.ndarray, guard: float, example_ids) -> None:
    # abs-comparison is False for NaN, so this also catches non-finite rows
    ok = np.all(np.abs(phi) <= guard, axis=1)
    if not ok.all():
        row = int(np.argmin(ok))
        ident = row if example_ids is None else example_ids[row]
        raise DivergenceError(
            f"relaxation diverged (|phase| > {guard:g} or non-finite) "
            f"for example {ident}",
            index=ident if isinstance(ident, int) else row,
        )


def relax_batch(
    phi: np.ndarray,
    sys: BatchSystem,
    epsilon: float,
    steps: int,
    *,
    hw: HardwareConfig | None = None,
    noise_rngs=None,
    guard: float = 1e6,
    example_ids=None,
) -> np.ndarray:
    """Evolve all machines in place for `steps` Euler steps.

    Noise (when hw.noise_xi > 0) is drawn per example from the
    generators in `noise_rngs`, one per batch row, pre-scaled by
    xi * sqrt(epsilon).  Returns the per-example residual
    max_i |dphi_i/dt| at the final state.
    """
    n_h, n = sys.n_h, sys.n
    dtype = phi.dtype
    eps = dtype.type(epsilon)
    xi = 0.0 if hw is None else hw.noise_xi
    noisy = xi > 0.0
    if noisy and (noise_rngs is None or len(noise_rngs) != phi.shape[0]):
        raise ValueError("noisy relaxation needs one noise generator per row")
    quant_bits = hw.phase_bits if (hw is not None and hw.quantize_dynamics) else None
    w, w_t = sys.w_hy, np.ascontiguousarray(sys.w_hy.T)
    drive = sys.drive
    sync2 = None if sys.sync_y is None else (2.0 * sys.sync_y).astype(dtype)
    ysl = slice(n_h, n)
    hsl = slice(0, n_h)
    sinp, cosp = np.empty_like(phi), np.empty_like(phi)
    jc, js = np.empty_like(phi), np.empty_like(phi)
    v, t = np.empty_like(phi), np.empty_like(phi)
    scale = dtype.type(xi * np.sqrt(epsilon))

    done = 0
    while done < steps:
        chunk = min(_CHUNK, steps - done)
        noise = None
        if noisy:
            noise = np.stack(
                [g.standard_normal((chunk, n), dtype=dtype) for g in noise_rngs],
                axis=1,
            )
            noise *= scale
        for k in range(chunk):
            np.sin(phi, out=sinp)
            np.cos(phi, out=cosp)
            np.matmul(cosp[:, ysl], w_t, out=jc[:, hsl])
            np.matmul(cosp[:, hsl], w, out=jc[:, ysl])
            np.matmul(sinp[:, ysl], w_t, out=js[:, hsl])
            np.matmul(sinp[:, hsl], w, out=js[:, ysl])
            np.multiply(cosp, js, out=v)
            np.multiply(sinp, jc, out=t)
            np.subtract(v, t, out=v)
            np.multiply(drive, sinp, out=t)
            np.subtract(v, t, out=v)
            if sync2 is not None:
                v[:, ysl] -= sync2 * (sinp[:, ysl] * cosp[:, ysl])
            np.multiply(v, eps, out=v)
            np.add(phi, v, out=phi)
            if noise is not None:
                np.add(phi, noise[k], out=phi)
            if quant_bits is not None:
                phi[...] = quantize_phase(phi, quant_bits).astype(dtype)
        done += chunk
        _check_guard(phi, guard, example_ids)
    return np.abs(batch_velocity(phi, sys)).max(axis=1)


def reference_state(batch: int, n: int, dtype=np.float32) -> np.ndarray:
    """All oscillators at pi/2: every activation cos(pi/2) = 0."""
    return np.full((batch, n), np.pi / 2.0, dtype=dtype)


def _eval_rngs(hw: HardwareConfig, epoch: int, ids, phase: int):
    if hw.noise_xi == 0.0:
        return None
    return [hardware.noise_rng(hw.noise_seed, epoch, int(i), phase) for i in ids]


@dataclass
class PhaseDiagnostics:
    free_residual: float
    free_converged: bool
    plus_residual: float
    plus_converged: bool
    minus_residual: float
    minus_converged: bool


@dataclass
class ThreePhaseResult:
    """Measured phase vectors from one EP protocol run.

    The vectors are readouts: if the hardware quantizes phases they are
    snapped to detector levels here, while the underlying dynamics (in
    particular the nudged phases continuing from the raw free state)
    stay continuous.
    """

    phi_free: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    diagnostics: PhaseDiagnostics


def run_three_phases(
    net: NetworkParams,
    example: Example,
    cfg: EpConfig,
    hw: HardwareConfig | None = None,
    *,
    epoch: int = 0,
    example_id: int = 0,
    dtype=np.float64,
) -> ThreePhaseResult:
    """Free phase from the pi/2 reference state, then both nudges.

    The two nudged relaxations are independent given the free state and
    are run as a stacked pair.  Runs in float64 by default; the trainer
    uses the same machinery in float32 for throughput.
    """
    hw = hw or HardwareConfig()
    free = free_system(net, example.x[None, :], dtype=dtype)
    phi = reference_state(1, free.n, dtype=dtype)
    rng = (
        [hardware.noise_rng(hw.noise_seed, epoch, example_id, hardware.PHASE_FREE)]
        if hw.noise_xi > 0
        else None
    )
    res_free = relax_batch(
        phi, free, cfg.epsilon, cfg.free_steps, hw=hw, noise_rngs=rng
    )
    nudged = nudged_pair_system(free, net, example.target[None, :], cfg.beta)
    phi_n = np.concatenate([phi, phi], axis=0)
    rngs = None
    if hw.noise_xi > 0:
        rngs = [
            hardware.noise_rng(hw.noise_seed, epoch, example_id, hardware.PHASE_PLUS),
            hardware.noise_rng(hw.noise_seed, epoch, example_id, hardware.PHASE_MINUS),
        ]
    res_n = relax_batch(
        phi_n, nudged, cfg.epsilon, cfg.nudge_steps, hw=hw, noise_rngs=rngs
    )
    thr = cfg.convergence_threshold
    phi_free, phi_plus, phi_minus = (
        np.asarray(p, dtype=np.float64) for p in (phi[0], phi_n[0], phi_n[1])
    )
    if hw.phase_bits is not None:
        phi_free = quantize_phase(phi_free, hw.phase_bits)
        phi_plus = quantize_phase(phi_plus, hw.phase_bits)
        phi_minus = quantize_phase(phi_minus, hw.phase_bits)
    return ThreePhaseResult(
        phi_free=phi_free,
        phi_plus=phi_plus,
        phi_minus=phi_minus,
        diagnostics=PhaseDiagnostics(
            free_residual=float(res_free[0]),
            free_converged=bool(res_free[0] <= thr),
            plus_residual=float(res_n[0]),
            plus_converged=bool(res_n[0] <= thr),
            minus_residual=float(res_n[1]),
            minus_converged=bool(res_n[1] <= thr),
        ),
    )


def _readout_cos(phi: np.ndarray, sys: BatchSystem, hw: HardwareConfig):
    """cos of the measured output phases, (B, n_y) float64."""
    phi_y = np.asarray(phi[:, sys.n_h :], dtype=np.float64)
    if hw.phase_bits is not None:
        phi_y = quantize_phase(phi_y, hw.phase_bits)
    return np.cos(phi_y)


def predict(
    net: NetworkParams,
    x: np.ndarray,
    cfg: EpConfig,
    hw: HardwareConfig | None = None,
    *,
    rng=None,
    dtype=np.float32,
) -> int:
    """Free-phase relaxation, then argmax of cos over output oscillators.

    Ties resolve to the lowest class index.  Hardware noise (if any)
    uses `rng` or a generator seeded from hw.noise_seed.
    """
    hw = hw or HardwareConfig()
    sys = free_system(net, np.asarray(x)[None, :], dtype=dtype)
    phi = reference_state(1, sys.n, dtype=dtype)
    rngs = None
    if hw.noise_xi > 0:
        rngs = [rng or hardware.noise_rng(hw.noise_seed, 0, 0, hardware.PHASE_EVAL)]
    relax_batch(phi, sys, cfg.epsilon, cfg.free_steps, hw=hw, noise_rngs=rngs)
    return int(np.argmax(_readout_cos(phi, sys, hw)[0]))


def evaluate(
    net: NetworkParams,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: EpConfig,
    hw: HardwareConfig | None = None,
    *,
    epoch: int = 0,
    n_y: int | None = None,
    chunk: int = 250,
    dtype=np.float32,
) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix over a dataset split.

    Returns (accuracy, confusion) where confusion[true, predicted]
    counts examples.  Noise streams are keyed per (epoch, example) so
    repeated evaluation is reproducible.
    """
    hw = hw or HardwareConfig()
    labels = np.asarray(labels)
    if n_y is None:
        n_y = int(labels.max()) + 1 if labels.size else 1
    confusion = np.zeros((n_y, n_y), dtype=np.int64)
    for lo in range(0, len(labels), chunk):
        hi = min(lo + chunk, len(labels))
        sys = free_system(net, images[lo:hi], dtype=dtype)
        phi = reference_state(hi - lo, sys.n, dtype=dtype)
        rngs = _eval_rngs(hw, epoch, range(lo, hi), hardware.PHASE_EVAL)
        relax_batch(phi, sys, cfg.epsilon, cfg.free_steps, hw=hw, noise_rngs=rngs)
        preds = np.argmax(_readout_cos(phi, sys, hw), axis=1)
        np.add.at(confusion, (labels[lo:hi], preds), 1)
    accuracy = float(np.trace(confusion)) / max(len(labels), 1)
    return accuracy, confusion


@dataclass
class EpochMetrics:
    epoch: int
    train_accuracy: float
    test_accuracy: float  # NaN when no test set is given
    train_loss: float
    wall_time: float


@dataclass
class TrainResult:
    net: NetworkParams
    history: list[EpochMetrics]


_SHUFFLE_TAG = 0x5  # keeps shuffle streams apart from other uses of the seed


def _shuffle(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, epoch, _SHUFFLE_TAG)))
    return rng.permutation(n)


def batch_gradient(
    phi_nudged: np.ndarray,
    sys: BatchSystem,
    xs: np.ndarray,
    beta: float,
    hw: HardwareConfig,
) -> EpGradient:
    """Mean EP gradient over a batch from the stacked nudged phases.

    Readout happens here: phases are measured (quantized if the
    hardware says so) and contrasted.  All reductions run in float64
    with a fixed summation order.
    """
    b = phi_nudged.shape[0] // 2
    n_h = sys.n_h
    phases = np.asarray(phi_nudged, dtype=np.float64)
    if hw.phase_bits is not None:
        phases = quantize_phase(phases, hw.phase_bits)
    plus, minus = phases[:b], phases[b:]
    scale = 1.0 / (2.0 * beta)
    d_h = scale * (np.cos(plus[:, :n_h]) - np.cos(minus[:, :n_h]))  # (B, n_h)
    d_y = scale * (np.cos(plus[:, n_h:]) - np.cos(minus[:, n_h:]))  # (B, n_y)
    xs64 = np.asarray(xs, dtype=np.float64)
    g_w_xh = xs64.T @ d_h / b
    diff_p = plus[:, :n_h, None] - plus[:, None, n_h:]
    diff_m = minus[:, :n_h, None] - minus[:, None, n_h:]
    g_w_hy = scale * (np.cos(diff_p) - np.cos(diff_m)).sum(axis=0) / b
    return EpGradient(
        g_w_xh=g_w_xh,
        g_w_hy=g_w_hy,
        g_b_h=d_h.sum(axis=0) / b,
        g_b_y=d_y.sum(axis=0) / b,
    )


def train(
    images: np.ndarray,
    labels: np.ndarray,
    targets: np.ndarray,
    cfg: EpConfig,
    hw: HardwareConfig | None = None,
    callbacks=(),
    *,
    n_h: int = 120,
    test_images: np.ndarray | None = None,
    test_labels: np.ndarray | None = None,
    initial: NetworkParams | None = None,
    start_epoch: int = 0,
    dtype=np.float32,
) -> TrainResult:
    """Mini-batch EP training.

    Per epoch: seeded shuffle, then for each batch run the free phase,
    the stacked +/- nudged phases, average the four gradient tensors
    over the batch and apply one SGD step (followed by parameter
    re-quantization when configured).  Train accuracy/loss come from
    the free-phase readouts seen during the epoch; test accuracy is a
    separate evaluation pass.  `callbacks` get (metrics, net) after
    each epoch.

    Passing `initial` + `start_epoch` resumes a run: shuffles and noise
    streams are keyed by absolute epoch, so a resumed run replays
    exactly the schedule of an uninterrupted one.
    """
    hw = hw or HardwareConfig()
    n_examples, n_x = images.shape
    if n_examples == 0:
        raise ValueError("training dataset is empty")
    n_y = targets.shape[1]
    net = initial if initial is not None else init_network(n_x, n_h, n_y, cfg.seed)
    if hw.param_bits is not None:
        # hardware stores parameters on its grid from the start
        net = quantize_params(net, hw.param_bits, hw.param_range)

    history: list[EpochMetrics] = []
    labels = np.asarray(labels)
    for epoch in range(start_epoch, cfg.epochs):
        tic = time.perf_counter()
        order = _shuffle(cfg.seed, epoch, n_examples)
        hits = 0
        loss_total = 0.0
        for lo in range(0, n_examples, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xs = images[idx]
            tg = targets[idx]
            free = free_system(net, xs, dtype=dtype)
            phi = reference_state(len(idx), free.n, dtype=dtype)
            relax_batch(
                phi,
                free,
                cfg.epsilon,
                cfg.free_steps,
                hw=hw,
                noise_rngs=_eval_rngs(hw, epoch, idx, hardware.PHASE_FREE),
                example_ids=idx,
            )
            out = _readout_cos(phi, free, hw)
            hits += int(np.sum(np.argmax(out, axis=1) == labels[idx]))
            loss_total += 0.5 * float(np.sum((out - tg) ** 2))

            nudged = nudged_pair_system(free, net, tg, cfg.beta)
            phi_n = np.concatenate([phi, phi], axis=0)
            rngs = None
            if hw.noise_xi > 0:
                rngs = [
                    hardware.noise_rng(hw.noise_seed, epoch, int(i), hardware.PHASE_PLUS)
                    for i in idx
                ] + [
                    hardware.noise_rng(hw.noise_seed, epoch, int(i), hardware.PHASE_MINUS)
                    for i in idx
                ]
            relax_batch(
                phi_n,
                nudged,
                cfg.epsilon,
                cfg.nudge_steps,
                hw=hw,
                noise_rngs=rngs,
                example_ids=np.concatenate([idx, idx]),
            )
            grad = batch_gradient(phi_n, free, xs, cfg.beta, hw)
            net = sgd_step(net, grad, cfg)
            if hw.param_bits is not None:
                net = quantize_params(net, hw.param_bits, hw.param_range)

        test_acc = float("nan")
        if test_images is not None:
            test_acc, _ = evaluate(
                net, test_images, test_labels, cfg, hw,
                epoch=epoch, n_y=n_y, dtype=dtype,
            )
        metrics = EpochMetrics(
            epoch=epoch,
            train_accuracy=hits / n_examples,
            test_accuracy=test_acc,
            train_loss=loss_total / n_examples,
            wall_time=time.perf_counter() - tic,
        )
        history.append(metrics)
        for cb in callbacks:
            cb(metrics, net)
    return TrainResult(net=net, history=history)
