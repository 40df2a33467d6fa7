"""MLP-on-OIM mapping and the equilibrium-propagation update rule.

A dense x-h-y perceptron runs on an OIM with one oscillator per
non-input neuron; activations are cos(phi).  Inputs are clamped data,
not oscillators: input-to-hidden weights fold into the hidden bias
fields, so a machine of n_h + n_y oscillators carries the whole net.

With the mean-squared loss l(y, t) = 1/2 sum (cos(phi_y) - t)^2, the
nudged total energy E + beta*l is again an OIM energy: the identity
cos^2 = (1 + cos 2x)/2 turns the quadratic part of the loss into a
second-harmonic field -beta/2 on the outputs, and the cross term into
a bias contribution beta*t.

The learning signal contrasts the two nudged equilibria.  For every
parameter, the estimate is

    g = -(1/2 beta) * [ dE/dtheta(phi at -beta) - dE/dtheta(phi at +beta) ]

which only involves the phases of the oscillators that parameter
touches, and converges to -dl/dtheta as beta -> 0.  Updates therefore
ADD eta * g (see `sgd_step`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oim import OimParams


@dataclass
class NetworkParams:
    """Trainable parameters of the x-h-y perceptron.

    Shapes: w_xh (n_x, n_h), w_hy (n_h, n_y), b_h (n_h,), b_y (n_y,).
    Stored float64; the training engine casts working copies as needed.
    """

    w_xh: np.ndarray
    w_hy: np.ndarray
    b_h: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        self.w_xh = np.asarray(self.w_xh, dtype=np.float64)
        self.w_hy = np.asarray(self.w_hy, dtype=np.float64)
        self.b_h = np.asarray(self.b_h, dtype=np.float64)
        self.b_y = np.asarray(self.b_y, dtype=np.float64)
        n_x, n_h = self.w_xh.shape
        n_h2, n_y = self.w_hy.shape
        if n_h2 != n_h or self.b_h.shape != (n_h,) or self.b_y.shape != (n_y,):
            raise ValueError(
                f"inconsistent parameter shapes: w_xh {self.w_xh.shape}, "
                f"w_hy {self.w_hy.shape}, b_h {self.b_h.shape}, b_y {self.b_y.shape}"
            )
        for name in ("w_xh", "w_hy", "b_h", "b_y"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n_x(self) -> int:
        return self.w_xh.shape[0]

    @property
    def n_h(self) -> int:
        return self.w_xh.shape[1]

    @property
    def n_y(self) -> int:
        return self.w_hy.shape[1]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.w_xh.copy(), self.w_hy.copy(), self.b_h.copy(), self.b_y.copy()
        )


@dataclass(frozen=True)
class EpConfig:
    """Protocol hyperparameters for three-phase EP training."""

    beta: float = 0.05
    epsilon: float = 0.5
    free_steps: int = 3500
    nudge_steps: int = 350
    lr_w_xh: float = 0.01
    lr_w_hy: float = 0.001
    lr_b_h: float = 0.001
    lr_b_y: float = 0.001
    batch_size: int = 20
    epochs: int = 60
    seed: int = 0
    convergence_threshold: float = 1e-3

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        # steps >= 0: zero-length phases are degenerate but well defined.
        if self.free_steps < 0 or self.nudge_steps < 0:
            raise ValueError("step counts must be non-negative")
        for name in ("lr_w_xh", "lr_w_hy", "lr_b_h", "lr_b_y"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class Example:
    """One training example: inputs in [0,1], targets in [-1,+1]."""

    x: np.ndarray
    target: np.ndarray
    label: int = -1

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if np.any(self.x < 0) or np.any(self.x > 1):
            raise ValueError("inputs must lie in [0, 1]")
        if np.any(np.abs(self.target) > 1):
            raise ValueError("targets must lie in [-1, +1]")


@dataclass
class EpGradient:
    """Parameter-shaped gradient container (also reused by the oracles)."""

    g_w_xh: np.ndarray
    g_w_hy: np.ndarray
    g_b_h: np.ndarray
    g_b_y: np.ndarray

    TENSOR_NAMES = ("g_w_xh", "g_w_hy", "g_b_h", "g_b_y")

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TENSOR_NAMES}

    def flat(self) -> np.ndarray:
        """Concatenation in the fixed order w_xh, w_hy, b_h, b_y."""
        return np.concatenate([getattr(self, n).ravel() for n in self.TENSOR_NAMES])

    def scaled(self, factor: float) -> "EpGradient":
        return EpGradient(
            self.g_w_xh * factor,
            self.g_w_hy * factor,
            self.g_b_h * factor,
            self.g_b_y * factor,
        )

    @classmethod
    def zeros_like(cls, net: NetworkParams) -> "EpGradient":
        return cls(
            np.zeros_like(net.w_xh),
            np.zeros_like(net.w_hy),
            np.zeros_like(net.b_h),
            np.zeros_like(net.b_y),
        )


def init_network(n_x: int, n_h: int, n_y: int, seed: int) -> NetworkParams:
    """He-initialized weights (std sqrt(2/fan_in)), zero biases."""
    if min(n_x, n_h, n_y) < 1:
        raise ValueError("layer sizes must be >= 1")
    rng = np.random.default_rng(seed)
    w_xh = rng.normal(0.0, np.sqrt(2.0 / n_x), size=(n_x, n_h))
    w_hy = rng.normal(0.0, np.sqrt(2.0 / n_h), size=(n_h, n_y))
    return NetworkParams(w_xh, w_hy, np.zeros(n_h), np.zeros(n_y))


def build_oim(
    net: NetworkParams,
    x: np.ndarray,
    beta: float,
    target: np.ndarray | None = None,
) -> OimParams:
    """Configure the machine for one input, optionally nudged.

    The oscillator layout is [hidden, output].  Couplings carry the
    hidden-output weights (symmetrically); hidden bias fields absorb
    the input drive b_h + x @ w_xh; output bias fields are b_y plus,
    when nudged, beta * target; the output sync field is -beta/2.

    `beta` is signed: the negative nudged phase is built by passing
    -beta, which flips both loss terms.  beta == 0 gives the free
    system and requires no target.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.n_x,):
        raise ValueError(f"input has shape {x.shape}, expected ({net.n_x},)")
    if beta != 0.0 and target is None:
        raise ValueError("a target is required when beta != 0")
    n_h, n_y = net.n_h, net.n_y
    n = n_h + n_y
    coupling = np.zeros((n, n))
    coupling[:n_h, n_h:] = net.w_hy
    coupling[n_h:, :n_h] = net.w_hy.T
    bias = np.empty(n)
    bias[:n_h] = net.b_h + x @ net.w_xh
    sync = np.zeros(n)
    if beta != 0.0:
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (n_y,):
            raise ValueError(f"target has shape {target.shape}, expected ({n_y},)")
        bias[n_h:] = net.b_y + beta * target
        sync[n_h:] = -beta / 2.0
    else:
        bias[n_h:] = net.b_y
    return OimParams(coupling=coupling, bias=bias, sync=sync)


def loss(phi_y: np.ndarray, target: np.ndarray) -> float:
    """Mean-squared readout loss 1/2 sum (cos(phi_y) - target)^2."""
    phi_y = np.asarray(phi_y, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if phi_y.shape != target.shape:
        raise ValueError("output phases and target have different lengths")
    diff = np.cos(phi_y) - target
    return 0.5 * float(diff @ diff)


def ep_gradient(
    phi_plus: np.ndarray,
    phi_minus: np.ndarray,
    x: np.ndarray,
    beta: float,
    n_h: int,
) -> EpGradient:
    """Symmetric EP estimate from the two nudged equilibria.

    `phi_plus` / `phi_minus` are full oscillator vectors ([hidden,
    output] layout, the first n_h entries hidden).  Returns the
    direction to be ADDED to the parameters; in the small-beta limit it
    equals -dl/dtheta.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    phi_plus = np.asarray(phi_plus, dtype=np.float64)
    phi_minus = np.asarray(phi_minus, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if phi_plus.shape != phi_minus.shape:
        raise ValueError("nudged phase vectors have different shapes")
    scale = 1.0 / (2.0 * beta)
    ph_p, py_p = phi_plus[:n_h], phi_plus[n_h:]
    ph_m, py_m = phi_minus[:n_h], phi_minus[n_h:]
    # -(1/2b)[cos(-b) - cos(+b)] == (1/2b)[cos(+b) - cos(-b)]
    g_b_h = scale * (np.cos(ph_p) - np.cos(ph_m))
    g_b_y = scale * (np.cos(py_p) - np.cos(py_m))
    g_w_xh = np.outer(x, g_b_h)
    g_w_hy = scale * (
        np.cos(ph_p[:, None] - py_p[None, :]) - np.cos(ph_m[:, None] - py_m[None, :])
    )
    return EpGradient(g_w_xh=g_w_xh, g_w_hy=g_w_hy, g_b_h=g_b_h, g_b_y=g_b_y)


def sgd_step(net: NetworkParams, gradient: EpGradient, cfg: EpConfig) -> NetworkParams:
    """theta <- theta + eta_layer * g, plain SGD with per-layer rates.

    The EP estimate already points downhill on the loss, hence the plus
    sign.  Returns a new NetworkParams; the input is left untouched.
    """
    if gradient.g_w_xh.shape != net.w_xh.shape or gradient.g_w_hy.shape != net.w_hy.shape:
        raise ValueError("gradient shapes do not match the network")
    return NetworkParams(
        w_xh=net.w_xh + cfg.lr_w_xh * gradient.g_w_xh,
        w_hy=net.w_hy + cfg.lr_w_hy * gradient.g_w_hy,
        b_h=net.b_h + cfg.lr_b_h * gradient.g_b_h,
        b_y=net.b_y + cfg.lr_b_y * gradient.g_b_y,
    )
