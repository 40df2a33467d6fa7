"""Equilibrium propagation on simulated oscillator Ising machines.

The package simulates networks of coupled phase oscillators whose
dynamics descend an Ising-like energy, maps dense MLPs onto them, and
trains the mapped networks with the three-phase equilibrium
propagation protocol, including hardware-realism studies (phase noise,
phase/parameter quantization) and independent gradient oracles (BPTT
through the recorded trajectory, finite differences).
"""

from .oim import (
    DivergenceError,
    IntegratorConfig,
    OimParams,
    RelaxResult,
    energy,
    euler_step,
    relax,
    velocity,
    velocity_jacobian,
)
from .hardware import (
    HardwareConfig,
    PhaseNoise,
    noise_increment,
    noise_rng,
    quantize_params,
    quantize_phase,
    quantize_tensor,
)
from .network import (
    EpConfig,
    EpGradient,
    Example,
    NetworkParams,
    build_oim,
    ep_gradient,
    init_network,
    loss,
    sgd_step,
)
from .engine import (
    EpochMetrics,
    ThreePhaseResult,
    TrainResult,
    evaluate,
    predict,
    run_three_phases,
    train,
)
from .gradcheck import (
    EpBpttCurve,
    GradComparison,
    bptt_loss_gradient,
    compare,
    fd_loss_gradient,
    instantaneous_ep_curve,
)
from .data import (
    Dataset,
    encode_target,
    encode_targets,
    load_dataset,
    load_idx,
    make_mnist100,
    write_idx,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig, resolve

__version__ = "0.1.0"
