"""Noise scaling and quantization semantics."""

import numpy as np
import pytest

from oimep import (
    HardwareConfig,
    NetworkParams,
    noise_increment,
    quantize_params,
    quantize_phase,
    quantize_tensor,
)
from oimep.engine import BatchSystem, relax_batch

TWO_PI = 2 * np.pi


class TestNoiseIncrement:
    def test_zero_xi_gives_zero_vector(self):
        out = noise_increment(5, 0.0, 0.25, np.random.default_rng(0))
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_std_follows_sqrt_epsilon_scaling(self):
        """xi=0.2, eps=0.25 -> std 0.1, estimated over 1e6 draws."""
        rng = np.random.default_rng(42)
        draws = noise_increment(1_000_000, 0.2, 0.25, rng)
        assert np.std(draws) == pytest.approx(0.1, rel=0.01)

    def test_fixed_seed_reproducible(self):
        a = noise_increment(100, 0.3, 0.5, np.random.default_rng(9))
        b = noise_increment(100, 0.3, 0.5, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_negative_xi_rejected(self):
        with pytest.raises(ValueError):
            noise_increment(1, -0.1, 0.5, np.random.default_rng(0))

    def test_euler_maruyama_step_consistency(self):
        """Halving eps and doubling steps keeps end-state variance.

        Uncoupled field-free oscillators are pure diffusion, so the
        end-of-trajectory phase variance should depend only on total
        time xi^2 * T, not on the discretization.  Checked through the
        batched integrator with 4000 independent rows.
        """
        xi, total = 0.3, 8.0
        variances = []
        for eps, steps in ((0.1, 80), (0.05, 160)):
            sys = BatchSystem(
                w_hy=np.zeros((1, 1), dtype=np.float64),
                drive=np.zeros((4000, 2)),
                sync_y=None,
                n_h=1,
                n_y=1,
            )
            phi = np.zeros((4000, 2))
            rngs = [np.random.default_rng((ss, int(eps * 1000))) for ss in range(4000)]
            relax_batch(
                phi, sys, eps, steps,
                hw=HardwareConfig(noise_xi=xi), noise_rngs=rngs,
            )
            variances.append(np.var(phi))
        expected = xi**2 * total
        assert variances[0] == pytest.approx(expected, rel=0.1)
        assert variances[1] == pytest.approx(variances[0], rel=0.1)


class TestQuantizePhase:
    def test_two_bit_rounds_to_quarter_circle(self):
        # levels {0, pi/2, pi, 3pi/2}; pi/3 is nearest pi/2
        assert quantize_phase(np.array([np.pi / 3]), 2)[0] == pytest.approx(np.pi / 2)

    def test_levels_are_fixed_points(self):
        levels = np.arange(8) * TWO_PI / 8
        np.testing.assert_array_equal(quantize_phase(levels, 3), levels)

    def test_sixteen_bit_error_bound(self, rng):
        phi = rng.uniform(-20, 20, 5000)
        q = quantize_phase(phi, 16)
        err = np.abs(np.mod(phi, TWO_PI) - q)
        err = np.minimum(err, TWO_PI - err)  # circular distance
        assert err.max() <= np.pi / 2**16 + 1e-12

    def test_idempotent(self, rng):
        phi = rng.uniform(-20, 20, 1000)
        for bits in (1, 2, 4, 8):
            once = quantize_phase(phi, bits)
            np.testing.assert_array_equal(quantize_phase(once, bits), once)

    def test_wrap_invariance(self, rng):
        phi = rng.uniform(0, TWO_PI, 1000)
        for bits in (2, 4, 8):
            np.testing.assert_array_equal(
                quantize_phase(phi, bits), quantize_phase(phi + TWO_PI, bits)
            )

    def test_full_turn_maps_to_level_zero(self):
        assert quantize_phase(np.array([TWO_PI - 1e-9]), 4)[0] == 0.0


class TestQuantizeTensor:
    def test_clipping_saturates(self):
        out = quantize_tensor(np.array([3.7, -9.0]), 8, 1.0)
        np.testing.assert_array_equal(out, [1.0, -1.0])

    def test_one_bit_is_sign_like(self, rng):
        vals = rng.uniform(-2, 2, 500)
        out = quantize_tensor(vals, 1, 1.0)
        assert set(np.unique(out)) <= {-1.0, 1.0}

    def test_ten_bit_lsb_bound(self):
        q = quantize_tensor(np.array([0.3]), 10, 1.0)[0]
        assert abs(q - 0.3) <= 2.0 / 2**10

    def test_half_spacing_error_bound_in_range(self, rng):
        vals = rng.uniform(-1, 1, 2000)
        for bits in (4, 8, 10):
            spacing = 2.0 / (2**bits - 1)
            q = quantize_tensor(vals, bits, 1.0)
            assert np.max(np.abs(q - vals)) <= spacing / 2 + 1e-12

    def test_idempotent(self, rng):
        vals = rng.uniform(-3, 3, 2000)
        for bits in (1, 3, 10):
            once = quantize_tensor(vals, bits, 1.0)
            np.testing.assert_array_equal(quantize_tensor(once, bits, 1.0), once)

    def test_quantize_params_covers_all_tensors(self, rng):
        net = NetworkParams(
            w_xh=rng.uniform(-2, 2, (4, 3)),
            w_hy=rng.uniform(-2, 2, (3, 2)),
            b_h=rng.uniform(-2, 2, 3),
            b_y=rng.uniform(-2, 2, 2),
        )
        q = quantize_params(net, 6, 1.0)
        for name in ("w_xh", "w_hy", "b_h", "b_y"):
            tensor = getattr(q, name)
            assert np.max(np.abs(tensor)) <= 1.0
            np.testing.assert_array_equal(
                quantize_tensor(tensor, 6, 1.0), tensor
            )


class TestHardwareConfig:
    def test_defaults_are_ideal(self):
        assert HardwareConfig().is_ideal

    def test_validation(self):
        with pytest.raises(ValueError):
            HardwareConfig(noise_xi=-1.0)
        with pytest.raises(ValueError):
            HardwareConfig(phase_bits=0)
        with pytest.raises(ValueError):
            HardwareConfig(param_range=0.0)
