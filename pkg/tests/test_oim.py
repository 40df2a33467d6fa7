"""Core phase-dynamics semantics: energy, velocity, Euler relaxation."""

import numpy as np
import pytest

from oimep import (
    DivergenceError,
    IntegratorConfig,
    OimParams,
    PhaseNoise,
    energy,
    euler_step,
    relax,
    velocity,
)
from conftest import random_machine


def single(h=0.0, s=0.0):
    return OimParams(coupling=np.zeros((1, 1)), bias=[h], sync=[s])


class TestEnergy:
    def test_single_oscillator_no_fields_is_zero(self):
        m = single()
        for phi in (0.0, 1.0, np.pi, 5.3):
            assert energy(m, [phi]) == 0.0

    def test_single_oscillator_bias(self):
        assert energy(single(h=1.0), [0.0]) == pytest.approx(-1.0)

    def test_antialigned_pair(self):
        """Two oscillators at 0 and pi with unit coupling: V = +1."""
        j = np.array([[0.0, 1.0], [1.0, 0.0]])
        m = OimParams(coupling=j, bias=np.zeros(2), sync=np.zeros(2))
        assert energy(m, [0.0, np.pi]) == pytest.approx(1.0)

    def test_even_under_global_sign_flip(self, rng):
        """All energy terms are cosines, so V(phi) == V(-phi)."""
        for _ in range(20):
            m = random_machine(rng)
            phi = rng.uniform(-6, 6, m.n)
            assert energy(m, phi) == pytest.approx(energy(m, -phi), abs=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            energy(single(), [0.0, 1.0])


class TestVelocity:
    def test_binary_states_are_stationary(self, rng):
        """Every phase at 0 or pi kills all three sine terms."""
        for _ in range(20):
            m = random_machine(rng)
            phi = rng.choice([0.0, np.pi], m.n)
            assert np.max(np.abs(velocity(m, phi))) < 1e-12

    def test_single_oscillator_restoring_force(self):
        v = velocity(single(h=1.0), [np.pi / 2])
        assert v == pytest.approx([-1.0])

    def test_equals_negative_energy_gradient(self, rng):
        """Gradient consistency against central finite differences."""
        delta = 1e-5
        for _ in range(100):
            m = random_machine(rng)
            phi = rng.uniform(0, 2 * np.pi, m.n)
            fd = np.empty(m.n)
            for i in range(m.n):
                up, down = phi.copy(), phi.copy()
                up[i] += delta
                down[i] -= delta
                fd[i] = (energy(m, up) - energy(m, down)) / (2 * delta)
            v = velocity(m, phi)
            assert np.linalg.norm(v + fd) < 1e-6 * max(np.linalg.norm(v), 1e-30)

    def test_dimension_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            velocity(random_machine(rng, 3), np.zeros(4))


class TestEulerStep:
    def test_stationary_point_unchanged(self, rng):
        m = random_machine(rng)
        phi = rng.choice([0.0, np.pi], m.n)
        out = euler_step(m, phi, 0.1)
        np.testing.assert_allclose(out, phi, atol=1e-12)

    def test_single_step_arithmetic(self):
        out = euler_step(single(h=1.0), np.array([np.pi / 2]), 0.1)
        assert out[0] == pytest.approx(np.pi / 2 - 0.1)

    def test_small_step_descends_energy(self, rng):
        for _ in range(10):
            m = random_machine(rng)
            phi = rng.uniform(0, 2 * np.pi, m.n)
            stepped = euler_step(m, phi, 0.01)
            assert energy(m, stepped) <= energy(m, phi) + 1e-10

    def test_seeded_noise_is_deterministic(self, rng):
        m = random_machine(rng)
        phi = rng.uniform(0, 2 * np.pi, m.n)
        a = euler_step(m, phi, 0.1, PhaseNoise(0.3, np.random.default_rng(7)))
        b = euler_step(m, phi, 0.1, PhaseNoise(0.3, np.random.default_rng(7)))
        np.testing.assert_array_equal(a, b)

    def test_nonfinite_result_names_the_oscillator(self):
        m = single(h=1.0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError, match="oscillator 0"):
                euler_step(m, np.array([1e308]), 1e308)


class TestRelax:
    def test_zero_steps_is_identity(self, rng):
        m = random_machine(rng)
        phi = rng.uniform(0, 2 * np.pi, m.n)
        res = relax(m, phi, IntegratorConfig(epsilon=0.1, steps=0))
        np.testing.assert_array_equal(res.phases, phi)
        assert res.residual == pytest.approx(np.max(np.abs(velocity(m, phi))))
        assert res.trajectory is None

    def test_single_oscillator_decays_to_zero(self):
        """dphi/dt = -sin(phi) from pi/2 flows to the 0 minimum."""
        res = relax(
            single(h=1.0),
            np.array([np.pi / 2]),
            IntegratorConfig(epsilon=0.45, steps=4000),
        )
        assert abs(res.phases[0]) < 1e-3
        assert res.converged

    def test_noiseless_descent_along_trajectory(self, rng):
        """Energy is non-increasing at every step for small epsilon."""
        cfg = IntegratorConfig(epsilon=0.01, steps=200, record_trajectory=True)
        for _ in range(50):
            m = random_machine(rng)
            phi = rng.uniform(0, 2 * np.pi, m.n)
            res = relax(m, phi, cfg)
            energies = np.array([energy(m, p) for p in res.trajectory])
            assert np.all(np.diff(energies) <= 1e-10)

    def test_trajectory_shape_and_endpoints(self, rng):
        m = random_machine(rng)
        phi = rng.uniform(0, 2 * np.pi, m.n)
        res = relax(m, phi, IntegratorConfig(epsilon=0.05, steps=17, record_trajectory=True))
        assert res.trajectory.shape == (18, m.n)
        np.testing.assert_array_equal(res.trajectory[0], phi)
        np.testing.assert_array_equal(res.trajectory[-1], res.phases)

    def test_divergence_guard_trips(self):
        # eps far beyond the stability limit of dphi/dt = -h sin(phi)
        m = single(h=1.0)
        with pytest.raises(DivergenceError):
            relax(m, np.array([1.0]), IntegratorConfig(epsilon=1e4, steps=10000))

    def test_identical_seeds_bitwise_identical(self, rng):
        m = random_machine(rng)
        phi = rng.uniform(0, 2 * np.pi, m.n)
        cfg = IntegratorConfig(epsilon=0.1, steps=50, record_trajectory=True)
        a = relax(m, phi, cfg, PhaseNoise(0.2, np.random.default_rng(3)))
        b = relax(m, phi, cfg, PhaseNoise(0.2, np.random.default_rng(3)))
        np.testing.assert_array_equal(a.trajectory, b.trajectory)


class TestValidation:
    def test_asymmetric_coupling_rejected(self):
        j = np.array([[0.0, 1.0], [0.5, 0.0]])
        with pytest.raises(ValueError, match="symmetric"):
            OimParams(coupling=j, bias=np.zeros(2), sync=np.zeros(2))

    def test_nonzero_diagonal_rejected(self):
        j = np.eye(2)
        with pytest.raises(ValueError, match="diagonal"):
            OimParams(coupling=j, bias=np.zeros(2), sync=np.zeros(2))

    def test_nonfinite_bias_rejected(self):
        with pytest.raises(ValueError, match="bias"):
            OimParams(coupling=np.zeros((1, 1)), bias=[np.nan], sync=[0.0])

    def test_bad_integrator_config(self):
        with pytest.raises(ValueError):
            IntegratorConfig(epsilon=0.0, steps=1)
        with pytest.raises(ValueError):
            IntegratorConfig(epsilon=0.1, steps=-1)
