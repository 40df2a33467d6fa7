"""MLP-to-machine mapping, EP update rule, SGD step."""

import numpy as np
import pytest

from oimep import (
    EpConfig,
    EpGradient,
    Example,
    build_oim,
    encode_target,
    energy,
    ep_gradient,
    init_network,
    loss,
    run_three_phases,
    sgd_step,
)
from conftest import toy_example, toy_net


class TestInitNetwork:
    def test_biases_exactly_zero(self):
        net = init_network(784, 120, 10, seed=5)
        assert not net.b_h.any() and not net.b_y.any()

    def test_he_standard_deviation(self):
        net = init_network(784, 500, 10, seed=5)
        assert np.std(net.w_xh) == pytest.approx(np.sqrt(2.0 / 784), rel=0.05)
        assert np.std(net.w_hy) == pytest.approx(np.sqrt(2.0 / 500), rel=0.05)

    def test_same_seed_bit_identical(self):
        a, b = init_network(20, 8, 4, seed=11), init_network(20, 8, 4, seed=11)
        for name in ("w_xh", "w_hy", "b_h", "b_y"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError):
            init_network(0, 3, 2, seed=0)


class TestBuildOim:
    def test_free_system_has_no_loss_fields(self, rng):
        net = toy_net(rng)
        machine = build_oim(net, np.ones(net.n_x) * 0.5, 0.0)
        np.testing.assert_array_equal(machine.bias[net.n_h :], net.b_y)
        assert not machine.sync.any()

    def test_output_sync_field_is_minus_half_beta(self, rng):
        net = toy_net(rng)
        ex = toy_example(rng)
        machine = build_oim(net, ex.x, 0.1, ex.target)
        np.testing.assert_allclose(machine.sync[net.n_h :], -0.05)
        assert not machine.sync[: net.n_h].any()

    def test_hidden_drive_hand_value(self):
        net = init_network(2, 1, 1, seed=0)
        net.w_xh[:, 0] = [0.2, 0.4]
        net.b_h[0] = 0.1
        machine = build_oim(net, np.array([1.0, 0.5]), 0.0)
        assert machine.bias[0] == pytest.approx(0.5)

    def test_mapping_equations_hold_exactly(self, rng):
        """h_h = b_h + x @ w_xh, J block = w_hy, h_y = b_y + beta*t,
        S_y = -beta/2, all as exact algebra."""
        for _ in range(10):
            net = toy_net(rng, 6, 5, 3)
            ex = toy_example(rng, 6, 3)
            beta = float(rng.uniform(0.01, 0.5))
            m = build_oim(net, ex.x, beta, ex.target)
            nh = net.n_h
            assert np.allclose(m.bias[:nh], net.b_h + ex.x @ net.w_xh, atol=1e-12)
            assert np.allclose(m.bias[nh:], net.b_y + beta * ex.target, atol=1e-12)
            np.testing.assert_array_equal(m.coupling[:nh, nh:], net.w_hy)
            np.testing.assert_array_equal(m.coupling[:nh, :nh], 0.0)
            np.testing.assert_array_equal(m.coupling[nh:, nh:], 0.0)
            np.testing.assert_allclose(m.sync[nh:], -beta / 2, atol=1e-15)

    def test_nudged_energy_equals_free_energy_plus_beta_loss(self, rng):
        """V_beta(phi) - V_0(phi) == beta * (l(phi) - const), where the
        constant beta * sum(1/4 + t_i^2/2) comes from dropping the
        phase-independent part of the expanded squared loss."""
        for _ in range(10):
            net = toy_net(rng, 5, 4, 3)
            ex = toy_example(rng, 5, 3)
            beta = float(rng.uniform(-0.4, 0.4)) or 0.1
            free = build_oim(net, ex.x, 0.0)
            nudged = build_oim(net, ex.x, beta, ex.target)
            phi = rng.uniform(0, 2 * np.pi, free.n)
            const = float(np.sum(0.25 + ex.target**2 / 2.0))
            lhs = energy(nudged, phi) - energy(free, phi)
            rhs = beta * (loss(phi[net.n_h :], ex.target) - const)
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_target_required_when_nudged(self, rng):
        net = toy_net(rng)
        with pytest.raises(ValueError, match="target"):
            build_oim(net, np.zeros(net.n_x), 0.1)


class TestLoss:
    def test_perfect_match_is_zero(self):
        assert loss(np.zeros(4), np.ones(4)) == 0.0

    def test_reference_state_against_plus_one_targets(self):
        assert loss(np.full(10, np.pi / 2), np.ones(10)) == pytest.approx(5.0)

    def test_nonnegative(self, rng):
        for _ in range(50):
            phi = rng.uniform(-7, 7, 6)
            t = rng.uniform(-1, 1, 6)
            assert loss(phi, t) >= 0.0


class TestEpGradient:
    def test_equal_phases_give_exact_zeros(self, rng):
        phi = rng.uniform(0, 2 * np.pi, 7)
        g = ep_gradient(phi, phi.copy(), rng.uniform(0, 1, 4), 0.05, n_h=4)
        assert not g.flat().any()

    def test_dark_pixel_rows_are_zero(self, rng):
        x = np.array([0.0, 0.7, 0.0])
        g = ep_gradient(
            rng.uniform(0, 2 * np.pi, 5), rng.uniform(0, 2 * np.pi, 5), x, 0.1, n_h=3
        )
        assert not g.g_w_xh[0].any() and not g.g_w_xh[2].any()
        assert g.g_w_xh[1].any()

    def test_locality(self, rng):
        """Each component reads only the phases its formula names."""
        n_h, n_y = 4, 3
        x = rng.uniform(0, 1, 2)
        plus = rng.uniform(0, 2 * np.pi, n_h + n_y)
        minus = rng.uniform(0, 2 * np.pi, n_h + n_y)
        base = ep_gradient(plus, minus, x, 0.1, n_h)
        # perturb hidden oscillator 2: only entries naming it may move
        bumped = plus.copy()
        bumped[2] += 0.37
        moved = ep_gradient(bumped, minus, x, 0.1, n_h)
        assert moved.g_b_h[2] != base.g_b_h[2]
        untouched = [i for i in range(n_h) if i != 2]
        np.testing.assert_array_equal(moved.g_b_h[untouched], base.g_b_h[untouched])
        np.testing.assert_array_equal(moved.g_b_y, base.g_b_y)
        np.testing.assert_array_equal(
            moved.g_w_hy[untouched], base.g_w_hy[untouched]
        )
        assert (moved.g_w_hy[2] != base.g_w_hy[2]).all()

    def test_beta_must_be_positive(self, rng):
        phi = rng.uniform(0, 1, 5)
        with pytest.raises(ValueError):
            ep_gradient(phi, phi, np.zeros(2), 0.0, n_h=3)

    def test_nudging_pulls_outputs_toward_targets(self, rng):
        """loss(phi_plus) <= loss(phi_free) on at least 95% of trials."""
        wins, trials = 0, 40
        cfg = EpConfig(
            beta=0.2, epsilon=0.15, free_steps=800, nudge_steps=500,
            batch_size=1, epochs=0,
        )
        for trial in range(trials):
            net = toy_net(rng, 4, 3, 2)
            ex = toy_example(rng, 4, 2)
            phases = run_three_phases(net, ex, cfg)
            free_loss = loss(phases.phi_free[net.n_h :], ex.target)
            plus_loss = loss(phases.phi_plus[net.n_h :], ex.target)
            wins += plus_loss <= free_loss + 1e-12
        assert wins >= 0.95 * trials


class TestSgdStep:
    def test_zero_gradient_is_identity(self, rng):
        net = toy_net(rng)
        out = sgd_step(net, EpGradient.zeros_like(net), EpConfig())
        for name in ("w_xh", "w_hy", "b_h", "b_y"):
            np.testing.assert_array_equal(getattr(out, name), getattr(net, name))

    def test_zero_learning_rates_freeze(self, rng):
        net = toy_net(rng)
        g = EpGradient(
            np.ones_like(net.w_xh), np.ones_like(net.w_hy),
            np.ones_like(net.b_h), np.ones_like(net.b_y),
        )
        cfg = EpConfig(lr_w_xh=0, lr_w_hy=0, lr_b_h=0, lr_b_y=0)
        out = sgd_step(net, g, cfg)
        for name in ("w_xh", "w_hy", "b_h", "b_y"):
            np.testing.assert_array_equal(getattr(out, name), getattr(net, name))

    def test_hand_arithmetic(self):
        net = init_network(1, 1, 1, seed=0)
        net.w_xh[0, 0] = 0.5
        g = EpGradient(
            np.array([[0.2]]), np.zeros((1, 1)), np.zeros(1), np.zeros(1)
        )
        out = sgd_step(net, g, EpConfig(lr_w_xh=0.01))
        assert out.w_xh[0, 0] == pytest.approx(0.502)


class TestExampleValidation:
    def test_out_of_range_inputs_rejected(self):
        with pytest.raises(ValueError):
            Example(x=np.array([1.5]), target=np.array([1.0]))
        with pytest.raises(ValueError):
            Example(x=np.array([0.5]), target=np.array([2.0]))

    def test_encode_target(self):
        t = encode_target(3, 10)
        assert t[3] == 1.0 and np.sum(t == 1.0) == 1
        np.testing.assert_array_equal(np.delete(t, 3), -1.0)
        t0 = encode_target(3, 10, low=0.0)
        assert t0[3] == 1.0 and np.sum(t0) == 1.0
        with pytest.raises(ValueError):
            encode_target(10, 10)
