import math

import numpy as np
import pytest

from zonosafe.plant import (
    GateSpec,
    PlantParams,
    PlantState,
    gate_crossing_check,
    lie_g_fd,
    load_position,
    step,
    step_vector,
    swing_energy,
)
from zonosafe.certificates import BarrierHead
from zonosafe.setnn import init_mlp


PARAMS = PlantParams()
GATE = GateSpec()


def pendulum_state(alpha, beta=0.0, alpha_dot=0.0, beta_dot=0.0, p=(0.0, 0.0, 2.0)):
    return PlantState(p=np.asarray(p, float), v=np.zeros(3), euler=np.zeros(3),
                      omega=np.zeros(3), alpha=alpha, beta=beta,
                      alpha_dot=alpha_dot, beta_dot=beta_dot)


class TestLoadPosition:
    def test_straight_down(self):
        s = pendulum_state(0.0)
        np.testing.assert_allclose(load_position(s, PARAMS), [0.0, 0.0, 1.2])

    def test_horizontal(self):
        s = pendulum_state(math.pi / 2, 0.0)
        np.testing.assert_allclose(load_position(s, PARAMS), [0.8, 0.0, 2.0], atol=1e-15)

    def test_oblique(self):
        s = pendulum_state(math.radians(30.0), math.pi / 2)
        expected = [0.0, 0.4, 2.0 - 0.8 * math.cos(math.radians(30.0))]
        np.testing.assert_allclose(load_position(s, PARAMS), expected, atol=1e-15)

    def test_rod_length_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = pendulum_state(rng.uniform(-1.2, 1.2), rng.uniform(-3, 3))
            dist = np.linalg.norm(load_position(s, PARAMS) - s.p)
            assert dist == pytest.approx(PARAMS.l_rod, rel=1e-12)


class TestStep:
    def test_hover_fixed_point(self):
        s = PlantState.hover()
        nxt = step(s, np.zeros(3), PARAMS)
        assert np.abs(nxt.to_vector() - s.to_vector()).max() < 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        s = pendulum_state(0.3, 0.5, 0.2, -0.1)
        mu = rng.uniform(-3, 3, size=3)
        a = step(s, mu, PARAMS).to_vector()
        b = step(s, mu, PARAMS).to_vector()
        assert np.array_equal(a, b)

    def test_small_angle_frequency(self):
        s = pendulum_state(math.radians(2.0))
        alphas = []
        for _ in range(1000):
            alphas.append(s.alpha)
            s = step(s, np.zeros(3), PARAMS)
        alphas = np.asarray(alphas)
        crossings = np.where(np.diff(np.sign(alphas)) != 0)[0]
        times = [
            (i + alphas[i] / (alphas[i] - alphas[i + 1])) * PARAMS.dt for i in crossings
        ]
        omega = math.pi / np.mean(np.diff(times))
        expected = math.sqrt(PARAMS.g / PARAMS.l_rod)
        assert abs(omega - expected) / expected < 0.01

    def test_free_pendulum_energy_drift(self):
        s = pendulum_state(math.radians(30.0))
        e0 = swing_energy(s, PARAMS)
        worst = 0.0
        for _ in range(500):
            s = step(s, np.zeros(3), PARAMS)
            worst = max(worst, abs(swing_energy(s, PARAMS) - e0) / e0)
        assert worst < 1e-4

    def test_command_clamped(self):
        s = PlantState.hover()
        a = step(s, np.array([100.0, 0.0, 0.0]), PARAMS).to_vector()
        b = step(s, np.array([PARAMS.mu_max, 0.0, 0.0]), PARAMS).to_vector()
        assert np.array_equal(a, b)

    def test_azimuth_frozen_near_pole(self):
        s = pendulum_state(0.0, beta=1.0, beta_dot=5.0)
        nxt = step(s, np.zeros(3), PARAMS)
        assert nxt.beta == 1.0
        assert nxt.beta_dot == 0.0

    def test_nonfinite_command_rejected(self):
        with pytest.raises(ValueError):
            step(PlantState.hover(), np.array([np.nan, 0.0, 0.0]), PARAMS)


class TestGateCrossing:
    def make(self, px, py=0.0, pz=2.35, alpha=0.0):
        return pendulum_state(alpha, p=(px, py, pz))

    def test_not_at_gate(self):
        ev = gate_crossing_check(self.make(5.0), self.make(5.1), GATE, PARAMS)
        assert ev.kind == "not_at_gate"

    def test_clean_center_crossing(self):
        ev = gate_crossing_check(self.make(9.99), self.make(10.05), GATE, PARAMS)
        assert ev.kind == "passed"
        assert "quad" in ev.crossed and "load" in ev.crossed

    def test_load_boundary_collision(self):
        # load crosses 0.56 below center: radius 0.05 vs half-height 0.6 leaves 0.55
        prev = self.make(9.99, pz=2.0 - 0.56 + PARAMS.l_rod)
        nxt = self.make(10.05, pz=2.0 - 0.56 + PARAMS.l_rod)
        ev = gate_crossing_check(prev, nxt, GATE, PARAMS)
        assert ev.kind == "collision"
        assert ev.body == "load"
        assert ev.axis == "z"

    def test_load_just_inside(self):
        prev = self.make(9.99, pz=2.0 - 0.54 + PARAMS.l_rod)
        nxt = self.make(10.05, pz=2.0 - 0.54 + PARAMS.l_rod)
        assert gate_crossing_check(prev, nxt, GATE, PARAMS).kind == "passed"

    def test_quad_radius_matters(self):
        prev = self.make(9.99, py=0.5)
        nxt = self.make(10.05, py=0.5)
        ev = gate_crossing_check(prev, nxt, GATE, PARAMS)
        assert ev.kind == "collision" and ev.body == "quad" and ev.axis == "y"

    def test_agrees_with_refined_integration(self):
        rng = np.random.default_rng(2)
        agree = 0
        total = 0
        for _ in range(150):
            s = PlantState(
                p=np.array([rng.uniform(9.96, 9.995), rng.uniform(-0.7, 0.7),
                            rng.uniform(1.6, 3.0)]),
                v=np.array([rng.uniform(1.5, 2.5), rng.uniform(-0.5, 0.5),
                            rng.uniform(-0.5, 0.5)]),
                euler=rng.uniform(-0.1, 0.1, 3), omega=rng.uniform(-0.3, 0.3, 3),
                alpha=rng.uniform(-0.5, 0.5), beta=rng.uniform(-3, 3),
                alpha_dot=rng.uniform(-0.5, 0.5), beta_dot=rng.uniform(-0.5, 0.5),
            )
            mu = rng.uniform(-2, 2, 3)
            nxt = step(s, mu, PARAMS)
            coarse = gate_crossing_check(s, nxt, GATE, PARAMS)
            if coarse.kind == "not_at_gate":
                continue
            # Refined oracle: substep the same window and pool all events,
            # since quad and load may cross in different substeps.
            fine_params = PlantParams(dt=PARAMS.dt / 100.0)
            prev = s
            kinds = []
            for _ in range(100):
                cur = step(prev, mu, fine_params)
                ev = gate_crossing_check(prev, cur, GATE, fine_params)
                if ev.kind == "collision":
                    kinds.append(ev.kind)
                    break
                if ev.kind == "passed":
                    kinds.append(ev.kind)
                prev = cur
            if not kinds:
                continue
            fine_kind = "collision" if "collision" in kinds else "passed"
            total += 1
            if fine_kind == coarse.kind:
                agree += 1
        assert total >= 20
        assert agree / total >= 0.99


class TestLieGFd:
    def test_zero_weight_head(self):
        rng = np.random.default_rng(3)
        enc = init_mlp([16, 8, 4], rng)
        head = BarrierHead("h_z", np.zeros(4), 1.0)
        row = lie_g_fd(PlantState.hover(), head, enc, PARAMS, 1e-3)
        np.testing.assert_array_equal(row, np.zeros(3))

    def test_linear_surrogate_recovers_wb(self):
        # Replace the plant step by a linear surrogate vec+ = vec + dt*M mu;
        # the finite difference must then recover w @ (sel @ M) exactly.
        rng = np.random.default_rng(4)
        w = rng.normal(size=3)
        m_lift = rng.normal(size=(16, 3))
        from zonosafe.setnn import Layer, make_mlp

        sel = rng.normal(size=(3, 16))
        enc = make_mlp([Layer("dense", sel, np.zeros(3))])
        head = BarrierHead("h_z", w, 0.0)

        def surrogate(vec, mu):
            return vec + PARAMS.dt * (m_lift @ mu)

        row = lie_g_fd(PlantState.hover(), head, enc, PARAMS, 1e-3,
                       step_fn=surrogate)
        np.testing.assert_allclose(row, w @ (sel @ m_lift), rtol=1e-9)

    def test_richardson_second_order(self):
        rng = np.random.default_rng(5)
        enc = init_mlp([16, 12, 5], rng)
        head = BarrierHead("h_y", rng.normal(size=5), 0.0)
        s = pendulum_state(0.3, 0.4, 0.1, -0.2)
        r1 = lie_g_fd(s, head, enc, PARAMS, 1e-3)
        r2 = lie_g_fd(s, head, enc, PARAMS, 5e-4)
        r3 = lie_g_fd(s, head, enc, PARAMS, 2.5e-4)
        d12 = np.abs(r1 - r2).max()
        d23 = np.abs(r2 - r3).max()
        # second-order differences shrink ~4x per halving; allow slack for
        # higher-order terms and roundoff
        assert d12 < 4.5 * d23 + 1e-10


class TestBackendParity:
    def test_step_matches_pure_backend(self):
        pytest.importorskip("zonosafe._speedups")
        from zonosafe import _kernels_py, _speedups

        rng = np.random.default_rng(6)
        kt = PARAMS.kernel_tuple()
        for _ in range(50):
            vec = np.concatenate([
                rng.uniform(-5, 5, 3), rng.uniform(-3, 3, 3),
                rng.uniform(-0.4, 0.4, 3), rng.uniform(-1, 1, 3),
                [rng.uniform(-1.0, 1.0), rng.uniform(-3, 3),
                 rng.uniform(-1, 1), rng.uniform(-1, 1)],
            ])
            mu = rng.uniform(-6, 6, 3)
            a = _kernels_py.plant_rk4(vec, mu, kt)
            b = _speedups.plant_rk4(vec, mu, kt)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_tanh_params_match_pure_backend(self):
        pytest.importorskip("zonosafe._speedups")
        from zonosafe import _kernels_py, _speedups

        rng = np.random.default_rng(7)
        lo = rng.uniform(-4, 3, 500)
        hi = lo + np.concatenate([rng.uniform(0, 5, 498), [0.0, 1e-13]])
        for a, b in zip(_kernels_py.tanh_chord_params(lo, hi),
                        _speedups.tanh_chord_params(lo, hi)):
            np.testing.assert_allclose(np.asarray(a), np.asarray(b), atol=1e-12)
