import numpy as np
import pytest

from zonosafe.certificates import BarrierHead
from zonosafe.latentmodel import (
    ErrorBounds,
    LatentDynamics,
    attach_bounds,
    box_bound,
    conjugacy_error,
    directed_bound,
    fit_heads,
    fit_latent_dynamics,
    residuals,
)
from zonosafe.setnn import Layer, init_mlp, make_mlp


class TestFitLatentDynamics:
    def test_recovers_exact_system(self):
        rng = np.random.default_rng(0)
        a_true = rng.normal(size=(8, 8)) * 0.3 + np.eye(8)
        b_true = rng.normal(size=(8, 3))
        z = rng.normal(size=(200, 8))
        u = rng.normal(size=(200, 3))
        z_next = z @ a_true.T + u @ b_true.T
        dyn = fit_latent_dynamics(z, u, z_next)
        np.testing.assert_allclose(dyn.a, a_true, atol=1e-8)
        np.testing.assert_allclose(dyn.b, b_true, atol=1e-8)

    def test_zero_targets(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(50, 4))
        u = rng.normal(size=(50, 2))
        dyn = fit_latent_dynamics(z, u, np.zeros((50, 4)))
        np.testing.assert_allclose(dyn.a, 0.0, atol=1e-10)
        np.testing.assert_allclose(dyn.b, 0.0, atol=1e-10)

    def test_noise_scales_linearly(self):
        rng = np.random.default_rng(2)
        a_true = np.eye(6) * 0.9
        b_true = rng.normal(size=(6, 3))
        z = rng.normal(size=(4000, 6))
        u = rng.normal(size=(4000, 3))
        clean = z @ a_true.T + u @ b_true.T
        errs = []
        for sigma in (1e-3, 1e-2):
            noisy = clean + rng.normal(size=clean.shape) * sigma
            dyn = fit_latent_dynamics(z, u, noisy)
            errs.append(np.abs(dyn.a - a_true).max())
        assert errs[0] < 10 * 1e-3
        assert errs[1] / errs[0] < 30.0

    def test_rank_deficiency_reported(self):
        z = np.zeros((40, 4))
        u = np.random.default_rng(3).normal(size=(40, 2))
        with pytest.raises(ValueError, match="rank"):
            fit_latent_dynamics(z, u, np.zeros((40, 4)))

    def test_too_few_samples(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError, match="samples"):
            fit_latent_dynamics(rng.normal(size=(5, 8)), rng.normal(size=(5, 3)),
                                rng.normal(size=(5, 8)))

    def test_optimality_spot_check(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(100, 5))
        u = rng.normal(size=(100, 3))
        z_next = rng.normal(size=(100, 5))
        dyn = fit_latent_dynamics(z, u, z_next)
        base = (residuals(dyn, z, u, z_next) ** 2).sum()
        for _ in range(20):
            da = rng.normal(size=(5, 5)) * 1e-3
            perturbed = LatentDynamics(dyn.a + da, dyn.b)
            assert (residuals(perturbed, z, u, z_next) ** 2).sum() >= base - 1e-12


class TestBounds:
    def head(self, rng, n=8):
        return BarrierHead("h_z", rng.normal(size=n), 0.0)

    def test_zero_residuals(self):
        rng = np.random.default_rng(6)
        head = self.head(rng)
        res = np.zeros((100, 8))
        assert directed_bound(head, res) == 0.0
        assert box_bound(head, res) == 0.0

    def test_orthogonal_residuals(self):
        head = BarrierHead("h_z", np.array([1.0, 0.0]), 0.0)
        res = np.column_stack([np.zeros(50), np.linspace(-1, 1, 50)])
        assert directed_bound(head, res) == 0.0
        assert box_bound(head, res) > 0.0

    def test_rank_one_residuals_triangle(self):
        rng = np.random.default_rng(7)
        head = self.head(rng, 4)
        direction = head.w / np.linalg.norm(head.w)
        res = np.outer(rng.normal(size=300), direction)
        assert box_bound(head, res) >= directed_bound(head, res) - 1e-12

    def test_directed_below_box_random(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            head = self.head(rng, 6)
            res = rng.normal(size=(400, 6)) * rng.uniform(0.1, 2.0, size=6)
            assert directed_bound(head, res) <= box_bound(head, res) + 1e-12

    def test_attach_bounds(self):
        rng = np.random.default_rng(9)
        head = self.head(rng, 5)
        res = rng.normal(size=(500, 5))
        out = attach_bounds(head, res)
        assert out.eps_dir == pytest.approx(directed_bound(head, res))
        assert out.eps_box == pytest.approx(box_bound(head, res))
        assert out.eps_dir <= out.eps_box


class TestConjugacy:
    def test_perfect_linear_system(self):
        # encoder is a single dense layer; its exact one-step conjugate
        # dynamics make the gap vanish
        rng = np.random.default_rng(10)
        e = rng.normal(size=(4, 16))
        enc = make_mlp([Layer("dense", e, np.zeros(4))])
        m = rng.normal(size=(16, 16)) * 0.1
        bu = rng.normal(size=(16, 3))
        x = rng.normal(size=(100, 16))
        u = rng.normal(size=(100, 3))
        x_next = x @ m.T + u @ bu.T
        # z_next = E x_next = E M x + E Bu u; choose A, B accordingly via lstsq
        z = x @ e.T
        z_next = x_next @ e.T
        dyn = fit_latent_dynamics(z, u, z_next)
        gap = conjugacy_error(enc, dyn, x, u, x_next)
        assert gap < 1e-8

    def test_single_triple_hand_computed(self):
        enc = make_mlp([Layer("dense", np.eye(2), np.zeros(2))])
        dyn = LatentDynamics(np.eye(2), np.zeros((2, 3)))
        x = np.array([[1.0, 2.0]])
        u = np.zeros((1, 3))
        x_next = np.array([[1.5, 2.5]])
        # residual = x_next - x = (0.5, 0.5); norm = sqrt(0.5)
        assert conjugacy_error(enc, dyn, x, u, x_next) == pytest.approx(np.sqrt(0.5))

    def test_monotone_in_validation_set(self):
        rng = np.random.default_rng(11)
        enc = init_mlp([16, 12, 4], rng)
        dyn = LatentDynamics(np.eye(4), rng.normal(size=(4, 3)))
        x = rng.normal(size=(50, 16))
        u = rng.normal(size=(50, 3))
        x_next = rng.normal(size=(50, 16))
        full = conjugacy_error(enc, dyn, x, u, x_next)
        sub = conjugacy_error(enc, dyn, x[:20], u[:20], x_next[:20])
        assert full >= sub - 1e-15

    def test_transfer_margin_formula(self):
        head = BarrierHead("h_z", np.array([3.0, 4.0]), 0.0, eps_dir=0.4, eps_box=0.9)
        bounds = ErrorBounds(eps_dir={"h_z": 0.4}, eps_box={"h_z": 0.9}, eps_conj=2.0)
        assert bounds.transfer_margin(head) == pytest.approx(0.4 - 5.0 * 2.0)


class TestFitHeads:
    def test_exact_linear_margins(self):
        rng = np.random.default_rng(12)
        codes = rng.normal(size=(200, 8))
        w_true = rng.normal(size=8)
        target = codes @ w_true + 0.7
        fits = fit_heads(codes, {"h_z": target})
        assert fits["h_z"].r == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(fits["h_z"].head.w, w_true, atol=1e-8)

    def test_constant_margins(self):
        rng = np.random.default_rng(13)
        codes = rng.normal(size=(100, 4))
        fits = fit_heads(codes, {"h_E": np.full(100, 2.5)})
        np.testing.assert_allclose(fits["h_E"].head.w, 0.0, atol=1e-10)
        assert fits["h_E"].head.b == pytest.approx(2.5)

    def test_noise_targets_low_r(self):
        rng = np.random.default_rng(14)
        codes = rng.normal(size=(3000, 6))
        fits = fit_heads(codes, {"h_y": rng.normal(size=3000)})
        assert abs(fits["h_y"].r) < 3.0 / np.sqrt(3000) * 3
