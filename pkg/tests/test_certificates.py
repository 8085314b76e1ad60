import numpy as np
import pytest

from zonosafe.certificates import (
    BarrierHead,
    EvalMode,
    eval_margin,
    eval_point,
    eval_set,
    report,
    spread,
)
from zonosafe.zonoset import Zonotope


def make_head(rng, n=8, name="h_z"):
    return BarrierHead(name, rng.normal(size=n), float(rng.normal()))


def random_zono(rng, n=8, q=6):
    return Zonotope(rng.normal(size=n), 0.3 * rng.normal(size=(n, q)))


class TestHeadType:
    def test_lipschitz_is_weight_norm(self):
        head = BarrierHead("h_z", np.array([3.0, 4.0]), 0.0)
        assert head.lipschitz == pytest.approx(5.0, abs=1e-12)

    def test_bound_ordering_enforced(self):
        with pytest.raises(ValueError):
            BarrierHead("h_z", np.ones(2), 0.0, eps_dir=0.5, eps_box=0.1)

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            EvalMode("margin")
        with pytest.raises(ValueError):
            EvalMode("point", delta=0.1)
        with pytest.raises(ValueError):
            EvalMode("bogus")
        assert EvalMode("margin", 0.03).delta == 0.03


class TestEvalOps:
    def test_zero_weight_returns_bias(self):
        head = BarrierHead("h_z", np.zeros(3), 1.5)
        assert eval_point(head, np.ones(3)) == 1.5

    def test_basis_direction(self):
        head = BarrierHead("h_z", np.array([1.0, 0.0]), 0.0)
        assert eval_point(head, np.array([3.0, 9.0])) == 3.0

    def test_point_matches_manual_dot(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            head = make_head(rng, 5)
            z = rng.normal(size=5)
            manual = sum(head.w[i] * z[i] for i in range(5)) + head.b
            assert eval_point(head, z) == pytest.approx(manual, abs=1e-12)

    def test_set_on_point_zonotope(self):
        rng = np.random.default_rng(1)
        head = make_head(rng, 4)
        z = rng.normal(size=4)
        assert eval_set(head, Zonotope.point(z)) == eval_point(head, z)

    def test_set_unit_generators(self):
        rng = np.random.default_rng(2)
        head = make_head(rng, 4)
        z = Zonotope(np.zeros(4), np.eye(4))
        expected = eval_point(head, np.zeros(4)) - np.abs(head.w).sum()
        assert eval_set(head, z) == pytest.approx(expected, abs=1e-12)

    def test_set_matches_vertex_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            head = make_head(rng, 4)
            z = random_zono(rng, 4, 8)
            proj = head.w @ z.generators
            best = np.inf
            for mask in range(2 ** 8):
                signs = np.array([1.0 if mask >> j & 1 else -1.0 for j in range(8)])
                best = min(best, proj @ signs)
            expected = eval_point(head, z.center) + best
            assert eval_set(head, z) == pytest.approx(expected, abs=1e-12)

    def test_margin(self):
        rng = np.random.default_rng(4)
        head = make_head(rng)
        z = rng.normal(size=8)
        assert eval_margin(head, z, 0.0) == eval_point(head, z)
        assert eval_margin(head, z, 0.031) == pytest.approx(eval_point(head, z) - 0.031)
        assert eval_margin(head, z, 0.5) <= eval_point(head, z)
        with pytest.raises(ValueError):
            eval_margin(head, z, -0.1)


class TestSpread:
    def test_point_zonotope_zero(self):
        rng = np.random.default_rng(5)
        head = make_head(rng, 4)
        assert spread(head, Zonotope.point(np.zeros(4))) == 0.0

    def test_identity_generators(self):
        rng = np.random.default_rng(6)
        head = make_head(rng, 4)
        z = Zonotope(np.zeros(4), np.eye(4))
        assert spread(head, z) == pytest.approx(np.abs(head.w).sum(), abs=1e-14)

    def test_equals_point_minus_set(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            head = make_head(rng)
            z = random_zono(rng)
            diff = eval_point(head, z.center) - eval_set(head, z)
            assert spread(head, z) == pytest.approx(diff, abs=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(8)
        head = make_head(rng, 5)
        z = random_zono(rng, 5, 7)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        head2 = BarrierHead(head.name, q @ head.w, head.b)
        z2 = Zonotope(q @ z.center, q @ z.generators)
        assert spread(head2, z2) == pytest.approx(spread(head, z), abs=1e-12)

    def test_conservatism(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            head = make_head(rng)
            z = random_zono(rng)
            assert eval_set(head, z) <= eval_point(head, z.center)


class TestReport:
    def heads(self, rng):
        return [make_head(rng, 8, name) for name in ("h_z", "h_y", "h_E")]

    def test_trivially_safe_heads(self):
        rng = np.random.default_rng(10)
        heads = [BarrierHead(n, 0.01 * rng.normal(size=4), 100.0)
                 for n in ("h_z", "h_y", "h_E")]
        rep = report(heads, random_zono(rng, 4, 5))
        assert not any(rep[n].blind_spot for n in ("h_z", "h_y", "h_E"))

    def test_blind_spot_when_spread_crosses_zero(self):
        head = BarrierHead("h_z", np.array([1.0]), 0.0)
        z = Zonotope(np.array([0.01]), np.array([[0.05]]))
        rep = report([head], z)
        assert rep["h_z"].safe_point
        assert not rep["h_z"].safe_set
        assert rep["h_z"].blind_spot

    def test_spread_identity_exact(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            heads = self.heads(rng)
            z = random_zono(rng)
            rep = report(heads, z)
            for name in ("h_z", "h_y", "h_E"):
                h = rep[name]
                assert h.spread == h.h_point - h.h_set
                assert h.spread >= 0.0
                assert h.blind_spot == (h.safe_point and not h.safe_set)

    def test_counts_match_recount(self):
        rng = np.random.default_rng(12)
        heads = self.heads(rng)
        blind = 0
        recount = 0
        for _ in range(200):
            z = random_zono(rng)
            rep = report(heads, z)
            for name in ("h_z", "h_y", "h_E"):
                h = rep[name]
                blind += h.blind_spot
                recount += (h.h_point >= 0.0) and (h.h_set < 0.0)
        assert blind == recount
        assert blind > 0
