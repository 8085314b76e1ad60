import itertools

import numpy as np
import pytest

from zonosafe.zonoset import (
    Interval,
    Zonotope,
    affine_map,
    contains_point,
    frobenius_radius,
    interval_hull,
    linear_max,
    linear_min,
    sample_points,
    tanh_enclosure,
)


def random_zonotope(rng, n, q, scale=1.0):
    return Zonotope(rng.normal(scale=scale, size=n), rng.normal(scale=scale, size=(n, q)))


def brute_force_min(w, b, z):
    """Enumerate every sign vertex; exact for the linear support value."""
    vals = w @ z.center + b
    proj = w @ z.generators
    best = np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=z.num_generators):
        best = min(best, vals + proj @ np.array(signs))
    return best


class TestZonotope:
    def test_validation(self):
        with pytest.raises(ValueError):
            Zonotope(np.zeros(2), np.zeros((3, 1)))
        with pytest.raises(ValueError):
            Zonotope(np.array([np.inf, 0.0]), np.zeros((2, 0)))

    def test_immutable(self):
        z = Zonotope(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            z.center[0] = 1.0

    def test_point_constructor(self):
        z = Zonotope.point([1.0, 2.0])
        assert z.num_generators == 0
        assert z.dim == 2


class TestLinearMin:
    def test_unit_generators(self):
        z = Zonotope(np.zeros(2), np.eye(2))
        assert linear_min([1.0, 1.0], 0.0, z) == pytest.approx(-2.0, abs=1e-15)

    def test_scalar_example(self):
        z = Zonotope(np.array([2.0]), np.array([[0.5, 0.3]]))
        assert linear_min([1.0], 1.0, z) == pytest.approx(2.2, abs=1e-15)

    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            z = random_zonotope(rng, 3, 4)
            w = rng.normal(size=3)
            b = rng.normal()
            assert linear_min(w, b, z) == pytest.approx(brute_force_min(w, b, z), abs=1e-12)

    def test_dimension_mismatch(self):
        z = Zonotope(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            linear_min([1.0, 0.0, 0.0], 0.0, z)

    def test_directional_soundness_on_samples(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            z = random_zonotope(rng, 4, 6)
            pts = sample_points(z, 500, rng)
            for _ in range(20):
                w = rng.normal(size=4)
                vals = pts @ w
                assert vals.min() >= linear_min(w, 0.0, z) - 1e-12
                assert vals.max() <= linear_max(w, 0.0, z) + 1e-12


class TestAffineMap:
    def test_identity(self):
        rng = np.random.default_rng(1)
        z = random_zonotope(rng, 3, 4)
        out = affine_map(np.eye(3), np.zeros(3), z)
        np.testing.assert_array_equal(out.center, z.center)
        np.testing.assert_array_equal(out.generators, z.generators)

    def test_scalar_case(self):
        z = Zonotope(np.array([0.0]), np.array([[1.0]]))
        out = affine_map(np.array([[2.0]]), np.array([1.0]), z)
        assert out.center[0] == 1.0
        assert out.generators[0, 0] == 2.0

    def test_sampled_points_stay_inside(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            z = random_zonotope(rng, 3, 5)
            w = rng.normal(size=(2, 3))
            b = rng.normal(size=2)
            out = affine_map(w, b, z)
            pts = sample_points(z, 10_000, rng)
            mapped = pts @ w.T + b
            for _ in range(50):
                d = rng.normal(size=2)
                vals = mapped @ d
                assert vals.max() <= linear_max(d, 0.0, out) + 1e-9
                assert vals.min() >= linear_min(d, 0.0, out) - 1e-9

    def test_contains_point_agreement(self):
        rng = np.random.default_rng(3)
        z = random_zonotope(rng, 3, 6)
        w = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        out = affine_map(w, b, z)
        for p in sample_points(z, 50, rng):
            assert contains_point(out, w @ p + b, tol=1e-9)

    def test_dimension_mismatch(self):
        z = Zonotope(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            affine_map(np.zeros((2, 3)), np.zeros(2), z)


class TestIntervalHull:
    def test_point_zonotope(self):
        hull = interval_hull(Zonotope.point([1.5, -2.0]))
        assert hull[0] == Interval(1.5, 1.5)
        assert hull[1] == Interval(-2.0, -2.0)

    def test_two_generators(self):
        hull = interval_hull(Zonotope(np.array([0.0]), np.array([[1.0, 2.0]])))
        assert hull[0] == Interval(-3.0, 3.0)

    def test_samples_inside(self):
        rng = np.random.default_rng(4)
        z = random_zonotope(rng, 4, 7)
        hull = interval_hull(z)
        pts = sample_points(z, 2000, rng)
        for i, iv in enumerate(hull):
            assert pts[:, i].min() >= iv.lo - 1e-12
            assert pts[:, i].max() <= iv.hi + 1e-12

    def test_interval_invariant(self):
        with pytest.raises(ValueError):
            Interval(1.0, 0.0)


class TestTanhEnclosure:
    def test_point_at_zero(self):
        out = tanh_enclosure(Zonotope.point([0.0]))
        assert out.center[0] == pytest.approx(0.0, abs=1e-15)
        assert np.all(np.abs(out.generators) < 1e-15)

    def test_symmetric_hull(self):
        a = 0.8
        z = Zonotope(np.array([0.0]), np.array([[a]]))
        out = tanh_enclosure(z)
        m = out.generators[0, 0] / a
        assert m == pytest.approx(np.tanh(a) / a, rel=1e-12)
        # center shift (e_hi + e_lo)/2 vanishes by odd symmetry
        assert out.center[0] == pytest.approx(0.0, abs=1e-12)

    def test_generator_count(self):
        rng = np.random.default_rng(5)
        z = random_zonotope(rng, 3, 4)
        assert tanh_enclosure(z).num_generators == 4 + 3

    def test_sampling_soundness(self):
        rng = np.random.default_rng(6)
        z = random_zonotope(rng, 3, 5)
        out = tanh_enclosure(z)
        vals = np.tanh(sample_points(z, 10_000, rng))
        for _ in range(100):
            d = rng.normal(size=3)
            proj = vals @ d
            assert proj.max() <= linear_max(d, 0.0, out) + 1e-9
            assert proj.min() >= linear_min(d, 0.0, out) - 1e-9

    def test_wide_interval_soundness(self):
        # Chord slope underflows toward zero on very wide hulls; endpoints rule.
        z = Zonotope(np.array([0.0]), np.array([[40.0]]))
        out = tanh_enclosure(z)
        xs = np.linspace(-40.0, 40.0, 4001)
        lo = out.center[0] - np.abs(out.generators[0]).sum()
        hi = out.center[0] + np.abs(out.generators[0]).sum()
        assert np.tanh(xs).max() <= hi + 1e-12
        assert np.tanh(xs).min() >= lo - 1e-12

    def test_shrinks_to_derivative_for_narrow_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            c = rng.uniform(-2.0, 2.0)
            width = rng.uniform(0.0, 1e-6)
            z = Zonotope(np.array([c]), np.array([[width / 2.0]]))
            out = tanh_enclosure(z)
            out_width = 2.0 * np.abs(out.generators[0]).sum()
            deriv = 1.0 - np.tanh(c) ** 2
            assert out_width <= deriv * width + 1e-9


class TestContainsPoint:
    def test_center(self):
        rng = np.random.default_rng(8)
        z = random_zonotope(rng, 3, 5)
        assert contains_point(z, z.center)

    def test_all_ones_vertex(self):
        rng = np.random.default_rng(9)
        z = random_zonotope(rng, 3, 5)
        p = z.center + z.generators @ np.ones(5)
        assert contains_point(z, p, tol=1e-9)

    def test_outside_hull(self):
        z = Zonotope(np.zeros(2), np.eye(2))
        assert not contains_point(z, np.array([1.5, 0.0]))

    def test_point_zonotope(self):
        z = Zonotope.point([1.0, 2.0])
        assert contains_point(z, [1.0, 2.0])
        assert not contains_point(z, [1.0, 2.1])


class TestFrobeniusRadius:
    def test_examples(self):
        assert frobenius_radius(Zonotope.point([0.0, 0.0])) == 0.0
        assert frobenius_radius(Zonotope(np.zeros(1), np.array([[1.0]]))) == 1.0
        assert frobenius_radius(Zonotope(np.zeros(2), np.eye(2))) == pytest.approx(np.sqrt(2.0))

    def test_permutation_and_sign_invariance(self):
        rng = np.random.default_rng(10)
        z = random_zonotope(rng, 3, 6)
        perm = rng.permutation(6)
        signs = rng.choice([-1.0, 1.0], size=6)
        z2 = Zonotope(z.center, z.generators[:, perm] * signs)
        assert frobenius_radius(z2) == pytest.approx(frobenius_radius(z), rel=1e-15)
