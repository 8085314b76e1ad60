"""Exact zonotope arithmetic and sound set-propagation primitives.

A zonotope ``<c, G>`` is the set ``{c + G @ beta : beta in [-1, 1]^q}``. It is
closed under affine maps, and the minimum of a linear function over it has a
closed form, which is what makes worst-case certificate evaluation exact.
Element-wise tanh is handled by a sound chord-slope enclosure.

All operations are pure; ``Zonotope`` values are immutable after construction
and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend


@dataclass(frozen=True, eq=False)
class Zonotope:
    """Center ``c`` (n,) plus generator matrix ``G`` (n, q); q may be zero."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = np.array(self.center, dtype=np.float64, copy=True).reshape(-1)
        g = np.array(self.generators, dtype=np.float64, copy=True)
        if g.ndim == 1:
            g = g.reshape(1, -1) if c.size == 1 else g.reshape(-1, 1)
        if g.ndim != 2:
            raise ValueError(f"generators must be 2-D, got ndim={g.ndim}")
        if g.shape[0] != c.size:
            raise ValueError(f"generator rows {g.shape[0]} != center dim {c.size}")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(g)):
            raise ValueError("zonotope entries must be finite")
        c.flags.writeable = False
        g.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", g)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    @classmethod
    def point(cls, center) -> "Zonotope":
        c = np.asarray(center, dtype=np.float64).reshape(-1)
        return cls(c, np.zeros((c.size, 0)))

    @classmethod
    def from_box(cls, center, half_widths) -> "Zonotope":
        """Axis-aligned box as a zonotope with diagonal generators."""
        c = np.asarray(center, dtype=np.float64).reshape(-1)
        h = np.asarray(half_widths, dtype=np.float64).reshape(-1)
        if h.size != c.size:
            raise ValueError("half_widths dimension mismatch")
        return cls(c, np.diag(h))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("interval bounds must be finite")
        if self.lo > self.hi:
            raise ValueError(f"interval lo {self.lo} > hi {self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _check_dim(w: np.ndarray, z: Zonotope, what: str):
    if w.shape[-1] != z.dim:
        raise ValueError(f"{what}: dimension {w.shape[-1]} != zonotope dim {z.dim}")


def linear_min(w, b: float, z: Zonotope) -> float:
    """Exact minimum of ``w @ x + b`` over the zonotope: w@c + b - sum_j |w@G_j|."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    _check_dim(w, z, "linear_min")
    return float(w @ z.center) + b - float(np.abs(w @ z.generators).sum())


def linear_max(w, b: float, z: Zonotope) -> float:
    """Exact maximum of ``w @ x + b`` over the zonotope (support function)."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    _check_dim(w, z, "linear_max")
    return float(w @ z.center) + b + float(np.abs(w @ z.generators).sum())


def affine_map(W, b, z: Zonotope) -> Zonotope:
    """Exact image ``<W c + b, W G>`` of the zonotope under x -> W x + b."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if W.ndim != 2:
        raise ValueError("affine_map: W must be a matrix")
    if W.shape[1] != z.dim:
        raise ValueError(f"affine_map: W columns {W.shape[1]} != zonotope dim {z.dim}")
    if b.size != W.shape[0]:
        raise ValueError("affine_map: bias dimension mismatch")
    return Zonotope(W @ z.center + b, W @ z.generators)


def hull_bounds(z: Zonotope):
    """Per-dimension hull as a pair of arrays (lo, hi)."""
    radius = np.abs(z.generators).sum(axis=1)
    return z.center - radius, z.center + radius


def interval_hull(z: Zonotope) -> list[Interval]:
    """Tight axis-aligned bounding box, one interval per dimension."""
    lo, hi = hull_bounds(z)
    return [Interval(float(l), float(h)) for l, h in zip(lo, hi)]


def tanh_enclosure(z: Zonotope) -> Zonotope:
    """Sound enclosure of the element-wise tanh image of the zonotope.

    Per dimension with hull [l, u] the chord slope m and error extremes
    [e_lo, e_hi] of tanh(x) - m*x give the output
    ``< m*c + (e_hi+e_lo)/2, [m*G, diag((e_hi-e_lo)/2)] >`` with q + n
    generators. Every point of ``tanh(z)`` lies inside it.
    """
    lo, hi = hull_bounds(z)
    m, e_lo, e_hi = _backend.tanh_chord_params(lo, hi)
    m = np.asarray(m)
    center = m * z.center + 0.5 * (e_hi + e_lo)
    gens = np.hstack([m[:, None] * z.generators, np.diag(0.5 * (e_hi - e_lo))])
    return Zonotope(center, gens)


def _box_lsq(g: np.ndarray, d: np.ndarray, max_iter: int = 1000) -> np.ndarray:
    """Minimize ||g beta - d|| over the box [-1, 1]^q (bounded-variable LS).

    Active-set iteration: solve the free subproblem, walk toward it until a
    bound clamps, release clamped variables whose multiplier sign says the
    objective would improve. Finite and exact for these small systems.
    """
    q = g.shape[1]
    beta = np.zeros(q)
    clamped = np.zeros(q, dtype=bool)
    for _ in range(max_iter):
        free = ~clamped
        cand = beta.copy()
        if free.any():
            rhs = d - g[:, clamped] @ beta[clamped]
            sol, *_ = np.linalg.lstsq(g[:, free], rhs, rcond=None)
            cand[free] = sol
        delta = cand - beta
        t, idx, bound = 1.0, None, 0.0
        for j in np.where(free & (np.abs(cand) > 1.0))[0]:
            target = 1.0 if cand[j] > 1.0 else -1.0
            tj = (target - beta[j]) / delta[j]
            if tj < t:
                t, idx, bound = tj, j, target
        beta = beta + t * delta
        if idx is not None:
            beta[idx] = bound
            clamped[idx] = True
            continue
        grad = g.T @ (g @ beta - d)
        release = clamped & (beta * grad > 1e-14)
        if release.any():
            clamped[release] = False
            continue
        return beta
    return beta


def contains_point(z: Zonotope, p, tol: float = 1e-9) -> bool:
    """Feasibility check: does some beta in [-1,1]^q give ||c + G beta - p||_inf <= tol?

    Solved by a small box-constrained least-squares search; test-support
    utility, not on any hot path.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    _check_dim(p, z, "contains_point")
    d = p - z.center
    g = z.generators
    if g.shape[1] == 0:
        return bool(np.max(np.abs(d), initial=0.0) <= tol)
    beta, *_ = np.linalg.lstsq(g, d, rcond=None)
    if np.max(np.abs(beta)) <= 1.0 and np.max(np.abs(g @ beta - d)) <= tol:
        return True
    beta = _box_lsq(g, d)
    return bool(np.max(np.abs(g @ beta - d)) <= tol)


def frobenius_radius(z: Zonotope) -> float:
    """Frobenius norm of the generator matrix; a scalar size proxy for the set."""
    return float(np.linalg.norm(z.generators, "fro"))


def sample_points(z: Zonotope, n: int, rng: np.random.Generator) -> np.ndarray:
    """n random points of the zonotope (uniform beta), rows are points."""
    beta = rng.uniform(-1.0, 1.0, size=(n, z.num_generators))
    return z.center + beta @ z.generators.T
