"""16D quadrotor + spherical-pendulum slung-load dynamics at 50 Hz.

State ordering: position (3), velocity (3), Euler angles phi/theta/psi (3),
body rates (3), pendulum polar angle alpha, azimuth beta, and their rates.
The outer-loop input is an acceleration command; an inner PD loop tracks the
tilt implied by it. The load hangs on a rigid rod and is driven one-way by
the quad acceleration (no tension back-reaction on the quad, a deliberate
simplification for the 0.3 mass ratio).

Integration is classical RK4 with the attitude PD evaluated inside each
stage; the step is a pure, deterministic function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .setnn import Mlp, forward_point


@dataclass(frozen=True, eq=False)
class PlantParams:
    m_q: float = 1.0
    m_l: float = 0.3
    l_rod: float = 0.8
    g: float = 9.81
    dt: float = 0.02
    kp_att: float = 20.0
    kd_att: float = 6.0
    mu_max: float = 6.0
    tilt_max: float = math.radians(30.0)
    r_quad: float = 0.15
    r_load: float = 0.05
    sin_alpha_tol: float = 1e-6

    def __post_init__(self):
        for name in ("m_q", "m_l", "l_rod", "g", "dt", "kp_att", "kd_att",
                     "mu_max", "tilt_max", "r_quad", "r_load", "sin_alpha_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"plant parameter {name} must be positive")

    def kernel_tuple(self):
        return (self.g, self.dt, self.kp_att, self.kd_att, self.mu_max,
                self.tilt_max, self.l_rod, self.sin_alpha_tol)


@dataclass(frozen=True, eq=False)
class GateSpec:
    x_plane: float = 10.0
    half_width: float = 0.6
    half_height: float = 0.6
    center_y: float = 0.0
    center_z: float = 2.0

    def __post_init__(self):
        if self.half_width <= 0 or self.half_height <= 0:
            raise ValueError("gate opening must be positive")


@dataclass(frozen=True, eq=False)
class PlantState:
    p: np.ndarray
    v: np.ndarray
    euler: np.ndarray
    omega: np.ndarray
    alpha: float
    beta: float
    alpha_dot: float
    beta_dot: float

    def __post_init__(self):
        for name in ("p", "v", "euler", "omega"):
            vec = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if vec.size != 3:
                raise ValueError(f"{name} must have 3 components")
            object.__setattr__(self, name, vec)
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("state entries must be finite")
        if abs(self.alpha) >= math.pi:
            raise ValueError("|alpha| must stay below pi")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.p, self.v, self.euler, self.omega,
            [self.alpha, self.beta, self.alpha_dot, self.beta_dot],
        ])

    @classmethod
    def from_vector(cls, vec) -> "PlantState":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != 16:
            raise ValueError("state vector must have 16 entries")
        return cls(p=vec[0:3], v=vec[3:6], euler=vec[6:9], omega=vec[9:12],
                   alpha=float(vec[12]), beta=float(vec[13]),
                   alpha_dot=float(vec[14]), beta_dot=float(vec[15]))

    @classmethod
    def hover(cls, p=(0.0, 0.0, 2.0)) -> "PlantState":
        return cls(p=np.asarray(p, dtype=np.float64), v=np.zeros(3),
                   euler=np.zeros(3), omega=np.zeros(3),
                   alpha=0.0, beta=0.0, alpha_dot=0.0, beta_dot=0.0)


def rod_direction(alpha: float, beta: float) -> np.ndarray:
    """Unit vector from pivot to load; straight down at alpha = 0."""
    sa, ca = math.sin(alpha), math.cos(alpha)
    return np.array([sa * math.cos(beta), sa * math.sin(beta), -ca])


def load_position(s: PlantState, params: PlantParams) -> np.ndarray:
    return s.p + params.l_rod * rod_direction(s.alpha, s.beta)


def swing_energy(s: PlantState, params: PlantParams) -> float:
    """Pendulum mechanical energy relative to the straight-down configuration."""
    kin = 0.5 * params.m_l * params.l_rod ** 2 * (
        s.alpha_dot ** 2 + math.sin(s.alpha) ** 2 * s.beta_dot ** 2
    )
    pot = params.m_l * params.g * params.l_rod * (1.0 - math.cos(s.alpha))
    return kin + pot


def step(s: PlantState, mu, params: PlantParams) -> PlantState:
    """Advance one dt under a held (per-axis clamped) acceleration command."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if mu.size != 3 or not np.all(np.isfinite(mu)):
        raise ValueError("command must be a finite 3-vector")
    out = _backend.plant_rk4(s.to_vector(), mu, params.kernel_tuple())
    return PlantState.from_vector(out)


def step_vector(vec: np.ndarray, mu: np.ndarray, params: PlantParams) -> np.ndarray:
    """Raw-array variant of :func:`step` for hot loops (same semantics)."""
    return _backend.plant_rk4(vec, mu, params.kernel_tuple())


@dataclass(frozen=True)
class GateEvent:
    """Outcome of one step's gate-plane crossing check.

    kind is 'not_at_gate', 'passed' or 'collision'. ``crossed`` lists the
    bodies ('quad'/'load') whose x coordinate crossed the plane during the
    step; on a collision, ``body``/``axis`` name the first offender.
    """

    kind: str
    crossed: tuple[str, ...] = ()
    body: str | None = None
    axis: str | None = None


def _crossing_fraction(x0: float, x1: float, plane: float):
    if x0 == x1 or (x0 - plane) * (x1 - plane) > 0:
        return None
    return (plane - x0) / (x1 - x0)


def gate_crossing_check(prev: PlantState, nxt: PlantState, gate: GateSpec,
                        params: PlantParams) -> GateEvent:
    """Check whether quad body or load crossed the gate plane this step.

    Crossing positions are linearly interpolated at the plane; a body passes
    iff its center stays within the opening shrunk by its collision radius.
    The quad is checked before the load when both cross in one step.
    """
    bodies = (
        ("quad", prev.p, nxt.p, params.r_quad),
        ("load", load_position(prev, params), load_position(nxt, params), params.r_load),
    )
    crossed = []
    for name, p0, p1, radius in bodies:
        frac = _crossing_fraction(float(p0[0]), float(p1[0]), gate.x_plane)
        if frac is None:
            continue
        crossed.append(name)
        y = p0[1] + frac * (p1[1] - p0[1])
        z = p0[2] + frac * (p1[2] - p0[2])
        err_y = abs(y - gate.center_y) - (gate.half_width - radius)
        err_z = abs(z - gate.center_z) - (gate.half_height - radius)
        if err_y > 0 or err_z > 0:
            axis = "z" if err_z >= err_y else "y"
            return GateEvent("collision", tuple(crossed), body=name, axis=axis)
    if crossed:
        return GateEvent("passed", tuple(crossed))
    return GateEvent("not_at_gate")


def lie_g_fd_multi(s: PlantState, heads, encoder: Mlp, params: PlantParams,
                   delta: float, mu0=None, step_fn=None) -> np.ndarray:
    """Finite-difference input sensitivities of h(E(.)) composed with the step.

    One central difference per input channel around ``mu0`` (default zero
    command), shared across heads: returns an array (len(heads), 3) whose
    row i approximates the Lie derivative of head i along the input
    directions, i.e. d/dmu of h_i(E(step(s, mu)))/dt.

    ``step_fn(vec, mu) -> vec`` overrides the plant step (surrogate-system
    test harnesses).
    """
    if delta <= 0:
        raise ValueError("finite-difference delta must be positive")
    base = np.zeros(3) if mu0 is None else np.asarray(mu0, dtype=np.float64).reshape(-1)
    vec = s.to_vector()
    kt = params.kernel_tuple()
    if step_fn is None:
        step_fn = lambda v, m: _backend.plant_rk4(v, m, kt)  # noqa: E731
    z_plus = []
    z_minus = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = delta
        z_plus.append(forward_point(encoder, step_fn(vec, base + e)))
        z_minus.append(forward_point(encoder, step_fn(vec, base - e)))
    scale = 1.0 / (2.0 * delta * params.dt)
    rows = np.empty((len(heads), 3))
    for i, head in enumerate(heads):
        for k in range(3):
            rows[i, k] = head.w @ (z_plus[k] - z_minus[k]) * scale
    return rows


def lie_g_fd(s: PlantState, head, encoder: Mlp, params: PlantParams,
             delta: float, mu0=None, step_fn=None) -> np.ndarray:
    """Single-head convenience wrapper around :func:`lie_g_fd_multi`."""
    return lie_g_fd_multi(s, [head], encoder, params, delta, mu0=mu0,
                          step_fn=step_fn)[0]
