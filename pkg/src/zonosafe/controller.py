"""Safety filter: state zonotope, set-valued certificate terms, and the QP.

Per control step the filter builds the state uncertainty zonotope, pushes it
through the encoder, evaluates each barrier head's worst case (or its center
value, depending on the evaluation mode), assembles one linear constraint per
head, and solves a tiny strictly convex QP that stays as close as possible to
the nominal command. The QP is solved exactly by enumerating candidate active
sets and checking KKT conditions; an infeasible problem falls back to
minimizing the worst constraint violation over the command box.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .certificates import (
    MODE_MARGIN,
    MODE_POINT,
    MODE_SET,
    CertReport,
    EvalMode,
    report,
)
from .config import AppConfig
from .modelio import LatentSafetyModel
from .plant import PlantState, lie_g_fd_multi
from .setnn import forward_set
from .zonoset import Zonotope

_DUAL_TOL = 1e-10
_FEAS_TOL = 1e-10
FALLBACK_REG = 1e-6


def build_state_zonotope(x: PlantState, eps: np.ndarray) -> Zonotope:
    """Diagonal uncertainty box around the state estimate."""
    eps = np.asarray(eps, dtype=np.float64).reshape(-1)
    if eps.size != 16 or np.any(eps < 0):
        raise ValueError("budget must be 16 nonnegative half-widths")
    return Zonotope(x.to_vector(), np.diag(eps))


def cbf_terms(z: Zonotope, head, dynamics, alpha: float, joint: bool = False):
    """Worst-case barrier value and drift term over the latent zonotope.

    Split form returns ``(h_min, lf_min)`` evaluated separately (sound, may
    be conservative). Joint form returns the exact worst case of their sum,
    reported as ``(h_min, joint_min - alpha * h_min)`` so that
    ``lf + alpha*h`` reconstructs it.
    """
    w = head.w
    d = dynamics.a.T @ w
    h_center = float(w @ z.center) + head.b
    h_min = h_center - float(np.abs(w @ z.generators).sum())
    if not joint:
        lf_min = float(d @ z.center) - float(np.abs(d @ z.generators).sum())
        return h_min, lf_min
    dj = d + alpha * w
    joint_min = (float(dj @ z.center) - float(np.abs(dj @ z.generators).sum())
                 + alpha * head.b)
    return h_min, joint_min - alpha * h_min


@dataclass(frozen=True)
class QpResult:
    mu_safe: np.ndarray
    active_set: tuple[int, ...]
    objective: float
    feasible: bool
    kkt_residual: float


def _kkt_residual(h_diag, f, rows, consts, mu, lam, active):
    grad = h_diag * mu + f
    for j, i in enumerate(active):
        grad = grad - lam[j] * rows[i]
    stationarity = float(np.max(np.abs(grad), initial=0.0))
    slack = rows @ mu + consts if len(rows) else np.zeros(0)
    primal = float(max(0.0, -slack.min())) if len(rows) else 0.0
    dual = float(max(0.0, -lam.min())) if len(lam) else 0.0
    comp = float(max((abs(lam[j] * slack[i]) for j, i in enumerate(active)), default=0.0))
    return max(stationarity, primal, dual, comp)


def _active_set_qp(h_diag, f, rows, consts):
    """Minimize 0.5 mu' diag(h) mu + f' mu s.t. rows @ mu + consts >= 0.

    Strictly convex (h > 0), so any KKT point is the unique global optimum;
    candidate active sets are enumerated smallest-first and the first one
    passing primal and dual feasibility is returned. Singular candidate
    systems are skipped.
    """
    n = f.size
    m = len(rows)
    for size in range(0, n + 1):
        for active in combinations(range(m), size):
            if size == 0:
                mu = -f / h_diag
                lam = np.zeros(0)
            else:
                a_act = rows[list(active)]
                kkt = np.zeros((n + size, n + size))
                kkt[:n, :n] = np.diag(h_diag)
                kkt[:n, n:] = -a_act.T
                kkt[n:, :n] = a_act
                rhs = np.concatenate([-f, -consts[list(active)]])
                try:
                    sol = np.linalg.solve(kkt, rhs)
                except np.linalg.LinAlgError:
                    continue
                mu, lam = sol[:n], sol[n:]
            if m and np.min(rows @ mu + consts) < -_FEAS_TOL:
                continue
            if lam.size and lam.min() < -_DUAL_TOL:
                continue
            return mu, lam, tuple(active)
    return None


def solve_qp(mu_nom, constraints, bounds: float) -> QpResult:
    """Project the nominal command onto the constraint polytope.

    ``constraints`` is a list of (a, c) meaning ``a @ mu + c >= 0``; the box
    ``|mu_i| <= bounds`` is always added. Infeasible problems return
    ``feasible=False`` with the least-violation command (worst violation
    minimized over the box, nearest-to-nominal tie-break).
    """
    mu_nom = np.asarray(mu_nom, dtype=np.float64).reshape(-1)
    n = mu_nom.size
    if len(constraints) > n:
        raise ValueError(f"at most {n} certificate constraints supported")
    rows_list = []
    consts_list = []
    for a, c in constraints:
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if a.size != n:
            raise ValueError("constraint row dimension mismatch")
        rows_list.append(a)
        consts_list.append(float(c))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        rows_list.extend([e, -e])
        consts_list.extend([bounds, bounds])
    rows = np.asarray(rows_list)
    consts = np.asarray(consts_list)

    h_diag = np.full(n, 2.0)
    f = -2.0 * mu_nom
    sol = _active_set_qp(h_diag, f, rows, consts)
    if sol is not None:
        mu, lam, active = sol
        objective = float(((mu - mu_nom) ** 2).sum())
        res = _kkt_residual(h_diag, f, rows, consts, mu, lam, active)
        return QpResult(mu, active, objective, True, res)

    # Epigraph fallback: minimize the worst violation t over the box, with a
    # pull toward the nominal command that keeps the minimizer unique and
    # tempers corner-seeking when the constraint rows are nearly flat.
    reg = FALLBACK_REG
    h_aug = np.concatenate([np.full(n, 2.0 * reg), [2.0]])
    f_aug = np.concatenate([-2.0 * reg * mu_nom, [0.0]])
    rows_aug = []
    consts_aug = []
    for a, c in zip(rows[: len(constraints)], consts[: len(constraints)]):
        rows_aug.append(np.concatenate([a, [1.0]]))
        consts_aug.append(c)
    t_row = np.zeros(n + 1)
    t_row[n] = 1.0
    rows_aug.append(t_row)
    consts_aug.append(0.0)
    for k in range(n):
        e = np.zeros(n + 1)
        e[k] = 1.0
        rows_aug.extend([e, -e])
        consts_aug.extend([bounds, bounds])
    sol = _active_set_qp(h_aug, f_aug, np.asarray(rows_aug), np.asarray(consts_aug))
    if sol is None:
        raise RuntimeError("active-set enumeration failed on the fallback problem")
    mu = sol[0][:n]
    objective = float(((mu - mu_nom) ** 2).sum())
    return QpResult(mu, sol[2], objective, False, float("nan"))


@dataclass(frozen=True)
class SafeInputResult:
    qp: QpResult
    report: CertReport
    rows: np.ndarray
    consts: np.ndarray
    latent: Zonotope
    encode_seconds: float
    certqp_seconds: float


def safe_input(x: PlantState, mu_nom, model: LatentSafetyModel, cfg: AppConfig,
               mode: EvalMode) -> SafeInputResult:
    """One step of the safety filter.

    Always encodes the full uncertainty set (the point modes use its center),
    so every step reports both point and worst-case certificate values. The
    evaluation mode only changes which values enter the QP constraints:
    worst case for ``set``, center for ``point``, center minus the fixed
    delta (barrier term only) for ``margin``.
    """
    t0 = time.perf_counter()
    state_zono = build_state_zonotope(x, cfg.budget_vector())
    latent = forward_set(model.encoder, state_zono)
    t1 = time.perf_counter()

    cert = report(model.heads, latent)
    alpha = cfg.controller.alpha
    joint = cfg.controller.cbf_form == "joint"
    if cfg.controller.lg_source == "fd":
        rows = lie_g_fd_multi(x, model.heads, model.encoder, cfg.plant,
                              cfg.controller.lg_delta)
    else:
        rows = np.array([model.dynamics.b.T @ head.w for head in model.heads])

    consts = np.empty(len(model.heads))
    for i, head in enumerate(model.heads):
        h_min, lf_min = cbf_terms(latent, head, model.dynamics, alpha, joint=joint)
        d = model.dynamics.a.T @ head.w
        lf_center = float(d @ latent.center)
        h_center = cert[head.name].h_point
        if mode.kind == MODE_SET:
            h_used, lf_used = h_min, lf_min
        elif mode.kind == MODE_POINT:
            h_used, lf_used = h_center, lf_center
        else:
            h_used, lf_used = h_center - mode.delta, lf_center
        consts[i] = lf_used + alpha * h_used - head.eps_dir

    qp = solve_qp(mu_nom, list(zip(rows, consts)), cfg.plant.mu_max)
    t2 = time.perf_counter()
    return SafeInputResult(qp, cert, rows, consts, latent,
                           encode_seconds=t1 - t0, certqp_seconds=t2 - t1)


def nominal_input(x: PlantState, waypoint, cfg: AppConfig) -> np.ndarray:
    """Cruise toward the waypoint: velocity tracking on x (speed ramped down
    near the waypoint), position-plus-damping on y/z, clamped per axis."""
    waypoint = np.asarray(waypoint, dtype=np.float64).reshape(-1)
    sim = cfg.sim
    dx = waypoint[0] - x.p[0]
    v_des = sim.cruise * float(np.clip(dx / sim.slow_radius, -1.0, 1.0))
    mu = np.array([
        sim.kd_nom * (v_des - x.v[0]),
        sim.kp_nom * (waypoint[1] - x.p[1]) - sim.kd_nom * x.v[1],
        sim.kp_nom * (waypoint[2] - x.p[2]) - sim.kd_nom * x.v[2],
    ])
    return np.clip(mu, -cfg.plant.mu_max, cfg.plant.mu_max)
