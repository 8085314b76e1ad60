"""Latent linear dynamics, residual error bounds, and certificate-head fitting.

Everything here is closed-form least squares and empirical quantiles over a
dataset of latent codes: the dynamics model z+ = A z + B u, the directed and
box bounds on its one-step residual, the worst-case encoding/prediction gap
over a validation set, and linear probes from latent codes to physical
safety margins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .certificates import BarrierHead
from .setnn import Mlp, forward_point_batch

QUANTILE = 0.995


@dataclass(frozen=True, eq=False)
class LatentDynamics:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError("B rows must match A")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("dynamics entries must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_z(self) -> int:
        return self.a.shape[0]

    def predict(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        return z @ self.a.T + u @ self.b.T if z.ndim == 2 else self.a @ z + self.b @ u


@dataclass(frozen=True)
class ErrorBounds:
    """Per-head residual bounds plus the global worst-case conjugacy gap."""

    eps_dir: dict[str, float]
    eps_box: dict[str, float]
    eps_conj: float

    def transfer_margin(self, head: BarrierHead) -> float:
        """eps_dir - ||w|| * eps_conj; nonnegative means the one-step safety
        transfer to the physical system is formally covered."""
        return self.eps_dir[head.name] - head.lipschitz * self.eps_conj


def fit_latent_dynamics(z: np.ndarray, u: np.ndarray, z_next: np.ndarray) -> LatentDynamics:
    """Least-squares (A, B) minimizing sum ||A z + B u - z_next||^2.

    Requires at least n_z + n_u samples and a full-rank [z, u] regressor;
    rank deficiency raises with the observed rank named.
    """
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    z_next = np.asarray(z_next, dtype=np.float64)
    reg = np.hstack([z, u])
    n_cols = reg.shape[1]
    if reg.shape[0] < n_cols:
        raise ValueError(f"need at least {n_cols} samples, got {reg.shape[0]}")
    rank = np.linalg.matrix_rank(reg)
    if rank < n_cols:
        raise ValueError(f"rank-deficient regressor: rank {rank} < {n_cols}")
    theta, *_ = np.linalg.lstsq(reg, z_next, rcond=None)
    theta = theta.T
    return LatentDynamics(theta[:, : z.shape[1]], theta[:, z.shape[1]:])


def residuals(dynamics: LatentDynamics, z: np.ndarray, u: np.ndarray,
              z_next: np.ndarray) -> np.ndarray:
    """One-step prediction residuals z_next - (A z + B u), one row per sample."""
    return np.asarray(z_next) - dynamics.predict(np.asarray(z), np.asarray(u))


def directed_bound(head: BarrierHead, res: np.ndarray, quantile: float = QUANTILE) -> float:
    """High quantile of |w @ r| over the residual dataset (linear interpolation)."""
    res = np.asarray(res, dtype=np.float64)
    if res.size == 0:
        raise ValueError("residual dataset is empty")
    return float(np.quantile(np.abs(res @ head.w), quantile, method="linear"))


def box_bound(head: BarrierHead, res: np.ndarray, quantile: float = QUANTILE) -> float:
    """Conservative |w| @ eps_dyn bound with per-dimension residual quantiles."""
    res = np.asarray(res, dtype=np.float64)
    if res.size == 0:
        raise ValueError("residual dataset is empty")
    eps_dyn = np.quantile(np.abs(res), quantile, axis=0, method="linear")
    return float(np.abs(head.w) @ eps_dyn)


def conjugacy_error(encoder: Mlp, dynamics: LatentDynamics, x: np.ndarray,
                    u: np.ndarray, x_next: np.ndarray) -> float:
    """Worst-case ||E(x_next) - (A E(x) + B u)|| over the validation triples."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("validation set is empty")
    z, _ = forward_point_batch(encoder, x)
    z_next, _ = forward_point_batch(encoder, x_next)
    gap = z_next - dynamics.predict(z, u)
    return float(np.linalg.norm(gap, axis=1).max())


@dataclass(frozen=True)
class HeadFit:
    head: BarrierHead
    r: float


def _fit_linear_probe(codes: np.ndarray, target: np.ndarray):
    reg = np.hstack([codes, np.ones((codes.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(reg, target, rcond=None)
    pred = reg @ coef
    denom = np.std(pred) * np.std(target)
    r = float(np.corrcoef(pred, target)[0, 1]) if denom > 0 else 0.0
    return coef[:-1], float(coef[-1]), r


def fit_heads(codes: np.ndarray, margins: dict[str, np.ndarray]) -> dict[str, HeadFit]:
    """Least-squares linear probes from codes to signed physical margins.

    ``margins`` maps head name to the per-sample margin target (positive =
    safe). Returns fitted heads (error bounds zero, to be attached later)
    with the fit correlation R.
    """
    codes = np.asarray(codes, dtype=np.float64)
    out = {}
    for name, target in margins.items():
        target = np.asarray(target, dtype=np.float64).reshape(-1)
        if target.size != codes.shape[0]:
            raise ValueError(f"margin target for {name} has wrong length")
        w, b, r = _fit_linear_probe(codes, target)
        out[name] = HeadFit(BarrierHead(name, w, b), r)
    return out


def attach_bounds(head: BarrierHead, res: np.ndarray,
                  quantile: float = QUANTILE) -> BarrierHead:
    """Return a copy of the head with directed/box bounds from the residuals."""
    return BarrierHead(
        head.name, head.w, head.b,
        eps_dir=directed_bound(head, res, quantile),
        eps_box=box_bound(head, res, quantile),
    )
