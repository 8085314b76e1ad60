"""Linear barrier heads over the latent space and their evaluation modes.

Each head is a linear certificate h(z) = w @ z + b whose nonnegativity means
"safe". Three evaluations exist: at a single latent point, over the worst
case of a latent zonotope (exact via the zonotope support formula), and at a
point minus a fixed margin. The gap between point and worst-case evaluation
is the spread; a blind spot is a step where the point value claims safety
while the worst case does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .zonoset import Zonotope, linear_min

HEAD_NAMES = ("h_z", "h_y", "h_E")
MODE_SET = "set"
MODE_POINT = "point"
MODE_MARGIN = "margin"


@dataclass(frozen=True, eq=False)
class BarrierHead:
    """Linear certificate with its error bounds and Lipschitz constant (= ||w||)."""

    name: str
    w: np.ndarray
    b: float
    eps_dir: float = 0.0
    eps_box: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)) or not np.isfinite(self.b):
            raise ValueError("head parameters must be finite")
        if self.eps_dir < 0 or self.eps_box < 0:
            raise ValueError("error bounds must be nonnegative")
        if self.eps_dir > self.eps_box + 1e-12:
            raise ValueError(
                f"directed bound {self.eps_dir} exceeds box bound {self.eps_box}"
            )
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.w))


@dataclass(frozen=True)
class EvalMode:
    """How the heads enter the controller: set | point | margin (fixed delta)."""

    kind: str
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in (MODE_SET, MODE_POINT, MODE_MARGIN):
            raise ValueError(f"unknown evaluation mode {self.kind!r}")
        if self.kind == MODE_MARGIN:
            if self.delta is None or self.delta < 0:
                raise ValueError("margin mode needs delta >= 0")
        elif self.delta is not None:
            raise ValueError("delta is only meaningful in margin mode")


@dataclass(frozen=True)
class HeadReport:
    h_point: float
    h_set: float
    spread: float
    safe_point: bool
    safe_set: bool
    blind_spot: bool


@dataclass(frozen=True)
class CertReport:
    """Per-head point/set values for one latent zonotope, keyed by head name."""

    heads: dict[str, HeadReport]

    def __getitem__(self, name: str) -> HeadReport:
        return self.heads[name]


def eval_point(head: BarrierHead, z_center) -> float:
    z = np.asarray(z_center, dtype=np.float64).reshape(-1)
    if z.size != head.w.size:
        raise ValueError("latent point dimension mismatch")
    return float(head.w @ z) + head.b


def eval_set(head: BarrierHead, z: Zonotope) -> float:
    """Exact minimum of the head over the zonotope."""
    return linear_min(head.w, head.b, z)


def eval_margin(head: BarrierHead, z_center, delta: float) -> float:
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return eval_point(head, z_center) - delta


def spread(head: BarrierHead, z: Zonotope) -> float:
    """Point-minus-worst-case gap: sum_j |w @ G_j| >= 0."""
    if z.dim != head.w.size:
        raise ValueError("latent zonotope dimension mismatch")
    return float(np.abs(head.w @ z.generators).sum())


def report(heads, z: Zonotope) -> CertReport:
    """Evaluate every head at the zonotope center and over the full set.

    The reported spread is computed as h_point - h_set so the identity is
    exact in floating point; it matches :func:`spread` to rounding.
    """
    out = {}
    for head in heads:
        h_point = eval_point(head, z.center)
        h_set = eval_set(head, z)
        gap = h_point - h_set
        safe_point = h_point >= 0.0
        safe_set = h_set >= 0.0
        out[head.name] = HeadReport(
            h_point=h_point,
            h_set=h_set,
            spread=gap,
            safe_point=safe_point,
            safe_set=safe_set,
            blind_spot=safe_point and not safe_set,
        )
    return CertReport(out)
