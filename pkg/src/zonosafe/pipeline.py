"""End-to-end assembly: train the networks, then fit everything around them.

The fitting stage is closed-form and reusable on its own (``fit_model``):
encode the dataset, refit the latent dynamics by least squares, compute the
directed/box residual bounds, fit the barrier heads on near-gate latent
codes, measure the worst-case conjugacy gap on near-gate validation steps,
and record fit quality (including the raw 16D probe baseline) in the model
metadata.
"""

from __future__ import annotations

import numpy as np

from .certificates import HEAD_NAMES
from .config import AppConfig
from .latentmodel import (
    attach_bounds,
    conjugacy_error,
    fit_heads,
    fit_latent_dynamics,
    residuals,
)
from .modelio import ErrorBounds, LatentSafetyModel
from .setnn import forward_point_batch
from .simlab import raw_state_probe
from .trainer import TrainResult, dataset_arrays, head_margins, train


def near_gate_mask(x: np.ndarray, cfg: AppConfig) -> np.ndarray:
    return np.abs(x[:, 0] - cfg.gate.x_plane) <= cfg.heads.near_gate_halfwidth


def fit_model(result: TrainResult, samples, cfg: AppConfig,
              manifest: dict | None = None) -> LatentSafetyModel:
    """Closed-form fits on top of a trained encoder; deterministic."""
    x, u, x_next, teacher = dataset_arrays(samples)
    z, _ = forward_point_batch(result.encoder, x)
    z_next, _ = forward_point_batch(result.encoder, x_next)

    dynamics = fit_latent_dynamics(z, u, z_next)

    mask = near_gate_mask(x, cfg)
    if mask.sum() < cfg.n_z + 2:
        raise ValueError(
            f"only {int(mask.sum())} near-gate samples; need at least {cfg.n_z + 2}"
        )
    # Heads, residual bounds, and the conjugacy gap are all evaluated on the
    # near-gate window where the certificates are meant to hold.
    res = residuals(dynamics, z[mask], u[mask], z_next[mask])
    e_max = cfg.swing_energy_budget()
    fits = fit_heads(z[mask], head_margins(teacher[mask], e_max))
    heads = tuple(
        attach_bounds(fits[name].head, res, cfg.heads.quantile) for name in HEAD_NAMES
    )

    eps_conj = conjugacy_error(result.encoder, dynamics,
                               x[mask], u[mask], x_next[mask])
    bounds = ErrorBounds(
        eps_dir={h.name: h.eps_dir for h in heads},
        eps_box={h.name: h.eps_box for h in heads},
        eps_conj=eps_conj,
    )
    meta = {
        "e_max": e_max,
        "near_gate_samples": int(mask.sum()),
        "head_fit_r": {name: fits[name].r for name in HEAD_NAMES},
        "raw_probe_r": raw_state_probe(x, teacher, e_max),
        "transfer_margins": {h.name: bounds.transfer_margin(h) for h in heads},
        "head_targets": {
            "h_z": "vertical load clearance [m]",
            "h_y": "lateral load clearance [m]",
            "h_E": "swing energy budget minus swing energy [J]",
        },
        "final_loss": result.history[-1] if result.history else None,
    }
    if manifest is not None:
        meta["dataset"] = manifest
    return LatentSafetyModel(
        encoder=result.encoder,
        decoder=result.decoder,
        teacher_w=result.teacher_w,
        teacher_b=result.teacher_b,
        dynamics=dynamics,
        heads=heads,
        bounds=bounds,
        meta=meta,
    )


def train_and_fit(samples, cfg: AppConfig,
                  manifest: dict | None = None) -> tuple[LatentSafetyModel, list[dict]]:
    result = train(samples, cfg)
    return fit_model(result, samples, cfg, manifest), result.history
