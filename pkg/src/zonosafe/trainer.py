"""Dataset generation, teacher features, composite loss, and training.

The encoder/decoder/teacher head (plus an auxiliary latent dynamics pair used
only by the dynamics loss) are trained with Adam on four loss terms:

* reconstruction — decode the latent zonotope of each sample's uncertainty
  box; penalize center error against the input and, weighted by ``tau``, the
  Frobenius radius of the decoded set,
* tightness — squared Frobenius norm of the latent generator matrix,
* dynamics — one-step latent prediction residual,
* teacher — alignment of a linear readout with six hand-crafted safety
  features.

Gradients for the set-valued passes follow the stop-gradient convention of
``setnn`` (chord slopes and error widths held constant); gradients for the
point passes are exact. Training runs on per-dimension standardized inputs
and targets, and the standardization is folded back into the first/last
affine layers of the returned networks, so the artifacts operate on raw
states.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import AppConfig
from .plant import GateSpec, PlantParams, PlantState, load_position, step_vector, swing_energy
from .setnn import (
    DENSE,
    Layer,
    Mlp,
    backward_point_batch,
    backward_set_batch,
    forward_point_batch,
    forward_set_batch,
    init_mlp,
    make_mlp,
)

TEACHER_COLS = ("gate_dist", "vert_clear", "lat_clear", "swing_energy",
                "att_margin", "load_clear")
STATE_COLS = ("px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi",
              "wx", "wy", "wz", "alpha", "beta", "alpha_dot", "beta_dot")
STRATEGIES = ("random", "rollout", "near_gate", "boundary")
_OVERSAMPLE_CAP = 100


@dataclass(frozen=True, eq=False)
class Sample:
    x: PlantState
    u: np.ndarray
    x_next: PlantState
    teacher: np.ndarray


def teacher_features(s: PlantState, gate: GateSpec, params: PlantParams) -> np.ndarray:
    """Six hand-crafted safety features of a state.

    Gate distance along x, vertical and lateral load clearances (opening
    half-extent minus load radius minus offset), pendulum swing energy,
    attitude margin to the tilt clamp, and the min of the two load
    clearances.
    """
    load = load_position(s, params)
    vert = (gate.half_height - params.r_load) - abs(load[2] - gate.center_z)
    lat = (gate.half_width - params.r_load) - abs(load[1] - gate.center_y)
    return np.array([
        gate.x_plane - s.p[0],
        vert,
        lat,
        swing_energy(s, params),
        params.tilt_max - max(abs(s.euler[0]), abs(s.euler[1])),
        min(vert, lat),
    ])


def head_margins(teacher: np.ndarray, e_max: float) -> dict[str, np.ndarray]:
    """Per-head signed margin targets from teacher feature rows."""
    teacher = np.atleast_2d(teacher)
    return {
        "h_z": teacher[:, 1].copy(),
        "h_y": teacher[:, 2].copy(),
        "h_E": e_max - teacher[:, 3],
    }


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------


def _state_bounds(cfg: AppConfig):
    gx = cfg.gate.x_plane
    low = np.array([gx - 7.0, -1.5, 0.8, 0.0, -1.5, -1.5,
                    -0.44, -0.44, -0.17, -1.5, -1.5, -1.5,
                    -0.70, -math.pi, -1.5, -1.5])
    high = np.array([gx + 3.0, 1.5, 3.2, 3.0, 1.5, 1.5,
                     0.44, 0.44, 0.17, 1.5, 1.5, 1.5,
                     0.70, math.pi, 1.5, 1.5])
    return low, high


def _strategy_counts(total: int, mix) -> list[int]:
    counts = [int(round(total * m)) for m in mix]
    counts[-1] = total - sum(counts[:-1])
    if min(counts) < 0:
        raise ValueError(f"strategy mix {mix} infeasible for {total} samples")
    return counts


def _uniform_states(rng, low, high, count):
    return rng.uniform(low, high, size=(count, 16))


def _nominal_command(vec, waypoint, cruise, cfg: AppConfig):
    sim = cfg.sim
    dx = waypoint[0] - vec[0]
    v_des = cruise * np.clip(dx / sim.slow_radius, -1.0, 1.0)
    mu = np.array([
        sim.kd_nom * (v_des - vec[3]),
        sim.kp_nom * (waypoint[1] - vec[1]) + sim.kd_nom * (0.0 - vec[4]),
        sim.kp_nom * (waypoint[2] - vec[2]) + sim.kd_nom * (0.0 - vec[5]),
    ])
    return np.clip(mu, -cfg.plant.mu_max, cfg.plant.mu_max)


def _in_training_envelope(vec) -> bool:
    """Rollout states kept for training: finite, moderate rates, swing well
    inside the (alpha, beta) chart (azimuth rates blow up near the pole)."""
    return bool(
        np.all(np.isfinite(vec))
        and abs(vec[12]) <= 1.0
        and max(abs(vec[14]), abs(vec[15])) <= 2.5
        and np.max(np.abs(vec[3:6])) <= 4.0
        and np.max(np.abs(vec[6:9])) <= 0.7
        and np.max(np.abs(vec[9:12])) <= 3.0
    )


def _rollout_states(rng, cfg: AppConfig, count):
    """Closed-loop snapshots under a randomized cruise controller."""
    gate = cfg.gate
    states = []
    while len(states) < count:
        vec = np.zeros(16)
        vec[0] = gate.x_plane - rng.uniform(2.0, 7.0)
        vec[1] = rng.uniform(-0.3, 0.3)
        vec[2] = gate.center_z + cfg.sim.approach_z_offset + rng.uniform(-0.3, 0.3)
        vec[3] = rng.uniform(2.0, 2.5)
        vec[12] = rng.uniform(0.0, 0.61)
        vec[13] = rng.uniform(-0.79, 0.79)
        vec[14] = rng.uniform(-0.7, 0.7)
        vec[15] = rng.uniform(-0.55, 0.55)
        waypoint = np.array([
            gate.x_plane + cfg.sim.waypoint_beyond,
            gate.center_y + rng.uniform(-0.3, 0.3),
            gate.center_z + cfg.sim.approach_z_offset + rng.uniform(-0.3, 0.3),
        ])
        cruise = cfg.sim.cruise + rng.uniform(-0.25, 0.25)
        for _ in range(150):
            states.append(vec.copy())
            if len(states) >= count or vec[0] > gate.x_plane + 2.0:
                break
            mu = _nominal_command(vec, waypoint, cruise, cfg)
            mu = mu + rng.uniform(-0.5, 0.5, size=3)
            vec = step_vector(vec, mu, cfg.plant)
            if not _in_training_envelope(vec):
                break
    return np.asarray(states[:count])


def _boundary_states(rng, cfg: AppConfig, low, high, count):
    """Uniform states filtered to a small band around zero load clearance."""
    band = 0.1
    kept = []
    drawn = 0
    while len(kept) < count:
        if drawn > _OVERSAMPLE_CAP * max(count, 1):
            raise RuntimeError(
                f"boundary sampling exceeded {_OVERSAMPLE_CAP}x oversampling"
            )
        batch = _uniform_states(rng, low, high, 256)
        drawn += len(batch)
        for vec in batch:
            s = PlantState.from_vector(vec)
            feats = teacher_features(s, cfg.gate, cfg.plant)
            if -band <= feats[5] <= band:
                kept.append(vec)
                if len(kept) >= count:
                    break
    return np.asarray(kept)


def generate_dataset(cfg: AppConfig, seed: int | None = None) -> tuple[list[Sample], dict]:
    """Draw the four-strategy state mix, attach inputs, next states, teacher rows.

    Deterministic under the seed (defaults to ``cfg.train.seed``). Returns the
    samples plus a manifest describing the draw.
    """
    seed = cfg.train.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    low, high = _state_bounds(cfg)
    counts = _strategy_counts(cfg.train.samples, cfg.train.mix)

    blocks = [
        _uniform_states(rng, low, high, counts[0]),
        _rollout_states(rng, cfg, counts[1]),
        _uniform_states(rng, np.where(np.arange(16) == 0, cfg.gate.x_plane - 2.0, low),
                        np.where(np.arange(16) == 0, cfg.gate.x_plane + 2.0, high),
                        counts[2]),
        _boundary_states(rng, cfg, low, high, counts[3]),
    ]
    states = np.vstack([b for b in blocks if len(b)])
    inputs = rng.uniform(-cfg.train.u_sample_max, cfg.train.u_sample_max,
                         size=(len(states), 3))

    samples = []
    dropped = 0
    for vec, mu in zip(states, inputs):
        s = PlantState.from_vector(vec)
        try:
            nxt = PlantState.from_vector(step_vector(vec, mu, cfg.plant))
        except ValueError:
            dropped += 1  # successor left the pendulum chart
            continue
        samples.append(Sample(s, mu.copy(), nxt, teacher_features(s, cfg.gate, cfg.plant)))
    if dropped > 0.01 * len(states):
        raise RuntimeError(f"dropped {dropped}/{len(states)} samples with invalid successors")
    manifest = {
        "seed": seed,
        "size": len(samples),
        "mix": list(cfg.train.mix),
        "counts": dict(zip(STRATEGIES, counts)),
        "dropped": dropped,
    }
    return samples, manifest


def save_dataset(samples, path) -> None:
    """CSV, one row per sample: state, input, next state, teacher features."""
    header = (list(STATE_COLS) + ["ux", "uy", "uz"]
              + [f"next_{c}" for c in STATE_COLS] + list(TEACHER_COLS))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in samples:
            row = np.concatenate([s.x.to_vector(), s.u, s.x_next.to_vector(), s.teacher])
            writer.writerow([f"{v:.17g}" for v in row])


def load_dataset(path) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 41:
            raise ValueError(f"expected 41 dataset columns, got {len(header)}")
        for row in reader:
            vals = np.array([float(v) for v in row])
            samples.append(Sample(
                PlantState.from_vector(vals[0:16]), vals[16:19],
                PlantState.from_vector(vals[19:35]), vals[35:41],
            ))
    return samples


def dataset_arrays(samples):
    x = np.array([s.x.to_vector() for s in samples])
    u = np.array([s.u for s in samples])
    x_next = np.array([s.x_next.to_vector() for s in samples])
    teacher = np.array([s.teacher for s in samples])
    return x, u, x_next, teacher


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ModelParams:
    """Trainable arrays: the two nets, the teacher readout, and (A, B)."""

    encoder: Mlp
    decoder: Mlp
    wt: np.ndarray
    bt: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def to_list(self) -> list[np.ndarray]:
        arrays = []
        for net in (self.encoder, self.decoder):
            for layer in net.layers:
                if layer.kind == DENSE:
                    arrays.extend([layer.w, layer.b])
        arrays.extend([self.wt, self.bt, self.a, self.b])
        return arrays

    def with_arrays(self, arrays) -> "ModelParams":
        arrays = list(arrays)
        nets = []
        idx = 0
        for net in (self.encoder, self.decoder):
            layers = []
            for layer in net.layers:
                if layer.kind == DENSE:
                    layers.append(Layer(DENSE, arrays[idx], arrays[idx + 1]))
                    idx += 2
                else:
                    layers.append(Layer("tanh"))
            nets.append(make_mlp(layers))
        return ModelParams(nets[0], nets[1], arrays[idx], arrays[idx + 1],
                           arrays[idx + 2], arrays[idx + 3])


def init_params(cfg: AppConfig, rng: np.random.Generator) -> ModelParams:
    n_z = cfg.n_z
    dims_enc = [16, *cfg.hidden, n_z]
    dims_dec = [n_z, *reversed(cfg.hidden), 16]
    limit = math.sqrt(6.0 / (n_z + 6))
    return ModelParams(
        encoder=init_mlp(dims_enc, rng),
        decoder=init_mlp(dims_dec, rng),
        wt=rng.uniform(-limit, limit, size=(6, n_z)),
        bt=np.zeros(6),
        a=np.eye(n_z),
        b=np.zeros((n_z, 3)),
    )


def loss_and_grads(params: ModelParams, batch: dict, cfg: AppConfig,
                   eps_vec: np.ndarray, frozen=None):
    """Total loss, per-term breakdown, gradients, and the tanh relaxation
    parameters of this pass (reusable as ``frozen`` to linearize the set
    pass for finite-difference checks)."""
    t = cfg.train
    x, u, x_next, teach = batch["x"], batch["u"], batch["x_next"], batch["teacher"]
    n = x.shape[0]
    frozen_enc, frozen_dec = frozen if frozen is not None else (None, None)

    z, enc_acts = forward_point_batch(params.encoder, x)
    z_next, encn_acts = forward_point_batch(params.encoder, x_next)
    r_dyn = z @ params.a.T + u @ params.b.T - z_next
    loss_dyn = float((r_dyn ** 2).sum() / n)
    r_teach = z @ params.wt.T + params.bt - teach
    loss_teach = float((r_teach ** 2).sum() / n)

    g0 = np.broadcast_to(np.diag(eps_vec), (n, 16, 16)).copy()
    cz, gz, enc_cache, enc_tanh = forward_set_batch(params.encoder, x, g0, frozen_enc)
    loss_tight = float((gz ** 2).sum() / n)
    cd, gd, dec_cache, dec_tanh = forward_set_batch(params.decoder, cz, gz, frozen_dec)
    rec_err = cd - x
    fro = np.sqrt((gd ** 2).sum(axis=(1, 2)))
    loss_rec = float(((1.0 - t.tau) * (rec_err ** 2).sum(axis=1) + t.tau * fro).sum() / n)

    terms = {"rec": loss_rec, "tight": loss_tight, "dyn": loss_dyn,
             "teach": loss_teach, "reg": 0.0}
    total = (t.lambda_rec * loss_rec + t.lambda_tight * loss_tight
             + t.lambda_dyn * loss_dyn + t.lambda_teach * loss_teach)

    # Backward: set path (stop-gradient convention).
    dcd = (t.lambda_rec * 2.0 * (1.0 - t.tau) / n) * rec_err
    safe_fro = np.where(fro > 0.0, fro, 1.0)
    dgd = (t.lambda_rec * t.tau / n) * gd / safe_fro[:, None, None]
    dec_grads, dcz, dgz = backward_set_batch(params.decoder, dec_cache, dcd, dgd)
    dgz = dgz + (t.lambda_tight * 2.0 / n) * gz
    enc_grads_set, _, _ = backward_set_batch(params.encoder, enc_cache, dcz, dgz)

    # Backward: point paths (exact).
    dz = (t.lambda_dyn * 2.0 / n) * (r_dyn @ params.a) \
        + (t.lambda_teach * 2.0 / n) * (r_teach @ params.wt)
    enc_grads_pt, _ = backward_point_batch(params.encoder, enc_acts, dz)
    dz_next = -(t.lambda_dyn * 2.0 / n) * r_dyn
    enc_grads_next, _ = backward_point_batch(params.encoder, encn_acts, dz_next)

    da = (t.lambda_dyn * 2.0 / n) * (r_dyn.T @ z)
    db = (t.lambda_dyn * 2.0 / n) * (r_dyn.T @ u)
    dwt = (t.lambda_teach * 2.0 / n) * (r_teach.T @ z)
    dbt = (t.lambda_teach * 2.0 / n) * r_teach.sum(axis=0)

    grads = []
    for i, layer in enumerate(params.encoder.layers):
        if layer.kind == DENSE:
            gw = enc_grads_set[i][0] + enc_grads_pt[i][0] + enc_grads_next[i][0]
            gb = enc_grads_set[i][1] + enc_grads_pt[i][1] + enc_grads_next[i][1]
            grads.extend([gw, gb])
    for i, layer in enumerate(params.decoder.layers):
        if layer.kind == DENSE:
            grads.extend([dec_grads[i][0], dec_grads[i][1]])
    grads.extend([dwt, dbt, da, db])
    return total, terms, grads, (enc_tanh, dec_tanh)


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def update(self, arrays, grads):
        self.t += 1
        out = []
        for i, (arr, grad) in enumerate(zip(arrays, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * grad ** 2
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            out.append(arr - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


@dataclass(eq=False)
class TrainResult:
    """Raw-space artifacts (standardization folded in) plus the loss history."""

    encoder: Mlp
    decoder: Mlp
    teacher_w: np.ndarray
    teacher_b: np.ndarray
    a: np.ndarray
    b: np.ndarray
    history: list[dict]


def _standardize_stats(arr, floor=1e-8):
    mean = arr.mean(axis=0)
    std = np.maximum(arr.std(axis=0), floor)
    return mean, std


def _fold_encoder(net: Mlp, mean, std) -> Mlp:
    """Absorb input standardization into the first dense layer."""
    layers = list(net.layers)
    first = layers[0]
    w = first.w / std[None, :]
    b = first.b - first.w @ (mean / std)
    layers[0] = Layer(DENSE, w, b)
    return make_mlp(layers)


def _fold_output(net: Mlp, mean, std) -> Mlp:
    """Absorb output de-standardization into the last dense layer."""
    layers = list(net.layers)
    last = layers[-1]
    layers[-1] = Layer(DENSE, std[:, None] * last.w, std * last.b + mean)
    return make_mlp(layers)


def train(samples, cfg: AppConfig, seed: int | None = None) -> TrainResult:
    """Adam over shuffled minibatches; deterministic under the seed.

    Aborts with the offending term named if any loss term goes non-finite.
    """
    seed = cfg.train.seed if seed is None else seed
    x, u, x_next, teach = dataset_arrays(samples)
    x_mean, x_std = _standardize_stats(x)
    t_mean, t_std = _standardize_stats(teach)
    xs = (x - x_mean) / x_std
    xns = (x_next - x_mean) / x_std
    ts = (teach - t_mean) / t_std
    eps_std = cfg.budget_vector() / x_std

    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    params = init_params(cfg, rng)
    arrays = params.to_list()
    adam = _Adam([a.shape for a in arrays], cfg.train.lr)
    history = []
    n = len(samples)
    for epoch in range(cfg.train.epochs):
        perm = rng.permutation(n)
        sums = {"rec": 0.0, "tight": 0.0, "dyn": 0.0, "teach": 0.0, "reg": 0.0}
        total_sum = 0.0
        for start in range(0, n, cfg.train.batch):
            idx = perm[start:start + cfg.train.batch]
            batch = {"x": xs[idx], "u": u[idx], "x_next": xns[idx], "teacher": ts[idx]}
            total, terms, grads, _ = loss_and_grads(params, batch, cfg, eps_std)
            for name, value in terms.items():
                if not np.isfinite(value):
                    raise FloatingPointError(f"loss term {name!r} went non-finite")
                sums[name] += value * len(idx)
            total_sum += total * len(idx)
            arrays = adam.update(arrays, grads)
            params = params.with_arrays(arrays)
        record = {name: value / n for name, value in sums.items()}
        record["total"] = total_sum / n
        record["epoch"] = epoch
        history.append(record)

    return TrainResult(
        encoder=_fold_encoder(params.encoder, x_mean, x_std),
        decoder=_fold_output(params.decoder, x_mean, x_std),
        teacher_w=t_std[:, None] * params.wt,
        teacher_b=t_std * params.bt + t_mean,
        a=params.a,
        b=params.b,
        history=history,
    )


def save_history(history, path) -> None:
    cols = ("epoch", "rec", "tight", "dyn", "teach", "reg", "total")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for record in history:
            writer.writerow([record["epoch"]] + [f"{record[c]:.17g}" for c in cols[1:]])


def save_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
