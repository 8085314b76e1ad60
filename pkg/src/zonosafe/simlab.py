"""Scenario definitions, closed-loop runner, analytics, and CSV emission.

A run couples the plant, the nominal cruise controller, and the safety
filter in one evaluation mode at 50 Hz until gate passage (plus one settling
second), collision, divergence, or timeout. Every step logs both the point
and the worst-case certificate values regardless of mode, so the analytics
can count blind spots and spreads on any trace.

Wall-clock timings are always measured but written to CSV only on request:
with timings suppressed (the default) re-running a command with the same
seed, config, and model reproduces the output files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .certificates import HEAD_NAMES, EvalMode, HeadReport
from .config import AppConfig
from .controller import nominal_input, safe_input
from .latentmodel import _fit_linear_probe
from .modelio import LatentSafetyModel
from .plant import PlantState, gate_crossing_check, load_position, step as plant_step
from .trainer import STATE_COLS, head_margins

_HEAD_PREFIX = {"h_z": "hz", "h_y": "hy", "h_E": "he"}

VERDICT_PASSED = "passed"
VERDICT_COLLISION = "collision"
VERDICT_DIVERGED = "diverged"
VERDICT_TIMEOUT = "timeout"


@dataclass(frozen=True)
class Scenario:
    """Initial condition family: start distance to the gate plane, initial
    swing angles/rates, and optional speed/duration overrides."""

    name: str
    start_distance: float
    alpha0: float
    beta0: float
    alpha_dot0: float = 0.0
    beta_dot0: float = 0.0
    v_x0: float | None = None
    duration: float | None = None

    def __post_init__(self):
        if self.start_distance <= 0:
            raise ValueError("start_distance must be positive")


def canonical_scenarios() -> tuple[Scenario, ...]:
    """The five standard initial conditions, easiest to hardest."""
    d = math.radians
    return (
        Scenario("GOOD", 7.0, d(5.0), 0.0),
        Scenario("BAD", 3.0, d(25.0), d(10.0)),
        Scenario("HARD", 4.0, d(30.0), 0.0),
        Scenario("HARD1", 2.0, d(35.0), 0.0, alpha_dot0=d(40.0)),
        Scenario("HARD2", 2.0, d(20.0), d(45.0), beta_dot0=d(30.0)),
    )


def scenario_by_name(name: str) -> Scenario:
    for sc in canonical_scenarios():
        if sc.name.lower() == name.lower():
            return sc
    raise KeyError(f"unknown scenario {name!r}")


def initial_state(scenario: Scenario, cfg: AppConfig) -> PlantState:
    v_x0 = cfg.sim.v_x0 if scenario.v_x0 is None else scenario.v_x0
    return PlantState(
        p=np.array([cfg.gate.x_plane - scenario.start_distance,
                    cfg.gate.center_y,
                    cfg.gate.center_z + cfg.sim.approach_z_offset]),
        v=np.array([v_x0, 0.0, 0.0]),
        euler=np.zeros(3), omega=np.zeros(3),
        alpha=scenario.alpha0, beta=scenario.beta0,
        alpha_dot=scenario.alpha_dot0, beta_dot=scenario.beta_dot0,
    )


@dataclass(frozen=True)
class TraceRecord:
    t: float
    state: PlantState
    load: np.ndarray
    heads: dict[str, HeadReport]
    mu_nom: np.ndarray
    mu_safe: np.ndarray
    qp_feasible: bool
    qp_active: tuple[int, ...]
    qp_objective: float
    encode_ms: float
    certqp_ms: float

    @property
    def step_ms(self) -> float:
        return self.encode_ms + self.certqp_ms


@dataclass(frozen=True)
class RunReport:
    scenario: str
    mode: str
    verdict: str
    body: str | None
    axis: str | None
    steps: int
    crossing_time: float
    safe_rate_point: dict[str, float]
    safe_rate_set: dict[str, float]
    blind_counts: dict[str, int]
    spread_mean: dict[str, float]
    spread_max: dict[str, float]
    qp_infeasible_steps: int
    last_blind_time: float
    mean_encode_ms: float
    mean_certqp_ms: float

    def to_obj(self, timing: bool = False) -> dict:
        obj = {
            "scenario": self.scenario,
            "mode": self.mode,
            "verdict": self.verdict,
            "body": self.body,
            "axis": self.axis,
            "steps": self.steps,
            "crossing_time": self.crossing_time,
            "safe_rate_point": self.safe_rate_point,
            "safe_rate_set": self.safe_rate_set,
            "blind_counts": self.blind_counts,
            "spread_mean": self.spread_mean,
            "spread_max": self.spread_max,
            "qp_infeasible_steps": self.qp_infeasible_steps,
            "last_blind_time": self.last_blind_time,
        }
        if timing:
            obj["mean_encode_ms"] = self.mean_encode_ms
            obj["mean_certqp_ms"] = self.mean_certqp_ms
            obj["mean_step_ms"] = self.mean_encode_ms + self.mean_certqp_ms
        return obj


def _summarize(scenario, mode, verdict, body, axis, traces, crossing_time):
    stats = {}
    for name in HEAD_NAMES:
        pts = np.array([tr.heads[name].h_point for tr in traces])
        sets = np.array([tr.heads[name].h_set for tr in traces])
        spreads = np.array([tr.heads[name].spread for tr in traces])
        blind = sum(tr.heads[name].blind_spot for tr in traces)
        stats[name] = (
            float((pts >= 0).mean()) if len(pts) else 0.0,
            float((sets >= 0).mean()) if len(sets) else 0.0,
            int(blind),
            float(spreads.mean()) if len(spreads) else 0.0,
            float(spreads.max()) if len(spreads) else 0.0,
        )
    blind_times = [tr.t for tr in traces
                   if any(tr.heads[n].blind_spot for n in HEAD_NAMES)]
    return RunReport(
        scenario=scenario.name,
        mode=mode.kind,
        verdict=verdict,
        body=body,
        axis=axis,
        steps=len(traces),
        crossing_time=crossing_time,
        safe_rate_point={n: stats[n][0] for n in HEAD_NAMES},
        safe_rate_set={n: stats[n][1] for n in HEAD_NAMES},
        blind_counts={n: stats[n][2] for n in HEAD_NAMES},
        spread_mean={n: stats[n][3] for n in HEAD_NAMES},
        spread_max={n: stats[n][4] for n in HEAD_NAMES},
        qp_infeasible_steps=sum(not tr.qp_feasible for tr in traces),
        last_blind_time=float(max(blind_times)) if blind_times else float("nan"),
        mean_encode_ms=float(np.mean([tr.encode_ms for tr in traces])) if traces else 0.0,
        mean_certqp_ms=float(np.mean([tr.certqp_ms for tr in traces])) if traces else 0.0,
    )


def run(scenario: Scenario, mode: EvalMode, model: LatentSafetyModel,
        cfg: AppConfig) -> tuple[RunReport, list[TraceRecord]]:
    """Closed loop from the scenario's initial state until a verdict."""
    state = initial_state(scenario, cfg)
    duration = cfg.sim.duration if scenario.duration is None else scenario.duration
    n_steps = int(round(duration / cfg.plant.dt))
    waypoint = np.array([cfg.gate.x_plane + cfg.sim.waypoint_beyond,
                         cfg.gate.center_y,
                         cfg.gate.center_z + cfg.sim.approach_z_offset])

    passed = {"quad": False, "load": False}
    # Degenerate start beyond the plane: nothing left to cross.
    if state.p[0] > cfg.gate.x_plane and load_position(state, cfg.plant)[0] > cfg.gate.x_plane:
        passed = {"quad": True, "load": True}

    traces: list[TraceRecord] = []
    verdict = VERDICT_TIMEOUT
    body = axis = None
    crossing_time = 0.0 if all(passed.values()) else float("nan")
    end_time = crossing_time + 1.0 if all(passed.values()) else float("inf")

    for k in range(n_steps):
        t = k * cfg.plant.dt
        if t >= end_time:
            verdict = VERDICT_PASSED
            break
        mu_nom = nominal_input(state, waypoint, cfg)
        res = safe_input(state, mu_nom, model, cfg, mode)
        traces.append(TraceRecord(
            t=t, state=state, load=load_position(state, cfg.plant),
            heads=res.report.heads, mu_nom=mu_nom, mu_safe=res.qp.mu_safe,
            qp_feasible=res.qp.feasible, qp_active=res.qp.active_set,
            qp_objective=res.qp.objective,
            encode_ms=res.encode_seconds * 1e3, certqp_ms=res.certqp_seconds * 1e3,
        ))
        try:
            nxt = plant_step(state, res.qp.mu_safe, cfg.plant)
        except ValueError:
            # Non-finite state or a pendulum swing past the chart limit.
            verdict = VERDICT_DIVERGED
            break

        event = gate_crossing_check(state, nxt, cfg.gate, cfg.plant)
        if event.kind == "collision":
            verdict = VERDICT_COLLISION
            body, axis = event.body, event.axis
            state = nxt
            break
        for name in event.crossed:
            passed[name] = True
        if all(passed.values()) and math.isnan(crossing_time):
            crossing_time = t + cfg.plant.dt
            end_time = crossing_time + 1.0

        state = nxt
        vec = state.to_vector()
        if not np.all(np.isfinite(vec)) or np.linalg.norm(state.p) > cfg.sim.diverge_radius:
            verdict = VERDICT_DIVERGED
            break
    if verdict == VERDICT_TIMEOUT and all(passed.values()):
        verdict = VERDICT_PASSED

    return _summarize(scenario, mode, verdict, body, axis, traces, crossing_time), traces


# ---------------------------------------------------------------------------
# Trace CSV
# ---------------------------------------------------------------------------


def trace_columns() -> list[str]:
    cols = ["t", *STATE_COLS, "load_x", "load_y", "load_z"]
    for name in HEAD_NAMES:
        p = _HEAD_PREFIX[name]
        cols += [f"{p}_point", f"{p}_set", f"{p}_spread",
                 f"{p}_safe_point", f"{p}_safe_set", f"{p}_blind"]
    cols += ["mu_nom_x", "mu_nom_y", "mu_nom_z", "mu_x", "mu_y", "mu_z",
             "qp_feasible", "qp_active", "qp_objective",
             "encode_ms", "certqp_ms", "step_ms"]
    return cols


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_trace(traces, path, timing: bool = False) -> None:
    """Write one CSV row per step; timing columns are zeroed unless asked for."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_columns())
        for tr in traces:
            row = [_fmt(tr.t), *(_fmt(v) for v in tr.state.to_vector()),
                   *(_fmt(v) for v in tr.load)]
            for name in HEAD_NAMES:
                h = tr.heads[name]
                row += [_fmt(h.h_point), _fmt(h.h_set), _fmt(h.spread),
                        str(int(h.safe_point)), str(int(h.safe_set)),
                        str(int(h.blind_spot))]
            row += [*(_fmt(v) for v in tr.mu_nom), *(_fmt(v) for v in tr.mu_safe)]
            row += [str(int(tr.qp_feasible)),
                    "|".join(str(i) for i in tr.qp_active) or "-",
                    _fmt(tr.qp_objective)]
            if timing:
                row += [_fmt(tr.encode_ms), _fmt(tr.certqp_ms), _fmt(tr.step_ms)]
            else:
                row += ["0", "0", "0"]
            writer.writerow(row)


def load_trace(path) -> list[dict]:
    """Trace rows as dicts of floats (flags as 0/1 floats, active set as str)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if key == "qp_active":
                    row[key] = value
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def save_run_report(report: RunReport, path, timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_obj(timing), fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Aggregate:
    """Cross-run analytics: passage table, pooled safe rates, blind spots,
    spread statistics, the derived fixed margin, and per-scenario last
    blind-spot times."""

    passage: dict[str, dict[str, str]]
    scores: dict[str, str]
    pooled_safe_rate_point: float
    pooled_safe_rate_set: float
    head_safe_rate_point: dict[str, float]
    head_safe_rate_set: dict[str, float]
    blind_total: int
    blind_fraction: float
    head_blind: dict[str, int]
    head_spread_mean: dict[str, float]
    head_spread_max: dict[str, float]
    mean_spread_delta: float
    last_blind_time: dict[str, float]
    evaluations: int
    mean_encode_ms: float
    mean_certqp_ms: float


def mean_spread_delta(trace_sets) -> float:
    """Global mean spread over all heads and steps of the given traces."""
    values = [tr.heads[name].spread
              for traces in trace_sets for tr in traces for name in HEAD_NAMES]
    if not values:
        raise ValueError("no trace steps to average")
    return float(np.mean(values))


def aggregate(runs) -> Aggregate:
    """Pool a list of (RunReport, traces) pairs into the comparison report."""
    if not runs:
        raise ValueError("nothing to aggregate")
    passage: dict[str, dict[str, str]] = {}
    scenarios_seen = []
    for rep, _ in runs:
        passage.setdefault(rep.mode, {})
        mark = rep.verdict
        if rep.verdict == VERDICT_COLLISION:
            mark = f"collision:{rep.body}:{rep.axis}"
        passage[rep.mode][rep.scenario] = mark
        if rep.scenario not in scenarios_seen:
            scenarios_seen.append(rep.scenario)
    scores = {
        mode: f"{sum(v == VERDICT_PASSED for v in row.values())}/{len(row)}"
        for mode, row in passage.items()
    }

    point_flags, set_flags, spreads = [], [], {n: [] for n in HEAD_NAMES}
    blind = {n: 0 for n in HEAD_NAMES}
    last_blind: dict[str, float] = {}
    encode_ms, certqp_ms = [], []
    for rep, traces in runs:
        for tr in traces:
            encode_ms.append(tr.encode_ms)
            certqp_ms.append(tr.certqp_ms)
            for name in HEAD_NAMES:
                h = tr.heads[name]
                point_flags.append(h.safe_point)
                set_flags.append(h.safe_set)
                spreads[name].append(h.spread)
                if h.blind_spot:
                    blind[name] += 1
                    prev = last_blind.get(rep.scenario, float("-inf"))
                    last_blind[rep.scenario] = max(prev, tr.t)
    for name in scenarios_seen:
        last_blind.setdefault(name, float("nan"))

    n_eval = len(point_flags)
    if n_eval == 0:
        raise ValueError("aggregate needs at least one trace step")
    blind_total = sum(blind.values())
    return Aggregate(
        passage=passage,
        scores=scores,
        pooled_safe_rate_point=float(np.mean(point_flags)),
        pooled_safe_rate_set=float(np.mean(set_flags)),
        head_safe_rate_point={
            n: float(np.mean([tr.heads[n].safe_point for _, ts in runs for tr in ts]))
            for n in HEAD_NAMES
        },
        head_safe_rate_set={
            n: float(np.mean([tr.heads[n].safe_set for _, ts in runs for tr in ts]))
            for n in HEAD_NAMES
        },
        blind_total=blind_total,
        blind_fraction=blind_total / n_eval,
        head_blind=blind,
        head_spread_mean={n: float(np.mean(spreads[n])) for n in HEAD_NAMES},
        head_spread_max={n: float(np.max(spreads[n])) for n in HEAD_NAMES},
        mean_spread_delta=float(np.mean([v for n in HEAD_NAMES for v in spreads[n]])),
        last_blind_time=last_blind,
        evaluations=n_eval,
        mean_encode_ms=float(np.mean(encode_ms)),
        mean_certqp_ms=float(np.mean(certqp_ms)),
    )


def raw_state_probe(states: np.ndarray, teacher: np.ndarray, e_max: float) -> dict[str, float]:
    """Fit each head's margin target directly on the raw 16D state; return R."""
    states = np.asarray(states, dtype=np.float64)
    out = {}
    for name, target in head_margins(np.asarray(teacher), e_max).items():
        _, _, r = _fit_linear_probe(states, target)
        out[name] = r
    return out


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def write_passage_csv(agg: Aggregate, path) -> None:
    scenarios = sorted({s for row in agg.passage.values() for s in row})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "score", *scenarios])
        for mode in sorted(agg.passage):
            row = agg.passage[mode]
            writer.writerow([mode, agg.scores[mode],
                             *(row.get(s, "-") for s in scenarios)])


def write_spread_csv(agg: Aggregate, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "safe_rate_point", "safe_rate_set",
                         "spread_mean", "spread_max", "blind_spots"])
        for name in HEAD_NAMES:
            writer.writerow([
                name,
                _fmt(agg.head_safe_rate_point[name]),
                _fmt(agg.head_safe_rate_set[name]),
                _fmt(agg.head_spread_mean[name]),
                _fmt(agg.head_spread_max[name]),
                agg.head_blind[name],
            ])


def write_probe_csv(probe_r: dict[str, float], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "raw16_r"])
        for name in HEAD_NAMES:
            writer.writerow([name, _fmt(probe_r[name])])


def render_text(agg: Aggregate, probe_r: dict[str, float] | None = None,
                timing: bool = False) -> str:
    lines = ["gate passage", "------------"]
    scenarios = sorted({s for row in agg.passage.values() for s in row})
    header = f"{'mode':<8} {'score':<6}" + "".join(f" {s:<18}" for s in scenarios)
    lines.append(header)
    for mode in sorted(agg.passage):
        row = agg.passage[mode]
        lines.append(f"{mode:<8} {agg.scores[mode]:<6}"
                     + "".join(f" {row.get(s, '-'):<18}" for s in scenarios))
    lines += [
        "",
        "pooled certificate evaluations",
        "------------------------------",
        f"evaluations: {agg.evaluations}",
        f"safe rate point: {agg.pooled_safe_rate_point:.4f}",
        f"safe rate set:   {agg.pooled_safe_rate_set:.4f}",
        f"blind spots: {agg.blind_total} ({100 * agg.blind_fraction:.2f}%)",
        f"fixed margin delta (mean spread): {agg.mean_spread_delta:.6f}",
        "",
        "per-head spread",
        "---------------",
        f"{'head':<6} {'mean':>10} {'max':>10} {'blind':>7} {'safe_pt':>9} {'safe_set':>9}",
    ]
    for name in HEAD_NAMES:
        lines.append(
            f"{name:<6} {agg.head_spread_mean[name]:>10.5f}"
            f" {agg.head_spread_max[name]:>10.5f} {agg.head_blind[name]:>7}"
            f" {agg.head_safe_rate_point[name]:>9.4f}"
            f" {agg.head_safe_rate_set[name]:>9.4f}"
        )
    lines += ["", "last blind spot per scenario", "----------------------------"]
    for name, t in sorted(agg.last_blind_time.items()):
        lines.append(f"{name:<8} t = {t:.2f} s" if not math.isnan(t) else f"{name:<8} none")
    if probe_r is not None:
        lines += ["", "raw 16D linear probe fit", "------------------------"]
        for name in HEAD_NAMES:
            lines.append(f"{name:<6} R = {probe_r[name]:.4f}")
    if timing:
        total = agg.mean_encode_ms + agg.mean_certqp_ms
        lines += [
            "",
            "control step timing (mean)",
            "--------------------------",
            f"encoder set-forward:        {agg.mean_encode_ms:8.3f} ms",
            f"certificates + L_g + QP:    {agg.mean_certqp_ms:8.3f} ms",
            f"full active control step:   {total:8.3f} ms",
        ]
    lines.append("")
    return "\n".join(lines)
