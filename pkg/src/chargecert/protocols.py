"""Charging protocols: CC-CV baseline, benchmark sweep, switched-policy runtime.

A rollout fixes its policy once from the initial output measurement (the
switching of the controller family is on initial conditions, not per step)
and then closes the loop until the horizon or a terminal flag.  Stored
label words are padded with the terminal label so every behavior has
exactly ``horizon`` symbols; the goal bin is absorbing under this padding.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from chargecert.battery import (
    GOAL,
    KELVIN,
    RUNNING,
    UNSAFE,
    CellParameters,
    CellState,
    OutputMeasurement,
    label,
    measure,
    sample_cell,
    step,
)

TRACE_HEADER = "k,t_s,soc,volt_V,temp_C,i_A,q_loss_Ah,delta_sei_m,label"


class ProtocolError(Exception):
    """CC-CV root-finding could not bracket the setpoint."""


class CoverageError(Exception):
    """A measurement fell outside every rectangle of the partition."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle over initial (voltage, temperature in deg C)."""

    v_lo: float
    v_hi: float
    t_lo: float
    t_hi: float

    def contains(self, volt: float, temp_c: float) -> bool:
        return self.v_lo <= volt <= self.v_hi and self.t_lo <= temp_c <= self.t_hi


@dataclass(frozen=True)
class CcCvConfig:
    i_cc: float
    v_cv: float = 4.2
    i_cutoff: float = 0.05
    soc_stop: float = 0.9

    def __post_init__(self):
        if not (0 < self.i_cutoff < self.i_cc):
            raise ValueError("require 0 < i_cutoff < i_cc")
        if self.v_cv > 4.2:
            raise ValueError("v_cv above the safety ceiling")


@dataclass
class SwitchedController:
    """Initial-output-indexed policy family over a rectangular partition."""

    partition: list[Rect]
    policies: list

    def __post_init__(self):
        if len(self.partition) != len(self.policies):
            raise ValueError("one policy per rectangle")


def select_policy(ctrl: SwitchedController, z0: OutputMeasurement):
    """Policy of the first rectangle containing the initial measurement.

    Interior-boundary points match the lower-indexed rectangle (left-closed
    convention falls out of first-match ordering).
    """
    t_c = z0.temp - KELVIN
    for rect, pol in zip(ctrl.partition, ctrl.policies):
        if rect.contains(z0.volt, t_c):
            return pol
    raise CoverageError(f"({z0.volt:.3f} V, {t_c:.2f} C) not covered by the partition")


@dataclass
class Trace:
    """Per-step record of one closed-loop run.

    Row ``i`` holds the measurement at time index ``k[i]``; ``i_a[i]`` is
    the current that produced that sample (0 for the initial rest sample).
    """

    k: np.ndarray
    t_s: np.ndarray
    soc: np.ndarray
    volt: np.ndarray
    temp_c: np.ndarray
    i_a: np.ndarray
    q_loss: np.ndarray
    delta_sei: np.ndarray
    labels: list[str]
    terminal: str
    rewards: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_transitions(self) -> int:
        return len(self.k) - 1

    def label_word(self, horizon: int) -> list[str]:
        """Exactly ``horizon`` labels; absorbing-padded with the final label."""
        word = self.labels[:horizon]
        if len(word) < horizon:
            word = word + [self.labels[-1]] * (horizon - len(word))
        return word

    def satisfies_rwa(self, goal: set[str], safe: set[str], horizon: int) -> bool:
        """Direct per-trace check: goal reached within the word, safe until then."""
        for lab in self.label_word(horizon):
            if lab not in safe:
                return False
            if lab in goal:
                return True
        return False

    def to_csv(self, fileobj) -> None:
        w = csv.writer(fileobj, lineterminator="\n")
        w.writerow(TRACE_HEADER.split(","))
        for i in range(len(self.k)):
            w.writerow([
                int(self.k[i]), f"{self.t_s[i]:.10g}", f"{self.soc[i]:.10g}",
                f"{self.volt[i]:.10g}", f"{self.temp_c[i]:.10g}", f"{self.i_a[i]:.10g}",
                f"{self.q_loss[i]:.12g}", f"{self.delta_sei[i]:.12g}", self.labels[i],
            ])

    def csv_bytes(self) -> bytes:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue().encode()


class _TraceBuilder:
    def __init__(self, params: CellParameters, state: CellState, dt: float):
        self.params = params
        self.dt = dt
        self.rows = []
        self.rewards = []
        self.push(state)

    def push(self, state: CellState) -> OutputMeasurement:
        z = measure(state, self.params)
        self.rows.append((
            state.k, state.k * self.dt, state.soc, z.volt, z.temp - KELVIN,
            state.i_prev, state.q_loss, state.delta_sei, label(z).text,
        ))
        return z

    def build(self, terminal: str, **meta) -> Trace:
        cols = list(zip(*self.rows))
        return Trace(
            k=np.array(cols[0], dtype=int),
            t_s=np.array(cols[1]), soc=np.array(cols[2]), volt=np.array(cols[3]),
            temp_c=np.array(cols[4]), i_a=np.array(cols[5]),
            q_loss=np.array(cols[6]), delta_sei=np.array(cols[7]),
            labels=list(cols[8]), terminal=terminal,
            rewards=self.rewards, meta=dict(meta),
        )


def run_constant_current(
    cell: tuple[CellParameters, CellState], current: float, n_steps: int, dt: float = 15.0
) -> Trace:
    """Fixed current for ``n_steps``; only safety violations stop early (the
    goal flag is advisory for protocol runners and cleared to keep going)."""
    params, st = cell
    tb = _TraceBuilder(params, st, dt)
    for _ in range(n_steps):
        if st.terminal != RUNNING:
            break
        st = step(st, params, current, dt)
        tb.push(st)
        if st.terminal == GOAL:
            st = replace(st, terminal=RUNNING)
    return tb.build(st.terminal)


def run_ccv(
    cell: tuple[CellParameters, CellState],
    cfg: CcCvConfig,
    dt: float = 15.0,
    max_steps: int = 20000,
    v_tol: float = 1e-3,
) -> Trace:
    """Two-phase charge: constant current, then a constant-voltage hold.

    The CV hold solves per step for the current whose end-of-step voltage
    equals ``v_cv`` (bisection on [0, i_cc], tolerance 1 mV), committing
    the from-below endpoint so the ceiling is never crossed.  Terminates at
    ``soc_stop`` (the simulator's goal flag when soc_stop = 0.9), at the CV
    cutoff current, or on a safety violation.
    """
    params, st = cell
    if st.terminal != RUNNING:
        raise ProtocolError("cell is not in a running state")
    tb = _TraceBuilder(params, st, dt)
    cv_trigger_k = None
    stop = "max_steps"
    for _ in range(max_steps):
        if st.terminal != RUNNING:
            stop = st.terminal
            break
        if st.soc >= cfg.soc_stop:
            stop = "soc_stop"
            break
        if cv_trigger_k is None:
            trial = step(st, params, cfg.i_cc, dt)
            if measure(trial, params).volt <= cfg.v_cv:
                st = trial
                tb.push(st)
                if st.terminal == GOAL and st.soc < cfg.soc_stop:
                    st = replace(st, terminal=RUNNING)
                continue
            cv_trigger_k = st.k  # the CC step would overshoot; hold from here on
        lo, hi = 0.0, cfg.i_cc
        st_lo = step(st, params, lo, dt)
        v_lo = measure(st_lo, params).volt
        if v_lo > cfg.v_cv:
            raise ProtocolError(
                f"zero-current voltage {v_lo:.4f} V already above the {cfg.v_cv} V hold"
            )
        for _ in range(60):
            if cfg.v_cv - v_lo <= v_tol:
                break
            mid = 0.5 * (lo + hi)
            st_mid = step(st, params, mid, dt)
            v_mid = measure(st_mid, params).volt
            if v_mid > cfg.v_cv:
                hi = mid
            else:
                lo, st_lo, v_lo = mid, st_mid, v_mid
        if cfg.v_cv - v_lo > v_tol:
            raise ProtocolError("CV bisection did not reach the 1 mV tolerance")
        st = st_lo
        tb.push(st)
        if st.terminal == GOAL and st.soc < cfg.soc_stop:
            st = replace(st, terminal=RUNNING)
        if lo < cfg.i_cutoff:
            stop = "i_cutoff"
            break
    return tb.build(st.terminal, cv_trigger_k=cv_trigger_k, stop_reason=stop)


def rollout(
    cell: tuple[CellParameters, CellState],
    ctrl: SwitchedController,
    horizon: int,
    dt: float = 15.0,
    reward_fn=None,
) -> Trace:
    """Close the loop for ``horizon`` control steps or until terminal.

    The policy is chosen once from the initial measurement and applied
    through its ``act(z) -> current`` interface at every step.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    params, st = cell
    tb = _TraceBuilder(params, st, dt)
    z = measure(st, params)
    policy = select_policy(ctrl, z)
    while st.terminal == RUNNING:
        prev = st
        current = float(np.clip(policy.act(z), 0.0, params.i_max))
        st = step(st, params, current, dt, max_k=horizon)
        z = tb.push(st)
        if reward_fn is not None:
            tb.rewards.append(reward_fn(prev, st))
    return tb.build(st.terminal)


def _rollout_chunk(args):
    ctrl, seeds, horizon, template, dt = args
    out = []
    for seed in seeds:
        cell = sample_cell(seed, template=template)
        out.append((seed, cell[0], cell[1], rollout(cell, ctrl, horizon, dt)))
    return out


def rollout_many(
    ctrl: SwitchedController,
    seeds: list[int],
    horizon: int,
    template: dict | None = None,
    dt: float = 15.0,
    jobs: int = 1,
):
    """Independent rollouts from freshly sampled cells, one per seed.

    Returns ``[(seed, params, state0, trace), ...]`` in seed order.  With
    ``jobs > 1`` the work is sharded over a process pool; the controller is
    immutable and shared read-only.
    """
    if jobs <= 1 or len(seeds) < 4:
        return _rollout_chunk((ctrl, seeds, horizon, template, dt))
    shards = [list(seeds[i::jobs]) for i in range(jobs)]
    results = []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for part in pool.map(
            _rollout_chunk, [(ctrl, sh, horizon, template, dt) for sh in shards]
        ):
            results.extend(part)
    order = {seed: i for i, seed in enumerate(seeds)}
    results.sort(key=lambda r: order[r[0]])
    return results


def benchmark_ccv(
    currents: list[float],
    template: dict | None = None,
    soc_start: float = 0.02,
    temp_c: float = 25.0,
    dt: float = 15.0,
    v_cv: float = 4.2,
    i_cutoff: float = 0.05,
) -> list[dict]:
    """CC-CV sweep on a pristine nominal cell; one summary row per current."""
    from chargecert.battery import initial_state, make_cell_parameters

    rows = []
    params = make_cell_parameters(**(template or {}))
    for i_cc in currents:
        st = initial_state(params, soc_start, temp_c + KELVIN)
        tr = run_ccv((params, st), CcCvConfig(i_cc=float(i_cc), v_cv=v_cv, i_cutoff=i_cutoff), dt)
        rows.append({
            "i_cc_A": float(i_cc),
            "t_charge_min": float(tr.t_s[-1] / 60.0),
            "t_max_C": float(tr.temp_c.max()),
            "q_loss_mAh": float(tr.q_loss[-1] * 1000.0),
        })
    return rows


def benchmark_trends(rows: list[dict]) -> dict:
    """Qualitative shape of the sweep: monotone times/temperatures and an
    interior capacity-loss minimizer."""
    t = [r["t_charge_min"] for r in rows]
    tm = [r["t_max_C"] for r in rows]
    q = [r["q_loss_mAh"] for r in rows]
    k_min = int(np.argmin(q))
    return {
        "t_charge_nonincreasing": all(a >= b for a, b in zip(t, t[1:])),
        "t_max_nondecreasing": all(a <= b for a, b in zip(tm, tm[1:])),
        "q_loss_interior_min": 0 < k_min < len(q) - 1,
    }


def write_benchmark_csv(rows: list[dict], fileobj) -> None:
    w = csv.DictWriter(
        fileobj, fieldnames=["i_cc_A", "t_charge_min", "t_max_C", "q_loss_mAh"],
        lineterminator="\n",
    )
    w.writeheader()
    for r in rows:
        w.writerow({k: f"{v:.10g}" if isinstance(v, float) else v for k, v in r.items()})
