"""Time-bounded reach-while-avoid checking on a window abstraction.

The abstraction is nondeterministic and the closed loop leaves no inputs
to choose at this level, so nondeterminism is resolved adversarially: a
state wins with budget t when its output is a goal symbol, or its output
is safe, it has at least one successor, and every successor wins with
budget t - 1.  Successor-less non-goal states lose (trace tails are
treated conservatively; this can only trigger extra refinement, never a
false certificate).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from chargecert.abstraction import Abstraction

UNBOUNDED = math.inf


class VerifyError(Exception):
    pass


class IntegrityError(VerifyError):
    """Provenance required but missing."""


@dataclass(frozen=True)
class RwaSpec:
    """Reach-while-avoid over output symbols: reach a goal symbol within
    ``horizon`` budget while emitting only safe symbols up to that point."""

    horizon: int
    goal_symbols: frozenset
    safe_symbols: frozenset
    init_symbols: frozenset | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise VerifyError("horizon must be >= 1")
        goal = frozenset(self.goal_symbols)
        safe = frozenset(self.safe_symbols)
        if not goal <= safe:
            raise VerifyError("goal symbols must be a subset of the safe symbols")
        object.__setattr__(self, "goal_symbols", goal)
        object.__setattr__(self, "safe_symbols", safe)
        if self.init_symbols is not None:
            object.__setattr__(self, "init_symbols", frozenset(self.init_symbols))

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "horizon": self.horizon,
            "goal_symbols": sorted(self.goal_symbols),
            "safe_symbols": sorted(self.safe_symbols),
            "init_symbols": None if self.init_symbols is None else sorted(self.init_symbols),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RwaSpec":
        return cls(
            horizon=int(doc["horizon"]),
            goal_symbols=frozenset(doc["goal_symbols"]),
            safe_symbols=frozenset(doc["safe_symbols"]),
            init_symbols=None if doc.get("init_symbols") is None
            else frozenset(doc["init_symbols"]),
        )


@dataclass
class VerificationResult:
    holds: bool
    winning: dict                      # state key -> minimal guaranteed budget
    counterexample_states: list        # failing initial state keys
    counterexample_samples: list       # source ids realizing failing initial windows
    n_initial: int
    budgets_of_initial: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        hist: dict[int, int] = {}
        for b in self.winning.values():
            hist[b] = hist.get(b, 0) + 1
        return {
            "schema_version": 1,
            "holds": self.holds,
            "n_initial": self.n_initial,
            "n_winning": len(self.winning),
            "budgets_histogram": {str(k): v for k, v in sorted(hist.items())},
            "counterexample_sample_ids": list(self.counterexample_samples),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def _succ_ranges(abst: Abstraction) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous [lo, hi) index range of each state's domino successors."""
    base = abst.base
    div = base ** (abst.ell - 1)
    if abst.packed:
        suffix = abst.states % div
        lo = np.searchsorted(abst.states, suffix * base, side="left")
        hi = np.searchsorted(abst.states, suffix * base + base, side="left")
    else:
        lo = np.empty(abst.n_states, dtype=np.int64)
        hi = np.empty(abst.n_states, dtype=np.int64)
        for i, k in enumerate(abst.states):
            suf = int(k) % div
            lo[i] = np.searchsorted(abst.states, suf * base, side="left")
            hi[i] = np.searchsorted(abst.states, suf * base + base, side="left")
    return lo.astype(np.int64), hi.astype(np.int64)


def _symbol_flags(abst: Abstraction, symbols) -> np.ndarray:
    ids = {abst.alphabet.index[s] for s in symbols if s in abst.alphabet.index}
    return np.array([abst.output_of(k) in ids for k in abst.states])


def _initial_mask(abst: Abstraction, spec: RwaSpec) -> np.ndarray:
    mask = np.zeros(abst.n_states, dtype=bool)
    for k in abst.initial:
        mask[int(np.searchsorted(abst.states, k))] = True
    if spec.init_symbols is not None:
        mask &= _symbol_flags(abst, spec.init_symbols)
    return mask


def rwa_check(abst: Abstraction, spec: RwaSpec) -> VerificationResult:
    """Backward induction over budgets 0..horizon on universal semantics."""
    is_goal = _symbol_flags(abst, spec.goal_symbols)
    is_safe = _symbol_flags(abst, spec.safe_symbols)
    lo, hi = _succ_ranges(abst)
    has_succ = hi > lo

    win = is_goal.copy()
    budget = np.where(win, 0, -1)
    for t in range(1, spec.horizon + 1):
        cnt = np.concatenate(([0], np.cumsum(win)))
        all_succ_win = (cnt[hi] - cnt[lo]) == (hi - lo)
        new_win = win | (is_safe & has_succ & all_succ_win)
        gained = new_win & ~win
        if not gained.any():
            break
        budget[gained] = t
        win = new_win

    init_mask = _initial_mask(abst, spec)
    failing_idx = np.flatnonzero(init_mask & ~win)
    failing_keys = [abst.states[i] for i in failing_idx]
    samples: set[int] = set()
    for k in failing_keys:
        samples.update(abst.provenance.get(int(k), ()))
    winning = {
        int(abst.states[i]) if abst.packed else abst.states[i]: int(budget[i])
        for i in np.flatnonzero(win)
    }
    init_idx = np.flatnonzero(init_mask)
    budgets_of_initial = {
        (int(abst.states[i]) if abst.packed else abst.states[i]): int(budget[i])
        for i in init_idx
        if win[i]
    }
    return VerificationResult(
        holds=len(failing_keys) == 0,
        winning=winning,
        counterexample_states=[int(k) if abst.packed else k for k in failing_keys],
        counterexample_samples=sorted(samples),
        n_initial=int(init_mask.sum()),
        budgets_of_initial=budgets_of_initial,
    )


def worst_case_hitting_time(abst: Abstraction, target_symbols, cap: int):
    """Smallest t <= cap such that every path from every initial state emits
    a target symbol within t steps; ``UNBOUNDED`` if none exists.

    Dead ends are conservative: a path that can stop before hitting the
    target never counts as hitting it.
    """
    if cap < 0:
        raise VerifyError("cap must be >= 0")
    hit = _symbol_flags(abst, target_symbols)
    lo, hi = _succ_ranges(abst)
    has_succ = hi > lo
    init_idx = np.array(
        [int(np.searchsorted(abst.states, k)) for k in abst.initial], dtype=np.int64
    )

    def all_initial(mask: np.ndarray) -> bool:
        return bool(mask[init_idx].all()) if len(init_idx) else True

    if all_initial(hit):
        return 0
    cur = hit.copy()
    for t in range(1, cap + 1):
        cnt = np.concatenate(([0], np.cumsum(cur)))
        all_succ = (cnt[hi] - cnt[lo]) == (hi - lo)
        nxt = hit | (has_succ & all_succ)
        if all_initial(nxt):
            return t
        if np.array_equal(nxt, cur):
            return UNBOUNDED
        cur = nxt
    return UNBOUNDED


def extract_counterexamples(result: VerificationResult, registry: dict) -> list:
    """Concrete sampled initial conditions realizing the failing windows.

    ``registry`` maps source ids to concrete tuples, e.g.
    (CellParameters, CellState, OutputMeasurement).  All realizations of a
    failing initial window are returned (conservative over-selection).
    """
    if result.holds:
        return []
    out = []
    for sid in result.counterexample_samples:
        if sid not in registry:
            raise IntegrityError(f"sample {sid} missing from the registry")
        out.append(registry[sid])
    return out
