import math
from functools import lru_cache

import numpy as np
import pytest

from chargecert.abstraction import Alphabet, Behavior, build_salca
from chargecert.verify import (
    UNBOUNDED,
    IntegrityError,
    RwaSpec,
    VerifyError,
    extract_counterexamples,
    rwa_check,
    worst_case_hitting_time,
)

Y = Alphabet.of(["y0", "y1"])
HALVING = [
    Behavior((0, 0, 1, 1), 0),
    Behavior((0, 1, 1, 1), 1),
    Behavior((1, 1, 1, 1), 2),
]


def spec_goal_y1(h=4):
    return RwaSpec(horizon=h, goal_symbols={"y1"}, safe_symbols={"y0", "y1"})


def _tables(abst):
    succs = {k_int(abst, k): [k_int(abst, s) for s in abst.successors(k)] for k in abst.states}
    out = {k_int(abst, k): abst.alphabet.symbols[abst.output_of(k)] for k in abst.states}
    return succs, out


def k_int(abst, k):
    return int(k)


def oracle_min_budget(abst, key, goal, safe, horizon):
    """Top-down exhaustive recursion (budget strictly decreases, so no cycles)."""
    succs, out = _tables(abst)

    @lru_cache(maxsize=None)
    def win_by(k, t):
        if out[k] in goal:
            return True
        if out[k] not in safe or t == 0:
            return False
        ss = succs[k]
        return bool(ss) and all(win_by(s, t - 1) for s in ss)

    for t in range(horizon + 1):
        if win_by(key, t):
            return t
    return None


def oracle_hitting(abst, target):
    """Adversarial hitting time by DFS with on-stack cycle detection."""
    succs, out = _tables(abst)
    memo = {}

    def rec(k, stack):
        if out[k] in target:
            return 0
        if k in memo:
            return memo[k]
        if k in stack:
            return math.inf
        ss = succs[k]
        if not ss:
            memo[k] = math.inf
            return math.inf
        val = 1 + max(rec(s, stack | {k}) for s in ss)
        memo[k] = val
        return val

    vals = [rec(int(k), frozenset()) for k in abst.initial]
    return max(vals) if vals else 0


def test_known_graph_l2_fails_on_self_loop():
    abst = build_salca(HALVING, 2, Y)
    res = rwa_check(abst, spec_goal_y1())
    assert not res.holds
    assert res.counterexample_states == [abst.key_of((0, 0))]
    assert res.counterexample_samples == [0]  # the (0,0,1,1) word realized it


def test_known_graph_l3_holds_with_budgets():
    abst = build_salca(HALVING, 3, Y)
    res = rwa_check(abst, spec_goal_y1())
    assert res.holds and not res.counterexample_states
    assert res.winning[abst.key_of((1, 1, 1))] == 0
    assert res.winning[abst.key_of((0, 1, 1))] == 1
    assert res.winning[abst.key_of((0, 0, 1))] == 2


def test_goal_everywhere_all_budget_zero():
    abst = build_salca(HALVING, 2, Y)
    spec = RwaSpec(horizon=4, goal_symbols={"y0", "y1"}, safe_symbols={"y0", "y1"})
    res = rwa_check(abst, spec)
    assert res.holds
    assert all(b == 0 for b in res.winning.values())


def test_spec_validation():
    with pytest.raises(VerifyError):
        RwaSpec(horizon=0, goal_symbols={"a"}, safe_symbols={"a"})
    with pytest.raises(VerifyError):
        RwaSpec(horizon=4, goal_symbols={"a", "b"}, safe_symbols={"a"})
    doc = spec_goal_y1().to_json_dict()
    assert RwaSpec.from_json_dict(doc) == spec_goal_y1()


def test_hitting_time_examples():
    right = build_salca(HALVING, 3, Y)
    assert worst_case_hitting_time(right, {"y1"}, cap=10) == 2
    assert worst_case_hitting_time(right, {"y0", "y1"}, cap=10) == 0
    left = build_salca(HALVING, 2, Y)
    assert worst_case_hitting_time(left, {"y1"}, cap=100) is UNBOUNDED


def test_extract_counterexamples_contract():
    abst = build_salca(HALVING, 3, Y)
    ok = rwa_check(abst, spec_goal_y1())
    assert extract_counterexamples(ok, {}) == []

    # goal = y0: only the all-ones word violates; l=3 is behavior-exact here
    spec = RwaSpec(horizon=4, goal_symbols={"y0"}, safe_symbols={"y0", "y1"})
    res = rwa_check(abst, spec)
    assert not res.holds
    registry = {0: "cell0", 1: "cell1", 2: "cell2"}
    assert extract_counterexamples(res, registry) == ["cell2"]
    goal, safe = {"y0"}, {"y0", "y1"}
    violators = [
        b.source_id
        for b in HALVING
        if not _word_satisfies(b.word, goal, safe)
    ]
    assert res.counterexample_samples == violators
    with pytest.raises(IntegrityError):
        extract_counterexamples(res, {})


def _word_satisfies(word, goal, safe, alphabet=Y):
    for s in word:
        sym = alphabet.symbols[s]
        if sym not in safe:
            return False
        if sym in goal:
            return True
    return False


def test_shared_window_extraction_is_conservative():
    # two samples share a failing first window; both are returned
    behs = [Behavior((0, 0, 1, 1), 7), Behavior((0, 0, 0, 0), 19)]
    abst = build_salca(behs, 2, Y)
    res = rwa_check(abst, spec_goal_y1())
    assert not res.holds
    assert res.counterexample_samples == [7, 19]


def _random_abstraction(rng):
    n_states = int(rng.integers(2, 7))
    n_syms = int(rng.integers(2, 4))
    horizon = int(rng.integers(4, 9))
    alpha = Alphabet.of([f"s{i}" for i in range(n_syms)])
    succ = rng.integers(0, n_states, size=n_states)
    lab = rng.integers(0, n_syms, size=n_states)
    behs = []
    for x0 in range(n_states):
        x, word = x0, []
        for _ in range(horizon):
            word.append(int(lab[x]))
            x = int(succ[x])
        behs.append(Behavior(tuple(word), x0))
    ell = int(rng.integers(2, min(4, horizon) + 1))
    abst = build_salca(behs, ell, alpha)
    syms = list(alpha.symbols)
    n_unsafe = int(rng.integers(0, n_syms))
    unsafe = set(rng.choice(syms, size=n_unsafe, replace=False).tolist())
    safe = frozenset(s for s in syms if s not in unsafe)
    goal = frozenset(
        s for s in rng.choice(sorted(safe), size=int(rng.integers(1, len(safe) + 1)),
                              replace=False).tolist()
    ) if safe else frozenset()
    return abst, behs, safe, goal, horizon


def test_fixpoint_matches_exhaustive_oracle_random():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 120:
        abst, behs, safe, goal, horizon = _random_abstraction(rng)
        if not goal:
            continue
        checked += 1
        spec = RwaSpec(horizon=horizon, goal_symbols=goal, safe_symbols=safe)
        res = rwa_check(abst, spec)
        failing = set()
        for k in abst.initial:
            want = oracle_min_budget(abst, int(k), goal, safe, horizon)
            if want is None:
                failing.add(int(k))
                assert int(k) not in res.budgets_of_initial
            else:
                assert res.budgets_of_initial[int(k)] == want
        assert set(res.counterexample_states) == failing
        assert res.holds == (not failing)

        got = worst_case_hitting_time(abst, goal, cap=horizon)
        want = oracle_hitting(abst, goal)
        if want is math.inf or want > horizon:
            assert got is UNBOUNDED
        else:
            assert got == want

        # soundness transfer: certified abstraction => every sampled word complies
        if res.holds:
            for b in behs:
                assert _word_satisfies(b.word, goal, safe, abst.alphabet)


def test_budget_monotone_in_horizon():
    abst = build_salca(HALVING, 3, Y)
    prev = set()
    for h in range(1, 5):
        res = rwa_check(abst, spec_goal_y1(h))
        now = {k for k, b in res.winning.items() if b <= h}
        assert prev <= now
        prev = now


def test_hitting_cap_zero():
    abst = build_salca(HALVING, 3, Y)
    assert worst_case_hitting_time(abst, {"y0", "y1"}, cap=0) == 0
    assert worst_case_hitting_time(abst, {"y1"}, cap=0) is UNBOUNDED


def test_report_json_shape():
    abst = build_salca(HALVING, 2, Y)
    res = rwa_check(abst, spec_goal_y1())
    doc = res.to_json_dict()
    assert doc["holds"] is False
    assert doc["n_initial"] == 3
    assert doc["counterexample_sample_ids"] == [0]
    assert sum(doc["budgets_histogram"].values()) == doc["n_winning"]


def test_init_symbols_restriction():
    abst = build_salca(HALVING, 2, Y)
    # restricting initial states to y1-first windows removes the failing one
    spec = RwaSpec(horizon=4, goal_symbols={"y1"}, safe_symbols={"y0", "y1"},
                   init_symbols={"y1"})
    res = rwa_check(abst, spec)
    assert res.holds
    assert res.n_initial == 1
