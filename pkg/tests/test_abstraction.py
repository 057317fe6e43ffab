import numpy as np
import pytest

from chargecert.abstraction import (
    Abstraction,
    Alphabet,
    Behavior,
    CapacityError,
    EllSequence,
    ShapeError,
    behavior_set,
    build_salca,
    enumerate_behaviors,
    subsequences,
)

Y = Alphabet.of(["y0", "y1"])


def beh(text, sid=-1):
    # text like "0011" over alphabet indices
    return Behavior(tuple(int(c) for c in text), source_id=sid)


HALVING_BEHAVIORS = [beh("0011", 0), beh("0111", 1), beh("1111", 2)]


def windows(abst):
    return {abst.window_of(k) for k in abst.states}


def edges_as_windows(abst):
    return {
        (abst.window_of(abst.states[i]), abst.window_of(abst.states[j]))
        for i, j in abst.edge_list()
    }


def test_alphabet_roundtrip_and_duplicates():
    assert Y.decode(Y.encode(["y1", "y0"])) == ("y1", "y0")
    with pytest.raises(Exception):
        Alphabet.of(["a", "a"])


def test_subsequences_examples():
    assert subsequences(beh("0011"), 2) == {
        EllSequence((0, 0)), EllSequence((0, 1)), EllSequence((1, 1)),
    }
    assert subsequences(beh("1111"), 2) == {EllSequence((1, 1))}
    b6 = Behavior((0, 1, 2, 3, 4, 5))
    assert len(subsequences(b6, 3)) == 4
    with pytest.raises(ShapeError):
        subsequences(beh("0011"), 1)
    with pytest.raises(ShapeError):
        subsequences(beh("0011"), 5)


def test_build_salca_l2_matches_known_graph():
    abst = build_salca(HALVING_BEHAVIORS, 2, Y)
    assert windows(abst) == {(0, 0), (0, 1), (1, 1)}
    assert edges_as_windows(abst) == {
        ((0, 0), (0, 0)),
        ((0, 0), (0, 1)),
        ((0, 1), (1, 1)),
        ((1, 1), (1, 1)),
    }
    assert {abst.window_of(k) for k in abst.initial} == {(0, 0), (0, 1), (1, 1)}
    assert abst.provenance[abst.key_of((0, 0))] == [0]


def test_build_salca_l3_chain():
    abst = build_salca(HALVING_BEHAVIORS, 3, Y)
    assert windows(abst) == {(0, 0, 1), (0, 1, 1), (1, 1, 1)}
    assert edges_as_windows(abst) == {
        ((0, 0, 1), (0, 1, 1)),
        ((0, 1, 1), (1, 1, 1)),
        ((1, 1, 1), (1, 1, 1)),
    }


def test_single_repeated_behavior_self_loop():
    abst = build_salca([beh("1111")], 2, Y)
    assert windows(abst) == {(1, 1)}
    assert edges_as_windows(abst) == {((1, 1), (1, 1))}


def test_enumerate_l2_overapproximates():
    abst = build_salca(HALVING_BEHAVIORS, 2, Y)
    words = enumerate_behaviors(abst, 4)
    assert behavior_set(HALVING_BEHAVIORS) <= words
    assert (0, 0, 0, 0) in words  # spurious word from the (0,0) self-loop


def test_enumerate_l3_exact():
    abst = build_salca(HALVING_BEHAVIORS, 3, Y)
    assert enumerate_behaviors(abst, 4) == behavior_set(HALVING_BEHAVIORS)


def test_enumerate_horizon_equals_ell():
    abst = build_salca(HALVING_BEHAVIORS, 3, Y)
    assert enumerate_behaviors(abst, 3) == {
        abst.window_of(k) for k in abst.initial
    }


def test_enumerate_guard():
    # two symbols, complete graph on all 2-windows -> 2^(h-1) words per start
    full = [beh("0000"), beh("0101"), beh("1010"), beh("1111"), beh("0011"), beh("1100")]
    abst = build_salca(full, 2, Y)
    with pytest.raises(CapacityError):
        enumerate_behaviors(abst, 40, guard=1000)


def test_mixed_lengths_rejected():
    with pytest.raises(ShapeError):
        build_salca([beh("0011"), beh("001")], 2, Y)
    with pytest.raises(ShapeError):
        build_salca([], 2, Y)
    with pytest.raises(ShapeError):
        build_salca([Behavior((0, 5, 0, 0))], 2, Y)


def test_permutation_invariance():
    a = build_salca(HALVING_BEHAVIORS, 2, Y)
    b = build_salca(HALVING_BEHAVIORS[::-1], 2, Y)
    assert a.to_json() == b.to_json()


def _random_system(rng, n_states, n_syms, horizon):
    """Deterministic finite map with random labeling; one behavior per initial."""
    succ = rng.integers(0, n_states, size=n_states)
    lab = rng.integers(0, n_syms, size=n_states)
    behaviors = []
    for x0 in range(n_states):
        x, word = x0, []
        for _ in range(horizon):
            word.append(int(lab[x]))
            x = int(succ[x])
        behaviors.append(Behavior(tuple(word), source_id=x0))
    return behaviors


def test_soundness_and_ell_monotonicity_random():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n_states = int(rng.integers(2, 7))
        n_syms = int(rng.integers(2, 4))
        horizon = int(rng.integers(5, 11))
        alpha = Alphabet.of([f"s{i}" for i in range(n_syms)])
        behs = _random_system(rng, n_states, n_syms, horizon)
        sampled = behavior_set(behs)
        prev = None
        for ell in (2, 3, 4):
            abst = build_salca(behs, ell, alpha)
            words = enumerate_behaviors(abst, horizon, guard=200_000)
            assert sampled <= words
            if prev is not None:
                assert words <= prev  # larger ell tightens the language
            prev = words
            assert abst.n_states <= min(
                n_syms**ell, sum(len(subsequences(b, ell)) for b in behs)
            )


def test_outputs_are_first_symbols():
    abst = build_salca(HALVING_BEHAVIORS, 2, Y)
    for k in abst.states:
        assert abst.output_of(k) == abst.window_of(k)[0]


def test_json_roundtrip_and_dot():
    abst = build_salca(HALVING_BEHAVIORS, 2, Y)
    doc = abst.to_json_dict()
    back = Abstraction.from_json_dict(doc)
    assert back.to_json() == abst.to_json()
    assert windows(back) == windows(abst)
    dot = abst.to_dot()
    assert "digraph" in dot and dot.count("->") == len(abst.edge_list())


def test_bigint_fallback_path():
    # alphabet large enough that card(Y)**ell overflows a machine word
    n_syms = 2100
    alpha = Alphabet.of([f"q{i}" for i in range(n_syms)])
    w1 = (0, 1, 2, 3, 4, 5, 6, 7)
    w2 = (2000, 1, 2, 3, 4, 5, 6, 9)
    abst = build_salca([Behavior(w1, 0), Behavior(w2, 1)], 6, alpha)
    assert not abst.packed
    assert abst.n_states == 5  # the words share the window (1,2,3,4,5,6)
    words = enumerate_behaviors(abst, 8)
    assert w1 in words and w2 in words
    assert abst.window_of(abst.key_of((2000, 1, 2, 3, 4, 5))) == (2000, 1, 2, 3, 4, 5)
