"""Finite transition systems over label windows, built by the domino rule.

States of the abstraction are the distinct length-``ell`` windows observed
across a set of fixed-length label words; a window may transition to any
window whose first ``ell - 1`` symbols equal its last ``ell - 1``.  Windows
are interned to dense integers and packed into a single machine word when
``card(alphabet) ** ell`` fits; otherwise arbitrary-precision integers are
used transparently.  Edges are never materialized: successor sets are
resolved from the packed-key order (all keys sharing a given
(ell-1)-prefix form one contiguous range).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

_INT64_LIMIT = 2**62


class AbstractionError(Exception):
    pass


class ShapeError(AbstractionError):
    """Behaviors of mixed length, or a window length out of range."""


class CapacityError(AbstractionError):
    """Path enumeration exceeded its guard."""


@dataclass(frozen=True)
class Alphabet:
    """Ordered finite symbol set with a symbol <-> integer bijection."""

    symbols: tuple[str, ...]
    index: dict = field(repr=False, compare=False)

    @classmethod
    def of(cls, symbols) -> "Alphabet":
        symbols = tuple(symbols)
        if len(set(symbols)) != len(symbols):
            raise AbstractionError("duplicate symbols in alphabet")
        return cls(symbols=symbols, index={s: i for i, s in enumerate(symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, word) -> np.ndarray:
        return np.array([self.index[s] for s in word], dtype=np.int64)

    def decode(self, ids) -> tuple[str, ...]:
        return tuple(self.symbols[int(i)] for i in ids)


@dataclass(frozen=True)
class Behavior:
    """A fixed-length label word together with the id of its source sample."""

    word: tuple[int, ...]
    source_id: int = -1

    def __len__(self) -> int:
        return len(self.word)


@dataclass(frozen=True, order=True)
class EllSequence:
    window: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.window)


def subsequences(b: Behavior, ell: int) -> set[EllSequence]:
    """All ``len(b) - ell + 1`` windows of ``b``, deduplicated."""
    if not (1 < ell <= len(b)):
        raise ShapeError(f"window length {ell} outside (1, {len(b)}]")
    w = b.word
    return {EllSequence(w[j : j + ell]) for j in range(len(w) - ell + 1)}


def _pack_words(words: np.ndarray, ell: int, base: int) -> np.ndarray:
    """Pack every ell-window of every row into int64 keys, shape (n, W)."""
    win = np.lib.stride_tricks.sliding_window_view(words, ell, axis=1)
    powers = base ** np.arange(ell - 1, -1, -1, dtype=np.int64)
    return win.astype(np.int64) @ powers


@dataclass(frozen=True, eq=False)
class Abstraction:
    """Domino-rule transition system over packed window keys.

    ``states`` is sorted ascending; ``initial`` is a sorted subset.  The
    output of a state is its first symbol, i.e. ``key // base**(ell-1)``.
    ``provenance`` maps initial keys to the sorted source ids whose words
    start with that window.
    """

    ell: int
    alphabet: Alphabet
    states: np.ndarray          # sorted int64 keys (or object array of ints)
    initial: np.ndarray
    provenance: dict
    packed: bool = True

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def base(self) -> int:
        return len(self.alphabet)

    @property
    def _prefix_div(self):
        return self.base ** (self.ell - 1)

    def output_of(self, key) -> int:
        return int(key) // self._prefix_div

    def window_of(self, key) -> tuple[int, ...]:
        digits = []
        k = int(key)
        for _ in range(self.ell):
            digits.append(k % self.base)
            k //= self.base
        return tuple(reversed(digits))

    def key_of(self, window) -> int:
        k = 0
        for s in window:
            k = k * self.base + int(s)
        return k

    def successors(self, key) -> np.ndarray:
        """Domino successors: states whose (ell-1)-prefix equals our suffix."""
        suffix = int(key) % self._prefix_div
        lo = np.searchsorted(self.states, suffix * self.base, side="left")
        hi = np.searchsorted(self.states, suffix * self.base + self.base, side="left")
        return self.states[lo:hi]

    def has_state(self, key) -> bool:
        i = np.searchsorted(self.states, key)
        return i < len(self.states) and self.states[i] == key

    def edge_list(self) -> list[tuple[int, int]]:
        """All domino-compatible pairs, as indices into ``states``."""
        pos = {int(k): i for i, k in enumerate(self.states)}
        out = []
        for i, k in enumerate(self.states):
            for succ in self.successors(k):
                out.append((i, pos[int(succ)]))
        return out

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "ell": self.ell,
            "alphabet": list(self.alphabet.symbols),
            "states": [list(self.window_of(k)) for k in self.states],
            "initial": [int(np.searchsorted(self.states, k)) for k in self.initial],
            "edges": sorted(self.edge_list()),
            "provenance": {
                str(int(np.searchsorted(self.states, k))): list(map(int, v))
                for k, v in sorted(self.provenance.items(), key=lambda kv: int(kv[0]))
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def to_dot(self) -> str:
        lines = ["digraph salca {", "  rankdir=LR;"]
        init = set(int(k) for k in self.initial)
        for i, k in enumerate(self.states):
            text = ".".join(self.alphabet.decode(self.window_of(k)))
            shape = "doublecircle" if int(k) in init else "circle"
            lines.append(f'  s{i} [label="{text}", shape={shape}];')
        for i, j in self.edge_list():
            lines.append(f"  s{i} -> s{j};")
        lines.append("}")
        return "\n".join(lines)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Abstraction":
        alpha = Alphabet.of(doc["alphabet"])
        ell = int(doc["ell"])
        base = len(alpha)
        keys = np.sort(np.array(
            [_key_from_window(w, base) for w in doc["states"]], dtype=np.int64
        ))
        initial = np.sort(keys[np.array(doc["initial"], dtype=int)]) if doc["initial"] else keys[:0]
        prov = {
            int(keys[int(i)]): list(map(int, v)) for i, v in doc.get("provenance", {}).items()
        }
        return cls(ell=ell, alphabet=alpha, states=keys, initial=initial, provenance=prov)


def _key_from_window(window, base: int) -> int:
    k = 0
    for s in window:
        k = k * base + int(s)
    return k


def build_salca(behaviors, ell: int, alphabet: Alphabet) -> Abstraction:
    """Data-driven abstraction from sampled fixed-length behaviors.

    States are the union of all observed windows, initial states the first
    windows, with source-id provenance recorded for them.  The result is
    independent of the iteration order of ``behaviors``.
    """
    behaviors = list(behaviors)
    if not behaviors:
        raise ShapeError("need at least one behavior")
    horizon = len(behaviors[0])
    if any(len(b) != horizon for b in behaviors):
        raise ShapeError("behaviors must share one length")
    if not (1 < ell <= horizon):
        raise ShapeError(f"window length {ell} outside (1, {horizon}]")
    base = len(alphabet)
    if base ** ell >= _INT64_LIMIT:
        return _build_salca_bigint(behaviors, ell, alphabet)

    words = np.array([b.word for b in behaviors], dtype=np.int64)
    if words.min() < 0 or words.max() >= base:
        raise ShapeError("behavior contains symbols outside the alphabet")
    keys = _pack_words(words, ell, base)
    states = np.unique(keys)
    first = keys[:, 0]
    initial = np.unique(first)
    provenance: dict[int, list[int]] = {}
    src = np.array([b.source_id for b in behaviors])
    order = np.argsort(first, kind="stable")
    for k, sid in zip(first[order], src[order]):
        provenance.setdefault(int(k), []).append(int(sid))
    for v in provenance.values():
        v.sort()
    return Abstraction(
        ell=ell, alphabet=alphabet, states=states, initial=initial,
        provenance=provenance,
    )


def _build_salca_bigint(behaviors, ell: int, alphabet: Alphabet) -> Abstraction:
    # fallback for card(alphabet)**ell beyond one machine word
    base = len(alphabet)
    states: set[int] = set()
    provenance: dict[int, list[int]] = {}
    for b in behaviors:
        w = b.word
        if any(s < 0 or s >= base for s in w):
            raise ShapeError("behavior contains symbols outside the alphabet")
        for j in range(len(w) - ell + 1):
            states.add(_key_from_window(w[j : j + ell], base))
        k0 = _key_from_window(w[:ell], base)
        provenance.setdefault(k0, []).append(int(b.source_id))
    for v in provenance.values():
        v.sort()
    sorted_states = np.array(sorted(states), dtype=object)
    initial = np.array(sorted(provenance.keys()), dtype=object)
    return Abstraction(
        ell=ell, alphabet=alphabet, states=sorted_states, initial=initial,
        provenance=provenance, packed=False,
    )


def enumerate_behaviors(abst: Abstraction, horizon: int, guard: int = 10**6) -> set:
    """All ``horizon``-long output words realizable from initial states.

    A path of n states reads its n first symbols plus the tail of its final
    window (window overlap), so paths of length ``horizon - ell + 1`` are
    enumerated.  Raises ``CapacityError`` past ``guard`` paths.
    """
    if horizon < abst.ell:
        raise ShapeError(f"horizon {horizon} below window length {abst.ell}")
    n_steps = horizon - abst.ell + 1
    words: set[tuple[int, ...]] = set()
    count = 0

    def tail(key) -> tuple[int, ...]:
        return abst.window_of(key)[1:]

    stack: list[tuple[int, tuple[int, ...]]] = []
    for k0 in abst.initial:
        stack.append((1, (int(k0),)))
    while stack:
        depth, path = stack.pop()
        if depth == n_steps:
            count += 1
            if count > guard:
                raise CapacityError(f"more than {guard} paths at horizon {horizon}")
            prefix = tuple(abst.output_of(k) for k in path)
            words.add(prefix + tail(path[-1]))
            continue
        for succ in abst.successors(path[-1]):
            stack.append((depth + 1, path + (int(succ),)))
    return words


def behavior_set(behaviors) -> set[tuple[int, ...]]:
    return {tuple(b.word) for b in behaviors}
