"""Scenario-theory risk certificate for sampled abstractions.

The complexity of a sampled abstraction is the size of the smallest subset
of the sampled words whose windows regenerate the full window set - a set
cover.  Small deduplicated instances are solved exactly by branch and
bound; larger ones get the greedy cover size, flagged as an upper bound
(which is certificate-safe because the risk level is nondecreasing in the
complexity).

The risk level ``epsilon(n, k, beta)`` is ``1 - t`` where ``t`` is the
unique root in (0, 1) of

    beta/(n+1) * sum_{m=k}^{n} C(m,k) t^(m-k)  =  C(n,k) t^(n-k),

evaluated in the log domain and bisected to 12 significant digits.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from chargecert.abstraction import Behavior, subsequences

EXACT = "exact"
GREEDY = "greedy-upper-bound"
_EXACT_LIMIT = 20


class CertificateError(Exception):
    pass


@dataclass(frozen=True)
class ScenarioCertificate:
    n_samples: int
    ell: int
    horizon: int
    beta: float
    s_star: int
    epsilon: float
    method: str
    abstraction_hash: str | None = None
    spec_hash: str | None = None
    created_at: str | None = None

    def __post_init__(self):
        if not (1 <= self.s_star <= self.n_samples):
            raise CertificateError("complexity must lie in [1, n_samples]")
        if not (0.0 < self.epsilon <= 1.0):
            raise CertificateError("epsilon must lie in (0, 1]")
        if self.method not in (EXACT, GREEDY):
            raise CertificateError(f"unknown method {self.method!r}")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["n"] = d.pop("n_samples")
        d["schema_version"] = 1
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def greedy_cover(sets: list[frozenset]) -> int:
    universe = frozenset().union(*sets)
    covered: set = set()
    count = 0
    while covered != universe:
        best = max(range(len(sets)), key=lambda i: len(sets[i] - covered))
        gain = sets[best] - covered
        if not gain:
            raise CertificateError("cover sets do not span their own universe")
        covered |= gain
        count += 1
    return count


def exact_cover(sets: list[frozenset]) -> int:
    """Minimum cover size by branch and bound over the deduplicated sets."""
    universe = frozenset().union(*sets)
    elem_id = {e: i for i, e in enumerate(universe)}
    masks = [sum(1 << elem_id[e] for e in s) for s in sets]
    full = (1 << len(universe)) - 1
    best = greedy_cover(sets)

    def max_gain(cov: int) -> int:
        return max((m & ~cov).bit_count() for m in masks)

    def dfs(cov: int, used: int) -> None:
        nonlocal best
        if cov == full:
            best = min(best, used)
            return
        if used + 1 >= best:
            return
        remaining = (full & ~cov).bit_count()
        top = max_gain(cov)
        if top == 0 or used + math.ceil(remaining / top) >= best:
            return
        # branch on the rarest uncovered element
        rem = full & ~cov
        pick, freq = -1, None
        r = rem
        while r:
            bit = r & -r
            f = sum(1 for m in masks if m & bit)
            if freq is None or f < freq:
                freq, pick = f, bit
            r &= r - 1
        options = [i for i, m in enumerate(masks) if m & pick]
        options.sort(key=lambda i: (masks[i] & ~cov).bit_count(), reverse=True)
        for i in options:
            dfs(cov | masks[i], used + 1)

    dfs(0, 0)
    return best


def min_cover(sets: list[frozenset]) -> tuple[int, str]:
    """(cover size, method); exact when few distinct sets remain after dedup."""
    if not sets:
        raise CertificateError("empty cover instance")
    distinct = list(dict.fromkeys(sets))
    if len(distinct) <= _EXACT_LIMIT:
        return exact_cover(distinct), EXACT
    return greedy_cover(distinct), GREEDY


def complexity(behaviors: list[Behavior], ell: int) -> tuple[int, str]:
    """Scenario complexity of the sampled words at window length ``ell``."""
    sets = [frozenset(subsequences(b, ell)) for b in behaviors]
    return min_cover(sets)


def epsilon(n: int, k: int, beta: float) -> float:
    """Risk level of the (n, k, beta) scenario certificate."""
    if not (0 <= k <= n):
        raise CertificateError(f"complexity {k} outside [0, {n}]")
    if not (0.0 < beta < 1.0):
        raise CertificateError("beta must lie in (0, 1)")
    if k == n:
        return 1.0

    m = np.arange(k, n + 1, dtype=np.float64)
    log_cmk = gammaln(m + 1) - gammaln(k + 1.0) - gammaln(m - k + 1)
    log_cnk = float(log_cmk[-1])
    log_lhs_const = math.log(beta) - math.log(n + 1.0)

    def sign(t: float) -> float:
        logt = math.log(t)
        lhs = log_lhs_const + logsumexp(log_cmk + (m - k) * logt)
        rhs = log_cnk + (n - k) * logt
        return lhs - rhs

    lo, hi = 1e-300, 1.0 - 1e-16
    if sign(hi) > 0:  # root is numerically at 1: vacuous bound
        return 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if sign(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 1.0 - 0.5 * (lo + hi)
