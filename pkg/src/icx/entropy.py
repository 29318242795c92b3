"""Binary entropy, its inverse, and binomial tail machinery for code certificates.

Everything here is pure math shared by the code-search, engine-parameter and
analysis layers.  Tail sums are done in log2 space with exact `math.lgamma`
terms, so certificates stay meaningful at block lengths in the tens of
thousands where `math.comb` would be slow and floats would overflow.
"""

from __future__ import annotations

import math

__all__ = [
    "binary_entropy",
    "binary_entropy_inv",
    "log2_comb",
    "log2_binom_cdf",
    "certified_distance",
    "certified_systematic_distance",
]


def binary_entropy(x: float) -> float:
    """H(x) = -x log2 x - (1-x) log2 (1-x), with H(0) = H(1) = 0."""
    if x < 0.0 or x > 1.0:
        raise ValueError(f"entropy argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def binary_entropy_inv(y: float) -> float:
    """The unique inverse of H taking values in [0, 1/2].

    Arguments <= 0 map to 0.0 (the convention used for window-distance
    targets below the trivial threshold).
    """
    if y <= 0.0:
        return 0.0
    if y >= 1.0:
        return 0.5
    lo, hi = 0.0, 0.5
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def log2_comb(n: int, k: int) -> float:
    if k < 0 or k > n:
        return float("-inf")
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)) / math.log(2)


def _log2_sum(terms) -> float:
    m = max(terms, default=float("-inf"))
    if m == float("-inf"):
        return m
    return m + math.log2(sum(2.0 ** (t - m) for t in terms))


def log2_binom_cdf(n: int, k: int) -> float:
    """log2 of sum_{i=0}^{k} C(n, i); -inf for k < 0."""
    if k < 0:
        return float("-inf")
    k = min(k, n)
    return _log2_sum([log2_comb(n, i) for i in range(k + 1)])


def log2_binom_cdf_table(n: int, kmax: int) -> list[float]:
    """table[k] = log2 sum_{i<=k} C(n, i), computed incrementally in O(kmax)."""
    kmax = min(kmax, n)
    table = [0.0] * (kmax + 1)
    acc = 1.0  # running sum scaled by 2^shift
    shift = 0.0
    term_log = 0.0  # log2 C(n, k)
    for k in range(1, kmax + 1):
        term_log += math.log2((n - k + 1) / k)
        acc += 2.0 ** (term_log - shift)
        if acc > 1e300:
            shift += math.log2(acc)
            acc = 1.0
        table[k] = shift + math.log2(acc)
    return table


def certified_distance(k: int, n: int, log2_fail_budget: float) -> int:
    """Largest d such that a uniformly random [n, k] binary linear code has
    minimum distance >= d except with probability <= 2**log2_fail_budget.

    Uses the union bound Pr[some nonzero message lands on weight < d]
    <= 2^k * Pr[Bin(n, 1/2) < d]; each nonzero message of a random generator
    matrix maps to a uniform word.
    """
    table = log2_binom_cdf_table(n, n)
    d = 0
    while d < n:
        log2_p = k + table[d] - n  # weight <= d, i.e. < d+1
        if log2_p > log2_fail_budget:
            break
        d += 1
    return d


def certified_systematic_distance(k: int, n: int, log2_fail_budget: float) -> int:
    """Like `certified_distance` but for a systematic random code G = [I | A].

    A codeword for message m has weight wt(m) + wt(mA) with mA uniform over
    the n-k parity bits, so the union bound is taken per message weight.
    """
    r = n - k
    if r <= 0:
        raise ValueError("systematic code needs n > k")
    cdf = log2_binom_cdf_table(r, r)
    d = 0
    while d < n:
        # Pr[some m != 0 gets total weight <= d]
        terms = []
        for w in range(1, min(k, d) + 1):
            rem = d - w
            if rem > r:
                rem = r
            terms.append(log2_comb(k, w) + cdf[rem] - r)
        log2_p = _log2_sum(terms)
        if log2_p > log2_fail_budget:
            break
        d += 1
    return d
