"""Random-error warm-up schemes: per-message error correction for
non-adaptive protocols, and the blocked scheme with a pluggable inner coder.

Both schemes run over a BSC(eps).  Message/chunk codes are random linear
codes at a rate solved from the exact binomial tail so that the per-codeword
failure target holds; decoding is modelled as bounded-distance against the
certified code distance (success iff the realised flip count stays below
half the distance, which is exactly the event the scheme's analysis counts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import binary_entropy, log2_binom_cdf_table
from .protocol import ALICE, path_block_lengths

__all__ = [
    "TrivialSchemeConfig",
    "trivial_simulate",
    "BlockedRandomConfig",
    "blocked_random_simulate",
    "InnerCoderAdapter",
    "IdentityInnerCoder",
    "MajorityRepeatInnerCoder",
    "OutOfScopeDependencyError",
    "message_code_length",
]


class OutOfScopeDependencyError(RuntimeError):
    """Raised in strict mode when the prior-work inner coder is required."""


def binom_tail_log2(n: int, k: int, eps: float) -> float:
    """log2 Pr[Bin(n, eps) > k], exact summation in log space."""
    if k >= n:
        return float("-inf")
    if eps <= 0.0:
        return float("-inf")
    terms = []
    le, l1e = math.log2(eps), math.log2(1 - eps)
    lg = math.lgamma
    for i in range(k + 1, n + 1):
        lc = (lg(n + 1) - lg(i + 1) - lg(n - i + 1)) / math.log(2)
        terms.append(lc + i * le + (n - i) * l1e)
    m = max(terms)
    return m + math.log2(sum(2.0 ** (t - m) for t in terms))


def message_code_length(k: int, eps: float, log2_fail: float,
                        rel_distance: float | None = None) -> tuple[int, int]:
    """Smallest (n, d) with d = ceil(rel_distance * n) such that
    Pr[Bin(n, eps) > d/2] <= 2^log2_fail.  Default distance 4*eps (twice the
    expected flip fraction, the usual Omega(eps) margin)."""
    delta = rel_distance if rel_distance is not None else min(4 * eps, 0.4)
    n = k + 8
    while True:
        d = math.ceil(delta * n)
        if n > k + d and binom_tail_log2(n, d // 2, eps) <= log2_fail:
            return n, d
        n = max(n + 1, int(n * 1.02))


@dataclass
class TrivialSchemeConfig:
    """Per-message ECC scheme for non-adaptive protocols with a minimum
    message length (the union bound needs b = Omega((1/eps) log n))."""

    eps: float
    rel_distance: float | None = None
    fail_target_log2: float | None = None  # per message; default n^-2 overall

    def resolved_fail(self, n_rounds: int, k_messages: int) -> float:
        if self.fail_target_log2 is not None:
            return self.fail_target_log2
        return -2 * math.log2(max(n_rounds, 2)) - math.log2(max(k_messages, 1))


@dataclass
class SchemeResult:
    success: bool
    rate: float
    n_rounds: int
    coded_rounds: int
    failures: int
    detail: dict = field(default_factory=dict)


def trivial_simulate(message_lengths, eps: float, seed: int = 0,
                     config: TrivialSchemeConfig | None = None) -> SchemeResult:
    """Simulate the per-message scheme: each message of b_i bits is sent as
    a codeword of b_i' bits over BSC(eps); a message fails iff its flip
    count exceeds half the code distance, after which the conversation is
    derailed (the scheme has no recovery mechanism)."""
    lengths = list(message_lengths)
    n = sum(lengths)
    cfg = config or TrivialSchemeConfig(eps)
    fail = cfg.resolved_fail(n, len(lengths))
    rng = np.random.default_rng(seed)
    shapes = {}
    coded = 0
    failures = 0
    for b_i in lengths:
        if b_i not in shapes:
            shapes[b_i] = message_code_length(b_i, eps, fail, cfg.rel_distance)
        n_i, d_i = shapes[b_i]
        coded += n_i
        flips = rng.binomial(n_i, eps) if eps > 0 else 0
        if flips > d_i // 2:
            failures += 1
    return SchemeResult(failures == 0, n / coded, n, coded, failures,
                        {"messages": len(lengths)})


def trivial_simulate_protocol(tree, eps: float, seed: int = 0,
                              config: TrivialSchemeConfig | None = None) -> SchemeResult:
    """Convenience wrapper taking a non-adaptive tree."""
    if not tree.non_adaptive:
        raise ValueError("the trivial scheme needs a non-adaptive protocol")
    lengths = path_block_lengths(tree, np.zeros(tree.depth, dtype=np.uint8))
    return trivial_simulate(lengths, eps, seed, config)


# ---------------------------------------------------------------------------
# Blocked scheme with inner-coder adapter
# ---------------------------------------------------------------------------

class InnerCoderAdapter:
    """Interface for the prior-work interactive coder the blocked scheme
    composes with.  It receives the per-symbol error flags of the q-ary
    protocol and reports whether the simulation survived them."""

    name = "abstract"

    def simulate(self, symbol_errors: np.ndarray, rng) -> bool:
        raise NotImplementedError


class IdentityInnerCoder(InnerCoderAdapter):
    """Pass-through stub: no inter-symbol redundancy, so the simulation
    survives iff no q-ary symbol was corrupted (plumbing tests only)."""

    name = "identity"

    def simulate(self, symbol_errors, rng) -> bool:
        return not symbol_errors.any()


class MajorityRepeatInnerCoder(InnerCoderAdapter):
    """Toy inner coder: each q-ary symbol is repeated three times and decided
    by majority, tolerating any single corrupted copy per symbol."""

    name = "majority-repeat"
    repeats = 3

    def simulate(self, symbol_errors, rng) -> bool:
        # the adapter sees per-copy corruption; a symbol survives unless two
        # of its three copies are corrupted
        per_copy = rng.random((symbol_errors.size, self.repeats))
        p = symbol_errors.astype(float)  # corruption prob per copy
        bad = (per_copy < p[:, None]).sum(axis=1) >= 2
        return not bad.any()


@dataclass
class BlockedRandomConfig:
    """Chunk-code parameters: block to b = block_mult * log2(1/eps)/eps bits,
    chunk distance d = 2 * c_chunk * log2(1/eps), code length
    b' = b + (2 * c_chunk + delta_chunk) * log2(1/eps)^2 (c, delta solved so
    the exact per-chunk failure stays below the eps^4 target)."""

    block_mult: float = 4.0
    c_chunk: float | None = None  # solved from the eps^4 target if None
    delta_chunk: float = 4.0
    strict: bool = False


def blocked_random_simulate(tree, eps: float, inner: InnerCoderAdapter | None = None,
                            seed: int = 0,
                            config: BlockedRandomConfig | None = None) -> SchemeResult:
    """The blocked random-error scheme: block the protocol, view it as a
    q-ary protocol, run the inner coder over symbol errors, and protect each
    chunk with a code whose per-chunk failure probability is below eps^4."""
    cfg = config or BlockedRandomConfig()
    if inner is None:
        if cfg.strict:
            raise OutOfScopeDependencyError(
                "the inner interactive coder is out-of-scope prior work; "
                "pass an adapter (IdentityInnerCoder for plumbing tests)")
        inner = IdentityInnerCoder()
    log_eps = math.log2(1 / eps) if eps > 0 else 1.0
    b = max(8, math.ceil(cfg.block_mult * log_eps / eps)) if eps > 0 else 64
    from .protocol import blocking_transform
    blocked = blocking_transform(tree, b)
    n_b = blocked.rounds
    n_sym = n_b // b

    if eps > 0:
        if cfg.c_chunk is None:
            bp, d = message_code_length(b, eps, 4 * math.log2(eps) - 1,
                                        rel_distance=None)
            c_chunk = d / (2 * log_eps)
        else:
            c_chunk = cfg.c_chunk
            d = math.ceil(2 * c_chunk * log_eps)
            bp = b + math.ceil((2 * c_chunk + cfg.delta_chunk) * log_eps ** 2)
            if binom_tail_log2(bp, d // 2, eps) > 4 * math.log2(eps):
                raise ValueError("chunk code cannot reach the eps^4 target; "
                                 "raise c_chunk or delta_chunk")
    else:
        bp, d = b, 0

    rng = np.random.default_rng(seed)
    flips = rng.binomial(bp, eps, size=n_sym) if eps > 0 else np.zeros(n_sym, int)
    symbol_errors = flips > d // 2
    ok = inner.simulate(symbol_errors, rng)
    return SchemeResult(bool(ok), n_b / (n_sym * bp) * (tree.depth / n_b),
                        tree.depth, n_sym * bp, int(symbol_errors.sum()),
                        {"b": b, "b_prime": bp, "d": d, "symbols": n_sym,
                         "inner": inner.name,
                         "chunk_fail_rate": float(symbol_errors.mean())})
