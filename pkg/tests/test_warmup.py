"""Warm-up scheme tests: the per-message ECC scheme and the blocked scheme
with the pluggable inner coder."""

import math

import numpy as np
import pytest

from icx.entropy import binary_entropy
from icx.protocol import blocks_tree, one_way_tree
from icx.warmup import (
    BlockedRandomConfig,
    IdentityInnerCoder,
    MajorityRepeatInnerCoder,
    OutOfScopeDependencyError,
    binom_tail_log2,
    blocked_random_simulate,
    message_code_length,
    trivial_simulate,
    trivial_simulate_protocol,
)


def test_binom_tail_matches_direct():
    n, k, eps = 40, 6, 0.05
    direct = sum(math.comb(n, i) * eps ** i * (1 - eps) ** (n - i)
                 for i in range(k + 1, n + 1))
    assert abs(2.0 ** binom_tail_log2(n, k, eps) - direct) < 1e-12


def test_trivial_zero_noise_exact_rate():
    lengths = [100, 220, 150]
    out = trivial_simulate(lengths, eps=0.0, seed=1)
    assert out.success
    assert out.rate == sum(lengths) / out.coded_rounds


def test_trivial_monte_carlo_success_rate():
    # desk instance: n = 4096, messages of b = ceil(8 log2 n / eps * scale)
    eps, scale = 0.01, 0.05
    b = math.ceil(8 * math.log2(4096) / eps * scale)  # 480 bits
    k = 4096 // b
    lengths = [b] * k
    fails = sum(not trivial_simulate(lengths, eps, seed=s).success
                for s in range(1000))
    assert fails / 1000 <= 0.01


def test_trivial_forced_failure_detected():
    # a message corrupted beyond d/2 derails the simulation: with eps near
    # 1/2 the per-message failure is near certain
    out = trivial_simulate([64] * 4, eps=0.45, seed=0)
    assert not out.success and out.failures > 0


def test_trivial_rate_trend_in_eps():
    # overhead grows with eps (rank correlation over the grid)
    overheads = []
    for eps in (0.005, 0.01, 0.02, 0.04):
        out = trivial_simulate([2048] * 8, eps, seed=1)
        overheads.append(1 / out.rate - 1)
    xs = [e * math.log2(1 / e) for e in (0.005, 0.01, 0.02, 0.04)]
    assert all(o2 > o1 for o1, o2 in zip(overheads, overheads[1:]))
    rho = np.corrcoef(np.argsort(np.argsort(xs)),
                      np.argsort(np.argsort(overheads)))[0, 1]
    assert rho >= 0.9


def test_trivial_protocol_wrapper_requires_non_adaptive():
    out = trivial_simulate_protocol(blocks_tree([64, 64]), 0.01, seed=2)
    assert out.n_rounds == 128
    from icx.protocol import prf_tree
    with pytest.raises(ValueError, match="non-adaptive"):
        trivial_simulate_protocol(prf_tree(8, 0), 0.01)


def test_blocked_zero_noise_identity_stub():
    out = blocked_random_simulate(one_way_tree(512), eps=0.0, seed=0)
    assert out.success and out.failures == 0


def test_blocked_chunk_failure_rate_below_eps4():
    # per-chunk failure frequency <= eps^4 + 3 sigma at desk parameters
    eps = 0.05
    total_chunks = 0
    total_fails = 0
    for seed in range(200):
        out = blocked_random_simulate(one_way_tree(16384), eps, seed=seed)
        total_chunks += out.detail["symbols"]
        total_fails += out.failures
    p_hat = total_fails / total_chunks
    target = eps ** 4
    sigma = math.sqrt(target * (1 - target) / total_chunks)
    assert p_hat <= target + 3 * sigma


def test_blocked_strict_mode_requires_inner():
    with pytest.raises(OutOfScopeDependencyError, match="out-of-scope"):
        blocked_random_simulate(one_way_tree(256), 0.01,
                                config=BlockedRandomConfig(strict=True))


def test_blocked_majority_inner_tolerates_single_symbol_error():
    rng_fails = 0
    for seed in range(50):
        out = blocked_random_simulate(one_way_tree(8192), 0.05,
                                      inner=MajorityRepeatInnerCoder(), seed=seed)
        rng_fails += not out.success
    assert rng_fails <= 1


def test_blocked_decode_matches_brute_force_small_code():
    # chunk decode is bounded-distance against the code distance; at small
    # sizes that agrees with exhaustive nearest-codeword on real codes
    from icx.bitops import random_bits
    from icx.codes import CodeSearchParams, gv_search, nearest_codeword_decode
    rng = np.random.default_rng(0)
    code = gv_search(6, 18, 6, CodeSearchParams(rng_seed=2, max_attempts=20000))
    for _ in range(30):
        msg = random_bits(rng, 6)
        cw = code.encode(msg)
        nflips = int(rng.integers(0, (code.min_distance - 1) // 2 + 1))
        rec = cw.copy()
        if nflips:
            rec[rng.choice(18, nflips, replace=False)] ^= 1
        assert np.array_equal(nearest_codeword_decode(code, rec), msg)


def test_message_code_length_scaling():
    n1, d1 = message_code_length(512, 0.01, -20)
    n2, d2 = message_code_length(512, 0.04, -20)
    assert n2 > n1  # more noise, more redundancy
    assert d1 >= math.ceil(0.04 * n1) - 1
