"""Hashing, stretching, exchange, and slot-assignment tests, including the
Monte-Carlo collision bounds (Properties 1 and 2) at 3-sigma tolerance."""

import math

import numpy as np
import pytest

from icx.bitops import pack_words, random_bits
from icx.codes import CodeSearchParams, gv_search
from icx.randomness import (
    HashSpec,
    RandomnessBudgetError,
    SharedRandomness,
    SmallBiasStream,
    exchange_decode,
    exchange_encode,
    inner_product_hash,
    inner_product_hash_words,
    slot_assignment,
    small_bias_stretch,
)

RNG = np.random.default_rng(42)


def test_hash_spec_seed_len():
    assert HashSpec(16, 8).seed_len == 128


def test_hash_zero_input_is_zero():
    for _ in range(10):
        r = random_bits(RNG, 8 * 4)
        assert not inner_product_hash(np.zeros(8, dtype=np.uint8), r).any()


def test_hash_small_case_by_hand():
    # l=2, p=1, X=(1,0), R=(1,1) -> <X,R> = 1
    out = inner_product_hash([1, 0], [1, 1])
    assert out.tolist() == [1]
    # direct GF(2) arithmetic on a second case: p=2
    out = inner_product_hash([1, 1, 0], [1, 0, 1, 0, 1, 1])
    assert out.tolist() == [(1 & 1) ^ (1 & 0), (1 & 0) ^ (1 & 1)]


def test_hash_matches_definition_oracle():
    for _ in range(50):
        l, p = int(RNG.integers(1, 12)), int(RNG.integers(1, 6))
        x, r = random_bits(RNG, l), random_bits(RNG, l * p)
        want = [int(np.bitwise_and(x, r[i * l:(i + 1) * l]).sum() & 1) for i in range(p)]
        assert inner_product_hash(x, r).tolist() == want


def test_hash_words_fast_path_agrees():
    for _ in range(50):
        l = int(RNG.integers(1, 200))
        p = int(RNG.integers(1, 9))
        x, r = random_bits(RNG, l), random_bits(RNG, l * p)
        slow = 0
        for bit in inner_product_hash(x, r).tolist():
            slow = (slow << 1) | bit
        # pack each seed row into the same word budget as x
        xw = pack_words(x)
        rw = np.stack([pack_words(r[i * l:(i + 1) * l]) for i in range(p)])
        assert inner_product_hash_words(xw, rw) == slow


def test_hash_collision_rate_property1():
    # Pr_R[hash(X,R) = hash(Y,R)] <= 2^-p for X != Y (uniform seeds)
    l, p, trials = 8, 4, 20000
    x = random_bits(RNG, l)
    y = x.copy()
    y[3] ^= 1
    coll = 0
    for _ in range(trials):
        r = random_bits(RNG, l * p)
        if np.array_equal(inner_product_hash(x, r), inner_product_hash(y, r)):
            coll += 1
    p_hat = coll / trials
    sigma = math.sqrt(2 ** -p * (1 - 2 ** -p) / trials)
    assert p_hat <= 2 ** -p + 3 * sigma


def test_stretch_deterministic_and_prefix_is_seed():
    seed = random_bits(RNG, 64)
    a = small_bias_stretch(seed, 2000, 2 ** -4)
    b = small_bias_stretch(seed, 2000, 2 ** -4)
    assert np.array_equal(a, b)
    assert np.array_equal(a[:15], seed[:15])  # degree-15 LFSR fill


def test_stretch_seed_too_short():
    with pytest.raises(ValueError, match="seed too short"):
        small_bias_stretch(random_bits(RNG, 4), 1 << 10, 2 ** -4)


def test_stretch_empirical_bias():
    # L=2^10, delta=2^-4: sample-mean bias of 200 random parity subsets
    L, delta, n_seeds = 1 << 10, 2 ** -4, 2000
    rng = np.random.default_rng(7)
    outs = np.empty((n_seeds, L), dtype=np.uint8)
    for i in range(n_seeds):
        outs[i] = small_bias_stretch(random_bits(rng, 32), L, delta)
    worst = 0.0
    for _ in range(200):
        size = int(rng.integers(1, 40))
        subset = rng.choice(L, size=size, replace=False)
        parities = outs[:, subset].sum(axis=1) & 1
        bias = abs(np.mean((-1.0) ** parities))
        worst = max(worst, bias)
    assert worst <= delta + 3.0 / math.sqrt(n_seeds)


def test_hash_seeded_from_stretch_property2():
    # collision prob <= 2^-p + delta when seeds come from the biased stretch
    l, p, delta = 8, 4, 2 ** -6
    n_seeds = 20000
    rng = np.random.default_rng(3)
    x = random_bits(rng, l)
    y = x.copy()
    y[0] ^= 1
    coll = 0
    for _ in range(n_seeds):
        stream = small_bias_stretch(random_bits(rng, 32), l * p, delta)
        if np.array_equal(inner_product_hash(x, stream), inner_product_hash(y, stream)):
            coll += 1
    p_hat = coll / n_seeds
    sigma = math.sqrt((2 ** -p) * (1 - 2 ** -p) / n_seeds)
    assert p_hat <= 2 ** -p + delta + 3 * sigma


def test_shared_randomness_budget_ledger():
    sr = SharedRandomness(random_bits(RNG, 100))
    sr.take(60, "stretch_seed")
    sr.take(40, "spare")
    assert sr.cursor == 100
    assert sr.accounting == {"stretch_seed": 60, "spare": 40}
    with pytest.raises(RandomnessBudgetError, match="exhausted"):
        sr.take(1, "overflow")


def test_shared_randomness_undersized_stretch_aborts():
    sr = SharedRandomness(random_bits(RNG, 10))  # < degree 15
    with pytest.raises(RandomnessBudgetError):
        sr.init_stretch(1 << 10, 2 ** -4)


def test_slot_assignment_distinct_and_deterministic():
    b, b_prime = 4, 20
    keys = random_bits(RNG, 64 * b_prime)
    z_a, z_b, data = slot_assignment(keys, b, b_prime)
    again = slot_assignment(keys, b, b_prime)
    assert np.array_equal(z_a, again[0]) and np.array_equal(z_b, again[1])
    allpos = np.concatenate([z_a, z_b, data])
    assert len(set(allpos.tolist())) == b_prime
    assert z_a.size == z_b.size == (b_prime - b) // 2
    assert np.array_equal(data, np.sort(data))


def test_slot_assignment_degenerate_no_data():
    z_a, z_b, data = slot_assignment(random_bits(RNG, 64 * 6), 0, 6)
    assert data.size == 0 and z_a.size == z_b.size == 3


def test_slot_assignment_uniformity():
    # every slot hosts control bits with frequency (b'-b)/b' +- MC slack
    b, b_prime, iters = 4, 16, 10000
    rng = np.random.default_rng(11)
    counts = np.zeros(b_prime)
    for _ in range(iters):
        z_a, z_b, _ = slot_assignment(random_bits(rng, 64 * b_prime), b, b_prime)
        counts[z_a] += 1
        counts[z_b] += 1
    target = (b_prime - b) / b_prime
    sigma = math.sqrt(target * (1 - target) / iters)
    assert np.all(np.abs(counts / iters - target) <= 4 * sigma)


def test_exchange_roundtrip_and_adversarial_corruption():
    code = gv_search(4, 25, 10, CodeSearchParams(rng_seed=7, max_attempts=20000))
    assert code.min_distance >= 10  # relative distance 2/5
    s = random_bits(RNG, 4)
    w = exchange_encode(code, s)
    # zero corruption
    assert np.array_equal(exchange_decode(code, w.copy(), w, s), s)
    # exactly floor(n/5) - 1 adversarial flips stays below half distance
    nflips = code.n // 5 - 1
    rec = w.copy()
    rec[np.argsort(RNG.random(code.n))[:nflips]] ^= 1
    assert np.array_equal(exchange_decode(code, rec, w, s), s)
    # beyond the radius the decode reports failure
    rec = w.copy()
    rec[:code.min_distance // 2 + 1] ^= 1
    assert exchange_decode(code, rec, w, s) is None


def test_stream_word_alignment_checks():
    stream = SmallBiasStream(random_bits(RNG, 64), 1 << 12, 2 ** -6)
    w = stream.word_slice(128, 256)
    assert w.size == 4
    with pytest.raises(ValueError):
        stream.word_slice(3, 64)
    with pytest.raises(RandomnessBudgetError):
        stream.word_slice(0, 1 << 13)
