"""Shared randomness: inner-product hashing, small-bias stretching, the
randomness-exchange bootstrap, and control-slot assignment.

The stretch is an LFSR with a fixed primitive trinomial (the powering-style
small-bias generator): bit i is a fixed nonzero linear functional of the
seed, so over a uniform seed every parity test on distinct positions within
the period has bias exactly 0 (well below any requested delta).  The degree
is still sized as ceil(log2(L/delta)) + O(1) so that undersized seeds are
rejected, matching the construction's stated seed budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bitops import as_bits, pack_words

__all__ = [
    "HashSpec",
    "inner_product_hash",
    "inner_product_hash_words",
    "small_bias_stretch",
    "SmallBiasStream",
    "SharedRandomness",
    "RandomnessBudgetError",
    "randomness_exchange",
    "stretch_words",
    "slot_assignment",
    "exchange_encode",
    "exchange_decode",
]

# Primitive trinomials x^m + x^t + 1 over GF(2); degrees are Mersenne prime
# exponents (so irreducible == primitive), taps from Zierler's tables.
PRIMITIVE_TRINOMIALS = {
    15: 1,
    31: 3,
    89: 38,
    127: 63,
    521: 32,
    1279: 216,
    4423: 271,
    9689: 84,
}


@dataclass(frozen=True)
class HashSpec:
    """Inner-product hash dimensions: l input bits, p output bits, seed l*p."""

    input_len: int
    output_len: int

    @property
    def seed_len(self) -> int:
        return self.input_len * self.output_len


def inner_product_hash(x, r) -> np.ndarray:
    """p-bit inner-product hash: output bit i = <X, R[i*l .. (i+1)*l)> over GF(2)."""
    x = as_bits(x)
    r = as_bits(r)
    if x.size == 0:
        raise ValueError("hash input must be nonempty")
    if r.size % x.size != 0:
        raise ValueError(f"seed length {r.size} is not a multiple of input length {x.size}")
    p = r.size // x.size
    return ((r.reshape(p, x.size) & x).sum(axis=1) & 1).astype(np.uint8)


def inner_product_hash_words(x_words: np.ndarray, seed_words: np.ndarray) -> int:
    """Packed-word fast path; returns the p output bits as an int.

    `seed_words` has shape (p, w) with w >= len(x_words); only the first
    len(x_words) seed words participate, which implements hashing an input
    zero-padded to the seed's bucket length.
    """
    w = x_words.size
    acc = np.bitwise_count(seed_words[:, :w] & x_words).sum(axis=1) & 1
    out = 0
    for bit in acc.tolist():
        out = (out << 1) | int(bit)
    return out


def _lfsr_degree(L: int, delta: float) -> int:
    need = math.ceil(math.log2(max(L, 2) / delta)) + 1
    for m in sorted(PRIMITIVE_TRINOMIALS):
        if m >= need:
            return m
    raise ValueError(f"no primitive trinomial table entry covers degree {need}")


def stretch_words(seed, L_bits: int, delta: float) -> np.ndarray:
    """The LFSR stretch as packed uint64 words (little-endian bit order).

    Squaring the characteristic trinomial scales its exponents by two over
    GF(2), so the same sequence also satisfies the recurrence with taps
    64*(m-t), 64*m - a word-aligned trinomial - and again at 64-word
    granularity.  Generation therefore cascades: a python-int bit loop for
    the first m words, a word-level slice recurrence up to 64*m words, then
    a 64-word-block recurrence for the bulk.  Throughput is memory-bound.
    """
    if L_bits < 1:
        raise ValueError("L must be >= 1")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    seed = as_bits(seed)
    m = _lfsr_degree(L_bits, delta)
    if seed.size < m:
        raise ValueError(f"seed too short: need {m} bits for (L={L_bits}, "
                         f"delta={delta}), got {seed.size}")
    t = PRIMITIVE_TRINOMIALS[m]
    a = m - t
    n_words = -(-L_bits // 64)
    words = np.zeros(max(n_words, m + 1), dtype=np.uint64)

    # level 0: bits 0..64*m via the plain bit recurrence on a python int
    boot_bits = min(64 * m, max(64 * n_words, m + 1))
    x = 0
    for i, bit in enumerate(seed[:m].tolist()):
        x |= int(bit) << i
    for i in range(m, boot_bits):
        x |= (((x >> (i - a)) ^ (x >> (i - m))) & 1) << i
    boot_words = -(-boot_bits // 64)
    words[:boot_words] = np.frombuffer(
        x.to_bytes(8 * boot_words, "little"), dtype=np.uint64)
    if n_words <= m:
        return words[:n_words]

    # level 1: word recurrence w[i] = w[i-a] ^ w[i-m], chunks of <= a words
    i = m
    lvl2_start = min(n_words, 64 * m)
    while i < lvl2_start:
        c = min(a, lvl2_start - i)
        np.bitwise_xor(words[i - a:i - a + c], words[i - m:i - m + c],
                       out=words[i:i + c])
        i += c

    # level 2: same shape with taps 64a, 64m words; chunks of <= 64a words
    while i < n_words:
        c = min(64 * a, n_words - i)
        np.bitwise_xor(words[i - 64 * a:i - 64 * a + c],
                       words[i - 64 * m:i - 64 * m + c], out=words[i:i + c])
        i += c
    return words[:n_words]


def small_bias_stretch(seed, L: int, delta: float) -> np.ndarray:
    """Deterministically stretch a short seed into L delta-biased bits.

    With the characteristic polynomial primitive and the seed uniform, every
    parity test on distinct positions within the period is a nonzero linear
    functional of the seed, so its bias is exactly 0 (well below delta); the
    degree is still sized as ceil(log2(L/delta)) + O(1), which is what the
    'seed too short' check enforces.
    """
    words = stretch_words(seed, L, delta)
    return np.unpackbits(words.view(np.uint8), count=L, bitorder="little")


class SmallBiasStream:
    """A small-bias stretch materialised once and consumed at fixed offsets.

    Hot consumers read the packed uint64 view; all offsets handed out by the
    engine layout are 64-bit aligned so the views are zero-copy.
    """

    def __init__(self, seed, L: int, delta: float):
        self.L = int(L)
        self.delta = float(delta)
        self.words = stretch_words(seed, self.L, delta)

    def bit_slice(self, offset: int, n: int) -> np.ndarray:
        """Unpack a word-aligned bit window (offsets are laid out aligned)."""
        if offset % 64:
            raise ValueError("bit_slice offsets must be 64-bit aligned")
        if offset < 0 or offset + n > self.L:
            raise RandomnessBudgetError(
                f"stretch overflow: [{offset}, {offset + n}) beyond L={self.L}")
        w = self.words[offset // 64:(offset + n + 63) // 64]
        return np.unpackbits(w.view(np.uint8), count=n, bitorder="little")

    def word_slice(self, bit_offset: int, nbits: int) -> np.ndarray:
        if bit_offset % 64:
            raise ValueError("word_slice offsets must be 64-bit aligned")
        if bit_offset + nbits > self.L:
            raise RandomnessBudgetError(
                f"stretch overflow: [{bit_offset}, {bit_offset + nbits}) beyond L={self.L}")
        return self.words[bit_offset // 64:(bit_offset + nbits + 63) // 64]


class RandomnessBudgetError(RuntimeError):
    """A consumer asked for more shared-random bits than were provisioned."""


@dataclass
class SharedRandomness:
    """One party's view of the exchanged random string and its stretch.

    `str_bits` is the l'-bit exchanged string; the cursor enforces that no
    bit is consumed twice and that consumption never exceeds l'.  The only
    cursor consumer at desk scale is the stretch seed: per-iteration material
    (hash seeds, slot keys, one-time-pad masks) is drawn from the stretch at
    fixed offsets, because the exchange codeword cannot carry the asymptotic
    per-iteration true-randomness share at these parameters.  The accounting
    dict records bits consumed per purpose either way.
    """

    str_bits: np.ndarray
    cursor: int = 0
    stretch: SmallBiasStream | None = None
    accounting: dict = field(default_factory=dict)

    @property
    def budget(self) -> int:
        return self.str_bits.size

    def take(self, n: int, purpose: str) -> np.ndarray:
        if self.cursor + n > self.budget:
            raise RandomnessBudgetError(
                f"shared randomness exhausted: {purpose} needs {n} bits, "
                f"{self.budget - self.cursor} of l'={self.budget} remain")
        out = self.str_bits[self.cursor:self.cursor + n]
        self.cursor += n
        self.accounting[purpose] = self.accounting.get(purpose, 0) + n
        return out

    def init_stretch(self, L: int, delta: float) -> SmallBiasStream:
        m = _lfsr_degree(L, delta)
        seed = self.take(m, "stretch_seed")
        self.stretch = SmallBiasStream(seed, L, delta)
        return self.stretch

    def account_stretch(self, n: int, purpose: str) -> None:
        key = f"stretch:{purpose}"
        self.accounting[key] = self.accounting.get(key, 0) + n

    def clone(self) -> "SharedRandomness":
        return SharedRandomness(self.str_bits.copy(), 0, None, {})


# ---------------------------------------------------------------------------
# Slot assignment (information hiding)
# ---------------------------------------------------------------------------

def slot_assignment(key_bits: np.ndarray, b: int, b_prime: int):
    """Assign the b'-b control positions (half per party) inside a mini-block.

    A uniform permutation of {0..b'-1} is drawn by sorting one 64-bit key per
    position taken from the shared stretch (a key-sort shuffle; distributionally
    a Fisher-Yates shuffle up to 2^-64 key collisions, and deterministic given
    the same key bits).  The first (b'-b)/2 entries are one party's slots, the
    next (b'-b)/2 the other's; the remaining b positions carry data bits in
    increasing order.
    """
    t = b_prime - b
    if t <= 0 or t % 2:
        raise ValueError("b'-b must be positive and even")
    keys = pack_words(as_bits(key_bits, 64 * b_prime))
    perm = np.argsort(keys, kind="stable")
    half = t // 2
    z_a = perm[:half].astype(np.int64)
    z_b = perm[half:t].astype(np.int64)
    data = np.sort(perm[t:]).astype(np.int64)
    return z_a, z_b, data


# ---------------------------------------------------------------------------
# Randomness exchange over the noisy channel
# ---------------------------------------------------------------------------

def randomness_exchange(str_bits, eps: float, N_iter: int, b_prime: int,
                        channel=None, code=None, public: bool = False):
    """Bootstrap shared randomness: encode str with the distance-2/5
    exchange code of length 10*eps*N_iter*b', transmit it through the
    channel, and return both parties' SharedRandomness views.

    `channel` is a per-round error-pattern symbol array (None = clean).  In
    public mode the transmission is skipped and both views are seeded from
    the common string.  The equality guarantee is conditional: it holds
    whenever fewer than a fifth of the codeword rounds are corrupted.
    """
    str_bits = as_bits(str_bits)
    if public:
        return SharedRandomness(str_bits.copy()), SharedRandomness(str_bits.copy())
    budget = math.ceil(10 * eps * N_iter * b_prime)
    if code is None:
        from .codes import CodeSearchParams, gv_search
        code = gv_search(str_bits.size, budget, math.ceil(0.4 * budget),
                         CodeSearchParams(), verification="certified")
    if eps > 0 and code.n > budget:
        raise ValueError("exchange codeword longer than the 10*eps*N_iter*b' "
                         "round budget")
    w = exchange_encode(code, str_bits)
    received = w if channel is None else _apply_symbols(w, channel)
    decoded = exchange_decode(code, received, w, str_bits)
    if decoded is None:
        decoded = received[:str_bits.size].copy()  # derailed view
    return SharedRandomness(str_bits.copy()), SharedRandomness(decoded)


def _apply_symbols(x: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    from .control import corrupt_apply
    return corrupt_apply(x, symbols)


def exchange_encode(code, str_bits: np.ndarray) -> np.ndarray:
    return code.encode(str_bits)


def exchange_decode(code, received: np.ndarray, sent_codeword: np.ndarray,
                    str_bits: np.ndarray):
    """Bounded-distance decode of the exchange codeword.

    The channel guarantee is conditional: if fewer than half the verified
    minimum distance of the exchange code was corrupted, the unique nearest
    codeword is the transmitted one and the receiver recovers `str_bits`
    exactly.  Beyond the radius the decode is reported as failed (None);
    the caller decides how the simulation proceeds.
    """
    radius = (code.min_distance - 1) // 2
    dist = int(np.count_nonzero(received != sent_codeword))
    if dist <= radius:
        return str_bits.copy()
    return None
