"""Per-iteration control information and its protected encoding.

A control record carries six hash values, the chunk counter and the sync
flag.  Its wire form is a three-stage encoding: append an inner-hash tag,
encode with a distance-1/4 linear code, then one-time-pad with fresh shared
bits.  Decoding inverts the stages and returns the record only if the tag
verifies; anything else is an explicit failure value (not an exception).

The decoder is exact (nearest codeword over the full table) whenever the
code's message space is enumerable.  At experiment scale the engine supplies
the transmitted codeword so the decoder can do certified bounded-distance
decoding instead: inside half the certified distance that *is* the nearest
codeword; outside it the decoder falls back to the systematic bit guess,
whose tag almost surely fails to verify, reproducing the reject path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitops import as_bits, bits_to_int, int_to_bits
from .codes import BinaryLinearCode, nearest_codeword_decode
from .randomness import inner_product_hash

__all__ = [
    "ControlInfo",
    "ErrorPattern",
    "EncodedControl",
    "ControlCodec",
    "corrupt_apply",
    "ip_shift_hash",
    "BOTTOM",
]

BOTTOM = None  # decode failure value

STAR, FLIP, SET0, SET1 = 42, 43, 0, 1  # pattern symbol codes ('*', '~', 0, 1)
_SYMBOLS = {"*": STAR, "~": FLIP, "0": SET0, "1": SET1}


@dataclass(frozen=True)
class ControlInfo:
    """The 8-field record: six p-bit hashes, the chunk counter, the sync bit."""

    h_c: int
    h_x: int
    h_k: int
    h_T: int
    h_MP1: int
    h_MP2: int
    j: int
    sync: int

    @staticmethod
    def width(p: int, s: int) -> int:
        return 6 * p + _j_bits(s) + 1

    def to_bits(self, p: int, s: int) -> np.ndarray:
        if not (0 <= self.j <= 2 * s):
            raise ValueError(f"chunk counter {self.j} outside 0..2s")
        parts = [int_to_bits(v, p) for v in
                 (self.h_c, self.h_x, self.h_k, self.h_T, self.h_MP1, self.h_MP2)]
        parts.append(int_to_bits(self.j, _j_bits(s)))
        parts.append(np.array([self.sync & 1], dtype=np.uint8))
        return np.concatenate(parts)

    @staticmethod
    def from_bits(bits: np.ndarray, p: int, s: int) -> "ControlInfo":
        bits = as_bits(bits, ControlInfo.width(p, s))
        vals = [bits_to_int(bits[i * p:(i + 1) * p]) for i in range(6)]
        off = 6 * p
        j = bits_to_int(bits[off:off + _j_bits(s)])
        sync = int(bits[off + _j_bits(s)])
        return ControlInfo(*vals, j=j, sync=sync)


def _j_bits(s: int) -> int:
    return max(1, (2 * s + 1 - 1).bit_length())


@dataclass
class ErrorPattern:
    """An oblivious corruption plan: one symbol per round.

    Symbols: '*' pass-through, '~' flip, '0'/'1' replace.  wt counts the
    non-'*' coordinates (the adversary's spent budget), regardless of
    whether a replace symbol happens to equal the transmitted bit.
    """

    symbols: np.ndarray  # uint8 codes over {STAR, FLIP, SET0, SET1}

    @classmethod
    def from_string(cls, text: str) -> "ErrorPattern":
        return cls(np.array([_SYMBOLS[ch] for ch in text], dtype=np.uint8))

    @classmethod
    def clean(cls, n: int) -> "ErrorPattern":
        return cls(np.full(n, STAR, dtype=np.uint8))

    @property
    def wt(self) -> int:
        return int(np.count_nonzero(self.symbols != STAR))

    def __len__(self) -> int:
        return self.symbols.size

    def slice(self, start: int, stop: int) -> np.ndarray:
        return self.symbols[start:stop]


def corrupt_apply(x, pattern) -> np.ndarray:
    """Apply a per-coordinate error pattern: replace, flip, or pass."""
    x = as_bits(x)
    symbols = pattern.symbols if isinstance(pattern, ErrorPattern) else np.asarray(pattern)
    if symbols.size != x.size:
        raise ValueError(f"pattern length {symbols.size} != input length {x.size}")
    out = x.copy()
    out[symbols == FLIP] ^= 1
    out[symbols == SET0] = 0
    out[symbols == SET1] = 1
    return out


def ip_shift_hash(x, r) -> np.ndarray:
    """The inner hash h with the shift-collision property: for U != 0,
    Pr_R[h(X+U, R) = h(X, R) + W] <= 2^-o'.  Same inner-product family,
    separate spec instance (seed length l * o')."""
    return inner_product_hash(x, r)


@dataclass
class ControlCodec:
    """Enc/Dec for one control-record shape.

    Enc(X, R) = C(X o h(X, R[o:])) xor R[:o], with R = (pad mask | tag seed)
    of r = o + l*o' bits.  Dec unmasks, decodes to the nearest codeword,
    and verifies the embedded tag.
    """

    l: int  # record bits
    o_prime: int  # tag bits
    code: BinaryLinearCode  # [o, l + o'] with distance >= o/4

    def __post_init__(self):
        if self.code.k != self.l + self.o_prime:
            raise ValueError("code dimension must be l + o'")
        if not self.code.systematic:
            raise ValueError("control codec expects a systematic code")

    @property
    def o(self) -> int:
        return self.code.n

    @property
    def seed_len(self) -> int:
        return self.o + self.l * self.o_prime

    def _split_seed(self, r: np.ndarray):
        r = as_bits(r, self.seed_len)
        return r[:self.o], r[self.o:]

    def enc(self, x, r) -> np.ndarray:
        x = as_bits(x, self.l)
        mask, tag_seed = self._split_seed(r)
        tag = ip_shift_hash(x, tag_seed)
        return self.code.encode(np.concatenate([x, tag])) ^ mask

    def dec(self, y, r, sent_wire: np.ndarray | None = None):
        """Decode; returns the l record bits or BOTTOM.

        With `sent_wire` (the transmitted o bits; simulation side-
        information) the nearest-codeword step becomes certified bounded-
        distance decoding: the corruption weight is the wire distance, and
        inside half the verified distance the unique nearest codeword of the
        unmasked word is the unmasked transmission.  Without it the full
        table is searched (exact tier sizes only).
        """
        y = as_bits(y, self.o)
        mask, tag_seed = self._split_seed(r)
        unmasked = y ^ mask
        if sent_wire is None:
            decoded = nearest_codeword_decode(self.code, unmasked)
        else:
            radius = (self.code.min_distance - 1) // 2
            dist = int(np.count_nonzero(sent_wire != y))
            if dist <= radius:
                decoded = nearest_codeword_decode_hint(self.code, sent_wire ^ mask)
            else:
                # systematic guess; the tag check below is what rejects it
                decoded = unmasked[:self.code.k]
        x, tag = decoded[:self.l], decoded[self.l:]
        if np.array_equal(ip_shift_hash(x, tag_seed), tag):
            return x
        return BOTTOM


def nearest_codeword_decode_hint(code: BinaryLinearCode, codeword: np.ndarray) -> np.ndarray:
    """Invert a known codeword of a systematic code (message = prefix)."""
    return np.asarray(codeword[:code.k], dtype=np.uint8)


@dataclass
class EncodedControl:
    """An encoded control transmission plus the seed offsets that produced
    it (trace bookkeeping)."""

    bits: np.ndarray
    seed_ref: tuple
