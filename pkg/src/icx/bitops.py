"""Low-level bit-string helpers.

Bit strings are numpy uint8 arrays of 0/1 throughout the package; hot paths
(hashing long transcripts, codeword tables) work on the packed uint64 view
produced here.  Packing uses numpy's big-endian-within-byte convention plus
the native uint64 byte order; the only requirement is that every caller packs
the same way, which they do by going through this module.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_bits",
    "random_bits",
    "pack_words",
    "unpack_words",
    "popcount",
    "parity_words",
    "bits_to_int",
    "int_to_bits",
    "bits_to_hex",
    "hex_to_bits",
]


def as_bits(x, length: int | None = None) -> np.ndarray:
    """Coerce a list/array/str of 0s and 1s to a uint8 bit array."""
    if isinstance(x, str):
        x = [int(ch) for ch in x]
    arr = np.asarray(x, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("bit strings are one-dimensional")
    if length is not None and arr.size != length:
        raise ValueError(f"expected {length} bits, got {arr.size}")
    return arr


def random_bits(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def pack_words(bits: np.ndarray) -> np.ndarray:
    """Pack a uint8 bit array into a uint64 word array (zero padded).

    Little-endian bit order throughout: bit i of the string is bit (i % 64)
    of word i // 64, matching the stretch generator's native word output.
    """
    nbytes = (bits.size + 7) // 8
    pad_bytes = (-nbytes) % 8
    packed = np.packbits(bits, bitorder="little")
    if pad_bytes:
        packed = np.concatenate([packed, np.zeros(pad_bytes, dtype=np.uint8)])
    return packed.view(np.uint64)


def unpack_words(words: np.ndarray, nbits: int) -> np.ndarray:
    return np.unpackbits(words.view(np.uint8), count=nbits, bitorder="little")


def popcount(words: np.ndarray) -> int:
    return int(np.bitwise_count(words).sum())


def parity_words(words: np.ndarray) -> int:
    return popcount(words) & 1


def bits_to_int(bits: np.ndarray) -> int:
    value = 0
    for b in bits.tolist():
        value = (value << 1) | int(b)
    return value


def int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_hex(bits: np.ndarray) -> str:
    return np.packbits(bits).tobytes().hex()


def hex_to_bits(hexstr: str, nbits: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8)
    return np.unpackbits(raw, count=nbits)
