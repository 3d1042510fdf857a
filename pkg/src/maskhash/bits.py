"""Packing of {0,1} vectors into little-endian 64-bit words.

Bit ``i`` lives in word ``i // 64`` at position ``i % 64`` (position 0 is the
least significant bit). Padding bits past the code length are always zero.
"""

import numpy as np

from .errors import ContractError


def num_words(length):
    return (length + 63) // 64


def pack_rows(bits):
    """Pack an ``(n, L)`` 0/1 matrix into an ``(n, ceil(L/64))`` uint64 matrix."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ContractError(f"expected an (n, L) bit matrix, got shape {bits.shape}")
    if bits.size and not np.all((bits == 0) | (bits == 1)):
        raise ContractError("bit matrix may only contain 0 and 1")
    n, length = bits.shape
    width = num_words(length)
    padded = np.zeros((n, width * 64), dtype=np.uint8)
    padded[:, :length] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64).reshape(n, width)


def unpack_rows(words, length):
    """Inverse of :func:`pack_rows`."""
    words = np.ascontiguousarray(words, dtype="<u8")
    n = words.shape[0]
    raw = np.unpackbits(words.view(np.uint8).reshape(n, -1), axis=1, bitorder="little")
    return raw[:, :length].astype(np.uint8)


def popcount(words):
    """Per-row number of set bits of a uint64 matrix (or vector)."""
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)
