"""Deterministic, order-independent random streams.

Gaussian noise draws are keyed by (seed, pixel index) through a SplitMix64
hash, so the value at a pixel is a pure function of the seed and its
row-major index: chunked, reordered, or parallel execution cannot change
the output. Seeds for derived work items (one per augmentation job, per
histogram bin, ...) come from :func:`derive_seed`, which is hashlib-based
and therefore stable across processes and platforms, unlike the salted
builtin ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

U64_MASK = (1 << 64) - 1


def splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of the SplitMix64 stream for ``seed``.

    The i-th output is ``finalize(seed + (i+1)*golden)`` with the standard
    SplitMix64 finalizer, evaluated here in vectorized counter mode. All
    arithmetic wraps modulo 2**64.
    """
    if count < 0 or start < 0:
        raise ValueError("start and count must be non-negative")
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = np.uint64(seed & U64_MASK) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def pixel_uniforms(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Per-index uniforms in the open interval (0, 1).

    Uses the top 53 bits of each hash, offset by half a ulp so 0.0 and 1.0
    are unreachable (keeps inverse-CDF transforms finite).
    """
    bits = splitmix64(seed, start, count) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def pixel_normals(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Per-index standard normal draws via the inverse normal CDF."""
    return ndtri(pixel_uniforms(seed, count, start))


def derive_seed(*parts: int | float | str) -> int:
    """Stable 64-bit seed from a tuple of ints, floats, and strings.

    Floats are tokenized through ``float.hex`` so two targets that differ
    in the last ulp still get distinct streams.
    """
    tokens = []
    for part in parts:
        if isinstance(part, bool):
            tokens.append(f"b:{part}")
        elif isinstance(part, (int, np.integer)):
            tokens.append(f"i:{int(part)}")
        elif isinstance(part, (float, np.floating)):
            tokens.append(f"f:{float(part).hex()}")
        elif isinstance(part, str):
            tokens.append(f"s:{part}")
        else:
            raise TypeError(f"cannot derive a seed from {type(part).__name__}")
    digest = hashlib.blake2b("\x1f".join(tokens).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
