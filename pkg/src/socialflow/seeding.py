"""Deterministic seed derivation.

Every random draw in the system descends from a single 64-bit master
seed through splitmix64 mixing, so case generation, repeats, and any
worker layout produce identical streams for identical inputs.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One splitmix64 output for the given 64-bit state."""
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def derive_seed(master: int, *indices: int) -> int:
    """Mix a master seed with index coordinates into a child seed.

    Deterministic and order-sensitive: derive_seed(m, a, b) differs from
    derive_seed(m, b, a).
    """
    state = master & MASK64
    for idx in indices:
        state = splitmix64(state ^ ((idx + 1) * 0xD1B54A32D192ED03 & MASK64))
    return splitmix64(state)
