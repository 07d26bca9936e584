"""Deterministic seed derivation.

A single master seed is split into independent child seeds with splitmix64,
one child per named component, so that runs are reproducible regardless of
the order in which components consume randomness.
"""

from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; return (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def child_seed(master: int, label: str) -> int:
    """Derive the child seed for a named component.

    The label is hashed into the splitmix64 stream so distinct components
    get statistically independent generators from one master seed.
    """
    h = int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "big")
    state = (master ^ h) & _MASK
    state, out = splitmix64(state)
    _, out2 = splitmix64(state)
    return (out ^ (out2 << 1)) & _MASK
