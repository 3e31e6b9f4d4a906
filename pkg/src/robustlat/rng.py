"""Named deterministic PRNG streams.

Every random decision in the toolkit draws from a stream derived from a
64-bit root seed plus a path of labels (e.g. ``stream(seed, "image", 3, 17)``).
The derivation hashes the path with SHA-256 and keys a Philox4x64
counter-based generator with the digest, so streams are independent,
order-insensitive to construction, and reproducible across platforms and
worker counts. Philox is the one generator used everywhere; its output for
a given key is fixed by its published specification.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _digest(root_seed: int, path: tuple) -> bytes:
    h = hashlib.sha256()
    h.update(int(root_seed & _MASK64).to_bytes(8, "little"))
    for part in path:
        h.update(b"\x1f")  # separator so ("ab",) != ("a", "b")
        h.update(str(part).encode("utf-8"))
    return h.digest()


def stream(root_seed: int, *path) -> np.random.Generator:
    """Return the Philox generator for (root_seed, *path).

    Calling twice with the same arguments yields generators that produce
    identical sequences.
    """
    key = np.frombuffer(_digest(root_seed, path)[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(root_seed: int, *path) -> int:
    """Fold a path into a fresh 64-bit root seed for a subsystem."""
    return int.from_bytes(_digest(root_seed, path)[:8], "little")
