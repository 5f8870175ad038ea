"""Named, splittable random streams on top of the Philox counter generator.

Every stochastic operation in this codebase takes an explicit stream, so a
run is a pure function of its seed: streams derived with the same
(seed, path) are bitwise identical, and sibling streams are independent
regardless of the order they are consumed in.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngStream:
    """A deterministic random stream addressed by (seed, name path).

    ``child(name)`` derives an independent stream; the Philox key is a
    hash of the full path, so derivation order never matters.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        digest = hashlib.sha256(
            ("%d|%s" % (self.seed, "/".join(self.path))).encode("utf-8")
        ).digest()
        key = int.from_bytes(digest[:16], "little")
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, name: str) -> "RngStream":
        return RngStream(self.seed, self.path + (str(name),))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path)!r})"

    # Convenience pass-throughs for the handful of draws used here.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)
