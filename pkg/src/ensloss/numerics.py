"""Seeded RNG streams and the forward/inverse Box-Cox transforms.

All stochasticity in this package flows through :class:`Rng`, a thin wrapper
around numpy's Philox bit generator. Philox is counter-based, so a given seed
produces the same stream on every platform; normal variates are drawn with
numpy's ziggurat sampler, which is covered by numpy's stream-compatibility
guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Output clamp for the inverse Box-Cox transform. The lower clamp keeps the
# transform strictly positive (a zero output would produce a zero derivative
# after negation); the upper clamp prevents exp overflow from extreme draws.
EPS_POS = 1e-12
CLAMP_MAX = 1e6


class Rng:
    """Deterministic random stream keyed by a 64-bit seed.

    Instances are not thread-safe; give each worker its own stream via
    :meth:`spawn`.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._ss = np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.Philox(self._ss))

    @classmethod
    def _from_seedseq(cls, ss: np.random.SeedSequence) -> "Rng":
        rng = cls.__new__(cls)
        rng.seed = ss.entropy if isinstance(ss.entropy, int) else 0
        rng._ss = ss
        rng._gen = np.random.Generator(np.random.Philox(ss))
        return rng

    def spawn(self, n: int) -> list["Rng"]:
        """Derive ``n`` independent child streams (deterministic in call order)."""
        return [Rng._from_seedseq(ss) for ss in self._ss.spawn(n)]

    def standard_normal(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size=size)

    def random(self, size=None):
        return self._gen.random(size)


@dataclass(frozen=True)
class BoxCoxParam:
    """Exponent parameter for the Box-Cox pair. Only lambda >= 0 is supported."""

    lam: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if self.lam < 0:
            raise ValueError(f"negative lambda not supported, got {self.lam}")


def sample_standard_normal(rng: Rng, n: int) -> np.ndarray:
    """Draw ``n`` iid standard-normal variates from ``rng``.

    Raises ValueError on an empty request (n < 1).
    """
    if n < 1:
        raise ValueError(f"need at least one draw, got n={n}")
    return rng.standard_normal(n)


def inv_box_cox(x, p: BoxCoxParam, clamp: bool = True):
    """Inverse Box-Cox: exp(x) at lambda=0, else max(1 + lambda*x, 0)**(1/lambda).

    With ``clamp`` (the default) the result is forced into
    [EPS_POS, CLAMP_MAX] so downstream negation yields a finite, strictly
    negative value. Accepts scalars or arrays; rejects non-finite input.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("inv_box_cox requires finite input")
    lam = p.lam
    if lam == 0.0:
        with np.errstate(over="ignore"):
            out = np.exp(x)
    else:
        base = np.maximum(1.0 + lam * x, 0.0)
        out = np.power(base, 1.0 / lam)
    if clamp:
        out = np.clip(out, EPS_POS, CLAMP_MAX)
    if out.ndim == 0:
        return float(out)
    return out


def box_cox(x, p: BoxCoxParam):
    """Forward Box-Cox: log(x) at lambda=0, else (x**lambda - 1) / lambda.

    Defined for strictly positive x only.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("box_cox requires finite, strictly positive input")
    lam = p.lam
    if lam == 0.0:
        out = np.log(x)
    else:
        out = (np.power(x, lam) - 1.0) / lam
    if out.ndim == 0:
        return float(out)
    return out
