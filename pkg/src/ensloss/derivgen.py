"""Random generation and certification of per-batch loss-derivatives.

Each minibatch gets a fresh derivative vector built from negated positive
draws: sort margins and draws descending, match them rank for rank, then
divide the derivative by the margin wherever the margin exceeds 1. Tied
margins share one draw. The result is always strictly negative,
nondecreasing in the margin, and raising-tailed, which is certified after
every generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import BoxCoxParam, Rng, inv_box_cox
from .losses import LossSpec

# Margins closer than this are merged into one equality class. Exact float
# ties are what the merge rule is for; raise it if your margins are rounded.
TIE_EPS = 0.0


@dataclass(frozen=True)
class MarginBatch:
    """Per-sample margins y_i * f(x_i) for one minibatch."""

    margins: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.margins, dtype=float)
        ids = np.asarray(self.sample_ids)
        object.__setattr__(self, "margins", m)
        object.__setattr__(self, "sample_ids", ids)
        if m.ndim != 1 or m.shape != ids.shape:
            raise ValueError("margins and sample_ids must be aligned 1-D vectors")
        if m.size < 1:
            raise ValueError("batch must be nonempty")
        if not np.all(np.isfinite(m)):
            raise ValueError("margins must be finite")

    @property
    def batch_size(self) -> int:
        return self.margins.size


@dataclass(frozen=True)
class DerivativeBatch:
    """Loss-derivatives aligned to a MarginBatch.

    ``certified`` is True for generated batches (checked at generation
    time) and None for fixed-loss derivatives, which carry no guarantee.
    """

    derivs: np.ndarray
    lambda_used: float | None
    certified: bool | None


@dataclass(frozen=True)
class GenConfig:
    """Generator settings: Box-Cox lambda and its resampling schedule."""

    lam: BoxCoxParam = field(default_factory=BoxCoxParam)
    resample_period_T: int = 0
    lambda_pool: tuple[float, ...] = (0.0, 0.5, 1.0)

    def __post_init__(self):
        if self.resample_period_T < 0:
            raise ValueError("resample period must be >= 0")
        if self.resample_period_T > 0 and not self.lambda_pool:
            raise ValueError("resampling enabled but lambda_pool is empty")


def _equality_classes(margins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class values (sorted ascending) and the class index of every sample."""
    order = np.argsort(margins, kind="stable")
    sorted_m = margins[order]
    new_class = np.empty(margins.size, dtype=bool)
    new_class[0] = True
    new_class[1:] = np.diff(sorted_m) > TIE_EPS
    class_of_sorted = np.cumsum(new_class) - 1
    class_of = np.empty(margins.size, dtype=int)
    class_of[order] = class_of_sorted
    return sorted_m[new_class], class_of


def assign_sorted_derivatives(margins: np.ndarray, raw_derivs: np.ndarray) -> np.ndarray:
    """Deterministic core of the generator, with the raw draws injected.

    ``raw_derivs`` holds one strictly negative value per margin equality
    class (any order; only the multiset matters). Returns per-sample
    derivatives after rank matching and the z > 1 rescale.
    """
    class_values, class_of = _equality_classes(margins)
    raw_derivs = np.asarray(raw_derivs, dtype=float)
    if raw_derivs.size != class_values.size:
        raise ValueError(
            f"need one raw derivative per equality class: {class_values.size} classes, "
            f"got {raw_derivs.size} draws"
        )
    if np.any(raw_derivs >= 0):
        raise ValueError("raw derivatives must be strictly negative")
    # class_values ascend; pairing with ascending draws puts the k-th
    # largest draw on the k-th largest margin.
    assigned = np.sort(raw_derivs)
    assigned = assigned / np.where(class_values > 1.0, class_values, 1.0)
    return assigned[class_of]


def generate_rc_derivatives(batch: MarginBatch, cfg: GenConfig, rng: Rng) -> DerivativeBatch:
    """Draw one random calibrated derivative vector for the batch.

    Raw values are -invBC(N(0,1)) per margin equality class; ties share a
    draw. The output is certified before return; a certification failure
    would be a bug, not bad input.
    """
    if batch.batch_size < 2:
        raise ValueError(
            f"batch too small: the ordering conditions need at least 2 samples, got {batch.batch_size}"
        )
    class_values, _ = _equality_classes(batch.margins)
    normals = rng.standard_normal(class_values.size)
    raw = -np.asarray(inv_box_cox(normals, cfg.lam))
    derivs = assign_sorted_derivatives(batch.margins, raw)
    ok, witness = certify_rc(batch.margins, derivs, p=1.0)
    if not ok:
        raise AssertionError(f"generated batch failed RC certification at {witness}")
    return DerivativeBatch(derivs=derivs, lambda_used=cfg.lam.lam, certified=True)


def certify_rc(margins, derivs, p: float = 1.0) -> tuple[bool, tuple[int, int] | None]:
    """Check the three derivative conditions; returns (ok, witness index pair).

    Conditions: nondecreasing in the margin with equal values on ties,
    strictly negative at margins <= 0, and z**p * g nondecreasing over
    margins >= 1.
    """
    z = np.asarray(margins, dtype=float)
    g = np.asarray(derivs, dtype=float)
    if z.shape != g.shape or z.ndim != 1:
        raise ValueError("margins and derivs must be aligned 1-D vectors")
    if p < 1.0:
        raise ValueError("tail exponent p must be >= 1")
    order = np.argsort(z, kind="stable")
    zs, gs = z[order], g[order]

    ties = np.abs(np.diff(zs)) <= TIE_EPS
    bad = np.nonzero(np.where(ties, gs[:-1] != gs[1:], np.diff(gs) < 0))[0]
    if bad.size:
        k = int(bad[0])
        return False, (int(order[k]), int(order[k + 1]))

    nonneg = np.nonzero((zs <= 0) & (gs >= 0))[0]
    if nonneg.size:
        k = int(nonneg[0])
        return False, (int(order[k]), int(order[k]))

    tail = np.nonzero(zs >= 1.0)[0]
    if tail.size >= 2:
        h = zs[tail] ** p * gs[tail]
        # Slack of a few ulps: the z > 1 rescale stores g/z, and z * (g/z)
        # rounds twice, so an exact-arithmetic tie can invert by one ulp.
        slack = 32.0 * np.finfo(float).eps * np.maximum(np.abs(h[:-1]), np.abs(h[1:]))
        drops = np.nonzero(np.diff(h) < -slack)[0]
        if drops.size:
            k = int(drops[0])
            return False, (int(order[tail[k]]), int(order[tail[k + 1]]))
    return True, None


def fixed_loss_derivatives(batch: MarginBatch, loss: LossSpec) -> DerivativeBatch:
    """Per-sample subderivatives of a fixed loss at the batch margins."""
    with np.errstate(over="ignore"):
        derivs = np.asarray(loss.subderivative(batch.margins), dtype=float)
    if not np.all(np.isfinite(derivs)):
        raise ValueError(f"loss {loss.name!r} produced non-finite derivatives")
    return DerivativeBatch(derivs=derivs, lambda_used=None, certified=None)


def maybe_resample_lambda(
    cfg: GenConfig, epoch: int, rng: Rng, current: BoxCoxParam | None = None
) -> BoxCoxParam:
    """Resample lambda from the pool every T epochs; otherwise keep the current value."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if current is None:
        current = cfg.lam
    if cfg.resample_period_T > 0 and epoch % cfg.resample_period_T == 0:
        idx = int(rng.integers(0, len(cfg.lambda_pool)))
        return BoxCoxParam(cfg.lambda_pool[idx])
    return current
