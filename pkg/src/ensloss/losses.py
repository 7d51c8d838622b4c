"""Surrogate losses, numeric validity checkers, and the mixture risk transform.

A loss here is a pair of scalar functions (value, subderivative) plus
metadata. The checkers are numeric evidence with explicit tolerances, not
proofs: they evaluate on grids and report certificates that can be
serialized for inspection.

Subderivative convention: at a kink we take the left derivative, so the
hinge reports -1 at z = 1 rather than 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Step for the symmetric difference quotient in the calibration check and
# the tolerance for left/right quotient agreement.
CAL_STEP = 1e-6
CAL_AGREE_TOL = 1e-4
TAIL_TOL = 1e-9


def _sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _hinge_head(tail_value, tail_deriv):
    """Build (value, subderivative) for a loss that is 1 - z below z = 1."""

    def value(z):
        z = np.asarray(z, dtype=float)
        out = np.where(z <= 1.0, 1.0 - z, 0.0)
        tail = z > 1.0
        if np.any(tail):
            out = out.copy()
            out[tail] = tail_value(z[tail])
        return out

    def subderivative(z):
        z = np.asarray(z, dtype=float)
        out = np.where(z <= 1.0, -1.0, 0.0)
        tail = z > 1.0
        if np.any(tail):
            out = out.copy()
            out[tail] = tail_deriv(z[tail])
        return out

    return value, subderivative


@dataclass(frozen=True)
class LossSpec:
    """A surrogate loss as paired value/subderivative functions.

    ``breakpoints`` lists known kink locations; checkers use it to keep
    finite-difference probes off the kinks. ``piecewise_linear`` marks
    losses whose difference quotients are exact within a segment.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    subderivative: Callable[[np.ndarray], np.ndarray]
    differentiable_at_zero: bool
    deriv_at_zero: float
    breakpoints: tuple[float, ...] | None = None
    piecewise_linear: bool = False


def _make_builtins() -> dict[str, LossSpec]:
    losses = {}

    losses["logistic"] = LossSpec(
        name="logistic",
        value=lambda z: np.logaddexp(0.0, -np.asarray(z, dtype=float)),
        subderivative=lambda z: -_sigmoid(-np.asarray(z, dtype=float)),
        differentiable_at_zero=True,
        deriv_at_zero=-0.5,
    )
    # Sharpened logistic on 2z; appears as the second component of the
    # worked mixture example with a closed-form risk transform.
    losses["logistic_2z"] = LossSpec(
        name="logistic_2z",
        value=lambda z: np.logaddexp(0.0, -2.0 * np.asarray(z, dtype=float)),
        subderivative=lambda z: -2.0 * _sigmoid(-2.0 * np.asarray(z, dtype=float)),
        differentiable_at_zero=True,
        deriv_at_zero=-1.0,
    )
    losses["exponential"] = LossSpec(
        name="exponential",
        value=lambda z: np.exp(-np.asarray(z, dtype=float)),
        subderivative=lambda z: -np.exp(-np.asarray(z, dtype=float)),
        differentiable_at_zero=True,
        deriv_at_zero=-1.0,
    )
    losses["squared"] = LossSpec(
        name="squared",
        value=lambda z: (1.0 - np.asarray(z, dtype=float)) ** 2,
        subderivative=lambda z: -2.0 * (1.0 - np.asarray(z, dtype=float)),
        differentiable_at_zero=True,
        deriv_at_zero=-2.0,
    )

    hinge_val, hinge_der = _hinge_head(lambda z: np.zeros_like(z), lambda z: np.zeros_like(z))
    losses["hinge"] = LossSpec(
        name="hinge",
        value=hinge_val,
        subderivative=hinge_der,
        differentiable_at_zero=True,
        deriv_at_zero=-1.0,
        breakpoints=(1.0,),
    )

    tails = {
        "hinge_zero_tail": (
            lambda z: np.zeros_like(z),
            lambda z: np.zeros_like(z),
            (1.0,),
        ),
        "hinge_exp_tail": (
            lambda z: np.exp(-(z - 1.0)) - 1.0,
            lambda z: -np.exp(-(z - 1.0)),
            None,
        ),
        "hinge_inverse_tail": (
            lambda z: 1.0 / z - 1.0,
            lambda z: -1.0 / z**2,
            None,
        ),
        "hinge_invlog_tail": (
            lambda z: math.e / np.log(z + math.e - 1.0) - math.e,
            lambda z: -math.e / ((z + math.e - 1.0) * np.log(z + math.e - 1.0) ** 2),
            None,
        ),
        "hinge_log_tail": (
            lambda z: -np.log(z),
            lambda z: -1.0 / z,
            None,
        ),
    }
    for name, (tv, td, brk) in tails.items():
        val, der = _hinge_head(tv, td)
        losses[name] = LossSpec(
            name=name,
            value=val,
            subderivative=der,
            differentiable_at_zero=True,
            deriv_at_zero=-1.0,
            breakpoints=brk,
        )
    return losses


_BUILTINS = _make_builtins()
_ALIASES = {"bce": "logistic", "exp": "exponential"}

BUILTIN_LOSS_NAMES = tuple(_BUILTINS)


def builtin_loss(name: str) -> LossSpec:
    """Look up a builtin loss by name (aliases: bce, exp)."""
    key = _ALIASES.get(name, name)
    if key not in _BUILTINS:
        raise ValueError(
            f"unknown loss {name!r}; valid names: {', '.join(sorted(_BUILTINS))}"
        )
    return _BUILTINS[key]


# ---------------------------------------------------------------------------
# Validity checkers


@dataclass(frozen=True)
class CalibrationCert:
    calibrated: bool
    reason: str
    deriv_at_zero: float


@dataclass(frozen=True)
class TailCert:
    holds: bool
    witness: tuple[float, float] | None
    p: float
    z0: float


@dataclass(frozen=True)
class BoundedCert:
    bounded: bool
    inf_estimate: float


def _cal_step_for(loss: LossSpec) -> float:
    # Keep the probe inside the zero-containing segment when kinks are
    # known. For piecewise-linear losses the quotient is exact at any
    # in-segment step, so use the widest one: tiny steps would round away
    # slopes near the generator's positivity-clamp scale (1e-12) against
    # an O(1) loss value. The floor keeps the quotient numerically sane.
    h = CAL_STEP
    if loss.breakpoints:
        dists = [abs(u) for u in loss.breakpoints if abs(u) > 0.0]
        if dists and loss.piecewise_linear:
            h = max(0.45 * min(dists), 1e-10)
        elif dists and min(dists) < h:
            h = max(0.45 * min(dists), 1e-10)
    return h


def check_calibration(loss: LossSpec) -> CalibrationCert:
    """Numeric check that the loss is differentiable at 0 with negative slope.

    Differentiability is judged by agreement of the left and right
    difference quotients at step ``CAL_STEP`` within ``CAL_AGREE_TOL``.
    """
    h = _cal_step_for(loss)
    v = loss.value(np.array([-h, 0.0, h]))
    if not np.all(np.isfinite(v)):
        raise ValueError(f"loss {loss.name!r} is not finite near 0")
    left = (v[1] - v[0]) / h
    right = (v[2] - v[1]) / h
    if abs(left - right) > CAL_AGREE_TOL:
        return CalibrationCert(
            calibrated=False,
            reason=f"not differentiable at 0 (left slope {left:.6g} != right slope {right:.6g})",
            deriv_at_zero=float((left + right) / 2.0),
        )
    deriv = float((v[2] - v[0]) / (2.0 * h))
    if not deriv < 0.0:
        return CalibrationCert(
            calibrated=False,
            reason=f"derivative at 0 is {deriv:.6g}, not < 0",
            deriv_at_zero=deriv,
        )
    return CalibrationCert(calibrated=True, reason="ok", deriv_at_zero=deriv)


def check_superlinear_tail(loss: LossSpec, p: float = 1.01, z0: float = 1.0, grid: int = 200) -> TailCert:
    """Check that z**p * subderivative(z) is nondecreasing on [z0, 1000*z0].

    The certificate is evidence for the checked window and exponent only;
    a failure at one z0 does not preclude the condition holding further out.
    """
    if p <= 1.0:
        raise ValueError("tail exponent p must exceed 1")
    if z0 <= 0.0:
        raise ValueError("z0 must be positive")
    if grid < 2:
        raise ValueError("grid must have at least 2 points")
    zs = np.geomspace(z0, z0 * 1e3, grid)
    with np.errstate(over="ignore"):
        h = zs**p * loss.subderivative(zs)
    if not np.all(np.isfinite(h)):
        raise ValueError(f"non-finite derivative for {loss.name!r} on the tail grid")
    drops = np.nonzero(np.diff(h) < -TAIL_TOL)[0]
    if drops.size:
        k = int(drops[0])
        return TailCert(holds=False, witness=(float(zs[k]), float(zs[k + 1])), p=p, z0=z0)
    return TailCert(holds=True, witness=None, p=p, z0=z0)


def check_bounded_below(loss: LossSpec, scan_max: float = 1e24) -> BoundedCert:
    """Scan for a finite infimum on a symmetric geometric grid.

    Bounded means the running minimum stabilizes over the last decade of the
    scan and the right-end slope is not materially negative. Slowly
    converging tails need a wide scan, hence the large default.
    """
    if scan_max <= 1.0:
        raise ValueError("scan_max must exceed 1")
    pos = np.geomspace(1e-2, scan_max, 16 * max(2, int(math.log10(scan_max)) + 2))
    zs = np.concatenate([-pos[::-1], [0.0], pos])
    with np.errstate(over="ignore", divide="ignore"):
        v = loss.value(zs)
    if np.any(np.isnan(v)):
        raise ValueError(f"loss {loss.name!r} evaluated to NaN during the scan")
    if np.any(np.isneginf(v)):
        return BoundedCert(bounded=False, inf_estimate=float("-inf"))
    inner = np.abs(zs) <= scan_max / 10.0
    m_inner = float(np.min(v[inner]))
    m_all = float(np.min(v))
    stabilized = (m_inner - m_all) < 1e-3 * (1.0 + abs(m_all))
    end_slope = float((v[-1] - v[-2]) / (zs[-1] - zs[-2]))
    return BoundedCert(bounded=bool(stabilized and end_slope >= -1e-9), inf_estimate=m_all)


def subderivative_nondecreasing(loss: LossSpec, lo: float = -10.0, hi: float = 10.0, n: int = 1000) -> bool:
    """Grid evidence for convexity: the subderivative never decreases."""
    zs = np.linspace(lo, hi, n)
    d = loss.subderivative(zs)
    return bool(np.all(np.diff(d) >= -TAIL_TOL))


def loss_report(loss: LossSpec, p: float = 1.01, z0: float = 1.0) -> dict:
    """Certificate report for one loss, serializable as JSON."""
    cal = check_calibration(loss)
    bnd = check_bounded_below(loss)
    tail = check_superlinear_tail(loss, p=p, z0=z0)
    return {
        "name": loss.name,
        "calibrated": cal.calibrated,
        "calibration_reason": cal.reason,
        "deriv_at_zero": cal.deriv_at_zero,
        "bounded_below": bnd.bounded,
        "inf_estimate": bnd.inf_estimate,
        "tail_ok": tail.holds,
        "tail_p": tail.p,
        "tail_z0": tail.z0,
        "tail_witness": list(tail.witness) if tail.witness else None,
    }


# ---------------------------------------------------------------------------
# Piecewise-linear reconstruction from derivative samples


@dataclass(frozen=True)
class PiecewiseLinearLoss:
    """Continuous piecewise-linear loss: slopes[i] applies on (knots[i-1], knots[i]].

    slopes[0] covers everything left of knots[0], slopes[-1] everything to
    the right of knots[-1]; anchor is the value at z = 0.
    """

    knots: tuple[float, ...]
    slopes: tuple[float, ...]
    anchor: float
    _knot_values: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        slopes = np.asarray(self.slopes, dtype=float)
        if len(slopes) != len(knots) + 1:
            raise ValueError("need exactly one more slope than knots")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(slopes) < 0):
            raise ValueError("slopes must be nondecreasing (convexity)")
        if not slopes[-1] > 0:
            raise ValueError("final slope must be positive (bounded below)")
        if not slopes[np.searchsorted(knots, 0.0, side="left")] < 0:
            raise ValueError("slope covering z=0 must be strictly negative (calibration)")
        # Integrate the slope away from 0 to get continuous knot values.
        vals = np.empty(len(knots))
        j0 = int(np.searchsorted(knots, 0.0, side="left"))
        prev_z, prev_v = 0.0, self.anchor
        for j in range(j0, len(knots)):
            prev_v = prev_v + slopes[j] * (knots[j] - prev_z)
            prev_z = knots[j]
            vals[j] = prev_v
        prev_z, prev_v = 0.0, self.anchor
        for j in range(j0 - 1, -1, -1):
            prev_v = prev_v - slopes[j + 1] * (prev_z - knots[j])
            prev_z = knots[j]
            vals[j] = prev_v
        object.__setattr__(self, "_knot_values", tuple(vals))

    def value(self, z):
        z = np.asarray(z, dtype=float)
        knots = np.asarray(self.knots)
        vals = np.asarray(self._knot_values)
        idx = np.searchsorted(knots, z, side="left")
        ref_z = np.where(idx == 0, knots[0], knots[np.maximum(idx - 1, 0)])
        ref_v = np.where(idx == 0, vals[0], vals[np.maximum(idx - 1, 0)])
        out = ref_v + np.asarray(self.slopes)[idx] * (z - ref_z)
        return out if out.ndim else float(out)

    def subderivative(self, z):
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self.knots, z, side="left")
        out = np.asarray(self.slopes, dtype=float)[idx]
        return out if out.ndim else float(out)

    def as_loss_spec(self, name: str = "reconstructed") -> LossSpec:
        j0 = int(np.searchsorted(self.knots, 0.0, side="left"))
        return LossSpec(
            name=name,
            value=self.value,
            subderivative=self.subderivative,
            differentiable_at_zero=True,
            deriv_at_zero=float(self.slopes[j0]),
            breakpoints=self.knots,
            piecewise_linear=True,
        )


def _rc_precondition(z: np.ndarray, g: np.ndarray) -> None:
    if np.any(np.diff(z) == 0):
        raise ValueError("duplicate margins must be merged before reconstruction")
    if np.any(np.diff(g) < 0):
        raise ValueError("RC precondition violated: derivatives decrease with margin")
    if np.any(g[z <= 0] >= 0):
        raise ValueError("RC precondition violated: nonnegative derivative at margin <= 0")
    tail = z >= 1.0
    if np.count_nonzero(tail) >= 2 and np.any(np.diff(z[tail] * g[tail]) < -TAIL_TOL):
        raise ValueError("RC precondition violated: z*g decreases on the raising tail")


def reconstruct_loss(margins: Sequence[float], derivs: Sequence[float]) -> PiecewiseLinearLoss:
    """Build the piecewise-linear loss interpolating the given derivatives.

    The margins must be distinct and the (margin, derivative) pairs must
    satisfy the RC conditions. The result is convex, bounded below, and
    differentiable at 0 with a strictly negative slope, and its
    subderivative matches ``derivs`` at every input margin.
    """
    z = np.asarray(margins, dtype=float)
    g = np.asarray(derivs, dtype=float)
    if z.shape != g.shape or z.ndim != 1 or z.size == 0:
        raise ValueError("margins and derivs must be equal-length 1-D vectors")
    order = np.argsort(z, kind="stable")
    z, g = z[order], g[order]
    _rc_precondition(z, g)

    if np.any(z == 0.0):
        # 0 is already a sample point; no insertion needed.
        zt, gt = z, g
    else:
        b0 = int(np.searchsorted(z, 0.0))
        if b0 == 0:
            g0 = min(g[0], -1.0)
        elif b0 == z.size:
            # No sample above 0: halve the neighbor below (stays negative,
            # keeps the sequence nondecreasing).
            g0 = g[b0 - 1] / 2.0
        else:
            g0 = min(g[b0 - 1] / 2.0, (g[b0 - 1] + g[b0]) / 2.0)
        zt = np.insert(z, b0, 0.0)
        gt = np.insert(g, b0, g0)

    knots = np.concatenate([(zt[:-1] + zt[1:]) / 2.0, [zt[-1] + 1.0]])
    slopes = np.concatenate([gt, [max(gt[-1], 1.0)]])
    # Pin the leftmost segment's extension through the origin, then read the
    # value at 0 off the chained knot values.
    kv = np.empty(knots.size)
    kv[0] = slopes[0] * knots[0]
    for j in range(1, knots.size):
        kv[j] = kv[j - 1] + slopes[j] * (knots[j] - knots[j - 1])
    j0 = int(np.searchsorted(knots, 0.0, side="left"))
    if j0 == 0:
        anchor = slopes[0] * 0.0
    else:
        anchor = kv[j0 - 1] + slopes[j0] * (0.0 - knots[j0 - 1])
    return PiecewiseLinearLoss(knots=tuple(knots), slopes=tuple(slopes), anchor=float(anchor))


# ---------------------------------------------------------------------------
# Finite mixtures and the risk transform


@dataclass(frozen=True)
class FiniteLossMixture:
    """Finite set of losses with strictly positive weights summing to 1."""

    components: tuple[tuple[LossSpec, float], ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        weights = np.array([w for _, w in self.components], dtype=float)
        if np.any(weights <= 0):
            raise ValueError("mixture weights must be strictly positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {weights.sum()!r}, not 1")


def mixture_loss_value(mix: FiniteLossMixture, z: float) -> float:
    """Weighted average of the component losses at margin z."""
    if not math.isfinite(z):
        raise ValueError("margin must be finite")
    return float(sum(w * float(np.asarray(spec.value(np.asarray(z)))) for spec, w in mix.components))


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section_min(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return min(fc, fd)


def psi_transform(
    mix: FiniteLossMixture,
    theta: float,
    alpha_search: tuple[float, float, float] = (-50.0, 50.0, 1e-8),
) -> float:
    """Gap between the mixture loss at 0 and its best achievable conditional value.

    The inner objective is convex in alpha (a convex combination of convex
    functions), so a golden-section search over the given bracket is exact
    up to the bracket tolerance.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    lo, hi, tol = alpha_search
    wp = (1.0 + theta) / 2.0
    wn = (1.0 - theta) / 2.0

    def inner(alpha: float) -> float:
        total = 0.0
        for spec, w in mix.components:
            v = spec.value(np.array([alpha, -alpha]))
            total += w * (wp * float(v[0]) + wn * float(v[1]))
        return total

    at_zero = mixture_loss_value(mix, 0.0)
    return at_zero - _golden_section_min(inner, lo, hi, tol)


def excess_risk_bound(mix: FiniteLossMixture, surrogate_excess: float) -> float:
    """Invert the risk transform: worst zero-one excess given a surrogate excess.

    Returns 1 when the surrogate excess exceeds the transform's range,
    since the zero-one excess can never exceed 1.
    """
    if surrogate_excess < 0:
        raise ValueError("surrogate excess must be nonnegative")
    if surrogate_excess == 0.0:
        return 0.0
    if surrogate_excess >= psi_transform(mix, 1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2.0
        if psi_transform(mix, mid) < surrogate_excess:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0
