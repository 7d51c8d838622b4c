import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensloss.losses import (
    BUILTIN_LOSS_NAMES,
    FiniteLossMixture,
    LossSpec,
    PiecewiseLinearLoss,
    builtin_loss,
    check_bounded_below,
    check_calibration,
    check_superlinear_tail,
    excess_risk_bound,
    loss_report,
    mixture_loss_value,
    psi_transform,
    reconstruct_loss,
    subderivative_nondecreasing,
)

LOG2 = math.log(2.0)


def mixture(*pairs):
    return FiniteLossMixture(tuple((builtin_loss(n), w) for n, w in pairs))


class TestBuiltins:
    def test_logistic_at_zero(self):
        loss = builtin_loss("logistic")
        assert float(loss.value(np.array(0.0))) == pytest.approx(LOG2)
        assert float(loss.subderivative(np.array(0.0))) == pytest.approx(-0.5)

    def test_hinge_at_zero_and_kink(self):
        loss = builtin_loss("hinge")
        assert float(loss.value(np.array(0.0))) == 1.0
        assert float(loss.subderivative(np.array(0.0))) == -1.0
        # left-derivative convention at the kink
        assert float(loss.subderivative(np.array(1.0))) == -1.0

    def test_inverse_tail_value(self):
        assert float(builtin_loss("hinge_inverse_tail").value(np.array(2.0))) == pytest.approx(-0.5)

    def test_tail_values_continuous_at_kink(self):
        for name in BUILTIN_LOSS_NAMES:
            if not name.startswith("hinge"):
                continue
            loss = builtin_loss(name)
            below = float(loss.value(np.array(1.0 - 1e-9)))
            above = float(loss.value(np.array(1.0 + 1e-9)))
            assert abs(below - above) < 1e-6, name

    def test_aliases(self):
        assert builtin_loss("bce").name == "logistic"
        assert builtin_loss("exp").name == "exponential"

    def test_unknown_name_lists_valid(self):
        with pytest.raises(ValueError, match="hinge"):
            builtin_loss("nonsense")

    @pytest.mark.parametrize("name", BUILTIN_LOSS_NAMES)
    def test_finite_difference_agreement(self, name):
        # central differences away from the kinks
        loss = builtin_loss(name)
        rng = np.random.default_rng(0)
        zs = rng.uniform(-8, 8, 100)
        zs = zs[np.abs(zs - 1.0) > 1e-3]
        h = 1e-6
        numeric = (loss.value(zs + h) - loss.value(zs - h)) / (2 * h)
        assert np.max(np.abs(numeric - loss.subderivative(zs))) < 1e-5

    @pytest.mark.parametrize("name", BUILTIN_LOSS_NAMES)
    def test_convexity_grid(self, name):
        assert subderivative_nondecreasing(builtin_loss(name), -10, 10, 1000)

    @pytest.mark.parametrize("name", BUILTIN_LOSS_NAMES)
    def test_deriv_at_zero_metadata(self, name):
        loss = builtin_loss(name)
        h = 1e-6
        numeric = float((loss.value(np.array(h)) - loss.value(np.array(-h))) / (2 * h))
        assert loss.differentiable_at_zero
        assert numeric == pytest.approx(loss.deriv_at_zero, abs=1e-6)


class TestCalibration:
    @pytest.mark.parametrize(
        "name", ["logistic", "hinge", "exponential"] + [n for n in BUILTIN_LOSS_NAMES if "tail" in n]
    )
    def test_builtins_calibrated(self, name):
        assert check_calibration(builtin_loss(name)).calibrated

    def test_abs_not_differentiable(self):
        loss = LossSpec("abs", lambda z: np.abs(z), lambda z: np.sign(z), False, 0.0)
        cert = check_calibration(loss)
        assert not cert.calibrated
        assert "not differentiable" in cert.reason

    def test_zero_slope_not_calibrated(self):
        loss = LossSpec("square0", lambda z: np.asarray(z) ** 2, lambda z: 2 * np.asarray(z), True, 0.0)
        cert = check_calibration(loss)
        assert not cert.calibrated
        assert "not < 0" in cert.reason

    def test_nonfinite_near_zero_raises(self):
        loss = LossSpec("bad", lambda z: np.full_like(np.asarray(z, dtype=float), np.nan),
                        lambda z: np.zeros_like(np.asarray(z, dtype=float)), True, -1.0)
        with pytest.raises(ValueError):
            check_calibration(loss)


class TestSuperlinearTail:
    def test_hinge_flat_tail_holds(self):
        assert check_superlinear_tail(builtin_loss("hinge"), p=1.01, z0=1.0).holds

    def test_log_tail_fails(self):
        cert = check_superlinear_tail(builtin_loss("hinge_log_tail"), p=1.01, z0=1.0)
        assert not cert.holds
        assert cert.witness is not None

    def test_exponential_depends_on_z0(self):
        # z**2 * (-e^-z) dips until z = 2, rises after
        assert check_superlinear_tail(builtin_loss("exponential"), p=2.0, z0=2.0).holds
        cert = check_superlinear_tail(builtin_loss("exponential"), p=2.0, z0=1.0)
        assert not cert.holds
        assert 1.0 <= cert.witness[0] < 2.0

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            check_superlinear_tail(builtin_loss("hinge"), p=1.0)
        with pytest.raises(ValueError):
            check_superlinear_tail(builtin_loss("hinge"), grid=1)


class TestBoundedBelow:
    def test_hinge_bounded_at_zero(self):
        cert = check_bounded_below(builtin_loss("hinge"))
        assert cert.bounded
        assert cert.inf_estimate == pytest.approx(0.0, abs=1e-6)

    def test_log_tail_unbounded(self):
        assert not check_bounded_below(builtin_loss("hinge_log_tail")).bounded

    def test_inverse_tail_bounded_near_minus_one(self):
        cert = check_bounded_below(builtin_loss("hinge_inverse_tail"))
        assert cert.bounded
        assert cert.inf_estimate == pytest.approx(-1.0, abs=1e-3)

    def test_exactly_one_unbounded_builtin(self):
        unbounded = [n for n in BUILTIN_LOSS_NAMES if not check_bounded_below(builtin_loss(n)).bounded]
        assert unbounded == ["hinge_log_tail"]

    def test_scan_max_validated(self):
        with pytest.raises(ValueError):
            check_bounded_below(builtin_loss("hinge"), scan_max=0.5)


class TestReconstruct:
    def test_two_point_hand_execution(self):
        pwl = reconstruct_loss([-1.0, 2.0], [-2.0, -0.5])
        assert pwl.knots == (-0.5, 1.0, 3.0)
        assert pwl.slopes == (-2.0, -1.25, -0.5, 1.0)
        assert pwl.subderivative(-1.0) == -2.0
        assert pwl.subderivative(2.0) == -0.5
        assert pwl.subderivative(0.0) == -1.25

    def test_single_sample_rule(self):
        pwl = reconstruct_loss([0.5], [-1.0])
        assert pwl.subderivative(0.0) == -1.0
        assert check_calibration(pwl.as_loss_spec()).calibrated

    def test_all_negative_margins(self):
        pwl = reconstruct_loss([-2.0, -0.5], [-3.0, -1.0])
        assert pwl.subderivative(0.0) == -0.5  # half of the left neighbor
        assert pwl.subderivative(-2.0) == -3.0

    def test_zero_margin_present(self):
        pwl = reconstruct_loss([0.0, 1.5], [-1.0, -0.25])
        assert pwl.subderivative(0.0) == -1.0
        assert pwl.subderivative(1.5) == -0.25

    def test_interpolates_inputs_exactly(self):
        margins = [-1.3, -0.2, 0.4, 1.1, 2.6]
        derivs = [-2.0, -1.5, -1.0, -0.8, -0.3]
        pwl = reconstruct_loss(margins, derivs)
        for z, g in zip(margins, derivs):
            assert pwl.subderivative(z) == g

    def test_value_continuity(self):
        pwl = reconstruct_loss([-1.0, 2.0], [-2.0, -0.5])
        zs = np.linspace(-4, 6, 2001)
        v = pwl.value(zs)
        assert np.max(np.abs(np.diff(v))) < 3 * (zs[1] - zs[0]) * max(abs(s) for s in pwl.slopes)

    def test_duplicate_margins_rejected(self):
        with pytest.raises(ValueError, match="merged"):
            reconstruct_loss([0.5, 0.5], [-1.0, -1.0])

    def test_rc_violation_rejected(self):
        with pytest.raises(ValueError, match="RC precondition"):
            reconstruct_loss([0.0, 1.0], [-1.0, -2.0])

    @given(
        st.lists(
            # margins at the scale real score computations produce; the
            # numeric calibration probe cannot resolve kinks below its
            # 1e-10 step floor
            st.one_of(st.just(0.0), st.floats(-5, 5).filter(lambda v: abs(v) >= 1e-6)),
            min_size=1,
            max_size=12,
            unique=True,
        ),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=150, deadline=None)
    def test_property_reconstruction_is_valid_loss(self, margins, seed):
        # any RC-compatible pair yields a convex calibrated bounded loss
        rng = np.random.default_rng(seed)
        z = np.sort(np.asarray(margins))
        g = np.sort(-rng.exponential(1.0, z.size) - 1e-6)
        scale = np.where(z > 1.0, z, 1.0)
        g = g / scale
        pwl = reconstruct_loss(z, g)
        spec = pwl.as_loss_spec()
        assert check_calibration(spec).calibrated
        assert check_bounded_below(spec).bounded
        assert np.all(np.diff(pwl.slopes) >= 0)


class TestPiecewiseLinear:
    def test_invariant_violations_rejected(self):
        with pytest.raises(ValueError):
            PiecewiseLinearLoss(knots=(0.5, 0.5), slopes=(-1.0, -0.5, 1.0), anchor=0.0)
        with pytest.raises(ValueError):
            PiecewiseLinearLoss(knots=(0.5,), slopes=(-0.5, -1.0, 1.0), anchor=0.0)
        with pytest.raises(ValueError):
            PiecewiseLinearLoss(knots=(0.5,), slopes=(-1.0, -0.5), anchor=0.0)
        with pytest.raises(ValueError):
            PiecewiseLinearLoss(knots=(-0.5,), slopes=(1.0, 2.0), anchor=0.0)

    def test_anchor_is_value_at_zero(self):
        pwl = PiecewiseLinearLoss(knots=(-1.0, 1.0), slopes=(-2.0, -1.0, 0.5), anchor=0.7)
        assert pwl.value(0.0) == pytest.approx(0.7)


class TestMixture:
    def test_weights_validated(self):
        with pytest.raises(ValueError):
            mixture(("exponential", 0.5), ("logistic", 0.4))
        with pytest.raises(ValueError):
            mixture(("exponential", 0.0), ("logistic", 1.0))

    def test_fifty_fifty_value_at_zero(self):
        mix = mixture(("exponential", 0.5), ("logistic_2z", 0.5))
        assert mixture_loss_value(mix, 0.0) == pytest.approx(0.5 * 1.0 + 0.5 * LOG2)

    def test_single_component_equals_loss(self):
        mix = mixture(("hinge", 1.0))
        for z in (-1.0, 0.0, 0.5, 2.0):
            assert mixture_loss_value(mix, z) == pytest.approx(
                float(builtin_loss("hinge").value(np.array(z)))
            )

    def test_lower_bounded_by_min_component(self):
        mix = mixture(("exponential", 0.3), ("logistic", 0.7))
        for z in np.linspace(-3, 3, 21):
            lo = min(float(builtin_loss(n).value(np.array(z))) for n in ("exponential", "logistic"))
            assert mixture_loss_value(mix, float(z)) >= lo - 1e-12


def psi_closed_form(pi1, theta):
    pi2 = 1.0 - pi1
    return pi1 * (1.0 - math.sqrt(1.0 - theta * theta)) + pi2 / 2.0 * (
        (1.0 - theta) * math.log1p(-theta) + (1.0 + theta) * math.log1p(theta)
    )


class TestPsiTransform:
    def test_theta_zero_is_zero(self):
        for names in [
            [("exponential", 0.5), ("logistic_2z", 0.5)],
            [("hinge", 1.0)],
            [("squared", 0.2), ("logistic", 0.8)],
        ]:
            assert psi_transform(mixture(*names), 0.0) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("pi1", [0.3, 0.5, 0.7])
    def test_matches_closed_form(self, pi1):
        mix = mixture(("exponential", pi1), ("logistic_2z", 1.0 - pi1))
        for theta in np.arange(0.1, 0.95, 0.1):
            assert psi_transform(mix, float(theta)) == pytest.approx(
                psi_closed_form(pi1, float(theta)), abs=1e-6
            )

    def test_hinge_psi_equals_theta(self):
        # independent oracle: dense grid minimization over alpha
        mix = mixture(("hinge", 1.0))
        hinge = builtin_loss("hinge")
        theta = 0.5
        alphas = np.linspace(-2, 2, 40001)
        inner = (1 + theta) / 2 * hinge.value(alphas) + (1 - theta) / 2 * hinge.value(-alphas)
        grid_psi = float(hinge.value(np.array(0.0))) - float(inner.min())
        assert grid_psi == pytest.approx(0.5, abs=1e-4)
        assert psi_transform(mix, 0.5) == pytest.approx(0.5, abs=1e-6)

    def test_domain_checked(self):
        mix = mixture(("hinge", 1.0))
        with pytest.raises(ValueError):
            psi_transform(mix, -0.1)
        with pytest.raises(ValueError):
            psi_transform(mix, 1.1)

    def test_monotone_and_convex_in_theta(self):
        mix = mixture(("exponential", 0.4), ("logistic_2z", 0.6))
        thetas = np.linspace(0, 1, 21)
        vals = np.array([psi_transform(mix, float(t)) for t in thetas])
        assert np.all(np.diff(vals) >= -1e-9)
        assert np.all(np.diff(vals, 2) >= -1e-8)


class TestExcessRiskBound:
    def test_zero_maps_to_zero(self):
        mix = mixture(("exponential", 0.5), ("logistic_2z", 0.5))
        assert excess_risk_bound(mix, 0.0) == 0.0

    @pytest.mark.parametrize("pi1", [0.3, 0.5, 0.7])
    def test_respects_sqrt_envelope(self, pi1):
        mix = mixture(("exponential", pi1), ("logistic_2z", 1.0 - pi1))
        for s in (0.01, 0.1, 0.5):
            envelope = 2.0 / math.sqrt(2 * pi1 + (1 - pi1)) * math.sqrt(s)
            assert excess_risk_bound(mix, s) <= envelope + 1e-9

    def test_huge_excess_capped_at_one(self):
        mix = mixture(("exponential", 0.5), ("logistic_2z", 0.5))
        assert excess_risk_bound(mix, 100.0) == 1.0

    def test_round_trip_with_psi(self):
        mix = mixture(("exponential", 0.5), ("logistic_2z", 0.5))
        for theta in (0.2, 0.5, 0.8):
            s = psi_transform(mix, theta)
            assert excess_risk_bound(mix, s) == pytest.approx(theta, abs=1e-6)

    def test_negative_excess_rejected(self):
        with pytest.raises(ValueError):
            excess_risk_bound(mixture(("hinge", 1.0)), -0.1)


def test_loss_report_serializable():
    import json

    report = loss_report(builtin_loss("hinge_log_tail"))
    text = json.dumps(report)
    parsed = json.loads(text)
    assert parsed["calibrated"] is True
    assert parsed["bounded_below"] is False
    assert parsed["name"] == "hinge_log_tail"
