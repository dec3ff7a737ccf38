import json
import math
import random

import numpy as np
import pytest

from helpers import closed_form_on, random_feasible_path
from octrl.checks import (
    CheckError,
    CheckReport,
    ScalingCertificate,
    builtin_certificate,
    check_basic,
    check_f_concavity_and_cone,
    check_H_concavity,
    check_scaling_inequality,
    check_scaling_on_path,
    lambda_grid,
    run_assumption_checks,
    scaled_consumption,
    scaling_gap_bound,
    scaling_gap_W,
    tail_integral_estimate,
)
from octrl.expr import DomainError
from octrl.problem import AdmissiblePath, make_spec

LOG_HALF = ScalingCertificate(0.0, -math.log(0.5) / 0.5, 0.5)


def spec(u, f="0.05*x + 0.2", **kw):
    return make_spec(0.03, u, 1.0, f_text=f, **kw)


class TestBasic:
    def test_log(self):
        rec = check_basic(spec("ln(c)"), (0.1, 10.0), 64)
        assert rec.passed
        assert rec.detail["min_u_c"] == pytest.approx(0.1)

    def test_log_plus_log(self):
        assert check_basic(spec("ln(c) + ln(x)")).passed

    def test_decreasing(self):
        rec = check_basic(spec("-c^2"), (0.1, 10.0), 64)
        assert not rec.passed
        assert rec.detail["first_violation"]["c"] == pytest.approx(0.1)
        assert rec.witness["c"] == pytest.approx(10.0)  # largest violation

    def test_flat_marginal_utility_fails(self):
        # u_c must be strictly positive
        assert not check_basic(spec("ln(x)")).passed

    def test_decreasing_in_wealth(self):
        rec = check_basic(spec("ln(c) - x"))
        assert not rec.passed and rec.margin == pytest.approx(-1.0)

    def test_box_validation(self):
        with pytest.raises(CheckError):
            check_basic(spec("ln(c)"), (0.0, 1.0))


class TestHConcavity:
    def test_log_linear(self):
        assert check_H_concavity(spec("ln(c)"), t_samples=(0.0, 10.0)).passed

    def test_convex_utility(self):
        rec = check_H_concavity(spec("c^2"))
        assert not rec.passed
        assert rec.witness["kind"] in ("midpoint", "hessian")
        assert {"c", "x"} <= set(rec.witness)

    def test_convex_midpoint_witness(self):
        s = spec("c^2")
        rec = check_H_concavity(s, lambda_samples=(1.0,))
        w = rec.witness
        if w["kind"] == "midpoint":
            h = lambda c, x: math.exp(-0.03 * w["t"]) * c * c + w["lambda"] * (0.05 * x + 0.2 - c)
            mid = h((w["c"] + w["c2"]) / 2, (w["x"] + w["x2"]) / 2)
            assert mid < (h(w["c"], w["x"]) + h(w["c2"], w["x2"])) / 2

    def test_separable_concave(self):
        assert check_H_concavity(spec("ln(c) + ln(x)", "x^0.3")).passed

    def test_convex_technology_with_positive_multiplier(self):
        assert not check_H_concavity(spec("ln(c)", "x^2")).passed
        assert check_H_concavity(spec("ln(c)", "x^2"), lambda_samples=(0.0,)).passed

    def test_negative_multiplier_rejected(self):
        with pytest.raises(CheckError):
            check_H_concavity(spec("ln(c)"), lambda_samples=(-1.0,))

    @pytest.mark.parametrize("u", ["ln(c)", "c^0.5/0.5", "c^(-1)/(-1)", "ln(c) + 0.5*ln(x)",
                                   "ln(c + x)", "-exp(-c) - exp(-x)"])
    @pytest.mark.parametrize("f", ["0.05*x + 0.2", "x^0.3", "ln(1 + x)", "2*x^0.5 + 1"])
    def test_concave_family_passes(self, u, f):
        assert check_H_concavity(spec(u, f), t_samples=(0.0, 5.0), point_pairs=64).passed

    @pytest.mark.parametrize("u", ["c^2", "exp(c)", "ln(c) + x^2", "c*x"])
    def test_convex_direction_fails(self, u):
        rec = check_H_concavity(spec(u), point_pairs=64)
        assert not rec.passed and rec.witness


class TestFConcavity:
    def test_power(self):
        rec = check_f_concavity_and_cone(spec("ln(c)", "x^0.3"))
        assert rec.passed
        assert rec.detail["cone"] == "pass by construction"
        assert rec.detail["scaled_budget_min"] >= 0

    def test_convex(self):
        rec = check_f_concavity_and_cone(spec("ln(c)", "x^2"))
        assert not rec.passed
        assert {"x1", "x2"} <= set(rec.witness)
        x1, x2 = rec.witness["x1"], rec.witness["x2"]
        assert ((x1 + x2) / 2) ** 2 < (x1**2 + x2**2) / 2

    def test_cone_reported_for_unconstrained(self):
        rec = check_f_concavity_and_cone(spec("ln(c)", "x^0.3", state_nonneg=False))
        assert rec.detail["state_set"] == "R x R"

    def test_scale_samples_validated(self):
        with pytest.raises(CheckError):
            check_f_concavity_and_cone(spec("ln(c)"), lambda_scale_samples=(1.5,))


class TestScalingInequality:
    def test_log(self):
        rec = check_scaling_inequality(spec("ln(c)"), LOG_HALF)
        assert rec.passed and rec.margin >= -1e-10
        assert LOG_HALF.theta_star0 == pytest.approx(1.3863, abs=1e-4)

    def test_crra_two(self):
        cert = ScalingCertificate((1 - 0.5**-1) / 0.5, 0.0, 0.5)
        assert cert.theta_star == pytest.approx(-2.0)
        assert check_scaling_inequality(spec("c^(-1)/(-1)"), cert).passed

    def test_log_bad_certificate(self):
        rec = check_scaling_inequality(spec("ln(c)"), ScalingCertificate(0.0, 0.5, 0.5))
        assert not rec.passed
        lams = lambda_grid(0.5)
        assert rec.witness["lambda"] == lams[0]
        assert rec.margin == pytest.approx(0.5 + math.log(lams[0]) / (1 - lams[0]))

    def test_separable_tests_both_parts(self):
        s = spec("ln(c) + ln(x)")
        rec = check_scaling_inequality(s, LOG_HALF)
        assert rec.passed and set(rec.detail["part_margins"]) == {"u", "v"}
        bad = spec("ln(c) + x^2")
        rec = check_scaling_inequality(bad, LOG_HALF)
        assert not rec.passed and rec.witness["part"] == "v"

    def test_joint_utility(self):
        rec = check_scaling_inequality(spec("ln(c*x)"), ScalingCertificate(0.0, 2 * LOG_HALF.theta_star0, 0.5))
        assert rec.passed
        assert not check_scaling_inequality(spec("ln(c*x)"), LOG_HALF).passed

    def test_grid_validation(self):
        with pytest.raises(CheckError):
            check_scaling_inequality(spec("ln(c)"), LOG_HALF, lambda_grid_=[0.4, 0.9])

    def test_lambda_grid_interior(self):
        g = lambda_grid(0.5, 200)
        assert len(g) == 200 and g[0] > 0.5 and g[-1] < 1

    def test_on_path(self, ex1):
        traj, _ = closed_form_on(600.0, 2000)
        rec = check_scaling_on_path(ex1, LOG_HALF, traj)
        assert rec.passed and rec.name == "scaling_on_path"
        assert "t" in rec.witness


class TestBuiltinCertificate:
    def test_log(self):
        cert = builtin_certificate("log", 0.5)
        assert (cert.theta_star, cert.lambda_bar) == (0.0, 0.5)
        assert cert.theta_star0 == pytest.approx(1.3863, abs=1e-4)

    def test_crra_half(self):
        cert = builtin_certificate("crra", 0.5, sigma=0.5)
        assert cert.theta_star == pytest.approx((1 - 0.5**0.5) / 0.5)
        assert cert.theta_star == pytest.approx(0.5858, abs=1e-4)
        assert cert.theta_star0 == 0.0

    def test_sigma_one(self):
        with pytest.raises(CheckError):
            builtin_certificate("crra", 0.5, sigma=1.0)

    @pytest.mark.parametrize("lb", [0.0, 1.0, -0.2, 1.5])
    def test_lambda_bar_range(self, lb):
        with pytest.raises(CheckError):
            builtin_certificate("log", lb)

    def test_unknown_family(self):
        with pytest.raises(CheckError):
            builtin_certificate("cara", 0.5)

    @pytest.mark.parametrize("lb", [0.1, 0.5, 0.9])
    @pytest.mark.parametrize("sigma", [0.3, 0.5, 2.0, 4.0])
    def test_crra_passes(self, lb, sigma):
        u = f"c^({1 - sigma})/({1 - sigma})"
        rec = check_scaling_inequality(spec(u), builtin_certificate("crra", lb, sigma))
        assert rec.margin >= -1e-10

    @pytest.mark.parametrize("lb", [0.1, 0.5, 0.9])
    def test_log_passes(self, lb):
        assert check_scaling_inequality(spec("ln(c)"), builtin_certificate("log", lb)).margin >= -1e-10


class TestScalingGap:
    def test_bound_example1(self, ex1):
        traj, _ = closed_form_on(600.0, 2000)
        W = scaling_gap_W(ex1, traj, 0.9, 0)
        assert W <= 0.0 * math.log(0.15) + 1.3863
        assert W <= scaling_gap_bound(ex1, traj, LOG_HALF, 0) + 1e-12

    def test_bound_along_path(self, ex1):
        traj, _ = closed_form_on(600.0, 2000)
        for k in range(0, 2000, 97):
            for lam in (0.51, 0.7, 0.99):
                assert scaling_gap_W(ex1, traj, lam, k) <= scaling_gap_bound(ex1, traj, LOG_HALF, k) + 1e-12

    def test_limit_is_directional_derivative(self, ex1):
        traj, _ = closed_form_on(50.0, 2001)
        k = 700
        t, x, c = traj.t[k], traj.x[k], traj.c[k]
        xd = traj.xdot()[k]
        # d/dlam of u(f(lam x) - lam x', lam x) at lam = 1, discounted
        want = math.exp(-0.03 * t) * ((0.05 * x - xd) / c)
        got = [scaling_gap_W(ex1, traj, 1 - h, k) for h in (1e-3, 1e-4, 1e-5)]
        assert abs(got[-1] - want) <= 1e-4 * abs(want)
        assert abs(got[1] - want) < abs(got[0] - want)

    def test_stationary_log(self):
        s = make_spec(0.03, "ln(c)", 2.0, f_text="0.05*x")
        t = np.linspace(0, 10, 11)
        p = AdmissiblePath(t, np.full(11, 2.0), np.full(11, 0.1))
        for lam in (0.6, 0.9):
            assert scaling_gap_W(s, p, lam, 0) == pytest.approx(-math.log(lam) / (1 - lam), rel=1e-12)
            assert scaling_gap_W(s, p, lam, 5) == pytest.approx(
                math.exp(-0.03 * 5) * -math.log(lam) / (1 - lam), rel=1e-12)

    def test_nonpositive_scaled_consumption(self):
        # convex technology: f(lam x) - lam x' = 0.16 - 0.2 < 0 at lam = 0.4
        s = make_spec(0.03, "ln(c)", 1.0, f_text="x^2")
        t = np.linspace(0, 1, 11)
        p = AdmissiblePath(t, 1 + 0.5 * t, (1 + 0.5 * t) ** 2 - 0.5)
        with pytest.raises(DomainError):
            scaling_gap_W(s, p, 0.4, 0)

    def test_scaled_feasibility_random(self):
        rng = random.Random(11)
        for _ in range(100):
            s, p = random_feasible_path(rng)
            for lam in (0.05, 0.5, 0.95):
                assert np.all(scaled_consumption(s, p, lam) >= 0)

    def test_scale_range(self, ex1):
        traj, _ = closed_form_on(10.0, 11)
        with pytest.raises(CheckError):
            scaled_consumption(ex1, traj, 1.0)


class TestTail:
    def test_example1(self, ex1):
        traj, _ = closed_form_on(600.0, 20_000)
        est = tail_integral_estimate(ex1, traj)
        assert not est.diverges
        assert abs(est.growth_rate) < 0.03
        lo, hi = est
        # int_0^inf e^{-theta t} (a + b t) dt = a/theta + b/theta^2
        exact = math.log(0.15) / 0.03 + 0.02 / 0.03**2
        assert lo - 1e-3 <= exact <= hi + 1e-3
        assert hi - lo <= 1e-4 * abs(exact) + 1e-6

    def test_constant(self):
        s = make_spec(0.03, "1", 1.0, f_text="x")
        t = np.linspace(0, 300, 30001)
        est = tail_integral_estimate(s, AdmissiblePath(t, np.ones_like(t), np.ones_like(t)))
        assert est.growth_rate == pytest.approx(0.0, abs=1e-12)
        assert est.upper == pytest.approx(1 / 0.03, rel=1e-6)
        assert est.value == pytest.approx(1 / 0.03, rel=1e-6)

    def test_divergent(self):
        s = make_spec(0.03, "c", 1.0, f_text="x")
        t = np.linspace(0, 100, 1001)
        est = tail_integral_estimate(s, AdmissiblePath(t, np.ones_like(t), np.exp(0.1 * t)))
        assert est.diverges and est.growth_rate == pytest.approx(0.1)
        assert math.isnan(est.value)

    def test_domain(self, ex1):
        t = np.linspace(0, 1, 5)
        with pytest.raises(DomainError):
            tail_integral_estimate(ex1, AdmissiblePath(t, np.ones(5), np.zeros(5)))


class TestReport:
    def test_aggregate(self):
        rep = run_assumption_checks(spec("ln(c)", "x^0.3"), builtin_certificate("log", 0.5))
        assert rep.passed and rep.failures() == []
        assert rep["scaling_inequality"].passed
        json.dumps(rep.to_dict(), allow_nan=False)

    def test_failure_serializes(self):
        rep = run_assumption_checks(spec("-c^2", "x^2"))
        assert not rep.passed
        names = {r.name for r in rep.failures()}
        assert {"basic", "H_concavity", "f_concavity"} <= names
        d = rep.to_dict()
        json.dumps(d, allow_nan=False)
        assert d["pass"] is False
        for rec in d["checks"]:
            assert set(rec) >= {"name", "pass", "worst_witness", "samples_used"}

    def test_pass_iff_margin(self):
        for u in ("ln(c)", "c^2", "-c"):
            for rec in run_assumption_checks(spec(u)).records:
                if rec.name != "basic":
                    assert rec.passed == (rec.margin >= -rec.tol)
