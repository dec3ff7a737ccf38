import math
import random

import numpy as np
import pytest
from hypothesis import given, settings

from exprgen import smooth_cases, smooth_tree, interior_point, trees
from fdcheck import derivative_errors, well_scaled
from octrl.expr import (
    Add,
    Compiled,
    Div,
    DomainError,
    Exp,
    ExprSyntaxError,
    Ln,
    Mul,
    Neg,
    Num,
    Pow,
    Sub,
    UnboundVariable,
    UnknownFunction,
    UnknownIdentifier,
    Var,
    eval_with_derivs,
    evaluate,
    evaluate_array,
    format_expr,
    parse,
)


class TestParse:
    def test_ln(self):
        assert parse("ln(c)") == Ln(Var("c"))

    def test_crra_form(self):
        # numeral-only subtrees are folded while parsing
        assert parse("c^(1-0.5)/(1-0.5)") == Div(Pow(Var("c"), Num(0.5)), Num(0.5))

    def test_negative_numeral_folds(self):
        assert parse("-2*c") == Mul(Num(-2.0), Var("c"))
        assert parse(format_expr(Mul(Num(-2.0), Var("c")))) == Mul(Num(-2.0), Var("c"))

    def test_unknown_identifier(self):
        with pytest.raises(UnknownIdentifier, match='"R"'):
            parse("R*x + w")

    def test_params_substituted(self):
        assert parse("R*x + w", {"R": 0.05, "w": 0.2}) == Add(Mul(Num(0.05), Var("x")), Num(0.2))

    def test_unknown_function(self):
        with pytest.raises(UnknownFunction, match="sqrt"):
            parse("sqrt(c)")

    @pytest.mark.parametrize("text, offset", [("c +", 3), ("(c", 2), ("c $ x", 2), ("c x", 2)])
    def test_syntax_error_offset(self, text, offset):
        with pytest.raises(ExprSyntaxError) as info:
            parse(text)
        assert info.value.offset == offset

    def test_empty(self):
        with pytest.raises(ExprSyntaxError):
            parse("   ")

    def test_power_right_assoc(self):
        assert parse("c^2^3") == Pow(Var("c"), Num(8.0))
        assert parse("c^x^t") == Pow(Var("c"), Pow(Var("x"), Var("t")))

    def test_power_binds_tighter_than_negation(self):
        assert parse("-c^2") == Neg(Pow(Var("c"), Num(2.0)))

    def test_negation_binds_tighter_than_product(self):
        assert parse("-c*x") == Mul(Neg(Var("c")), Var("x"))

    def test_precedence(self):
        assert parse("c + x*t - 1") == Sub(Add(Var("c"), Mul(Var("x"), Var("t"))), Num(1.0))

    def test_pow_function(self):
        assert parse("pow(c, 2)") == Pow(Var("c"), Num(2.0))

    def test_exp(self):
        assert parse("exp(-t)") == Exp(Neg(Var("t")))

    def test_scientific_literal(self):
        assert parse("1.5e-3*c") == Mul(Num(1.5e-3), Var("c"))


class TestFormat:
    def test_ln(self):
        assert format_expr(Ln(Var("c"))) == "ln(c)"

    def test_canonical_parens(self):
        assert format_expr(Div(Pow(Var("c"), Num(0.5)), Num(0.5))) == "(c ^ 0.5) / 0.5"

    def test_round_trip_literals(self):
        for v in (0.1, 1e-300, 1.7976931348623157e308, 123456789.123, 5e-324, 0.0):
            assert parse(format_expr(Num(v))) == Num(v)

    @settings(max_examples=300, deadline=None)
    @given(trees(max_depth=8))
    def test_round_trip(self, e):
        assert parse(format_expr(e)) == e


class TestEval:
    def test_ln_second_order(self):
        d = eval_with_derivs(parse("ln(c)"), {"c": 1.0}, order=2)
        assert d.value == 0.0
        assert d.d("c") == 1.0
        assert d.dd("c", "c") == -1.0

    def test_crra_half(self):
        # d/dc (c^0.5 / 0.5) = c^-0.5, which is 0.5 at c = 4
        e = parse("c^0.5/0.5")
        d = eval_with_derivs(e, {"c": 4.0}, order=2)
        assert d.value == pytest.approx(4.0, abs=1e-15)
        h = 1e-5
        fd = (evaluate(e, {"c": 4 + h}) - evaluate(e, {"c": 4 - h})) / (2 * h)
        assert abs(d.d("c") - fd) <= 1e-6 * (1 + abs(d.d("c")))
        assert d.d("c") == pytest.approx(0.5, rel=1e-15)
        assert d.dd("c", "c") == pytest.approx(-0.5 * 4.0**-1.5, rel=1e-14)

    def test_ln_zero(self):
        with pytest.raises(DomainError):
            eval_with_derivs(parse("ln(c)"), {"c": 0.0})

    def test_fractional_power_of_negative(self):
        with pytest.raises(DomainError):
            eval_with_derivs(parse("c^0.5"), {"c": -1.0})

    def test_integer_power_of_negative(self):
        d = eval_with_derivs(parse("c^3"), {"c": -2.0}, order=2)
        assert (d.value, d.d("c"), d.dd("c", "c")) == (-8.0, 12.0, -12.0)

    def test_unbound(self):
        with pytest.raises(UnboundVariable):
            eval_with_derivs(parse("c*x"), {"c": 1.0})

    def test_order_validation(self):
        with pytest.raises(ValueError):
            eval_with_derivs(parse("c"), {"c": 1.0}, order=3)

    def test_symmetry_exact(self):
        e = parse("exp(c*x) * ln(x + t) / (1 + c^2)")
        d = eval_with_derivs(e, {"c": 0.7, "x": 1.3, "t": 0.2}, order=2)
        for a in "cxt":
            for b in "cxt":
                assert d.dd(a, b) == d.dd(b, a)

    def test_mixed_partial(self):
        d = eval_with_derivs(parse("c*x^2"), {"c": 3.0, "x": 2.0}, order=2)
        assert (d.d("c"), d.d("x"), d.dd("c", "x"), d.dd("x", "x")) == (4.0, 12.0, 4.0, 6.0)

    def test_variable_exponent(self):
        d = eval_with_derivs(parse("x^c"), {"c": 2.0, "x": 3.0}, order=2)
        assert d.value == pytest.approx(9.0)
        assert d.d("c") == pytest.approx(9.0 * math.log(3.0))
        assert d.d("x") == pytest.approx(6.0)

    def test_evaluate_array(self):
        e = parse("ln(c) + x")
        out = evaluate_array(e, c=np.array([1.0, math.e]), x=2.0)
        np.testing.assert_allclose(out, [2.0, 3.0])

    @settings(max_examples=300, deadline=None)
    @given(smooth_cases())
    def test_derivatives_match_fd(self, case):
        e, point = case
        if not well_scaled(e, point):
            return
        first, second = derivative_errors(e, point)
        assert first <= 1e-6
        assert second <= 1e-6

    @settings(max_examples=200, deadline=None)
    @given(smooth_cases())
    def test_second_partials_symmetric(self, case):
        e, point = case
        if not well_scaled(e, point):
            return
        d = eval_with_derivs(e, point, order=2)
        for a in "cxt":
            for b in "cxt":
                assert d.dd(a, b) == d.dd(b, a)


class TestCompiled:
    def test_backends_agree_with_dual(self, kernels):
        rng = random.Random(7)
        names = ("v", "c", "x", "t")
        for _ in range(200):
            e = smooth_tree(rng, rng.randint(1, 6))
            p = interior_point(rng)
            if not well_scaled(e, p):
                continue
            d = eval_with_derivs(e, p, order=2)
            jet = Compiled(e, kernels).jet(p["c"], p["x"], p["t"])
            ref = [d.value, d.d("c"), d.d("x"), d.d("t"), d.dd("c", "c"), d.dd("c", "x"),
                   d.dd("c", "t"), d.dd("x", "x"), d.dd("x", "t"), d.dd("t", "t")]
            np.testing.assert_allclose(jet, ref, rtol=1e-12, atol=1e-12, err_msg=str(names))

    def test_values_vectorized(self, kernels):
        e = parse("ln(c) + x^0.3*exp(-t)")
        comp = Compiled(e, kernels)
        c = np.linspace(0.5, 2.0, 11)
        got = np.asarray(comp.values(c, 2.0, 0.5))
        want = [evaluate(e, {"c": ci, "x": 2.0, "t": 0.5}) for ci in c]
        np.testing.assert_allclose(got, want, rtol=1e-14)

    def test_values_nan_outside_domain(self, kernels):
        comp = Compiled(parse("ln(c)"), kernels)
        out = np.asarray(comp.values(np.array([-1.0, 1.0]), 0.0, 0.0))
        assert math.isnan(out[0]) and out[1] == 0.0

    def test_jet_domain_error(self, kernels):
        with pytest.raises(DomainError):
            Compiled(parse("ln(c)"), kernels).jet(0.0, 1.0, 0.0)
