import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagorbit.flag_manifold import ThetaSpec, build_decomposition, enumerate_thetas
from flagorbit.go_checker import (GO, NOT_GO, UNDECIDED, FamilyError, InvarianceViolation,
                                  classification_kind, cross_validate, family_free_values,
                                  geodesic_residual, go_family, is_go_classified, is_go_numeric,
                                  obstruction_scan, sample_vectors)
from flagorbit.invariant_metric import (MetricOperator, MetricParams, build_metric, normal_params,
                                        param_schema, random_invariant_metric)
from flagorbit.lie_algebra import LieTypeSpec

A3, A4, B5, C3, C4, D5 = (LieTypeSpec("A", 3), LieTypeSpec("A", 4), LieTypeSpec("B", 5),
                          LieTypeSpec("C", 3), LieTypeSpec("C", 4), LieTypeSpec("D", 5))


def a3_single(b, mu1=3, mu2=4):
    return MetricParams("A3_single", {"mu1(1)": mu1, "mu1(2)": mu2, "mu2(2)": mu2, "b": b})


@pytest.fixture(scope="module")
def a3():
    t = ThetaSpec(A3, (2, 1, 1))
    return t, build_decomposition(t)


def test_sample_vectors_are_deterministic():
    v1, v2 = sample_vectors(4, 5, seed=3), sample_vectors(4, 5, seed=3)
    assert v1 == v2
    assert len(v1) == 4 + 6 + 5
    assert v1[0] == [1, 0, 0, 0] and v1[4] == [1, 1, 0, 0]
    assert all(any(v) for v in v1)


@pytest.mark.parametrize("b, lam", [(2, Fraction(1, 2)), (-2, Fraction(-1, 2))])
def test_a3_witness_from_the_linear_system(a3, b, lam):
    # for X = w43 + w32 + 2 w41 the k-part is forced: lambda (2 mu2 - b) = mu1 - mu2 + 2b
    t, dec = a3
    A = build_metric(dec, a3_single(b))
    s = geodesic_residual(A, dec.coords_of({"w(4,3)": 1, "w(3,2)": 1, "w(4,1)": 2}))
    assert s.residual_sq == 0 and s.witness_Z == (lam,)
    s = geodesic_residual(A, dec.coords_of({"w(3,1)": 1, "w(3,2)": 1, "w(4,2)": 1, "w(4,1)": 1}))
    assert s.residual_sq == 0 and s.witness_Z == (0,)


def test_a3_failing_vector_has_positive_residual(a3):
    t, dec = a3
    rep = is_go_numeric(build_metric(dec, a3_single(1)))
    assert rep.verdict == NOT_GO and rep.agreement
    bad = [s for s in rep.samples if s.status == "fail"][0]
    assert bad.residual_sq > 0 and tuple(bad.X) == rep.failing_witness


def test_float_tolerance_band(a3):
    t, dec = a3
    verdicts = []
    for eps in (1e-13, 1e-8, 1e-5):
        A = build_metric(dec, a3_single(2 + eps).scaled(1.0), mode="float")
        verdicts.append(is_go_numeric(A).verdict)
    assert verdicts == [GO, UNDECIDED, NOT_GO]


def test_report_json(a3):
    t, dec = a3
    rep = is_go_numeric(build_metric(dec, a3_single(1)), n_samples=4)
    data = json.loads(json.dumps(rep.to_json(include_samples=True)))
    assert data["verdict"] == NOT_GO
    assert len(data["samples"]) == rep.n_evaluated
    assert "failing_sample" in data


def test_non_invariant_operator_is_rejected(a3):
    t, dec = a3
    a = np.eye(dec.dim_m, dtype=object)
    a[1, 1] = 2
    A = MetricOperator.from_matrix(dec, a)
    with pytest.raises(InvarianceViolation):
        is_go_numeric(A, classify=False, stop_on_fail=False)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.sampled_from([-1, 1]),
       st.fractions(Fraction(1, 5), 5, max_denominator=1000))
def test_a3_family_is_go_and_scale_free(k, sign, c):
    t = ThetaSpec(A3, (2, 1, 1))
    dec = build_decomposition(t)
    P = go_family(t, {"mu1": 3 * k, "mu2": 4 * k, "sign": sign})
    assert P.values["b"] == sign * 2 * k
    assert is_go_classified(t, P) is True
    rep = is_go_numeric(build_metric(dec, P.scaled(c)), n_samples=8)
    assert rep.verdict == GO and rep.certificate == "certified"


@pytest.mark.parametrize("theta", [ThetaSpec(B5, (1, 2, 2)), ThetaSpec(B5, (1, 2, 2), True),
                                   ThetaSpec(C3, (2, 1)), ThetaSpec(D5, (2, 2, 1)),
                                   ThetaSpec(D5, (1, 2, 1, 1), True)],
                         ids=lambda t: t.describe())
def test_families_pass_both_routes(theta):
    dec = build_decomposition(theta)
    free = {"lambda": 3, "b": Fraction(-1, 2), "mu": 2, "t": Fraction(1, 4)}
    P = go_family(theta, free)
    assert is_go_classified(theta, P) is True
    assert is_go_numeric(build_metric(dec, P), n_samples=8).verdict == GO


def test_family_errors():
    with pytest.raises(FamilyError):
        go_family(ThetaSpec(B5, (2, 3)), {"lambda": 1, "b": 1})
    with pytest.raises(FamilyError):
        go_family(ThetaSpec(C4, (2, 1, 1)), {"mu": 1})
    with pytest.raises(FamilyError):
        go_family(ThetaSpec(A3, (2, 2)), {"mu1": 1})


def test_classification_kinds():
    kinds = {t.label: classification_kind(t) for t in enumerate_thetas(A3)}
    assert kinds == {"{}": "family", "{a1}": "family", "{a2}": "family", "{a3}": "family",
                     "{a1,a2}": "all metrics", "{a1,a3}": "all metrics",
                     "{a2,a3}": "all metrics", "{a1,a2,a3}": "point"}
    assert classification_kind(ThetaSpec(A4, (2, 1, 1, 1))) == "normal only"
    assert classification_kind(ThetaSpec(C4, (1, 2, 1))) == "no-closed-form"
    assert family_free_values("B_alpha_l") == ("lambda", "b")


def test_c4_special_flags_have_no_closed_form():
    t = ThetaSpec(C4, (1, 1, 1, 1))
    dec = build_decomposition(t)
    assert is_go_classified(t, normal_params(t)) == "no-closed-form"
    rep = is_go_numeric(build_metric(dec, normal_params(t)), n_samples=4)
    assert rep.verdict == GO and rep.certificate == "exact-sampled"


def test_obstruction_scan_on_a4():
    t = ThetaSpec(A4, (1, 1, 1, 1, 1))
    dec = build_decomposition(t)
    assert obstruction_scan(build_metric(dec, normal_params(t, 2))) == []
    vals = dict(normal_params(t, 2).values)
    vals["mu(2,1)"] = Fraction(3)
    facts = obstruction_scan(build_metric(dec, MetricParams("A_generic", vals)))
    statements = {f.statement for f in facts}
    assert "mu(2,1) = mu(3,1)" in statements
    assert all(f.violated and f.projection_norm > 0 for f in facts)
    assert {f.kind for f in facts} <= {"pair", "triple"}


def test_obstruction_scan_is_empty_on_go_metrics():
    t = ThetaSpec(B5, (2, 3))
    dec = build_decomposition(t)
    assert obstruction_scan(build_metric(dec, go_family(t, {"lambda": 2, "b": 1}))) == []


def test_cross_validate_small():
    cv = cross_validate(ThetaSpec(A3, (1, 1, 1, 1)), n_draws=20, seed=4, n_samples=8)
    assert cv.passed
    assert cv.n_go + cv.n_not_go + cv.n_skipped == 20
    assert cv.n_go > 0 and cv.n_not_go > 0


@pytest.mark.parametrize("c", [Fraction(10 ** 15 + 1, 3), Fraction(7, 10 ** 12 + 39)])
def test_large_entries_stay_exact(a3, c):
    # entries this size overflow int64 products, so the object path must be taken
    t, dec = a3
    P = go_family(t, {"mu1": 3, "mu2": 4}).scaled(c)
    rep = is_go_numeric(build_metric(dec, P), n_samples=8)
    assert rep.verdict == GO and rep.certificate == "certified"
    Q = a3_single(1).scaled(c)
    assert is_go_numeric(build_metric(dec, Q), n_samples=8).verdict == NOT_GO
