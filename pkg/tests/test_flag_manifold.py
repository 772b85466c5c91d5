import dataclasses
import itertools
import json

import numpy as np
import pytest

from flagorbit.flag_manifold import (Submodule, ThetaSpec, build_decomposition,
                                     centralizer_basis, characteristic_element,
                                     check_decomposition, enumerate_thetas, project, special_c4)
from flagorbit.lie_algebra import LieTypeSpec, build_basis, inner

A3, B5, C4, D5 = (LieTypeSpec("A", 3), LieTypeSpec("B", 5), LieTypeSpec("C", 4),
                  LieTypeSpec("D", 5))


@pytest.mark.parametrize("spec", [A3, B5, C4, D5], ids=lambda s: s.name)
def test_every_subset_of_simple_roots_appears_once(spec):
    roots = [t.roots for t in enumerate_thetas(spec)]
    everything = {c for k in range(spec.rank + 1)
                  for c in itertools.combinations(range(1, spec.rank + 1), k)}
    assert len(roots) == len(set(roots)) == 2 ** spec.rank
    assert set(roots) == everything


def test_theta_validation():
    with pytest.raises(ValueError):
        ThetaSpec(A3, (2, 1))               # sums to 3, not 4
    with pytest.raises(ValueError):
        ThetaSpec(A3, (2, 2), True)         # no alpha_l flag in type A
    with pytest.raises(ValueError):
        ThetaSpec(D5, (1, 1, 3), True, False)
    with pytest.raises(ValueError):
        ThetaSpec(B5, (0, 5))


def test_theta_roots_and_labels():
    t = ThetaSpec(B5, (2, 2, 1), True)
    assert t.roots == (1, 3, 5)
    assert t.label == "{a1,a3,a5}"
    assert t.blocks == [[1, 2], [3, 4], [5]]
    assert json.loads(json.dumps(t.to_json()))["partition"] == [2, 2, 1]
    assert ThetaSpec(D5, (1, 1, 3)).alpha_lminus1_in_theta is True


def test_special_c4_flags():
    special = [t.label for t in enumerate_thetas(C4) if special_c4(t)]
    assert special == ["{}", "{a1}", "{a2}", "{a3}"]


@pytest.mark.parametrize("theta", [ThetaSpec(A3, (2, 1, 1)), ThetaSpec(B5, (2, 3)),
                                   ThetaSpec(C4, (2, 1, 1)), ThetaSpec(D5, (1, 1, 1, 2), True)],
                         ids=lambda t: t.describe())
def test_decomposition_certificate(theta):
    dec = build_decomposition(theta)
    rep = check_decomposition(dec)
    assert rep.passed, rep.failures
    assert dec.dim_k + dec.dim_m == theta.lie_type.dim
    assert sum(s.dim for s in dec.submodules) == dec.dim_m


def test_k_theta_matches_centralizer():
    for t in enumerate_thetas(B5)[::5]:
        dec = build_decomposition(t)
        assert len(centralizer_basis(t)) == dec.dim_k


def test_characteristic_element_commutes_with_k_theta():
    t = ThetaSpec(D5, (2, 1, 2))
    dec = build_decomposition(t)
    H = characteristic_element(t)
    for K in dec.k_theta_basis:
        assert np.all(K @ H == H @ K)
    assert any(np.any(E @ H != H @ E) for E in dec.m_theta_basis)


def test_a3_single_root_submodules():
    dec = build_decomposition(ThetaSpec(A3, (2, 1, 1)))
    assert dec.k_theta_labels == ("w(2,1)",)
    assert [s.dim for s in dec.submodules] == [1, 2, 2]
    assert [s.dim for s in dec.isotypical_summands] == [1, 4]


def test_project_splits_k():
    dec = build_decomposition(ThetaSpec(A3, (2, 1, 1)))
    X = sum(b.matrix for b in build_basis(A3))
    xm = project(X, "m_theta", dec)
    xk = project(X, "k_theta", dec)
    back = dec.m_vector(xm) + dec.k_vector(xk)
    assert np.all(back == X)
    sub = dec.submodule("m31+m32")
    assert list(project(X, sub, dec)) == [xm[i] for i in sub.indices]


def test_checker_catches_a_broken_submodule_split():
    dec = build_decomposition(ThetaSpec(A3, (2, 1, 1)))
    # move one vector of m31+m32 into the one-dimensional submodule
    s0, s1, s2 = dec.submodules
    bad = (dataclasses.replace(s0, indices=(0, 1)), dataclasses.replace(s1, indices=(2,)), s2)
    rep = check_decomposition(dataclasses.replace(dec, submodules=bad))
    assert not rep.passed
    assert not dict(rep.checks)["submodules_k_invariant"]


def test_checker_catches_a_missing_k_theta_vector():
    dec = build_decomposition(ThetaSpec(B5, (2, 3)))
    broken = dataclasses.replace(dec, k_theta_basis=dec.k_theta_basis[1:],
                                 k_theta_labels=dec.k_theta_labels[1:])
    rep = check_decomposition(broken)
    assert not rep.passed


def test_summary_is_json():
    dec = build_decomposition(ThetaSpec(C4, (1, 1, 2), True))
    s = json.loads(json.dumps(dec.summary()))
    assert s["dim_m_theta"] == dec.dim_m
    assert {x["name"] for x in s["submodules"]} == {x.name for x in dec.submodules}
