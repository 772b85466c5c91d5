"""Acceptance criteria, one test per criterion.

Each test records its outcome through the ``acceptance`` fixture, and the
run ends with one PASS/FAIL line per criterion.  Failures are reported as
they are; nothing here is tuned to make a criterion pass.
"""
from __future__ import annotations

import subprocess
import sys
from fractions import Fraction

import numpy as np

from conftest import COVERED, covered_thetas, decomposition, thetas
from flagorbit.flag_manifold import ThetaSpec, _cayley, check_decomposition, special_c4
from flagorbit.go_checker import (GO, NOT_GO, UNDECIDED, classification_kind, cross_validate,
                                  geodesic_residual, go_family, is_go_numeric, obstruction_scan)
from flagorbit.invariant_metric import (MetricParams, build_metric, normal_params, param_schema,
                                        perturb_params, random_invariant_metric)
from flagorbit.lie_algebra import LieTypeSpec, build_basis, in_k, inner, trace_form_constant


def theta(family, rank, partition, alpha_l=False, alpha_l1=None):
    return ThetaSpec(LieTypeSpec(family, rank), tuple(partition), alpha_l, alpha_l1)


def verdict(dec, params, mode="exact", **kw):
    return is_go_numeric(build_metric(dec, params, mode=mode), **kw)


def first(names, prefix):
    return next(n for n in names if n.startswith(prefix))


# --------------------------------------------------------------------------
# 1. algebraic foundation

def _stack(spec):
    return np.array([b.matrix for b in build_basis(spec)], dtype=np.int64)


def _brackets(X, Y):
    return X @ Y - Y @ X


def _in_span(M, B):
    """Whether every matrix in M is an exact combination of the orthogonal basis B."""
    g = -np.einsum("kab,kba->k", B, B)
    L = int(np.lcm.reduce(g))
    c = -np.einsum("...ab,kba->...k", M, B) * (L // g)
    back = np.einsum("...k,kab->...ab", c, B)
    return bool(np.all(back == L * M))


def _foundation(spec, rng):
    B = _stack(spec)
    N = len(B)
    bad = []
    if not np.all(B + B.transpose(0, 2, 1) == 0):
        bad.append("skew")
    br = _brackets(B[:, None], B[None, :])
    if not _in_span(br, B):
        bad.append("closure")
    if spec.rank <= 3:
        # all triples
        # J[i,j,k] = [Bi,[Bj,Bk]] + [Bj,[Bk,Bi]] + [Bk,[Bi,Bj]]
        J = (_brackets(B[:, None, None], br[None, :, :])
             + _brackets(B[None, :, None], br.transpose(1, 0, 2, 3)[:, None, :])
             + _brackets(B[None, None, :], br[:, :, None]))
        n_jac = N ** 3
    else:
        n_jac = 10 ** 4
        C = rng.integers(-2, 3, size=(3, n_jac, N))
        X, Y, Z = (np.einsum("tk,kab->tab", c, B) for c in C)
        J = (_brackets(X, _brackets(Y, Z)) + _brackets(Y, _brackets(Z, X))
             + _brackets(Z, _brackets(X, Y)))
    if np.any(J != 0):
        bad.append("jacobi")
    # inner product equals c * (-Tr) on basis pairs, so it is ad-invariant
    c = trace_form_constant(spec)
    for i in range(N):
        for j in range(i, N):
            if inner(B[i], B[j], spec) != c * Fraction(int(-np.trace(B[i] @ B[j]))):
                bad.append("trace-form")
                break
        else:
            continue
        break
    # infinitesimal invariance of the trace form on all basis triples
    # Tr([Bi,Bj] Bk) + Tr(Bj [Bi,Bk]) = 0
    inf = (np.einsum("ijab,kba->ijk", br, B)
           + np.einsum("jab,ikba->ijk", B, br))
    if np.any(inf != 0):
        bad.append("ad-invariance")
    # group invariance under a few rational orthogonal elements of K
    for _ in range(3):
        coef = rng.integers(-1, 2, size=N)
        S = np.einsum("k,kab->ab", coef, B)
        g = _cayley(S)
        for i, j in zip(rng.integers(0, N, 6), rng.integers(0, N, 6)):
            X = g @ B[i].astype(object) @ g.T
            Y = g @ B[j].astype(object) @ g.T
            if not (in_k(X, spec) and inner(X, Y, spec) == inner(B[i], B[j], spec)):
                bad.append("Ad-invariance")
                break
    return bad, n_jac


def test_criterion_01_algebraic_foundation(acceptance):
    rng = np.random.default_rng(1)
    specs = [LieTypeSpec("A", 1)] + [LieTypeSpec(f, r) for f, r in COVERED]
    failures, n_total = [], 0
    for spec in specs:
        bad, n_jac = _foundation(spec, rng)
        n_total += n_jac
        failures += [f"{spec.name}: {b}" for b in bad]
    acceptance(1, not failures, f"{len(specs)} algebras, {n_total} Jacobi triples"
               + (f"; failures {failures}" if failures else ""))
    assert not failures


# --------------------------------------------------------------------------
# 2. decompositions

# isotypical summand counts per flag (label -> count)
A3_SUMMANDS = {"{}": 3, "{a1}": 2, "{a2}": 2, "{a3}": 2, "{a1,a2}": 1, "{a1,a3}": 2, "{a2,a3}": 1}


def test_criterion_02_decompositions(acceptance):
    failures, n = [], 0
    for t in covered_thetas():
        dec = decomposition(t)
        rep = check_decomposition(dec)
        n += 1
        if not rep.passed:
            failures.append(f"{t.describe()}: {list(rep.failures)}")
        count = len(dec.isotypical_summands)
        if t.lie_type == LieTypeSpec("A", 3) and count != A3_SUMMANDS[t.label]:
            failures.append(f"{t.describe()}: {count} summands, expected {A3_SUMMANDS[t.label]}")
        if special_c4(t) and count != 4:
            failures.append(f"{t.describe()}: {count} summands, expected 4")
    acceptance(2, not failures, f"{n} flags certified" + (f"; {failures[:3]}" if failures else ""))
    assert not failures


# --------------------------------------------------------------------------
# 3. normal metrics

def test_criterion_03_normal_metrics(acceptance):
    failures, n = [], 0
    for t in covered_thetas():
        dec = decomposition(t)
        for mu in (1, Fraction(7, 3)):
            rep = verdict(dec, normal_params(t, mu), n_samples=8)
            n += 1
            zero = all(s.residual_sq == 0 for s in rep.samples)
            if rep.verdict != GO or not zero or not rep.agreement:
                failures.append(f"{t.describe()} mu={mu}: {rep.verdict}")
    acceptance(3, not failures, f"{n} normal metrics, all residuals exactly 0"
               if not failures else f"{failures[:3]}")
    assert not failures


# --------------------------------------------------------------------------
# 4. type A: g.o. iff normal

def _non_normal(dec, seed, tries=50):
    for s in range(seed, seed + tries):
        A = build_metric(dec, random_invariant_metric(dec, s))
        if not A.is_normal():
            return A
    return None


def test_criterion_04_type_a_normal_only(acceptance):
    failures, n, single = [], 0, 0
    for rank in (4, 5):
        for t in thetas("A", rank):
            dec = decomposition(t)
            if verdict(dec, normal_params(t, 2)).verdict != GO:
                failures.append(f"{t.describe()}: normal metric not GO")
            if len(param_schema(t)) == 1:
                # one submodule: every invariant metric is normal
                single += 1
                continue
            for k in range(20):
                A = _non_normal(dec, 1000 * k)
                rep = is_go_numeric(A, n_samples=16, seed=k)
                n += 1
                if rep.verdict != NOT_GO or rep.failing_witness is None or not rep.agreement:
                    failures.append(f"{t.describe()} draw {k}: {rep.verdict}")
    acceptance(4, not failures, f"{n} non-normal metrics NOT_GO with witness; "
               f"{single} flags with a single submodule" + (f"; {failures[:3]}" if failures else ""))
    assert not failures


# --------------------------------------------------------------------------
# 5. A3

def test_criterion_05_a3(acceptance):
    failures = []
    t = theta("A", 3, (2, 1, 1))
    dec = decomposition(t)
    P = MetricParams("A3_single", {"mu1(1)": 3, "mu1(2)": 4, "mu2(2)": 4, "b": 2})
    A = build_metric(dec, P)
    rep = is_go_numeric(A)
    if rep.verdict != GO or any(s.residual_sq != 0 for s in rep.samples):
        failures.append(f"b=2: {rep.verdict}")
    s = geodesic_residual(A, dec.coords_of({"w(4,3)": 1, "w(3,1)": 1}))
    if dec.k_theta_labels != ("w(2,1)",) or s.residual_sq != 0 or s.witness_Z != (Fraction(1, 2),):
        failures.append(f"fixture witness {s.witness_Z}")
    Pf = MetricParams("A3_single", {"mu1(1)": 3.0, "mu1(2)": 4.0, "mu2(2)": 4.0, "b": 2.01})
    rep = verdict(dec, Pf, mode="float")
    if rep.verdict != NOT_GO or rep.max_residual <= 1e-6:
        failures.append(f"b=2.01: {rep.verdict} residual {rep.max_residual}")

    t = theta("A", 3, (1, 1, 1, 1))
    dec = decomposition(t)
    names = param_schema(t).names
    good = {n: (5 if n.startswith("mu") else 0) for n in names}
    good.update({"b(1)": 1, "b(2)": -1, "b(3)": 1})
    if verdict(dec, MetricParams("A3_empty", good)).verdict != GO:
        failures.append("empty flag, b1=-b2=b3 not GO")
    for broken in ({"b(2)": 1}, {"b(3)": -1}, {"mu2(3)": 4}):
        P = MetricParams("A3_empty", {**good, **broken})
        if verdict(dec, P).verdict != NOT_GO:
            failures.append(f"empty flag {broken} not NOT_GO")

    t = theta("A", 3, (2, 2))
    dec = decomposition(t)
    for mu1, mu2 in ((1, 2), (5, Fraction(1, 3)), (Fraction(7, 2), 9)):
        if verdict(dec, MetricParams("A3_a1a3", {"mu1": mu1, "mu2": mu2})).verdict != GO:
            failures.append(f"a1a3 mu1={mu1} mu2={mu2} not GO")
    acceptance(5, not failures, "witness Z = 1/2 w(2,1); b=2.01 residual > 1e-6"
               if not failures else f"{failures}")
    assert not failures


# --------------------------------------------------------------------------
# 6. B5

def _single_violations(dec, P, prefixes, delta=Fraction(1, 10)):
    names = param_schema(dec.theta).names
    out = {}
    for pre in prefixes:
        name = first(names, pre)
        out[name] = verdict(dec, perturb_params(dec, P, name, delta)).verdict
    return out


def test_criterion_06_b5(acceptance):
    failures = []
    for part in ((2, 3), (1, 2, 2)):
        t = theta("B", 5, part)
        dec = decomposition(t)
        P = go_family(t, {"lambda": 2, "b": 1})
        v = P.values
        assert v[first(v, "mu(")] == 3 and v[first(v, "gamma(")] == Fraction(3, 2)
        if verdict(dec, P).verdict != GO:
            failures.append(f"{part}: instance not GO")
        for name, res in _single_violations(dec, P, ("mu(", "gamma(", "lambda1(", "b(")).items():
            if res != NOT_GO:
                failures.append(f"{part}: perturbed {name} gives {res}")
    t = theta("B", 5, (2, 2, 1), True)
    dec = decomposition(t)
    P = go_family(t, {"lambda": 2, "b": 1})
    v = P.values
    assert v["mu(1)"] == 3 and v["rho(1)"] == 1 and v["gamma(1)"] == Fraction(3, 2)
    if verdict(dec, P).verdict != GO:
        failures.append("alpha_l instance not GO")
    P1 = MetricParams(P.case, {**v, **{n: 1 for n in v if n.startswith("gamma")}})
    if verdict(dec, P1).verdict != NOT_GO:
        failures.append("alpha_l instance with gamma=1 not NOT_GO")
    acceptance(6, not failures, "2 instances, 8 single violations, alpha_l case"
               if not failures else f"{failures}")
    assert not failures


# --------------------------------------------------------------------------
# 7. C3 and C4

def test_criterion_07_c(acceptance):
    failures = []
    t = theta("C", 3, (1, 1, 1))
    dec = decomposition(t)
    P = go_family(t, {"mu": 1, "t": 1})
    v = P.values
    assert all(v[n] == 2 for n in v if n.startswith("mu0")) and all(v[n] == 1 for n in v if n.startswith("a("))
    A = build_metric(dec, P)        # positivity is checked here
    if is_go_numeric(A).verdict != GO:
        failures.append("instance not GO")
    P0 = MetricParams(P.case, {**v, **{n: 0 for n in v if n.startswith("a(")}})
    if verdict(dec, P0).verdict != NOT_GO:
        failures.append("a=0 with mu0 != mu not NOT_GO")
    t = theta("C", 4, (2, 1, 1))
    assert special_c4(t)
    dec = decomposition(t)
    verdicts = []
    for seed in range(10):
        rep = verdict(dec, random_invariant_metric(dec, seed), n_samples=16)
        verdicts.append(rep.verdict)
        if rep.verdict == UNDECIDED:
            failures.append(f"C4 seed {seed} undecided")
    acceptance(7, not failures, f"C4 verdicts {sorted(set(verdicts))}"
               if not failures else f"{failures}")
    assert not failures


# --------------------------------------------------------------------------
# 8. D5

def _uncoupled_metric(dec, seed):
    """Random invariant metric with the couplings b(r, n) to the last
    block switched off."""
    r = len(dec.theta.partition)
    P = random_invariant_metric(dec, seed)
    vals = {n: (0 if n.startswith(f"b({r},") else x) for n, x in P.values.items()}
    return MetricParams(P.case, vals)


def test_criterion_08_d5(acceptance):
    failures, notes = [], []
    for part in ((2, 2, 1), (1, 2, 2)):
        t = theta("D", 5, part, False, part[-1] > 1)
        dec = decomposition(t)
        P = go_family(t, {"lambda": 2, "b": 1})
        assert all(x == Fraction(3, 2) for n, x in P.values.items() if n.startswith("gamma"))
        if verdict(dec, P).verdict != GO:
            failures.append(f"{part}: instance not GO")
        name = first(P.values, "gamma(")
        if verdict(dec, perturb_params(dec, P, name, Fraction(1, 10))).verdict != NOT_GO:
            failures.append(f"{part}: perturbed gamma still GO")

    both = [t for t in thetas("D", 5) if t.alpha_l_in_theta and t.alpha_lminus1_in_theta]
    uncoupled_ok = uncoupled_n = 0
    extended_go = []
    for t in both:
        dec = decomposition(t)
        for seed in range(5):
            A = build_metric(dec, _uncoupled_metric(dec, seed))
            if A.is_normal():
                continue
            uncoupled_n += 1
            uncoupled_ok += is_go_numeric(A, n_samples=16).verdict == NOT_GO
        P = go_family(t, {"lambda": 2, "b": Fraction(1, 2)})
        A = build_metric(dec, P)
        if not A.is_normal() and is_go_numeric(A, n_samples=16).verdict == GO:
            extended_go.append(t.partition)
    if uncoupled_ok != uncoupled_n:
        failures.append(f"both-ends: {uncoupled_n - uncoupled_ok} metrics without b(r,n) not NOT_GO")
    if extended_go:
        failures.append(f"both-ends: non-normal g.o. metrics exist once b(r,n) != 0, "
                        f"e.g. lambda=2, b=1/2 on {len(extended_go)}/{len(both)} flags")
    notes.append(f"both-ends, b(r,n)=0: {uncoupled_ok}/{uncoupled_n} NOT_GO")

    for t in thetas("D", 5):
        if t.alpha_l_in_theta and not t.alpha_lminus1_in_theta and t.partition[-1] == 1:
            dec = decomposition(t)
            if verdict(dec, go_family(t, {"lambda": 2, "b": 1})).verdict != GO:
                failures.append(f"{t.describe()}: alpha_l family not GO")
    acceptance(8, not failures, "; ".join(notes + failures))
    assert not failures


# --------------------------------------------------------------------------
# 9. cross-validation

def test_criterion_09_cross_validation(acceptance):
    bad, n_flags, n_go, n_not = [], 0, 0, 0
    for t in covered_thetas():
        if classification_kind(t) in ("point", "no-closed-form"):
            continue
        cv = cross_validate(t, n_draws=200, seed=0, n_samples=16)
        n_flags += 1
        n_go += cv.n_go
        n_not += cv.n_not_go
        if not cv.passed:
            bad.append((t.describe(), cv.disagreements[:2]))
    acceptance(9, not bad, f"{n_flags} flags, {n_go} GO / {n_not} NOT_GO, "
               f"{len(bad)} flags with disagreements")
    assert not bad, bad[:3]


# --------------------------------------------------------------------------
# 10. obstruction soundness

def test_criterion_10_obstruction_soundness(acceptance):
    unsound, n_metrics, n_facts = [], 0, 0
    for t in covered_thetas():
        dec = decomposition(t)
        for seed in range(50):
            A = build_metric(dec, random_invariant_metric(dec, seed))
            facts = obstruction_scan(A)
            n_metrics += 1
            if not facts:
                continue
            n_facts += len(facts)
            if is_go_numeric(A, n_samples=4, seed=seed, classify=False).verdict != NOT_GO:
                unsound.append((t.describe(), seed, facts[0].statement))
    acceptance(10, not unsound, f"{n_metrics} metrics, {n_facts} violated equalities, "
               f"{len(unsound)} unsound")
    assert not unsound, unsound[:3]


# --------------------------------------------------------------------------
# 11. determinism

def test_criterion_11_determinism(acceptance, tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.json"
        proc = subprocess.run(
            [sys.executable, "-m", "flagorbit", "classify", "--family", "B", "--rank", "5",
             "--seed", "7", "--out", str(path)],
            capture_output=True)
        outs.append((proc.returncode, path.read_bytes() if path.exists() else proc.stdout))
    same = outs[0] == outs[1] and len(outs[0][1]) > 0
    acceptance(11, same, f"{len(outs[0][1])} bytes, exit code {outs[0][0]}")
    assert same
