"""Geodesic-orbit tests.

X in m_Theta is a geodesic vector of the metric A iff some Z in k_Theta
solves [Z + X, AX] = 0.  Since [Z, AX] lies in m_Theta and the k_Theta part
of [X, AX] vanishes for invariant A, this is the linear system

    L z = -r,   L[:, q] = <[K_q, AX], e_.>,   r = <[X, AX], e_.>

in the trace pairing.  Exact mode decides consistency over Q; float mode
uses least squares with two-sided tolerances.  A metric is g.o. iff every
X is a geodesic vector; sampling gives the NOT_GO half with a witness and
the closed-form predicates supply the universal GO half.
"""
from __future__ import annotations

import itertools
import math
import weakref
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import flint
import numpy as np
import sympy

from .flag_manifold import ThetaSpec, build_decomposition
from .invariant_metric import (
    MetricOperator,
    MetricParams,
    NonRationalError,
    build_metric,
    format_value,
    param_schema,
    parse_value,
    to_sympy,
)

GO, NOT_GO, UNDECIDED = "GO", "NOT_GO", "UNDECIDED"
PASS_TOL, FAIL_TOL = 1e-9, 1e-6
_INT_SAFE = 2 ** 52


class InvarianceViolation(ValueError):
    """[X, AX] has a k_Theta component: A is not an invariant metric."""


class FamilyError(ValueError):
    """Free values do not produce a valid g.o. metric."""


# --------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class GoSampleResult:
    X: tuple
    residual: float
    residual_sq: object          # exact Fraction in exact mode, float otherwise
    witness_Z: Optional[tuple]
    k_component_check: object
    status: str                  # "ok", "fail" or "undecided"

    def to_json(self) -> dict:
        return {
            "X": [format_value(Fraction(x)) if not isinstance(x, float) else x for x in self.X],
            "residual": self.residual,
            "residual_sq": format_value(self.residual_sq),
            "witness_Z": None if self.witness_Z is None else [format_value(z) for z in self.witness_Z],
            "k_component_check": format_value(self.k_component_check),
            "status": self.status,
        }


@dataclass(frozen=True)
class GoReport:
    verdict: str
    certificate: str
    samples: tuple = field(repr=False)
    failing_witness: Optional[tuple]
    classified_verdict: object
    agreement: bool
    n_evaluated: int
    max_residual: float

    def to_json(self, include_samples: bool = False) -> dict:
        out = {
            "verdict": self.verdict,
            "certificate": self.certificate,
            "n_evaluated": self.n_evaluated,
            "max_residual": self.max_residual,
            "failing_witness": None if self.failing_witness is None
            else [format_value(Fraction(x)) if not isinstance(x, float) else x
                  for x in self.failing_witness],
            "classified_verdict": self.classified_verdict,
            "agreement": self.agreement,
        }
        fail = [s for s in self.samples if s.status != "ok"]
        if fail:
            out["failing_sample"] = fail[0].to_json()
        if include_samples:
            out["samples"] = [s.to_json() for s in self.samples]
        return out


# --------------------------------------------------------------------------
# residuals

def _integer_operator(A: MetricOperator):
    """(D * A_hat as int object array, D)."""
    op = A.operator
    den = 1
    for x in op.reshape(-1):
        den = math.lcm(den, x.denominator)
    ints = np.array([int(x * den) for x in op.reshape(-1)], dtype=object).reshape(op.shape)
    return ints, den


def _as_int_vector(x):
    """Integer vector s*x and the scale s."""
    if all(isinstance(v, (int, np.integer)) for v in x):
        return [int(v) for v in x], 1
    fr = [Fraction(v) for v in x]
    s = 1
    for v in fr:
        s = math.lcm(s, v.denominator)
    return [int(v * s) for v in fr], s


def _contract(xs, ys, T):
    """sum_ij x_i y_j T[i, j, :] for integer rows; int64 when safe."""
    # python ints: an int64 product here could wrap around
    bound = _absmax(xs) * _absmax(ys) * _absmax(T) * T.shape[0] * T.shape[1]
    if bound < _INT_SAFE:
        xs64, ys64 = xs.astype(np.int64), ys.astype(np.int64)
        tmp = np.tensordot(xs64, T, axes=(1, 0))          # (N, d, k)
        return np.einsum("nj,njk->nk", ys64, tmp)
    xs, ys = xs.astype(object), ys.astype(object)
    tmp = np.tensordot(xs, T.astype(object), axes=(1, 0))
    return np.einsum("nj,njk->nk", ys, tmp)


def _lmat(ys, km):
    """L[n, k, q] = sum_j y_j km[q, j, k]."""
    bound = _absmax(ys) * _absmax(km) * km.shape[1]
    if bound < _INT_SAFE:
        return np.einsum("nj,qjk->nkq", ys.astype(np.int64), km)
    return np.einsum("nj,qjk->nkq", ys.astype(object), km.astype(object))


def _exact_solve(L, r, gm, scale):
    """Solve L z = -r over Q.  Returns (residual_sq, z) with z a list of
    Fractions (particular solution, free variables zero) and residual_sq
    the weighted least-squares residual (0 iff consistent)."""
    d, p = len(L), (len(L[0]) if len(L) else 0)
    if p == 0:
        res = sum(Fraction(int(r[k]) ** 2, int(gm[k])) for k in range(d))
        return res * scale, []
    aug = flint.fmpq_mat(d, p + 1, [v for k in range(d) for v in list(L[k]) + [-r[k]]])
    R, rank = aug.rref()
    pivots = []
    row = 0
    for col in range(p + 1):
        if row < rank and R[row, col] != 0:
            pivots.append(col)
            row += 1
    if p not in pivots:
        z = [Fraction(0)] * p
        for i, col in enumerate(pivots):
            v = R[i, p]
            z[col] = Fraction(int(v.p), int(v.q))
        return Fraction(0), z
    # weighted least squares: (L^T W L) z = -L^T W r, W = diag(1/gm)
    Lq = flint.fmpq_mat(d, p, [v for k in range(d) for v in L[k]])
    W = flint.fmpq_mat(d, d, [flint.fmpq(1, int(gm[i])) if i == j else 0
                              for i in range(d) for j in range(d)])
    rq = flint.fmpq_mat(d, 1, [int(v) for v in r])
    Lt = Lq.transpose()
    N = Lt * W * Lq
    rhs = -(Lt * W * rq)
    aug2 = flint.fmpq_mat(p, p + 1, [v for i in range(p) for v in
                                     [N[i, j] for j in range(p)] + [rhs[i, 0]]])
    R2, rank2 = aug2.rref()
    z = [Fraction(0)] * p
    row = 0
    for col in range(p):
        if row < rank2 and R2[row, col] != 0:
            v = R2[row, p]
            z[col] = Fraction(int(v.p), int(v.q))
            row += 1
    zq = flint.fmpq_mat(p, 1, [flint.fmpq(x.numerator, x.denominator) for x in z])
    res = Lq * zq + rq
    total = Fraction(0)
    for k in range(d):
        v = res[k, 0]
        total += Fraction(int(v.p), int(v.q)) ** 2 / int(gm[k])
    return total * scale, z


_DENS = np.arange(1, 129, dtype=float)


def _try_float_witness(L, r):
    """Cheap exact certificate: rationalize a float least-squares solution
    and verify L z + r = 0 with integers.  Returns z (Fractions) or None."""
    Lf = np.asarray(L, dtype=float)
    rf = np.asarray(r, dtype=float)
    if Lf.size == 0:
        return None
    zf, *_ = np.linalg.lstsq(Lf, -rf, rcond=None)
    # common denominator: first small k making k*z integral, else per entry
    M = _DENS[:, None] * zf[None, :]
    hit = np.nonzero(np.abs(M - np.rint(M)).max(axis=1) < 1e-7 * (1 + np.abs(M).max(axis=1)))[0]
    if hit.size:
        den = int(_DENS[hit[0]])
        zi = [int(v) for v in np.rint(M[hit[0]])]
        z = [Fraction(v, den) for v in zi]
    else:
        z = [Fraction(0) if abs(v) < 1e-12 else Fraction(float(v)).limit_denominator(10 ** 6)
             for v in zf]
        den = 1
        for v in z:
            den = math.lcm(den, v.denominator)
        zi = [int(v * den) for v in z]
    Li = np.asarray(L)
    big = max((abs(x) for x in zi), default=0) * max(_absmax(Li), 1) * Li.shape[1] + den * _absmax(np.asarray(r))
    if Li.dtype == np.int64 and big < 2 ** 62:
        res = Li @ np.array(zi, dtype=np.int64) + den * np.asarray(r, dtype=np.int64)
        return z if not res.any() else None
    for k in range(len(L)):
        if sum(int(L[k][q]) * zi[q] for q in range(len(zi)) if zi[q]) + den * int(r[k]) != 0:
            return None
    return z


def _exact_batch(A: MetricOperator, X_list, stop_on_fail=True):
    dec = A.dec
    st = dec.structure
    d, p = dec.dim_m, dec.dim_k
    if A not in _INT_OP:
        _INT_OP[A] = _integer_operator(A)
    Aint, D = _INT_OP[A]
    scaled = [_as_int_vector(x) for x in X_list]
    xs = _maybe_int(np.array([v for v, _ in scaled], dtype=object).reshape(len(X_list), d))
    Ai = _maybe_int(Aint)
    if (xs.dtype == np.int64 and Ai.dtype == np.int64
            and _absmax(xs) * _absmax(Ai) * max(d, 1) < 2 ** 62):
        ys = xs @ Ai.T
    else:
        ys = np.asarray(xs.astype(object).dot(Aint.T), dtype=object).reshape(len(X_list), d)
    ys = _maybe_int(ys)
    rs = _contract(xs, ys, st.mm_m)
    ks = _contract(xs, ys, st.mm_k) if p else np.zeros((len(X_list), 0), dtype=object)
    Ls = _lmat(ys, st.km_m) if p else None
    gm = st.gm
    c = st.scale
    out = []
    for n, x in enumerate(X_list):
        s = scaled[n][1]
        unit = Fraction(1, D * s * s)
        kc = Fraction(0)
        for q in range(p):
            if ks[n, q] != 0:
                kc += Fraction(int(ks[n, q]) ** 2, int(st.gk[q]))
        if kc != 0:
            raise InvarianceViolation(
                f"[X, AX] has a k_Theta component for X = {list(x)}: the operator is not invariant")
        r = [int(v) for v in rs[n]]
        if not any(r):
            out.append(GoSampleResult(tuple(x), 0.0, Fraction(0), tuple([Fraction(0)] * p),
                                      Fraction(0), "ok"))
            continue
        if p and Ls.dtype == np.int64:
            z = _try_float_witness(Ls[n], rs[n].astype(np.int64) if rs.dtype != object else r)
            L = None
        else:
            L = [[int(v) for v in Ls[n, k]] for k in range(d)] if p else [[] for _ in range(d)]
            z = _try_float_witness(L, r) if p else None
        if z is not None:
            res_sq = Fraction(0)
        else:
            if L is None:
                L = [[int(v) for v in Ls[n, k]] for k in range(d)]
            res_int, z = _exact_solve(L, r, gm, c)
            res_sq = res_int * unit * unit
        # z solves L_int z = -r_int for the integer-scaled X; unscale
        z = tuple(v / s for v in z)
        status = "ok" if res_sq == 0 else "fail"
        out.append(GoSampleResult(tuple(x), math.sqrt(res_sq), res_sq,
                                  z if status == "ok" else None, Fraction(0), status))
        if status == "fail" and stop_on_fail:
            break
    return out


_INT_OP = weakref.WeakKeyDictionary()


def _absmax(a) -> int:
    return int(np.abs(a).max()) if a.size else 0


def _maybe_int(a):
    a = np.asarray(a)
    if a.dtype == np.int64:
        return a
    a = a.astype(object)
    if _absmax(a) < 2 ** 62:
        return a.astype(np.int64)
    return a


def _float_batch(A: MetricOperator, X_list, tol=PASS_TOL, fail_tol=FAIL_TOL, stop_on_fail=True):
    dec = A.dec
    st = dec.structure
    d, p = dec.dim_m, dec.dim_k
    Af = A.operator_float
    gm = st.gm.astype(float)
    c = float(st.scale)
    xs = np.array([[float(v) for v in x] for x in X_list]).reshape(len(X_list), d)
    ys = xs @ Af.T
    rs = np.einsum("nj,njk->nk", ys, np.tensordot(xs, st.mm_m.astype(float), axes=(1, 0)))
    ks = (np.einsum("nj,njk->nk", ys, np.tensordot(xs, st.mm_k.astype(float), axes=(1, 0)))
          if p else np.zeros((len(X_list), 0)))
    w = 1 / np.sqrt(gm)
    out = []
    for n, x in enumerate(X_list):
        y = ys[n]
        ax_norm = math.sqrt(c * float(np.sum(y * y * gm)))
        kc = math.sqrt(c * float(np.sum(ks[n] ** 2 / st.gk))) if p else 0.0
        if kc > fail_tol * (1 + ax_norm * math.sqrt(float(np.sum(xs[n] ** 2 * gm)))):
            raise InvarianceViolation(
                f"[X, AX] has a k_Theta component {kc:.3g}: the operator is not invariant")
        r = rs[n]
        if p:
            L = np.einsum("j,qjk->kq", y, st.km_m.astype(float))
            z, *_ = np.linalg.lstsq(L * w[:, None], -r * w, rcond=None)
            res = L @ z + r
        else:
            z, res = np.zeros(0), r
        resid = math.sqrt(c * float(np.sum(res ** 2 / gm)))
        if resid < tol * (1 + ax_norm):
            status = "ok"
        elif resid > fail_tol * (1 + ax_norm):
            status = "fail"
        else:
            status = "undecided"
        out.append(GoSampleResult(tuple(float(v) for v in x), resid, resid ** 2,
                                  tuple(float(v) for v in z) if status == "ok" else None,
                                  kc, status))
        if status == "fail" and stop_on_fail:
            break
    return out


def geodesic_residual(A: MetricOperator, X) -> GoSampleResult:
    """Residual of [Z + X, AX] = 0 minimized over Z in k_Theta, for X given
    in stored m_Theta coordinates."""
    X = list(X)
    if len(X) != A.dec.dim_m:
        raise ValueError(f"X has {len(X)} coordinates, m_Theta has dimension {A.dec.dim_m}")
    if A.is_exact:
        return _exact_batch(A, [X])[0]
    return _float_batch(A, [X])[0]


# --------------------------------------------------------------------------
# sampling

def sample_vectors(d: int, n_samples: int = 64, seed: int = 0) -> list:
    """Basis vectors, pairwise sums, then seeded random integer vectors
    with entries in [-3, 3]."""
    out = []
    for i in range(d):
        v = [0] * d
        v[i] = 1
        out.append(v)
    for i, j in itertools.combinations(range(d), 2):
        v = [0] * d
        v[i] = v[j] = 1
        out.append(v)
    rng = np.random.default_rng(seed)
    k = 0
    while k < n_samples and d:
        v = [int(x) for x in rng.integers(-3, 4, size=d)]
        if any(v):
            out.append(v)
            k += 1
    return out


def is_go_numeric(A: MetricOperator, n_samples: int = 64, seed: int = 0, tol: float = PASS_TOL,
                  classify: bool = True, stop_on_fail: bool = True) -> GoReport:
    dec = A.dec
    X_list = sample_vectors(dec.dim_m, n_samples, seed)
    if A.is_exact:
        results = _exact_batch(A, X_list, stop_on_fail)
    else:
        results = _float_batch(A, X_list, tol=tol, stop_on_fail=stop_on_fail)
    fails = [s for s in results if s.status == "fail"]
    und = [s for s in results if s.status == "undecided"]
    if fails:
        verdict = NOT_GO
    elif und:
        verdict = UNDECIDED
    else:
        verdict = GO
    cert = ("exact" if A.is_exact else "float") + "-sampled"
    classified = None
    if classify and A.params is not None:
        classified = is_go_classified(dec.theta, A.params)
    agreement = True
    if isinstance(classified, bool):
        if verdict == UNDECIDED:
            agreement = False
        else:
            agreement = classified == (verdict == GO)
        if agreement and verdict == GO:
            cert = "certified"
    return GoReport(
        verdict=verdict,
        certificate=cert,
        samples=tuple(results),
        failing_witness=fails[0].X if fails else None,
        classified_verdict=classified,
        agreement=agreement,
        n_evaluated=len(results),
        max_residual=max((s.residual for s in results), default=0.0),
    )


# --------------------------------------------------------------------------
# closed forms

def _is_float(*vals):
    return any(isinstance(v, float) for v in vals)


def _eq(a, b, tol=1e-9) -> bool:
    if _is_float(a, b):
        return abs(float(a) - float(b)) <= tol * (1 + abs(float(a)) + abs(float(b)))
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    diff = to_sympy(a) - to_sympy(b)
    return sympy.radsimp(sympy.expand(diff)) == 0


def _sub(a, b):
    if _is_float(a, b):
        return float(a) - float(b)
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a - b
    return to_sympy(a) - to_sympy(b)


def _all_equal(vals) -> bool:
    return all(_eq(vals[0], v) for v in vals[1:])


def _gamma_rel(lam, b):
    if _is_float(lam, b):
        return (float(lam) ** 2 - float(b) ** 2) / float(lam)
    if isinstance(lam, Fraction) and isinstance(b, Fraction):
        return (lam * lam - b * b) / lam
    lam, b = to_sympy(lam), to_sympy(b)
    return (lam ** 2 - b ** 2) / lam


def _pick(values, prefix):
    return [v for k, v in values.items() if k.startswith(prefix)]


def _pick_exact(values, pattern):
    import re
    rx = re.compile(pattern)
    return [v for k, v in values.items() if rx.match(k)]


def is_go_classified(theta: ThetaSpec, params: MetricParams):
    """Closed-form g.o. predicate; "no-closed-form" for the tabulated C_4 flags."""
    schema = param_schema(theta)
    case = schema.case
    v = params.values
    missing = [n for n in schema.names if n not in v]
    if missing:
        raise ValueError(f"missing parameters {missing}")
    diag = [v[p.name] for p in schema.params if p.positive]
    coup = [v[p.name] for p in schema.params if not p.positive]

    def normal():
        return (not diag or _all_equal(diag)) and all(_eq(c, 0) for c in coup)

    if case == "point":
        return True
    if case.startswith("C4_"):
        return "no-closed-form"
    if case == "A_generic" or case == "A3_irreducible":
        return normal()
    if case == "A3_a1a3":
        return True
    if case == "A3_empty":
        return (_all_equal(diag) and _eq(v["b(1)"], _sub(0, v["b(2)"]))
                and _eq(v["b(1)"], v["b(3)"]))
    if case == "A3_single":
        mu1, mu2 = v["mu1(1)"], v["mu1(2)"]
        if not _eq(mu2, v["mu2(2)"]):
            return False
        b = v["b"]
        if _is_float(b, mu1, mu2):
            return _eq(float(b) ** 2, float(mu2) * (float(mu2) - float(mu1)))
        return _eq(to_sympy(b) ** 2, to_sympy(mu2) * (to_sympy(mu2) - to_sympy(mu1)))
    if case.startswith("B_") or case.startswith("D_"):
        lam = _pick_exact(v, r"^lambda[12]?\(")
        bs = _pick_exact(v, r"^b\(")
        gam = _pick_exact(v, r"^gamma\(")
        mus = _pick_exact(v, r"^mu\(")
        rhos = _pick_exact(v, r"^rho\(")
        for group in (lam, bs, gam, mus, rhos):
            if group and not _all_equal(group):
                return False
        if case.startswith("B_") and mus and lam:
            if not _eq(_sub(mus[0], lam[0]), bs[0]):
                return False
            if rhos and not _eq(_sub(lam[0], rhos[0]), bs[0]):
                return False
        if gam and lam:
            if not _eq(gam[0], _gamma_rel(lam[0], bs[0])):
                return False
        if not lam:
            return _degenerate_bd(case, v, mus, rhos, gam)
        return True
    if case.startswith("C_"):
        mus = [v[n] for n in schema.names if n.startswith(("mu1(", "mu2(")) or
               (n.startswith("mu(") and not n.startswith("mu0"))]
        if any(not _eq(x, 0) for x in _pick_exact(v, r"^b\(")):
            return False
        if mus and not _all_equal(mus):
            return False
        dec = build_decomposition(theta)
        vs = [s for s in dec.submodules if s.name.startswith("V(")]
        sizes = [int(round(1 / dec.nu_sq[s.indices[0]])) for s in vs]
        if len(vs) < 2:
            return True
        if not mus:
            return "no-closed-form"
        mu = mus[0]
        t = [_div(_sub(v[f"mu0({i + 1})"], mu), sizes[i]) for i in range(len(vs))]
        if not _all_equal(t):
            return False
        for m in range(len(vs)):
            for n in range(m):
                want = _mulroot(sizes[m] * sizes[n], t[0])
                if not _eq(v[f"a({m + 1},{n + 1})"], want):
                    return False
        return True
    raise ValueError(f"no predicate for case {case}")


def _div(a, n):
    if isinstance(a, float):
        return a / n
    if isinstance(a, Fraction):
        return a / n
    return a / n


def _mulroot(k: int, t):
    """sqrt(k) * t."""
    r = math.isqrt(k)
    if r * r == k:
        return t * r if not isinstance(t, float) else t * r
    if isinstance(t, float):
        return math.sqrt(k) * t
    return sympy.sqrt(k) * to_sympy(t)


def _degenerate_bd(case, v, mus, rhos, gam):
    """B flags without any M_mn block; resolved numerically.

    r = 1 (m = V_1 + U_1): every invariant metric is g.o.
    r = 2 with alpha_l (m = (V_1)_1 + (V_1)_2 + U_1): g.o. iff
    gamma = 2 mu rho / (mu + rho), with no condition when l_1 = 1.
    """
    if case == "B_no_alpha_l" or not gam or not rhos:
        # includes the D flags whose isotropy module is irreducible
        return True
    mu, rho = mus[0], rhos[0]
    if _is_float(mu, rho, gam[0]):
        return _eq(gam[0], 2 * float(mu) * float(rho) / (float(mu) + float(rho)))
    if all(isinstance(x, Fraction) for x in (mu, rho, gam[0])):
        return gam[0] == 2 * mu * rho / (mu + rho)
    mu, rho = to_sympy(mu), to_sympy(rho)
    return _eq(gam[0], 2 * mu * rho / (mu + rho))


# --------------------------------------------------------------------------
# families

def _val(free, key, default=None):
    if key not in free:
        if default is not None:
            return default
        raise FamilyError(f"missing free value {key!r}")
    return parse_value(free[key])


def go_family(theta: ThetaSpec, free: dict) -> MetricParams:
    """Parameters of the g.o. family of ``theta`` from its free values.

    A (generic), A3 irreducible:  mu
    A3 empty:   mu, b          A3 single:  mu1, mu2 [, sign]  or  mu2, b
    A3 a1a3:    mu1, mu2       B / D:      lambda, b
    C:          mu, t  (M_0 = mu I + t v v^T, v = (sqrt(l_i)))
    """
    schema = param_schema(theta)
    case = schema.case
    names = schema.names
    vals = {}
    if case == "point":
        return MetricParams(case, {})
    if case.startswith("C4_"):
        raise FamilyError("the tabulated C_4 flags have no closed-form family")
    if case in ("A_generic", "A3_irreducible"):
        mu = _val(free, "mu")
        _positive(mu, "mu")
        return MetricParams(case, {n: (mu if schema.param(n).positive else Fraction(0)) for n in names})
    if case == "A3_a1a3":
        mu1, mu2 = _val(free, "mu1"), _val(free, "mu2")
        _positive(mu1, "mu1")
        _positive(mu2, "mu2")
        return MetricParams(case, {"mu1": mu1, "mu2": mu2})
    if case == "A3_empty":
        mu, b = _val(free, "mu"), _val(free, "b", Fraction(0))
        if not float(mu) > abs(float(b)):
            raise FamilyError("need mu > |b| for positivity")
        for n in names:
            vals[n] = mu if n.startswith("mu") else b
        vals["b(2)"] = _sub(0, b)
        return MetricParams(case, vals)
    if case == "A3_single":
        if "b" in free:
            mu2, b = _val(free, "mu2"), _val(free, "b")
            if not float(mu2) > abs(float(b)):
                raise FamilyError("need mu2 > |b|")
            mu1 = _sub(mu2, _div(b * b, 1) / mu2) if not _is_float(b, mu2) else float(mu2) - float(b) ** 2 / float(mu2)
        else:
            mu1, mu2 = _val(free, "mu1"), _val(free, "mu2")
            if float(mu2) < float(mu1):
                raise FamilyError("need mu2 >= mu1")
            sq = _sqrt_value(_prod(mu2, _sub(mu2, mu1)))
            b = sq if int(free.get("sign", 1)) >= 0 else _neg(sq)
        _positive(mu1, "mu1")
        return MetricParams(case, {"mu1(1)": mu1, "mu1(2)": mu2, "mu2(2)": mu2, "b": b})
    if case.startswith("B_") or case.startswith("D_"):
        lam, b = _val(free, "lambda"), _val(free, "b", Fraction(0))
        if not float(lam) > abs(float(b)):
            raise FamilyError("need lambda > |b| (otherwise gamma <= 0 or A indefinite)")
        gamma = _gamma_rel(lam, b)
        if not isinstance(gamma, (float, Fraction)):
            gamma = parse_value(gamma)
        mu, rho = _add(lam, b), _sub(lam, b)
        for n in names:
            if n.startswith("lambda"):
                vals[n] = lam
            elif n.startswith("b("):
                vals[n] = b
            elif n.startswith("gamma"):
                vals[n] = gamma
            elif n.startswith("mu"):
                vals[n] = mu
            elif n.startswith("rho"):
                vals[n] = rho
        return MetricParams(case, vals)
    if case.startswith("C_"):
        mu, t = _val(free, "mu"), _val(free, "t", Fraction(0))
        _positive(mu, "mu")
        dec = build_decomposition(theta)
        vs = [s for s in dec.submodules if s.name.startswith("V(")]
        sizes = [int(round(1 / dec.nu_sq[s.indices[0]])) for s in vs]
        total = sum(sizes)
        if not float(mu) + float(t) * total > 0:
            raise FamilyError("need mu + t * (l_1 + ... + l_r~) > 0 for positivity")
        for n in names:
            if n.startswith("mu0("):
                i = int(n[4:-1]) - 1
                vals[n] = _add(mu, _prod(t, Fraction(sizes[i])))
            elif n.startswith("a("):
                m, k = (int(x) for x in n[2:-1].split(","))
                w = _mulroot(sizes[m - 1] * sizes[k - 1], t)
                vals[n] = w if isinstance(w, (float, Fraction)) else parse_value(w)
            elif n.startswith("b("):
                vals[n] = Fraction(0)
            else:
                vals[n] = mu
        return MetricParams(case, vals)
    raise FamilyError(f"no family for case {case}")


def _positive(x, name):
    if not float(x) > 0:
        raise FamilyError(f"{name} must be positive")


def _add(a, b):
    return _sub(a, _neg(b))


def _neg(a):
    return -a


def _prod(a, b):
    if _is_float(a, b):
        return float(a) * float(b)
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a * b
    return parse_value(to_sympy(a) * to_sympy(b))


def _sqrt_value(x):
    if isinstance(x, float):
        return math.sqrt(x)
    if isinstance(x, Fraction):
        rn, rd = math.isqrt(x.numerator), math.isqrt(x.denominator)
        if rn * rn == x.numerator and rd * rd == x.denominator:
            return Fraction(rn, rd)
        return parse_value(sympy.sqrt(sympy.Rational(x.numerator, x.denominator)))
    return parse_value(sympy.sqrt(x))


def family_free_values(case: str) -> tuple:
    """Names of the free values accepted by go_family for ``case``."""
    if case in ("A_generic", "A3_irreducible"):
        return ("mu",)
    if case == "A3_a1a3":
        return ("mu1", "mu2")
    if case == "A3_empty":
        return ("mu", "b")
    if case == "A3_single":
        return ("mu1", "mu2")
    if case.startswith(("B_", "D_")):
        return ("lambda", "b")
    if case.startswith("C_"):
        return ("mu", "t")
    return ()


# --------------------------------------------------------------------------
# obstruction lemma

@dataclass(frozen=True)
class Obstruction:
    kind: str                 # "pair" or "triple"
    eigenvalues: tuple
    labels: tuple
    projection_norm: float
    violated: bool

    @property
    def statement(self) -> str:
        return " = ".join(self.labels)

    def to_json(self) -> dict:
        return {"kind": self.kind, "eigenvalues": list(self.eigenvalues),
                "labels": list(self.labels), "statement": self.statement,
                "projection_norm": self.projection_norm, "violated": self.violated}


def _pieces(A: MetricOperator):
    """Orthogonal A-invariant, K_Theta-invariant pieces of m_Theta, each
    inside one eigenspace of A: (label, eigenvalue, orthonormal columns in
    trace-normalized coordinates)."""
    dec = A.dec
    sq = np.sqrt(dec.structure.gm.astype(float))
    S = sq[:, None] * A.operator_float / sq[None, :]
    S = (S + S.T) / 2
    schema = param_schema(dec.theta) if A.params is not None else None
    out = []
    for summ in dec.isotypical_summands:
        idx = list(summ.indices)
        block = S[np.ix_(idx, idx)]
        off = block - np.diag(np.diag(block))
        if not np.any(np.abs(off) > 1e-12):
            for name in summ.submodules:
                sub = dec.submodule(name)
                Q = np.zeros((len(sq), len(sub.indices)))
                for c, i in enumerate(sub.indices):
                    Q[i, c] = 1.0
                lam = float(S[sub.indices[0], sub.indices[0]])
                label = name
                if schema is not None:
                    hit = [p.name for p in schema.params if p.positive
                           and sub.indices[0] in {i for i, _, _ in p.entries}]
                    label = hit[0] if hit else name
                out.append((label, lam, Q))
            continue
        ev, V = np.linalg.eigh(block)
        groups = []
        for k, lam in enumerate(ev):
            if groups and abs(lam - groups[-1][0]) <= 1e-9 * (1 + abs(lam)):
                groups[-1][1].append(k)
            else:
                groups.append([lam, [k]])
        for lam, ks in groups:
            Q = np.zeros((len(sq), len(ks)))
            Q[idx, :] = V[:, ks]
            out.append((f"eig({lam:.6g})@{summ.name}", float(lam), Q))
    return out


def obstruction_scan(A: MetricOperator, tol: float = 1e-8) -> list:
    """Equalities forced on the eigenvalues of A by the obstruction lemma.

    For invariant pieces m_1, m_2 sitting in eigenspaces of A, a nonzero
    component of [m_1, m_2] orthogonal to m_1 + m_2 forces their
    eigenvalues to agree; a nonzero component on a third piece m_3 forces
    all three to agree.  Pieces are the uncoupled submodules and the
    eigenspaces of A inside each coupled isotypical summand.  Only the
    facts that A itself violates are returned (the pieces then lie in
    distinct eigenspaces), so a nonempty list means A is not g.o.
    """
    dec = A.dec
    d = dec.dim_m
    if d == 0:
        return []
    st = dec.structure
    sq = np.sqrt(st.gm.astype(float))
    pieces = _pieces(A)
    Q = np.concatenate([p[2] for p in pieces], axis=1)
    spans, pos = [], 0
    for p in pieces:
        spans.append(list(range(pos, pos + p[2].shape[1])))
        pos += p[2].shape[1]
    T = st.mm_m.astype(float) / (sq[:, None, None] * sq[None, :, None] * sq[None, None, :])
    Tq = np.tensordot(T, Q, axes=(2, 0))
    Tq = np.tensordot(Tq, Q, axes=(1, 0)).transpose(0, 2, 1)
    Tq = np.tensordot(Q, Tq, axes=(0, 0))
    # squared projection of [m_a, m_b] on every piece c
    P = len(pieces)
    starts = [sp[0] for sp in spans]
    W = Tq ** 2
    for axis in range(3):
        W = np.add.reduceat(W, starts, axis=axis)

    def differ(x, y):
        return abs(x - y) > 1e-9 * (1 + abs(x) + abs(y))

    facts = []
    for a, b in itertools.combinations(range(P), 2):
        out_norm = math.sqrt(sum(W[a, b, c] for c in range(P) if c not in (a, b)))
        if out_norm <= tol:
            continue
        la, lb = pieces[a][1], pieces[b][1]
        if differ(la, lb):
            facts.append(Obstruction("pair", (la, lb), (pieces[a][0], pieces[b][0]),
                                     out_norm, True))
        # <[x, y], z> is totally skew, so each triple a < b < c is checked once
        for c in range(b + 1, P):
            tn = math.sqrt(W[a, b, c])
            if tn <= tol:
                continue
            lc = pieces[c][1]
            if differ(la, lb) or differ(la, lc):
                facts.append(Obstruction("triple", (la, lb, lc),
                                         (pieces[a][0], pieces[b][0], pieces[c][0]), tn, True))
    return facts


def classification_kind(theta: ThetaSpec) -> str:
    """Shape of the g.o. set of ``theta``:

    "point"            the flag is a point
    "all metrics"      every invariant metric is g.o.
    "normal only"      only the multiples of the identity
    "family"           a proper non-normal family (see go_family)
    "no-closed-form"   tabulated C_4 flags, numeric route only
    """
    schema = param_schema(theta)
    case = schema.case
    if case == "point":
        return "point"
    if case.startswith("C4_"):
        return "no-closed-form"
    diag = [p for p in schema.params if p.positive]
    if case in ("A3_a1a3", "A3_irreducible") or len(schema) == 1:
        return "all metrics"
    if case == "D_both" and len(diag) == 1:
        return "all metrics"
    if case == "B_no_alpha_l" and not any(n.startswith("lambda") for n in schema.names):
        return "all metrics"
    if case == "B_alpha_l" and not any(n.startswith(("lambda", "gamma")) for n in schema.names):
        return "all metrics"
    if case == "A_generic":
        return "normal only"
    return "family"


# --------------------------------------------------------------------------
# cross-validation

@dataclass(frozen=True)
class CrossValidation:
    theta: ThetaSpec
    n_draws: int
    n_go: int
    n_not_go: int
    n_skipped: int            # draws rejected by the positivity check
    disagreements: tuple      # (draw kind, params JSON, numeric, classified)

    @property
    def passed(self) -> bool:
        return not self.disagreements


def _family_draw(case: str, rng) -> dict:
    k = Fraction(int(rng.integers(1, 5)))
    if case == "A3_single":
        # mu2 (mu2 - mu1) a perfect square keeps b rational
        return {"mu1": 3 * k, "mu2": 4 * k, "sign": int(rng.choice([-1, 1]))}
    lam = Fraction(int(rng.integers(2, 7)))
    b = Fraction(int(rng.integers(-2 * int(lam) + 1, 2 * int(lam))), 2)
    return {"mu": lam, "lambda": lam, "b": b,
            "t": Fraction(int(rng.integers(-3, 9)), 4 * (1 + int(rng.integers(0, 3)))),
            "mu1": k, "mu2": k + int(rng.integers(1, 4))}


def cross_validate(theta: ThetaSpec, n_draws: int = 200, seed: int = 0,
                   n_samples: int = 16) -> CrossValidation:
    """Compare is_go_classified with is_go_numeric (exact mode) on a mix of
    draws: g.o. family members, family members with one parameter moved
    by a small rational amount, and free random invariant metrics."""
    from .invariant_metric import (PositivityError, perturb_params,
                                   random_invariant_metric)
    dec = build_decomposition(theta)
    schema = param_schema(theta)
    rng = np.random.default_rng(seed)
    n_go = n_not = skipped = 0
    bad = []
    quarter = n_draws // 4
    for i in range(n_draws):
        kind = "family" if i < quarter else "perturbed" if i < 2 * quarter else "random"
        try:
            if kind == "random":
                P = random_invariant_metric(dec, int(rng.integers(0, 2 ** 31)))
            else:
                P = go_family(theta, _family_draw(schema.case, rng))
                if kind == "perturbed" and len(schema):
                    name = schema.names[int(rng.integers(0, len(schema)))]
                    delta = Fraction(int(rng.choice([-3, -1, 1, 3])), 10)
                    P = perturb_params(dec, P, name, delta)
            A = build_metric(dec, P, mode="exact")
        except (FamilyError, PositivityError):
            skipped += 1
            continue
        rep = is_go_numeric(A, n_samples=n_samples, seed=i)
        if rep.verdict == GO:
            n_go += 1
        else:
            n_not += 1
        ok = rep.agreement and (rep.verdict == GO or rep.failing_witness is not None)
        if not ok:
            bad.append((kind, P.to_json(), rep.verdict, rep.classified_verdict))
    return CrossValidation(theta, n_draws, n_go, n_not, skipped, tuple(bad))
