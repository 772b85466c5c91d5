"""Invariant metric operators on m_Theta.

An invariant metric is g(X, Y) = (AX, Y) with A self-adjoint, positive and
commuting with Ad(K_Theta).  Each flag has a parameter schema: a list of
named parameters, each a pattern of positions in the conventional matrix
``a`` of A (conventional = in the normalized adapted basis).  The stored
basis of m_Theta is unnormalized, so the operator in stored coordinates is

    A_hat[i, j] = a[i, j] * sqrt(nu_sq[i] / nu_sq[j]).

Parameter values are ``Fraction``, ``float`` or sympy algebraic numbers
(needed for couplings such as sqrt(2)/3 whose operator entries are still
rational).  Exact mode requires A_hat to be rational.
"""
from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import flint
import numpy as np
import sympy

from .flag_manifold import Decomposition, ThetaSpec, build_decomposition, discrete_isotropy_generators
from .lie_algebra import is_exact


class PositivityError(ValueError):
    """The assembled operator is not positive definite."""

    def __init__(self, message, minor_index=None, minor_value=None):
        super().__init__(message)
        self.minor_index = minor_index
        self.minor_value = minor_value


class SchemaError(ValueError):
    """Parameter record does not match the flag's schema."""


class NonRationalError(ValueError):
    """Exact mode was requested for an operator with irrational entries."""


# --------------------------------------------------------------------------
# scalar values

_EXPR_OK = re.compile(r"^[0-9sqrt()+\-*/. ]+$")


def parse_value(x):
    """Fraction for integers and "p/q" strings, float for floats, sympy
    algebraic number for strings like "2*sqrt(3)/5"."""
    if isinstance(x, bool):
        raise SchemaError(f"invalid parameter value {x!r}")
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, sympy.Basic):
        return _simplify_sym(x)
    if isinstance(x, str):
        s = x.strip()
        try:
            return Fraction(s)
        except ValueError:
            pass
        if not _EXPR_OK.match(s):
            raise SchemaError(f"cannot parse parameter value {x!r}")
        try:
            return _simplify_sym(sympy.sympify(s, rational=True))
        except (sympy.SympifyError, TypeError, SyntaxError) as exc:
            raise SchemaError(f"cannot parse parameter value {x!r}") from exc
    raise SchemaError(f"unsupported parameter value type {type(x).__name__}")


def to_sympy(x):
    """Exact sympy form of a parameter value (nsimplify is not exact on
    rationals with large denominators)."""
    if isinstance(x, Fraction):
        return sympy.Rational(x.numerator, x.denominator)
    if isinstance(x, (int, np.integer)):
        return sympy.Integer(int(x))
    return sympy.sympify(x)


def _simplify_sym(e):
    e = sympy.nsimplify(e) if e.is_Float else sympy.radsimp(e)
    if e.is_Rational:
        return Fraction(int(e.p), int(e.q))
    if not e.is_real or not e.is_number:
        raise SchemaError(f"parameter value {e} is not a real number")
    return e


def format_value(v):
    """JSON form: "p/q" for rationals, float, or a sympy string."""
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, float):
        return v
    return str(v)


def _as_float(v) -> float:
    return float(v)


def _sqrt_ratio(num: Fraction, den: Fraction):
    """sqrt(num/den) as a Fraction when rational, else a sympy number."""
    return _sqrt_of(Fraction(num) / Fraction(den))


@functools.lru_cache(maxsize=4096)
def _sqrt_of(q: Fraction):
    rn, rd = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if rn * rn == q.numerator and rd * rd == q.denominator:
        return Fraction(rn, rd)
    return sympy.sqrt(sympy.Rational(q.numerator, q.denominator))


def _mul(a, b):
    if isinstance(a, float) or isinstance(b, float):
        return float(a) * float(b)
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a * b
    return _simplify_sym(to_sympy(a) * to_sympy(b))


# --------------------------------------------------------------------------
# schema

@dataclass(frozen=True)
class Param:
    name: str
    kind: str               # "diag" or "coupling"
    entries: tuple          # ((i, j, sign), ...) with i <= j
    summand: str

    @property
    def multiplicity(self) -> int:
        return len(self.entries)

    @property
    def positive(self) -> bool:
        return self.kind == "diag"


@dataclass(frozen=True)
class MetricSchema:
    theta: ThetaSpec
    case: str
    params: tuple

    @property
    def names(self) -> list:
        return [p.name for p in self.params]

    def __len__(self):
        return len(self.params)

    def param(self, name) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise SchemaError(f"{name!r} is not a parameter of {self.theta.describe()}")

    def to_json(self) -> dict:
        return {
            "theta": self.theta.to_json(),
            "case": self.case,
            "count": len(self.params),
            "params": [
                {"name": p.name, "kind": p.kind, "summand": p.summand,
                 "multiplicity": p.multiplicity,
                 "constraint": "> 0" if p.positive else "real (PD overall)"}
                for p in self.params
            ],
        }


def _sub_suffix(name):
    m = re.match(r"^[A-Za-z]+(\(.*\))(_\d)?$", name)
    return m.group(1) if m else ""


def _layout(dec: Decomposition) -> list:
    out = []
    subs = {s.name: s for s in dec.submodules}

    def diag(name, *subnames):
        idx = [i for sn in subnames for i in subs[sn].indices]
        out.append(Param(name, "diag", tuple((i, i, 1) for i in idx), subs[subnames[0]].summand))

    def coupling(name, a, b, signs=None):
        ia, ib = subs[a].indices, subs[b].indices
        signs = signs or [1] * len(ia)
        out.append(Param(name, "coupling",
                         tuple((min(i, j), max(i, j), s) for i, j, s in zip(ia, ib, signs)),
                         subs[a].summand))

    case = dec.case
    if case == "point":
        return out
    if case == "A_generic":
        for s in dec.submodules:
            diag("mu" + _sub_suffix(s.name), s.name)
        return out
    if case == "A3_empty":
        for k, summ in enumerate(dec.isotypical_summands, start=1):
            x, y = summ.submodules
            diag(f"mu1({k})", x)
            diag(f"mu2({k})", y)
            coupling(f"b({k})", x, y)
        return out
    if case == "A3_single":
        single, first, second = [s.name for s in dec.submodules]
        diag("mu1(1)", single)
        diag("mu1(2)", first)
        diag("mu2(2)", second)
        coupling("b", first, second, [1, -1])
        return out
    if case == "A3_irreducible":
        diag("mu", "M")
        return out
    if case == "A3_a1a3":
        diag("mu1", "M1")
        diag("mu2", "M2")
        return out

    fam = dec.spec.family
    names = [s.name for s in dec.submodules]

    def wu(prefix1, prefix2, bname):
        for nm in names:
            if nm.startswith("W("):
                suf = nm[1:]
                diag(f"{prefix1}{suf}", nm)
        for nm in names:
            if nm.startswith("W("):
                suf = nm[1:]
                diag(f"{prefix2}{suf}", "U" + suf)
        for nm in names:
            if nm.startswith("W("):
                suf = nm[1:]
                coupling(f"{bname}{suf}", nm, "U" + suf)

    if fam == "B":
        for nm in names:
            if re.match(r"^V\(\d+\)$", nm):
                diag("mu" + nm[1:], nm)
            elif nm.endswith("_1"):
                diag("rho" + nm[1:-2], nm)
            elif nm.endswith("_2"):
                diag("mu" + nm[1:-2], nm)
        wu("lambda1", "lambda2", "b")
        for nm in names:
            if re.match(r"^U\(\d+\)$", nm):
                diag("gamma" + nm[1:], nm)
        return out
    if fam == "C" and case.startswith("C4_"):
        vs = [nm for nm in names if nm.startswith("V(")]
        for nm in vs:
            diag("mu0" + nm[1:], nm)
        for a in range(len(vs)):
            for b in range(a):
                coupling(f"a({a + 1},{b + 1})", vs[b], vs[a])
        if case == "C4_empty":
            for k in (1, 2, 3):
                wx, wy, ux, uy = dec.summand(f"N{k}").submodules
                for j, nm in enumerate((wx, wy, ux, uy), start=1):
                    diag(f"mu{j}({k})", nm)
                coupling(f"b1({k})", wx, ux)
                coupling(f"b2({k})", wy, uy)
            return out
        big = case[-1]
        diag(f"mu({big})", f"U({big})")
        wm, um = dec.summand("M").submodules
        diag("muM1", wm)
        diag("muM2", um)
        coupling("bM", wm, um)
        wx, wy, ux, uy = dec.summand("N").submodules
        for j, nm in enumerate((wx, wy, ux, uy), start=1):
            diag(f"muN{j}", nm)
        coupling("bN1", wx, ux)
        coupling("bN2", wy, uy)
        return out
    if fam == "C":
        vs = [nm for nm in names if nm.startswith("V(")]
        for nm in vs:
            diag("mu0" + nm[1:], nm)
        for a in range(len(vs)):
            for b in range(a):
                coupling(f"a({a + 1},{b + 1})", vs[b], vs[a])
        wu("mu1", "mu2", "b")
        for nm in names:
            if re.match(r"^M\(\d+,\d+\)$", nm):
                diag("mu" + nm[1:], nm)
        for nm in names:
            if re.match(r"^U\(\d+\)$", nm):
                diag("mu" + nm[1:], nm)
        return out
    # D
    wu("lambda1", "lambda2", "b")
    r = dec.theta.r
    for nm in names:
        if re.match(r"^M\(\d+,\d+\)$", nm):
            diag("lambda" + nm[1:], nm)
    for nm in names:
        if re.match(r"^M\(\d+,\d+\)$", nm):
            # the w+u and w-u halves are inequivalent irreducibles, so a
            # w <-> u coupling is invariant as well
            idx = subs[nm].indices
            h = len(idx) // 2
            out.append(Param("b" + nm[1:], "coupling",
                             tuple((idx[k], idx[h + k], 1) for k in range(h)), subs[nm].summand))
    for nm in names:
        m = re.match(r"^M\((\d+)\)$", nm)
        if m:
            n = m.group(1)
            diag(f"lambda1({r - 1},{n})", nm)
            diag(f"lambda2({r - 1},{n})", f"N({n})")
            coupling(f"b({r - 1},{n})", nm, f"N({n})")
    for nm in names:
        if re.match(r"^(U|V)\(\d+\)$", nm):
            diag("gamma" + nm[1:], nm)
    return out


@functools.lru_cache(maxsize=None)
def param_schema(theta: ThetaSpec) -> MetricSchema:
    dec = build_decomposition(theta)
    return MetricSchema(theta, dec.case, tuple(_layout(dec)))


# --------------------------------------------------------------------------
# parameter records and operators

@dataclass(frozen=True)
class MetricParams:
    case: str
    values: dict

    def __post_init__(self):
        object.__setattr__(self, "values", {k: parse_value(v) for k, v in self.values.items()})

    def to_json(self) -> dict:
        return {"case": self.case, "values": {k: format_value(v) for k, v in self.values.items()}}

    @classmethod
    def from_json(cls, data: dict) -> "MetricParams":
        if "values" not in data:
            raise SchemaError("params JSON needs a 'values' object")
        return cls(data.get("case", ""), dict(data["values"]))

    def scaled(self, c) -> "MetricParams":
        return MetricParams(self.case, {k: _mul(parse_value(c), v) for k, v in self.values.items()})

    @property
    def is_float(self) -> bool:
        return any(isinstance(v, float) for v in self.values.values())


@functools.lru_cache(maxsize=256)
def _scale_table(nu: tuple) -> list:
    """sqrt(nu_i / nu_j) for every pair of stored coordinates."""
    d = len(nu)
    return [[_sqrt_ratio(nu[i], nu[j]) for j in range(d)] for i in range(d)]


def _leading_minors_fmpq(M: flint.fmpq_mat):
    n = M.nrows()
    for k in range(1, n + 1):
        sub = flint.fmpq_mat(k, k, [M[i, j] for i in range(k) for j in range(k)])
        yield k, sub.det()


@dataclass(frozen=True, eq=False)
class MetricOperator:
    """Invariant metric operator on m_Theta of ``dec``.

    ``matrix`` is the conventional symmetric matrix a; ``operator`` the
    exact operator in stored coordinates (Fraction object array) and
    ``operator_float`` its float version.  ``mode`` is "exact" or "float".
    """
    dec: Decomposition
    matrix: np.ndarray = field(repr=False)
    params: Optional[MetricParams]
    mode: str

    @property
    def scale_factors(self) -> list:
        return _scale_table(self.dec.nu_sq)

    @functools.cached_property
    def operator(self) -> np.ndarray:
        d = self.dec.dim_m
        sf = self.scale_factors
        out = np.empty((d, d), dtype=object)
        for i in range(d):
            for j in range(d):
                v = self.matrix[i, j]
                if isinstance(v, float):
                    raise NonRationalError("float parameters: use float mode")
                if v == 0:
                    out[i, j] = Fraction(0)
                    continue
                x = _mul(v, sf[i][j])
                if not isinstance(x, Fraction):
                    raise NonRationalError(
                        f"operator entry ({i},{j}) = {x} is irrational; use float mode "
                        "or choose rational-friendly parameters")
                out[i, j] = x
        return out

    @functools.cached_property
    def operator_float(self) -> np.ndarray:
        d = self.dec.dim_m
        sf = self.scale_factors
        out = np.zeros((d, d))
        for i in range(d):
            for j in range(d):
                v = self.matrix[i, j]
                if v != 0:
                    out[i, j] = float(v) * float(sf[i][j])
        return out

    @functools.cached_property
    def operator_fmpq(self) -> flint.fmpq_mat:
        A = self.operator
        d = A.shape[0]
        return flint.fmpq_mat(d, d, [flint.fmpq(x.numerator, x.denominator) for x in A.reshape(-1)])

    @property
    def is_exact(self) -> bool:
        return self.mode == "exact"

    def apply(self, x):
        """A x for stored coordinates x."""
        if self.is_exact:
            return self.operator.dot(np.asarray(x, dtype=object))
        return self.operator_float @ np.asarray(x, dtype=float)

    def is_normal(self) -> bool:
        d = self.dec.dim_m
        if d == 0:
            return True
        v0 = self.matrix[0, 0]
        for i in range(d):
            for j in range(d):
                target = v0 if i == j else 0
                if isinstance(self.matrix[i, j], float) or isinstance(v0, float):
                    if abs(float(self.matrix[i, j]) - float(target)) > 1e-12 * (1 + abs(float(v0))):
                        return False
                elif self.matrix[i, j] != target:
                    return False
        return True

    def check_positive(self):
        """Raise PositivityError unless the operator is positive definite."""
        d = self.dec.dim_m
        if d == 0:
            return
        if self.is_exact:
            for k, m in _leading_minors_fmpq(self.operator_fmpq):
                if m <= 0:
                    raise PositivityError(
                        f"not positive definite: leading principal minor of order {k} is {m}",
                        k, Fraction(int(m.p), int(m.q)))
            return
        g = np.array([float(x) for x in self.dec.structure.gm])
        S = np.sqrt(g)[:, None] * self.operator_float / np.sqrt(g)[None, :]
        S = (S + S.T) / 2
        ev = np.linalg.eigvalsh(S)
        if ev.min() <= 1e-10:
            k = int(np.argmin(ev))
            raise PositivityError(f"not positive definite: smallest eigenvalue {ev.min():.3g}",
                                  k + 1, float(ev.min()))

    def check_self_adjoint(self) -> bool:
        """(AX, Y) = (X, AY): G A symmetric, G the trace Gram matrix."""
        g = self.dec.structure.gm
        if self.is_exact:
            A = self.operator
            return all(g[i] * A[i, j] == g[j] * A[j, i]
                       for i in range(len(g)) for j in range(i + 1, len(g)))
        GA = g[:, None] * self.operator_float
        return bool(np.allclose(GA, GA.T, atol=1e-12))

    def to_json(self) -> dict:
        d = self.dec.dim_m
        return {
            "theta": self.dec.theta.to_json(),
            "mode": self.mode,
            "params": self.params.to_json() if self.params else None,
            "matrix": [[format_value(self.matrix[i, j]) for j in range(d)] for i in range(d)],
        }

    @classmethod
    def from_matrix(cls, dec: Decomposition, a, mode: str = "exact", check: bool = True):
        """Operator from a hand-built conventional matrix (not necessarily invariant)."""
        a = np.asarray(a, dtype=object)
        d = dec.dim_m
        if a.shape != (d, d):
            raise SchemaError(f"expected a {d}x{d} matrix, got {a.shape}")
        m = np.empty((d, d), dtype=object)
        for i in range(d):
            for j in range(d):
                m[i, j] = parse_value(a[i, j])
        if mode == "float":
            m = np.vectorize(_as_float, otypes=[object])(m)
        op = cls(dec, m, None, mode)
        if check:
            op.check_positive()
        return op


def build_metric(dec: Decomposition, params: MetricParams, mode: str = "exact",
                 check: bool = True) -> MetricOperator:
    """Assemble the operator of ``params`` on ``dec``; checks positivity."""
    if mode not in ("exact", "float"):
        raise ValueError(f"mode must be 'exact' or 'float', got {mode!r}")
    schema = param_schema(dec.theta)
    if params.case and params.case != schema.case:
        raise SchemaError(f"params are for case {params.case!r}, flag has case {schema.case!r}")
    missing = [n for n in schema.names if n not in params.values]
    extra = [n for n in params.values if n not in schema.names]
    if missing or extra:
        raise SchemaError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    if mode == "exact" and params.is_float:
        raise NonRationalError("float parameter values need float mode")
    d = dec.dim_m
    a = np.empty((d, d), dtype=object)
    a[:] = Fraction(0)
    for p in schema.params:
        v = params.values[p.name]
        if mode == "float":
            v = float(v)
        if p.positive and float(v) <= 0:
            raise PositivityError(f"diagonal parameter {p.name} = {format_value(v)} must be > 0")
        for i, j, s in p.entries:
            a[i, j] = v if s == 1 else -v
            a[j, i] = a[i, j]
    op = MetricOperator(dec, a, params, mode)
    if check:
        op.check_positive()
    return op


def normal_params(theta: ThetaSpec, mu=1) -> MetricParams:
    schema = param_schema(theta)
    return MetricParams(schema.case, {p.name: (mu if p.positive else 0) for p in schema.params})


def _entry_scale(dec, p: Param):
    """sqrt(nu_i/nu_j) for the first entry of a coupling."""
    i, j, _ = p.entries[0]
    return _sqrt_ratio(dec.nu_sq[i], dec.nu_sq[j])


def random_invariant_metric(dec: Decomposition, seed: int = 0) -> MetricParams:
    """Seeded random rational parameters: diagonals in [1, 5], couplings
    drawn in [-1, 1] (in stored coordinates) and shrunk so that every row
    is diagonally dominant.  Couplings between differently normalized
    vectors come out as algebraic numbers with rational operator entries."""
    rng = np.random.default_rng(seed)
    schema = param_schema(dec.theta)
    vals = {}
    for p in schema.params:
        if p.positive:
            vals[p.name] = Fraction(int(rng.integers(4, 21)), 4)
    raw = {p.name: Fraction(int(rng.integers(-8, 9)), 8) for p in schema.params if not p.positive}
    # diagonal dominance row by row (in stored coordinates, which are
    # similar to the conventional matrix)
    d = dec.dim_m
    diag = [Fraction(0)] * d
    for p in schema.params:
        if p.positive:
            for i, _, _ in p.entries:
                diag[i] = vals[p.name]
    rows = [Fraction(0)] * d
    for p in schema.params:
        if not p.positive:
            for i, j, _ in p.entries:
                ratio = dec.nu_sq[i] / dec.nu_sq[j]
                # |A_hat_ij| = |q|, |A_hat_ji| = |q| * nu_j/nu_i
                rows[i] += abs(raw[p.name])
                rows[j] += abs(raw[p.name]) / ratio
    shrink = Fraction(1)
    for i in range(d):
        if rows[i] > 0:
            f = Fraction(9, 10) * diag[i] / rows[i]
            shrink = min(shrink, f)
    if shrink < 1:
        shrink = Fraction(math.floor(shrink * 64), 64)
    for p in schema.params:
        if not p.positive:
            q = raw[p.name] * shrink
            s = _entry_scale(dec, p)
            # a = q / sqrt(nu_i/nu_j)  makes A_hat_ij = q
            vals[p.name] = q / s if isinstance(s, Fraction) else _simplify_sym(sympy.Rational(q.numerator, q.denominator) / s)
    return MetricParams(schema.case, vals)


# --------------------------------------------------------------------------
# invariance

@dataclass(frozen=True)
class InvarianceReport:
    passed: bool
    max_residual_k: object
    max_residual_generators: object
    failing_generator: Optional[int]
    n_generators: int

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "max_residual_k": format_value(self.max_residual_k),
            "max_residual_generators": format_value(self.max_residual_generators),
            "failing_generator": self.failing_generator,
            "n_generators": self.n_generators,
        }


def ad_k_matrices(dec: Decomposition) -> list:
    """ad(K_q) restricted to m_Theta in stored coordinates (exact)."""
    return _ad_k(dec)


@functools.lru_cache(maxsize=None)
def _ad_k_cached(theta):
    dec = build_decomposition(theta)
    st = dec.structure
    d = dec.dim_m
    out = []
    for q in range(dec.dim_k):
        km = st.km_m[q]
        ent = [flint.fmpq(int(km[j, k]), int(st.gm[k])) for k in range(d) for j in range(d)]
        out.append(flint.fmpq_mat(d, d, ent))
    return tuple(out)


def _ad_k(dec):
    return _ad_k_cached(dec.theta)


def adjoint_on_m(dec: Decomposition, g):
    """Matrix of Ad(g) on m_Theta in stored coordinates: exact (fmpq_mat)
    for rational g, float array otherwise."""
    d = dec.dim_m
    n = dec.spec.ambient_dim
    if d == 0:
        return flint.fmpq_mat(0, 0) if is_exact(g) else np.zeros((0, 0))
    E = np.array(dec.m_theta_basis, dtype=np.int64).reshape(d, n, n)
    gm = dec.structure.gm
    if is_exact(g):
        G = flint.fmpq_mat(n, n, [flint.fmpq(Fraction(x).numerator, Fraction(x).denominator)
                                   for x in np.asarray(g).reshape(-1)])
        Gt = G.transpose()
        rows = []
        for j in range(d):
            Y = G * flint.fmpq_mat(E[j].tolist()) * Gt
            rows.extend(Y[a, b] for a in range(n) for b in range(n))
        Ymat = flint.fmpq_mat(d, n * n, rows)
        # <Y, e_k> = -Tr(Y e_k) = -sum_ab Y_ab (e_k)_ba
        Ebig = flint.fmpq_mat(n * n, d, [int(-E[k][b, a]) for a in range(n) for b in range(n)
                                         for k in range(d)])
        P = Ymat * Ebig
        return flint.fmpq_mat(d, d, [P[j, k] / int(gm[k]) for k in range(d) for j in range(d)])
    gf = np.asarray(g, dtype=float)
    Ef = E.astype(float)
    Y = np.einsum("ab,jbc,dc->jad", gf, Ef, gf)
    R = -np.einsum("jab,kba->kj", Y, Ef) / gm[:, None]
    return R


def _max_abs_fmpq(M) -> Fraction:
    best = Fraction(0)
    for i in range(M.nrows()):
        for j in range(M.ncols()):
            x = M[i, j]
            v = abs(Fraction(int(x.p), int(x.q)))
            if v > best:
                best = v
    return best


def check_invariance(A: MetricOperator, samples: int = 0, seed: int = 0,
                     tol: float = 1e-9) -> InvarianceReport:
    """(i) [ad(W)|m, A] = 0 for every W in the k_Theta basis; (ii) [Ad(k)|m, A] = 0
    for every discrete generator of the decomposition plus ``samples``
    extra seeded random elements."""
    dec = A.dec
    d = dec.dim_m
    if d == 0:
        return InvarianceReport(True, Fraction(0), Fraction(0), None, 0)
    gens = list(dec.discrete_generators)
    if samples:
        extra = discrete_isotropy_generators(dec.theta, seed=seed + 1, n_random=samples,
                                             include_float=False)
        gens += extra
    exact = A.is_exact
    if exact:
        Aq = A.operator_fmpq
        rk = Fraction(0)
        for D in _ad_k(dec):
            rk = max(rk, _max_abs_fmpq(D * Aq - Aq * D))
    else:
        Af = A.operator_float
        rk = 0.0
        for D in _ad_k(dec):
            Df = np.array([[float(D[i, j]) for j in range(d)] for i in range(d)])
            rk = max(rk, float(np.abs(Df @ Af - Af @ Df).max()))
    passed = (rk == 0) if exact else rk <= tol
    rg = Fraction(0) if exact else 0.0
    failing = None
    for idx, g in enumerate(gens):
        R = _adjoint_cached(dec, idx, g) if idx < len(dec.discrete_generators) else adjoint_on_m(dec, g)
        if exact and isinstance(R, flint.fmpq_mat):
            res = _max_abs_fmpq(R * Aq - Aq * R)
            ok = res == 0
        else:
            Rf = R if isinstance(R, np.ndarray) else np.array(
                [[float(R[i, j]) for j in range(d)] for i in range(d)])
            Af = A.operator_float
            res = float(np.abs(Rf @ Af - Af @ Rf).max())
            ok = res <= tol
            if exact:
                res = Fraction(res) if ok else Fraction(res)
        if (isinstance(res, Fraction) and isinstance(rg, Fraction)) or not exact:
            rg = max(rg, res)
        else:
            rg = max(Fraction(rg), Fraction(res))
        if not ok and failing is None:
            failing = idx
    passed = passed and failing is None
    return InvarianceReport(passed, rk, rg, failing, len(gens))


_ADJ_CACHE: dict = {}


def _adjoint_cached(dec, idx, g):
    key = (dec.theta, idx)
    if key not in _ADJ_CACHE:
        _ADJ_CACHE[key] = adjoint_on_m(dec, g)
    return _ADJ_CACHE[key]


def perturb_params(dec: Decomposition, params: MetricParams, name: str, delta) -> MetricParams:
    """Shift one parameter so that its operator entries move by ``delta``
    (in stored coordinates), which keeps rational operators rational."""
    schema = param_schema(dec.theta)
    p = schema.param(name)
    delta = parse_value(delta)
    v = params.values[name]
    if p.positive:
        new = _add_values(v, delta)
    else:
        s = _entry_scale(dec, p)
        step = delta / s if isinstance(s, Fraction) else _simplify_sym(
            sympy.Rational(delta.numerator, delta.denominator) / s)
        new = _add_values(v, step)
    vals = dict(params.values)
    vals[name] = new
    return MetricParams(params.case, vals)


def _add_values(a, b):
    if isinstance(a, float) or isinstance(b, float):
        return float(a) + float(b)
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a + b
    return _simplify_sym(to_sympy(a) + to_sympy(b))
