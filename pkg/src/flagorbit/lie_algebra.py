"""Compact Lie algebras of classical type as explicit skew-symmetric matrices.

For each family the maximal compact subalgebra k of the split real form is
realized inside so(n) with a distinguished orthogonal basis:

    A_l   so(l+1)                         w(i,j)
    B_l   so(l+1) + so(l) in so(2l+1)     v(k), w(i,j), u(i,j)
    C_l   u(l) in so(2l)                  udiag(k), w(i,j), u(i,j)
    D_l   so(l) + so(l) in so(2l)         w(i,j), u(i,j)

Basis matrices are integer arrays, so every bracket, inner product and
coordinate computed from them is exact when the inputs are integer or
``Fraction`` arrays.  Float arrays give float results.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

Scalar = Union[Fraction, float]

FAMILIES = ("A", "B", "C", "D")
MIN_RANK = {"A": 1, "B": 5, "C": 3, "D": 5}


class RangeError(ValueError):
    """Raised for a family/rank combination outside the supported range."""


@dataclass(frozen=True)
class LieTypeSpec:
    family: str
    rank: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise RangeError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not isinstance(self.rank, (int, np.integer)) or isinstance(self.rank, bool):
            raise RangeError(f"rank must be an integer, got {self.rank!r}")
        lo = MIN_RANK[self.family]
        if self.rank < lo:
            raise RangeError(
                f"{self.family}_{self.rank} is outside the supported range "
                f"(type {self.family} requires l >= {lo})"
            )

    @property
    def ambient_dim(self) -> int:
        l = self.rank
        return {"A": l + 1, "B": 2 * l + 1, "C": 2 * l, "D": 2 * l}[self.family]

    @property
    def dim(self) -> int:
        """Dimension of k."""
        l = self.rank
        if self.family == "A":
            return l * (l + 1) // 2
        if self.family == "D":
            return l * (l - 1)
        return l * l

    @property
    def name(self) -> str:
        return f"{self.family}{self.rank}"


@dataclass(frozen=True, eq=False)
class BasisElement:
    kind: str
    index: tuple
    matrix: np.ndarray = field(repr=False)

    @property
    def label(self) -> str:
        if self.kind in ("v", "udiag"):
            return f"{self.kind}({self.index[0]})"
        return f"{self.kind}({self.index[0]},{self.index[1]})"


def _unit(n: int, i: int, j: int) -> np.ndarray:
    # E_ij with 1-based indices
    m = np.zeros((n, n), dtype=np.int64)
    m[i - 1, j - 1] = 1
    return m


def _frozen(m: np.ndarray) -> np.ndarray:
    m.setflags(write=False)
    return m


def _pairs(n: int):
    return [(i, j) for i in range(2, n + 1) for j in range(1, i)]


@functools.lru_cache(maxsize=None)
def build_basis(spec: LieTypeSpec) -> tuple:
    """Ordered orthogonal basis of k for ``spec``."""
    n, l, E = spec.ambient_dim, spec.rank, None
    E = functools.partial(_unit, n)
    out = []
    if spec.family == "A":
        for i, j in _pairs(l + 1):
            out.append(BasisElement("w", (i, j), _frozen(E(i, j) - E(j, i))))
    elif spec.family == "B":
        for k in range(1, l + 1):
            m = E(1 + k, 1) - E(1, 1 + k) + E(1 + l + k, 1) - E(1, 1 + l + k)
            out.append(BasisElement("v", (k,), _frozen(m)))
        for i, j in _pairs(l):
            m = (E(1 + i, 1 + j) - E(1 + j, 1 + i)
                 + E(1 + l + i, 1 + l + j) - E(1 + l + j, 1 + l + i))
            out.append(BasisElement("w", (i, j), _frozen(m)))
        for i, j in _pairs(l):
            m = (E(1 + l + i, 1 + j) - E(1 + l + j, 1 + i)
                 + E(1 + i, 1 + l + j) - E(1 + j, 1 + l + i))
            out.append(BasisElement("u", (i, j), _frozen(m)))
    elif spec.family == "C":
        for k in range(1, l + 1):
            out.append(BasisElement("udiag", (k,), _frozen(E(l + k, k) - E(k, l + k))))
        for i, j in _pairs(l):
            m = E(i, j) - E(j, i) + E(l + i, l + j) - E(l + j, l + i)
            out.append(BasisElement("w", (i, j), _frozen(m)))
        for i, j in _pairs(l):
            m = E(l + i, j) + E(l + j, i) - E(i, l + j) - E(j, l + i)
            out.append(BasisElement("u", (i, j), _frozen(m)))
    else:
        for i, j in _pairs(l):
            m = E(i, j) - E(j, i) + E(l + i, l + j) - E(l + j, l + i)
            out.append(BasisElement("w", (i, j), _frozen(m)))
        for i, j in _pairs(l):
            m = E(l + i, j) - E(l + j, i) + E(i, l + j) - E(j, l + i)
            out.append(BasisElement("u", (i, j), _frozen(m)))
    return tuple(out)


def basis_element(spec: LieTypeSpec, kind: str, *index: int) -> np.ndarray:
    """Matrix of a single named basis element, e.g. ``basis_element(s, "w", 3, 1)``."""
    for b in build_basis(spec):
        if b.kind == kind and b.index == tuple(index):
            return b.matrix
    raise KeyError(f"{kind}{index} is not a basis label of {spec.name}")


def is_exact(*arrays) -> bool:
    return all(np.asarray(a).dtype.kind in "iuO" for a in arrays)


def to_exact(m) -> np.ndarray:
    """Object array of Fractions (floats are converted exactly)."""
    a = np.asarray(m)
    out = np.empty(a.shape, dtype=object)
    flat = out.reshape(-1)
    for k, x in enumerate(a.reshape(-1)):
        flat[k] = x if isinstance(x, Fraction) else Fraction(x)
    return out


def to_float(m) -> np.ndarray:
    return np.asarray(m, dtype=float)


def _check_shapes(X, Y):
    if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape != Y.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {Y.shape}")


def _tr(M):
    s = np.trace(M)
    return int(s) if isinstance(s, np.integer) else s


def _scalar(v, exact: bool) -> Scalar:
    if exact:
        return v if isinstance(v, Fraction) else Fraction(v)
    return float(v)


def inner(X, Y, spec: LieTypeSpec) -> Scalar:
    """Ad(K)-invariant inner product of two elements of k."""
    X, Y = np.asarray(X), np.asarray(Y)
    _check_shapes(X, Y)
    n, l = spec.ambient_dim, spec.rank
    if X.shape[0] != n:
        raise ValueError(f"expected {n}x{n} matrices for {spec.name}, got {X.shape}")
    exact = is_exact(X, Y)
    half = Fraction(1, 2) if exact else 0.5
    if spec.family == "A":
        # -Killing of so(l+1); so(2) is abelian, fall back to the trace form
        c = max(l - 1, 1)
        v = -c * _tr(X @ Y)
    elif spec.family == "B":
        a, c = -X[0, 1:l + 1], -Y[0, 1:l + 1]
        A, B = X[1:l + 1, 1:l + 1], X[1:l + 1, l + 1:]
        C, D = Y[1:l + 1, 1:l + 1], Y[1:l + 1, l + 1:]
        v = _tr(np.outer(a, c)) - half * (_tr(B @ D) + _tr(A @ C))
    elif spec.family == "C":
        A, B = X[:l, :l], X[l:, :l]
        C, D = Y[:l, :l], Y[l:, :l]
        v = half * (_tr(B @ D) - _tr(A @ C))
    else:
        A, B = X[:l, :l], X[:l, l:]
        C, D = Y[:l, :l], Y[:l, l:]
        v = -half * (_tr(A @ C) + _tr(B @ D))
    return _scalar(v, exact)


def trace_form_constant(spec: LieTypeSpec) -> Fraction:
    """The constant c with inner(X, Y) = -c Tr(XY) on k."""
    if spec.family == "A":
        return Fraction(max(spec.rank - 1, 1))
    return Fraction(1, 4)


def bracket(X, Y) -> np.ndarray:
    X, Y = np.asarray(X), np.asarray(Y)
    _check_shapes(X, Y)
    return X @ Y - Y @ X


def is_orthogonal(k, tol: float = 1e-12) -> bool:
    k = np.asarray(k)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        return False
    g = k.T @ k
    if is_exact(k):
        return bool(np.all(g == np.eye(k.shape[0], dtype=np.int64)))
    return bool(np.allclose(g, np.eye(k.shape[0]), atol=tol, rtol=0))


def conjugate(k, X) -> np.ndarray:
    """Ad(k)X = k X k^T for an orthogonal matrix k."""
    k, X = np.asarray(k), np.asarray(X)
    _check_shapes(k, X)
    if not is_orthogonal(k):
        raise ValueError("conjugate: k is not orthogonal")
    return k @ X @ k.T


def in_k(X, spec: LieTypeSpec, tol: float = 0.0) -> bool:
    """Whether X lies in the block shape of k for ``spec``."""
    X = np.asarray(X)
    if X.shape != (spec.ambient_dim,) * 2:
        return False

    def zero(M):
        if is_exact(M):
            return bool(np.all(M == 0))
        return bool(np.all(np.abs(M) <= tol))

    if not zero(X + X.T):
        return False
    l = spec.rank
    if spec.family == "A":
        return True
    if spec.family == "B":
        top = X[0, 1:]
        return (zero(top[:l] - top[l:])
                and zero(X[1:l + 1, 1:l + 1] - X[l + 1:, l + 1:])
                and zero(X[1:l + 1, l + 1:] - X[l + 1:, 1:l + 1]))
    if spec.family == "C":
        return (zero(X[:l, :l] - X[l:, l:])
                and zero(X[:l, l:] + X[l:, :l]))
    return (zero(X[:l, :l] - X[l:, l:])
            and zero(X[:l, l:] - X[l:, :l]))


def gram(basis, spec: LieTypeSpec) -> np.ndarray:
    """Gram matrix of a list of matrices under ``inner``."""
    mats = [getattr(b, "matrix", b) for b in basis]
    n = len(mats)
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = inner(mats[i], mats[j], spec)
    return out


def coordinates(X, spec: LieTypeSpec, basis=None) -> np.ndarray:
    """Coordinates of X in an orthogonal basis (default: the full basis of k)."""
    mats = [getattr(b, "matrix", b) for b in (basis if basis is not None else build_basis(spec))]
    return np.array([inner(X, m, spec) / inner(m, m, spec) for m in mats], dtype=object)
