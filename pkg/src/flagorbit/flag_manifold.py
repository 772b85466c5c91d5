"""Flags K/K_Theta: Theta encodings, reductive split k = k_Theta + m_Theta and
the isotropy submodules.

Theta is stored as a composition (l_1, ..., l_r) of l+1 (type A) or l
(types B, C, D) plus flags for the last simple roots.  Blocks of the
composition are the index sets {l~_{i-1}+1, ..., l~_i}; Theta contains the
simple roots internal to each block and, when flagged, alpha_l.

The characteristic element H_Theta is the diagonal matrix whose eigenvalues
are constant on blocks; k_Theta is its centralizer in k.  The adapted basis
of m_Theta is listed submodule by submodule, always as integer matrices.  A
basis vector whose conventional normalization is irrational (the 1/sqrt(l_i)
in type C) is stored unnormalized together with ``nu_sq``, the square of the
factor taking it to the conventional vector.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import flint
import numpy as np

from .lie_algebra import (
    LieTypeSpec,
    RangeError,
    basis_element,
    build_basis,
    in_k,
    is_exact,
    trace_form_constant,
)


class CoverageError(ValueError):
    """Raised for a flag that is not covered by any decomposition table."""


# --------------------------------------------------------------------------
# Theta

@dataclass(frozen=True)
class ThetaSpec:
    lie_type: LieTypeSpec
    partition: tuple
    alpha_l_in_theta: bool = False
    alpha_lminus1_in_theta: Optional[bool] = None

    def __post_init__(self):
        part = tuple(int(x) for x in self.partition)
        object.__setattr__(self, "partition", part)
        fam, l = self.lie_type.family, self.lie_type.rank
        if not part or any(x < 1 for x in part):
            raise ValueError(f"partition must consist of positive integers, got {part}")
        total = l + 1 if fam == "A" else l
        if sum(part) != total:
            raise ValueError(f"partition {part} of {fam}_{l} must sum to {total}")
        if fam == "A" and self.alpha_l_in_theta:
            raise ValueError("type A has no alpha_l flag; alpha_l is encoded by the partition")
        derived = part[-1] >= 2 if fam == "D" else None
        if fam != "D" and self.alpha_lminus1_in_theta not in (None, False):
            raise ValueError("alpha_{l-1} flag only applies to type D")
        if fam == "D":
            if self.alpha_lminus1_in_theta is not None and self.alpha_lminus1_in_theta != derived:
                if self.alpha_l_in_theta and not self.alpha_lminus1_in_theta:
                    raise ValueError(
                        "D with alpha_l in Theta and alpha_{l-1} not in Theta forces l_r = 1")
                raise ValueError(
                    f"alpha_(l-1) in Theta iff the last block has size >= 2 (partition {part})")
            object.__setattr__(self, "alpha_lminus1_in_theta", derived)

    @property
    def r(self) -> int:
        return len(self.partition)

    @property
    def cumulative(self) -> tuple:
        """(l~_0, l~_1, ..., l~_r)."""
        return (0,) + tuple(itertools.accumulate(self.partition))

    @property
    def blocks(self) -> list:
        c = self.cumulative
        return [list(range(c[i] + 1, c[i + 1] + 1)) for i in range(self.r)]

    @property
    def roots(self) -> tuple:
        """Indices k of the simple roots alpha_k in Theta."""
        c = self.cumulative
        out = set()
        for i, li in enumerate(self.partition):
            if li > 1:
                out.update(range(c[i] + 1, c[i + 1]))
        if self.alpha_l_in_theta:
            out.add(self.lie_type.rank)
        return tuple(sorted(out))

    @property
    def is_full(self) -> bool:
        """Theta = Sigma, i.e. the flag is a point."""
        return len(self.roots) == self.lie_type.rank

    @property
    def zero_block(self) -> bool:
        """Whether the last block carries eigenvalue 0 of H_Theta."""
        fam = self.lie_type.family
        return self.alpha_l_in_theta and (fam in "BC" or self.partition[-1] >= 2)

    @property
    def label(self) -> str:
        return "{" + ",".join(f"a{k}" for k in self.roots) + "}"

    def describe(self) -> str:
        extra = ""
        if self.lie_type.family != "A":
            extra = f" alpha_l={'in' if self.alpha_l_in_theta else 'out'}"
        return f"{self.lie_type.name} {self.partition}{extra} Theta={self.label}"

    def to_json(self) -> dict:
        out = {"family": self.lie_type.family, "rank": self.lie_type.rank,
               "partition": list(self.partition), "theta": list(self.roots)}
        if self.lie_type.family != "A":
            out["alpha_l_in_theta"] = self.alpha_l_in_theta
        if self.lie_type.family == "D":
            out["alpha_lminus1_in_theta"] = self.alpha_lminus1_in_theta
        return out


def compositions(n: int):
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in compositions(n - first):
            yield (first,) + rest


def enumerate_thetas(spec: LieTypeSpec) -> list:
    """Every Theta of ``spec`` (the full set included), ordered by |Theta|
    and then lexicographically by root indices."""
    l, fam = spec.rank, spec.family
    out = []
    if fam == "A":
        for p in compositions(l + 1):
            out.append(ThetaSpec(spec, p))
    else:
        for p in compositions(l):
            out.append(ThetaSpec(spec, p, False))
            if fam == "D" and p[-1] == 1:
                # alpha_l without alpha_{l-1}; alpha_l with l_r = 1 and the
                # last value tied to the previous block
                if len(p) >= 2:
                    out.append(ThetaSpec(spec, p, True))
            else:
                out.append(ThetaSpec(spec, p, True))
    seen, uniq = set(), []
    for t in out:
        if t.roots not in seen:
            seen.add(t.roots)
            uniq.append(t)
    uniq.sort(key=lambda t: (len(t.roots), t.roots))
    return uniq


def special_c4(theta: ThetaSpec) -> bool:
    """The four C_4 flags whose equivalences are tabulated separately."""
    return (theta.lie_type.family == "C" and theta.lie_type.rank == 4
            and not theta.alpha_l_in_theta
            and theta.partition in ((1, 1, 1, 1), (2, 1, 1), (1, 2, 1), (1, 1, 2)))


def characteristic_values(theta: ThetaSpec) -> list:
    """Diagonal Lambda_Theta (length l+1 for A, l otherwise)."""
    r, fam = theta.r, theta.lie_type.family
    vals = []
    for i, b in enumerate(theta.blocks):
        vals += [r - i] * len(b)
    if theta.alpha_l_in_theta:
        if theta.zero_block:
            last = theta.blocks[-1]
            for k in last:
                vals[k - 1] = 0
        else:
            # type D, alpha_l only: lambda_{l-1} + lambda_l = 0
            vals[-1] = -vals[-2]
    return vals


def characteristic_element(theta: ThetaSpec) -> np.ndarray:
    lam = characteristic_values(theta)
    fam = theta.lie_type.family
    if fam == "A":
        d = lam
    elif fam == "B":
        d = [0] + lam + [-x for x in lam]
    else:
        d = lam + [-x for x in lam]
    return np.diag(np.array(d, dtype=np.int64))


# --------------------------------------------------------------------------
# Decomposition

@dataclass(frozen=True)
class Submodule:
    name: str
    indices: tuple
    equivalence_class: int
    summand: str
    m_dim: int = field(repr=False, default=0)

    @property
    def dim(self) -> int:
        return len(self.indices)

    @property
    def basis(self) -> list:
        """Basis as coordinate vectors in the adapted basis of m_Theta."""
        out = []
        for i in self.indices:
            v = np.zeros(self.m_dim, dtype=np.int64)
            v[i] = 1
            out.append(v)
        return out


@dataclass(frozen=True)
class Summand:
    name: str
    equivalence_class: int
    submodules: tuple
    indices: tuple

    @property
    def dim(self) -> int:
        return len(self.indices)


class _Builder:
    def __init__(self, spec: LieTypeSpec):
        self.spec = spec
        self.k, self.k_labels = [], []
        self.m, self.m_labels, self.nu_sq = [], [], []
        self.subs = []  # (name, indices, summand)

    def el(self, kind, *idx):
        i = tuple(idx)
        if kind in ("w", "u") and i[0] < i[1]:
            return -basis_element(self.spec, kind, i[1], i[0])
        return basis_element(self.spec, kind, *i)

    def add_k(self, kind, *idx):
        self.k.append(self.el(kind, *idx))
        self.k_labels.append(_lab(kind, idx))

    def add_sub(self, name, summand, items):
        start = len(self.m)
        for lab, mat, nu in items:
            self.m.append(np.asarray(mat, dtype=np.int64))
            self.m_labels.append(lab)
            self.nu_sq.append(Fraction(nu))
        self.subs.append((name, tuple(range(start, len(self.m))), summand))

    def item(self, kind, *idx):
        return (_lab(kind, idx), self.el(kind, *idx), 1)

    def combo(self, terms, nu=1):
        """Integer combination [(coef, kind, idx...), ...]."""
        mat = sum(c * self.el(kind, *idx) for c, kind, *idx in terms)
        parts = []
        for c, kind, *idx in terms:
            s = "-" if c < 0 else ("+" if parts else "")
            mag = "" if abs(c) == 1 else f"{abs(c)}*"
            parts.append(f"{s}{mag}{_lab(kind, tuple(idx))}")
        return ("".join(parts), mat, nu)


def _lab(kind, idx):
    return f"{kind}({','.join(str(i) for i in idx)})"


def _within(block):
    return [(block[s], block[t]) for s in range(1, len(block)) for t in range(s)]


def _cross(bm, bn):
    return [(i, j) for i in bm for j in bn]


def _build_A_generic(t: ThetaSpec, b: _Builder):
    blocks = t.blocks
    for blk in blocks:
        for i, j in _within(blk):
            b.add_k("w", i, j)
    for m in range(2, t.r + 1):
        for n in range(1, m):
            nm = f"M({m},{n})"
            b.add_sub(nm, nm, [b.item("w", i, j) for i, j in _cross(blocks[m - 1], blocks[n - 1])])
    return "A_generic"


def _build_A3(t: ThetaSpec, b: _Builder):
    p = t.partition
    w = functools.partial(b.item, "w")
    if p == (1, 1, 1, 1):
        for summ, (x, y) in zip(("M1", "M2", "M3"), (((2, 1), (4, 3)), ((3, 1), (4, 2)), ((3, 2), (4, 1)))):
            b.add_sub(f"m{x[0]}{x[1]}", summ, [w(*x)])
            b.add_sub(f"m{y[0]}{y[1]}", summ, [w(*y)])
        return "A3_empty"
    table = {
        (2, 1, 1): ((2, 1), (4, 3), [(3, 1), (3, 2)], [(4, 2), (4, 1)]),
        (1, 2, 1): ((3, 2), (4, 1), [(2, 1), (3, 1)], [(4, 3), (4, 2)]),
        (1, 1, 2): ((4, 3), (2, 1), [(3, 1), (4, 1)], [(4, 2), (3, 2)]),
    }
    if p in table:
        kk, single, first, second = table[p]
        b.add_k("w", *kk)
        b.add_sub(f"m{single[0]}{single[1]}", "M1", [w(*single)])
        b.add_sub("+".join(f"m{i}{j}" for i, j in first), "M2", [w(*x) for x in first])
        b.add_sub("+".join(f"m{i}{j}" for i, j in second), "M2", [w(*x) for x in second])
        return "A3_single"
    if p in ((3, 1), (1, 3)):
        blk = t.blocks[0] if p == (3, 1) else t.blocks[1]
        for i, j in _within(blk):
            b.add_k("w", i, j)
        rest = [(4, 1), (4, 2), (4, 3)] if p == (3, 1) else [(2, 1), (3, 1), (4, 1)]
        b.add_sub("M", "M", [w(*x) for x in rest])
        return "A3_irreducible"
    if p == (2, 2):
        b.add_k("w", 2, 1)
        b.add_k("w", 4, 3)
        b.add_sub("M1", "M1", [b.combo([(1, "w", 3, 1), (-1, "w", 4, 2)]),
                               b.combo([(1, "w", 4, 1), (1, "w", 3, 2)])])
        b.add_sub("M2", "M2", [b.combo([(1, "w", 3, 1), (1, "w", 4, 2)]),
                               b.combo([(1, "w", 4, 1), (-1, "w", 3, 2)])])
        return "A3_a1a3"
    # full Theta
    for i, j in _within(t.blocks[0]):
        b.add_k("w", i, j)
    return "A3_point"


def _k_within_blocks(t: ThetaSpec, b: _Builder):
    for blk in t.blocks:
        for i, j in _within(blk):
            b.add_k("w", i, j)


def _pair_WU(b: _Builder, m, n, bm, bn, merged=False):
    cross = _cross(bm, bn)
    ws = [b.item("w", i, j) for i, j in cross]
    us = [b.item("u", i, j) for i, j in cross]
    if merged:
        # irreducible: k_Theta mixes the w and u parts
        b.add_sub(f"M({m},{n})", f"M({m},{n})", ws + us)
        return
    b.add_sub(f"W({m},{n})", f"M({m},{n})", ws)
    b.add_sub(f"U({m},{n})", f"M({m},{n})", us)


def _build_B(t: ThetaSpec, b: _Builder):
    blocks, r = t.blocks, t.r
    _k_within_blocks(t, b)
    if not t.alpha_l_in_theta:
        for i in range(1, r + 1):
            b.add_sub(f"V({i})", f"V({i})", [b.item("v", k) for k in blocks[i - 1]])
        for m in range(2, r + 1):
            for n in range(1, m):
                _pair_WU(b, m, n, blocks[m - 1], blocks[n - 1])
        for i in range(1, r + 1):
            if len(blocks[i - 1]) > 1:
                b.add_sub(f"U({i})", f"U({i})", [b.item("u", x, y) for x, y in _within(blocks[i - 1])])
        return "B_no_alpha_l"
    R = blocks[-1]
    for k in R:
        b.add_k("v", k)
    for i, j in _within(R):
        b.add_k("u", i, j)
    for i in range(1, r):
        bi = blocks[i - 1]
        cross = _cross(R, bi)
        b.add_sub(f"V({i})_1", f"V({i})_1",
                  [b.combo([(1, "w", s, q), (-1, "u", s, q)]) for s, q in cross])
        b.add_sub(f"V({i})_2", f"V({i})_2",
                  [b.item("v", q) for q in bi]
                  + [b.combo([(1, "w", s, q), (1, "u", s, q)]) for s, q in cross])
    for m in range(2, r):
        for n in range(1, m):
            _pair_WU(b, m, n, blocks[m - 1], blocks[n - 1])
    for i in range(1, r):
        if len(blocks[i - 1]) > 1:
            b.add_sub(f"U({i})", f"U({i})", [b.item("u", x, y) for x, y in _within(blocks[i - 1])])
    return "B_alpha_l"


def _c_diag_items(b: _Builder, blk):
    items = []
    for s in range(1, len(blk)):
        terms = [(1, "udiag", blk[q]) for q in range(s)] + [(-s, "udiag", blk[s])]
        items.append(b.combo(terms))
    return items + [b.item("u", x, y) for x, y in _within(blk)]


def _c_v(b: _Builder, blk):
    if len(blk) == 1:
        return b.item("udiag", blk[0])
    return b.combo([(1, "udiag", k) for k in blk], Fraction(1, len(blk)))


def _build_C(t: ThetaSpec, b: _Builder):
    blocks, r = t.blocks, t.r
    _k_within_blocks(t, b)
    rt = r - 1 if t.alpha_l_in_theta else r
    if t.alpha_l_in_theta:
        R = blocks[-1]
        for k in R:
            b.add_k("udiag", k)
        for i, j in _within(R):
            b.add_k("u", i, j)
    for i in range(1, rt + 1):
        b.add_sub(f"V({i})", "M0", [_c_v(b, blocks[i - 1])])
    for m in range(2, r + 1):
        for n in range(1, m):
            _pair_WU(b, m, n, blocks[m - 1], blocks[n - 1], merged=m > rt)
    for i in range(1, rt + 1):
        if len(blocks[i - 1]) > 1:
            b.add_sub(f"U({i})", f"M({i})", _c_diag_items(b, blocks[i - 1]))
    return "C_alpha_l" if t.alpha_l_in_theta else "C_no_alpha_l"


def _build_C4(t: ThetaSpec, b: _Builder):
    p = t.partition
    blocks = t.blocks
    _k_within_blocks(t, b)
    if p == (1, 1, 1, 1):
        for i in range(1, 5):
            b.add_sub(f"V({i})", "M0", [b.item("udiag", i)])
        for name, (x, y) in zip(("N1", "N2", "N3"), (((2, 1), (4, 3)), ((3, 1), (4, 2)), ((3, 2), (4, 1)))):
            b.add_sub(f"W({x[0]},{x[1]})", name, [b.item("w", *x)])
            b.add_sub(f"W({y[0]},{y[1]})", name, [b.item("w", *y)])
            b.add_sub(f"U({x[0]},{x[1]})", name, [b.item("u", *x)])
            b.add_sub(f"U({y[0]},{y[1]})", name, [b.item("u", *y)])
        return "C4_empty"
    big = p.index(2) + 1  # block carrying alpha_big
    for i in range(1, 4):
        b.add_sub(f"V({i})", "M0", [_c_v(b, blocks[i - 1])])
    b.add_sub(f"U({big})", f"M{big}", _c_diag_items(b, blocks[big - 1]))
    # the pair (m,n) of singleton blocks forms M; the two pairs touching the
    # doubled block form N
    pairs = [(2, 1), (3, 1), (3, 2)]
    single = [pr for pr in pairs if big not in pr][0]
    rest = [pr for pr in pairs if big in pr]
    m, n = single
    _pair_WU(b, m, n, blocks[m - 1], blocks[n - 1])
    b.subs[-1] = (b.subs[-1][0], b.subs[-1][1], "M")
    b.subs[-2] = (b.subs[-2][0], b.subs[-2][1], "M")
    crosses = [_cross(blocks[x - 1], blocks[y - 1]) for x, y in rest]
    for (x, y), cr in zip(rest, crosses):
        b.add_sub(f"W({x},{y})", "N", [b.item("w", i, j) for i, j in cr])
    for (x, y), cr in zip(rest, crosses):
        b.add_sub(f"U({x},{y})", "N", [b.item("u", i, j) for i, j in cr])
    return f"C4_a{big}"


def _build_D(t: ThetaSpec, b: _Builder):
    blocks, r = t.blocks, t.r
    _k_within_blocks(t, b)
    l = t.lie_type.rank
    if not t.alpha_l_in_theta:
        for m in range(2, r + 1):
            for n in range(1, m):
                _pair_WU(b, m, n, blocks[m - 1], blocks[n - 1])
        for i in range(1, r + 1):
            if len(blocks[i - 1]) > 1:
                b.add_sub(f"U({i})", f"U({i})", [b.item("u", x, y) for x, y in _within(blocks[i - 1])])
        return "D_no_alpha_l"
    if t.zero_block:
        R = blocks[-1]
        for i, j in _within(R):
            b.add_k("u", i, j)
        for m in range(2, r + 1):
            for n in range(1, m):
                _pair_WU(b, m, n, blocks[m - 1], blocks[n - 1], merged=m == r)
        for i in range(1, r):
            if len(blocks[i - 1]) > 1:
                b.add_sub(f"U({i})", f"U({i})", [b.item("u", x, y) for x, y in _within(blocks[i - 1])])
        return "D_both"
    Q = blocks[-2]
    for q in Q:
        b.add_k("u", l, q)
    for m in range(2, r - 1):
        for n in range(1, m):
            _pair_WU(b, m, n, blocks[m - 1], blocks[n - 1])
    for n in range(1, r - 1):
        bn = blocks[n - 1]
        cross = _cross(Q, bn)
        b.add_sub(f"M({n})", f"M({n})+N({n})",
                  [b.item("w", i, j) for i, j in cross] + [b.item("u", l, j) for j in bn])
        b.add_sub(f"N({n})", f"M({n})+N({n})",
                  [b.item("u", i, j) for i, j in cross] + [b.item("w", l, j) for j in bn])
    b.add_sub(f"V({r - 1})", f"V({r - 1})",
              [b.item("u", x, y) for x, y in _within(Q)] + [b.item("w", l, q) for q in Q])
    for i in range(1, r - 1):
        if len(blocks[i - 1]) > 1:
            b.add_sub(f"U({i})", f"U({i})", [b.item("u", x, y) for x, y in _within(blocks[i - 1])])
    return "D_alpha_l_only"


@functools.lru_cache(maxsize=None)
def build_decomposition(theta: ThetaSpec) -> "Decomposition":
    """Reductive split and isotropy submodules for ``theta``."""
    spec = theta.lie_type
    fam, l = spec.family, spec.rank
    b = _Builder(spec)
    if fam == "A":
        case = _build_A3(theta, b) if l == 3 else _build_A_generic(theta, b)
        if theta.is_full:
            case = "point"
    elif fam == "B":
        case = _build_B(theta, b)
    elif fam == "C":
        case = _build_C4(theta, b) if special_c4(theta) else _build_C(theta, b)
    else:
        case = _build_D(theta, b)
    if theta.is_full:
        case = "point"
    classes, summ_order = {}, []
    for name, idx, summ in b.subs:
        if summ not in classes:
            classes[summ] = len(classes)
            summ_order.append(summ)
    d = len(b.m)
    subs = tuple(Submodule(name, idx, classes[summ], summ, d) for name, idx, summ in b.subs)
    summands = []
    for summ in summ_order:
        members = [s for s in subs if s.summand == summ]
        summands.append(Summand(summ, classes[summ], tuple(s.name for s in members),
                                tuple(i for s in members for i in s.indices)))
    for mats in (b.k, b.m):
        for mtx in mats:
            mtx.setflags(write=False)
    return Decomposition(
        theta=theta,
        case=case,
        special=special_c4(theta) or (fam == "A" and l == 3),
        k_theta_basis=tuple(b.k),
        k_theta_labels=tuple(b.k_labels),
        m_theta_basis=tuple(b.m),
        m_labels=tuple(b.m_labels),
        nu_sq=tuple(b.nu_sq),
        submodules=subs,
        isotypical_summands=tuple(summands),
    )


@dataclass(frozen=True, eq=False)
class Structure:
    """Integer structure tensors of the split in the trace pairing
    <X, Y> = -Tr(XY).  For the adapted bases e_i of m and K_q of k_Theta:

        mm_m[i,j,k] = <[e_i,e_j], e_k>     mm_k[i,j,q] = <[e_i,e_j], K_q>
        km_m[q,j,k] = <[K_q,e_j], e_k>     gm[k] = <e_k,e_k>,  gk[q] = <K_q,K_q>

    Coordinates of a vector Y are <Y, e_k> / gm[k].  The invariant inner
    product equals c <.,.> with c = ``scale``.
    """
    mm_m: np.ndarray
    mm_k: np.ndarray
    km_m: np.ndarray
    gm: np.ndarray
    gk: np.ndarray
    scale: Fraction


@dataclass(frozen=True, eq=False)
class Decomposition:
    theta: ThetaSpec
    case: str
    special: bool
    k_theta_basis: tuple
    k_theta_labels: tuple
    m_theta_basis: tuple
    m_labels: tuple
    nu_sq: tuple
    submodules: tuple
    isotypical_summands: tuple

    @property
    def spec(self) -> LieTypeSpec:
        return self.theta.lie_type

    @property
    def dim_m(self) -> int:
        return len(self.m_theta_basis)

    @property
    def dim_k(self) -> int:
        return len(self.k_theta_basis)

    def submodule(self, name: str) -> Submodule:
        for s in self.submodules:
            if s.name == name:
                return s
        raise KeyError(f"no submodule {name!r} in {self.theta.describe()}")

    def summand(self, name: str) -> Summand:
        for s in self.isotypical_summands:
            if s.name == name:
                return s
        raise KeyError(f"no summand {name!r} in {self.theta.describe()}")

    @functools.cached_property
    def characteristic(self) -> np.ndarray:
        return characteristic_element(self.theta)

    @functools.cached_property
    def discrete_generators(self) -> tuple:
        return tuple(discrete_isotropy_generators(self.theta))

    @functools.cached_property
    def structure(self) -> Structure:
        n = self.spec.ambient_dim
        E = np.array(self.m_theta_basis, dtype=np.int64).reshape(-1, n, n)
        K = np.array(self.k_theta_basis, dtype=np.int64).reshape(-1, n, n)
        EE = np.einsum("iab,jbc->ijac", E, E)
        br = EE - EE.transpose(1, 0, 2, 3)
        KE = np.einsum("qab,jbc->qjac", K, E)
        EK = np.einsum("jab,qbc->qjac", E, K)
        kbr = KE - EK
        # <Y, e> = -Tr(Y e) = -sum_ab Y_ab e_ba
        mm_m = -np.einsum("ijab,kba->ijk", br, E)
        mm_k = -np.einsum("ijab,qba->ijq", br, K)
        km_m = -np.einsum("qjab,kba->qjk", kbr, E)
        gm = -np.einsum("kab,kba->k", E, E)
        gk = -np.einsum("qab,qba->q", K, K)
        for a in (mm_m, mm_k, km_m, gm, gk):
            a.setflags(write=False)
        return Structure(mm_m, mm_k, km_m, gm, gk, trace_form_constant(self.spec))

    def m_vector(self, coords) -> np.ndarray:
        """Matrix of the m_Theta element with the given adapted coordinates."""
        coords = list(coords)
        out = sum(c * e for c, e in zip(coords, self.m_theta_basis))
        return np.asarray(out)

    def k_vector(self, coords) -> np.ndarray:
        return np.asarray(sum(c * e for c, e in zip(coords, self.k_theta_basis)))

    def m_index(self, label: str) -> int:
        return self.m_labels.index(label)

    def coords_of(self, terms: dict) -> np.ndarray:
        """Adapted coordinates from {basis label: coefficient}."""
        x = np.zeros(self.dim_m, dtype=object)
        x[:] = Fraction(0)
        for lab, c in terms.items():
            x[self.m_index(lab)] += Fraction(c)
        return x

    def summary(self) -> dict:
        return {
            "theta": self.theta.to_json(),
            "case": self.case,
            "special": self.special,
            "dim_k_theta": self.dim_k,
            "dim_m_theta": self.dim_m,
            "k_theta_basis": list(self.k_theta_labels),
            "m_theta_basis": list(self.m_labels),
            "submodules": [
                {"name": s.name, "dim": s.dim, "equivalence_class": s.equivalence_class,
                 "summand": s.summand}
                for s in self.submodules
            ],
            "isotypical_summands": [
                {"name": s.name, "dim": s.dim, "equivalence_class": s.equivalence_class,
                 "submodules": list(s.submodules)}
                for s in self.isotypical_summands
            ],
        }


def _pairing(X, Y):
    return -np.einsum("ab,ba->", X, Y)


def project(X, target, dec: Decomposition) -> np.ndarray:
    """Coordinates of the orthogonal projection of X onto ``target``:
    a Submodule, "k_theta" or "m_theta"."""
    X = np.asarray(X)
    exact = is_exact(X)
    if isinstance(target, str):
        if target == "k_theta":
            mats = dec.k_theta_basis
        elif target == "m_theta":
            mats = dec.m_theta_basis
        else:
            target = dec.submodule(target)
    if isinstance(target, Submodule):
        mats = [dec.m_theta_basis[i] for i in target.indices]
    out = []
    for e in mats:
        num, den = _pairing(X, e), _pairing(e, e)
        if exact:
            num = num if isinstance(num, Fraction) else Fraction(int(num))
            out.append(num / int(den))
        else:
            out.append(float(num) / float(den))
    return np.array(out, dtype=object if exact else float)


# --------------------------------------------------------------------------
# Discrete part of K_Theta

def _cayley(S: np.ndarray) -> np.ndarray:
    """Rational orthogonal (I - S)(I + S)^{-1} of a skew integer matrix."""
    n = S.shape[0]
    I = np.eye(n, dtype=np.int64)
    inv = flint.fmpq_mat((I + S).tolist()).inv()
    M = flint.fmpq_mat((I - S).tolist()) * inv
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            q = M[i, j]
            out[i, j] = Fraction(int(q.p), int(q.q))
    return out


def _random_rotation(size: int, rng) -> np.ndarray:
    A = rng.integers(-2, 3, size=(size, size))
    S = np.triu(A, 1)
    S = S - S.T
    if not S.any() and size > 1:
        S[1, 0], S[0, 1] = 1, -1
    return _cayley(S.astype(np.int64))


def _embed(block_mat, positions, n):
    P = np.empty((n, n), dtype=object)
    P[:] = Fraction(0)
    for i in range(n):
        P[i, i] = Fraction(1)
    for a, pa in enumerate(positions):
        for b, pb in enumerate(positions):
            P[pa, pb] = Fraction(block_mat[a, b])
    return P


def _signs(n, flips):
    P = np.empty((n, n), dtype=object)
    P[:] = Fraction(0)
    for i in range(n):
        P[i, i] = Fraction(-1 if i in flips else 1)
    return P


def _kpq(P, Q, offset):
    """Embedding [[.,.],[.,.]] of a pair (P, Q) in the (y, z) coordinates:
    ((P+Q)/2, (P-Q)/2; (P-Q)/2, (P+Q)/2), after ``offset`` fixed leading coordinates."""
    n = P.shape[0]
    N = 2 * n + offset
    k = np.empty((N, N), dtype=object)
    k[:] = Fraction(0)
    for i in range(offset):
        k[i, i] = Fraction(1)
    half = Fraction(1, 2)
    S, D = (P + Q) * half, (P - Q) * half
    k[offset:offset + n, offset:offset + n] = S
    k[offset + n:, offset + n:] = S
    k[offset:offset + n, offset + n:] = D
    k[offset + n:, offset:offset + n] = D
    return k


def discrete_isotropy_generators(theta: ThetaSpec, seed: int = 0, n_random: int = 3,
                                 include_float: bool = True) -> list:
    """Elements of K_Theta used to certify invariance beyond the identity
    component: sign-diagonal block elements and seeded random rational
    block-orthogonal elements (Cayley transforms), embedded in the ambient
    group.  Exact elements are Fraction arrays; the A_3 (2,1,1) element with
    entries 1/sqrt(2) is appended as a float array when ``include_float``."""
    spec = theta.lie_type
    fam, l = spec.family, spec.rank
    rng = np.random.default_rng(seed)
    size = l + 1 if fam == "A" else l
    blocks = [[k - 1 for k in b] for b in theta.blocks]
    det_one = fam in "ABD"
    # merged block for D with alpha_l only: the last index joins block r-1
    merged = fam == "D" and theta.alpha_l_in_theta and not theta.zero_block
    orbit_blocks = [b[:] for b in blocks]
    if merged:
        orbit_blocks[-2] = orbit_blocks[-2] + orbit_blocks[-1]
        orbit_blocks.pop()

    Ps = []
    if det_one:
        for p, q in itertools.combinations(range(size), 2):
            Ps.append(_signs(size, {p, q}))
    else:
        for p in range(size):
            Ps.append(_signs(size, {p}))
    for b in orbit_blocks:
        if len(b) > 1:
            for _ in range(n_random):
                Ps.append(_embed(_random_rotation(len(b), rng), b, size))

    def twist(P):
        if not merged:
            return P
        Sg = _signs(size, {size - 1})
        return Sg @ P @ Sg

    out = []
    for P in Ps:
        if fam == "A":
            out.append(P)
        elif fam == "B":
            out.append(_kpq(P, P, 1))
        elif fam == "C":
            k = np.empty((2 * l, 2 * l), dtype=object)
            k[:] = Fraction(0)
            k[:l, :l] = P
            k[l:, l:] = P
            out.append(k)
        else:
            out.append(_kpq(P, twist(P), 0))
    if fam in "BD" and theta.zero_block:
        # independent P, Q on the zero block
        R = blocks[-1]
        I = _signs(size, set())
        off = 1 if fam == "B" else 0
        for p, q in itertools.product(R, R):
            out.append(_kpq(_signs(size, {p}), _signs(size, {q}), off))
            if p < q:
                out.append(_kpq(_signs(size, {p, q}), I, off))
        if len(R) > 1:
            for _ in range(n_random):
                out.append(_kpq(_embed(_random_rotation(len(R), rng), R, size), I, off))
    if include_float and fam == "A" and l == 3 and theta.partition == (2, 1, 1):
        h = 1 / np.sqrt(2)
        k = np.eye(4)
        k[:2, :2] = [[h, -h], [h, h]]
        out.append(k)
    return out


def centralizer_basis(theta: ThetaSpec) -> list:
    """Exact basis (as coordinate vectors in the full basis of k) of the
    centralizer of H_Theta in k; independent of the tabulated k_Theta."""
    spec = theta.lie_type
    H = characteristic_element(theta)
    basis = build_basis(spec)
    cols = [(b.matrix @ H - H @ b.matrix).reshape(-1) for b in basis]
    M = flint.fmpz_mat(np.array(cols, dtype=np.int64).T.tolist())
    N, nullity = M.nullspace()
    out = []
    for j in range(nullity):
        out.append([int(N[i, j]) for i in range(len(basis))])
    return out


# --------------------------------------------------------------------------
# certificates

@dataclass(frozen=True)
class DecompositionReport:
    theta: ThetaSpec
    checks: tuple             # (name, passed) in evaluation order
    failures: tuple           # human readable

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.checks)

    def to_json(self) -> dict:
        return {"theta": self.theta.to_json(), "passed": self.passed,
                "checks": dict(self.checks), "failures": list(self.failures)}


def _int_generator(g):
    """(integer matrix, denominator) for a rational generator, None for floats."""
    g = np.asarray(g)
    if g.dtype.kind == "f":
        return None
    den = 1
    for x in g.reshape(-1):
        den = math.lcm(den, Fraction(x).denominator)
    return np.array([[int(Fraction(x) * den) for x in row] for row in g], dtype=np.int64), den


def check_decomposition(dec: "Decomposition") -> DecompositionReport:
    """Exact certificate that ``dec`` is a reductive, orthogonal,
    K_Theta-invariant decomposition of k."""
    spec, theta = dec.spec, dec.theta
    n = spec.ambient_dim
    E = np.array(dec.m_theta_basis, dtype=np.int64).reshape(-1, n, n)
    K = np.array(dec.k_theta_basis, dtype=np.int64).reshape(-1, n, n)
    B = np.concatenate([K, E]) if len(K) else E
    p, d = len(K), len(E)
    checks, fails = [], []

    def record(name, ok, detail=""):
        checks.append((name, bool(ok)))
        if not ok:
            fails.append(f"{name}: {detail}" if detail else name)

    record("dimensions", p + d == spec.dim, f"{p} + {d} != {spec.dim}")
    G = -np.einsum("iab,jba->ij", B, B)
    off = G - np.diag(np.diag(G))
    record("orthogonal_basis", not off.any() and (np.diag(G) > 0).all())
    record("basis_in_k", all(in_k(b, spec) for b in B))

    H = characteristic_element(theta)
    comm = np.einsum("qab,bc->qac", K, H) - np.einsum("ab,qbc->qac", H, K)
    record("k_theta_centralizes_H", not comm.any())
    record("k_theta_is_full_centralizer", len(centralizer_basis(theta)) == p,
           f"centralizer has dimension {len(centralizer_basis(theta))}, k_Theta {p}")

    st = dec.structure
    if p:
        KK = np.einsum("pab,qbc->pqac", K, K)
        kk = KK - KK.transpose(1, 0, 2, 3)
        kk_m = -np.einsum("pqab,kba->pqk", kk, E)
        record("k_theta_subalgebra", not kk_m.any())
        KE = np.einsum("qab,jbc->qjac", K, E)
        EK = np.einsum("jab,qbc->qjac", E, K)
        km_k = -np.einsum("qjab,pba->qjp", KE - EK, K)
        record("reductive", not km_k.any(), "[k_Theta, m_Theta] leaves m_Theta")
    else:
        record("k_theta_subalgebra", True)
        record("reductive", True)

    # submodules: partition of the m coordinates, and invariance
    idx = sorted(i for s in dec.submodules for i in s.indices)
    record("submodules_partition_m", idx == list(range(d)))
    summ_idx = sorted(i for s in dec.isotypical_summands for i in s.indices)
    record("summands_partition_m", summ_idx == list(range(d)))
    owner = np.empty(d, dtype=int)
    for a, s in enumerate(dec.submodules):
        owner[list(s.indices)] = a
    leak = st.km_m != 0
    bad = [(q, j, k) for q, j, k in zip(*np.nonzero(leak)) if owner[j] != owner[k]]
    record("submodules_k_invariant", not bad,
           f"ad({dec.k_theta_labels[bad[0][0]]}) maps {dec.m_labels[bad[0][1]]} "
           f"to {dec.m_labels[bad[0][2]]}" if bad else "")

    worst = None
    for gi, g in enumerate(dec.discrete_generators):
        ig = _int_generator(g)
        if ig is None:
            gf = np.asarray(g, dtype=float)
            conj = np.einsum("ab,ibc,dc->iad", gf, E.astype(float), gf)
            P = -np.einsum("iab,jba->ij", conj, B.astype(float))
            nz = np.abs(P) > 1e-9
        else:
            gint, _ = ig
            conj = np.einsum("ab,ibc,dc->iad", gint, E, gint)
            P = -np.einsum("iab,jba->ij", conj, B)
            nz = P != 0
        for i in range(d):
            for j in np.nonzero(nz[i])[0]:
                if j < p or owner[j - p] != owner[i]:
                    worst = (gi, i, j)
                    break
            if worst:
                break
        if worst:
            break
    record("submodules_discrete_invariant", worst is None,
           f"generator {worst[0]} moves {dec.m_labels[worst[1]]}" if worst else "")
    return DecompositionReport(theta, tuple(checks), tuple(fails))
