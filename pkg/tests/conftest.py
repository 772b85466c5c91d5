"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import functools

import pytest

from flagorbit.flag_manifold import build_decomposition, enumerate_thetas
from flagorbit.lie_algebra import LieTypeSpec

# the (family, rank) pairs the suite exercises
COVERED = (("A", 2), ("A", 3), ("A", 4), ("A", 5), ("B", 5), ("C", 3), ("C", 4), ("D", 5))

ACCEPTANCE_TITLES = {
    1: "algebraic foundation",
    2: "decomposition suite",
    3: "normal metrics are g.o.",
    4: "type A: only normal metrics",
    5: "A3 families",
    6: "B5 families",
    7: "C3 family, C4 special flags",
    8: "D5 families",
    9: "cross-validation",
    10: "obstruction soundness",
    11: "CLI determinism",
}

_RESULTS: dict = {}


@functools.lru_cache(maxsize=None)
def thetas(family: str, rank: int, include_point: bool = False) -> tuple:
    out = enumerate_thetas(LieTypeSpec(family, rank))
    if not include_point:
        out = [t for t in out if not t.is_full]
    return tuple(out)


def covered_thetas(include_point: bool = False):
    for fam, rank in COVERED:
        yield from thetas(fam, rank, include_point)


@functools.lru_cache(maxsize=None)
def decomposition(theta):
    return build_decomposition(theta)


@pytest.fixture
def acceptance():
    """Record the outcome of one acceptance criterion: record(n, ok, detail)."""
    def record(n: int, ok: bool, detail: str = ""):
        _RESULTS[n] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE_TITLES.items():
        if n not in _RESULTS:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN  {title}")
            continue
        ok, detail = _RESULTS[n]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
