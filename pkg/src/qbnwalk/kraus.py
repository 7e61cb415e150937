"""Kraus representation of one walk step on a finite lattice window.

The operators are ``M_{x,y} = |x><y| (x) C_n^(x-y)`` for ``x - y`` in
{-1, +1}^d. On a finite window only interior sources (every neighbour
inside the window) have a complete family; boundary sources are reported
as truncated, never asserted.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import CursorMismatchError, DimensionMismatchError, SupportBoundaryError, WindowTooSmallError
from .fock import InternalOperator, ModeBudget, build_coin, displacements
from .openwalk import Nucleus, compress_factor
from .stats import fmt

Site = tuple[int, ...]

COMPLETENESS_TOL = 1e-14


@dataclass(frozen=True)
class LatticeWindow:
    """Box ``lo_i <= x_i <= hi_i``; ``lo > hi`` on some axis means empty."""

    d: int
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        lo = (self.lo,) * self.d if np.isscalar(self.lo) else tuple(int(v) for v in self.lo)
        hi = (self.hi,) * self.d if np.isscalar(self.hi) else tuple(int(v) for v in self.hi)
        if len(lo) != self.d or len(hi) != self.d:
            raise DimensionMismatchError(f"window bounds {lo}, {hi} for d={self.d}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not self.empty and any(h - l < 2 for l, h in zip(lo, hi)):
            raise WindowTooSmallError(f"window {lo}..{hi} has no interior site (need hi - lo >= 2)")

    @property
    def empty(self) -> bool:
        return any(l > h for l, h in zip(self.lo, self.hi))

    def sites(self) -> list[Site]:
        if self.empty:
            return []
        return list(itertools.product(*(range(l, h + 1) for l, h in zip(self.lo, self.hi))))

    def __contains__(self, x) -> bool:
        return all(l <= v <= h for v, l, h in zip(x, self.lo, self.hi))

    def is_interior(self, x) -> bool:
        return all(l < v < h for v, l, h in zip(x, self.lo, self.hi))

    def to_json(self) -> dict:
        return {"d": self.d, "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True, eq=False)
class KrausFamily:
    """Nonzero ``M_{x,y}`` of step ``n``; the value stored is the coin factor."""

    n: int
    window: LatticeWindow
    K: int
    ops: Mapping[tuple[Site, Site], InternalOperator]

    @property
    def d(self) -> int:
        return self.window.d

    def sources(self) -> list[Site]:
        return sorted({y for _, y in self.ops})

    def from_source(self, y) -> list[tuple[Site, InternalOperator]]:
        y = tuple(y)
        return [(x, op) for (x, yy), op in self.ops.items() if yy == y]


def build_kraus(n: int, window: LatticeWindow, K: int) -> KrausFamily:
    ModeBudget(K).check(n)
    d = window.d
    coins = {eps: build_coin(eps, n, K, d) for eps in displacements(d)}
    ops = {}
    for y in window.sites():
        for eps in displacements(d):
            x = tuple(a + e for a, e in zip(y, eps))
            if x in window:
                ops[(x, y)] = coins[eps]
    return KrausFamily(n, window, K, ops)


@dataclass
class CompletenessReport:
    window: LatticeWindow
    n: int
    K: int
    entries: list[dict]
    tol: float = COMPLETENESS_TOL

    @property
    def max_interior_residual(self) -> float:
        return max((e["residual"] for e in self.entries if e["interior"]), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e["status"] != "fail" for e in self.entries)

    def to_json(self) -> dict:
        sites = []
        for e in self.entries:
            sites.append({"y": list(e["y"]), "status": e["status"], "operators": e["operators"],
                          "residual": fmt(e["residual"]), "deficiency_trace": fmt(e["deficiency_trace"]),
                          "deficiency_norm": fmt(e["deficiency_norm"])})
        return {"window": self.window.to_json(), "n": self.n, "K": self.K, "tol": fmt(self.tol),
                "max_interior_residual": fmt(self.max_interior_residual), "sites": sites,
                "pass": self.passed}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def check_completeness(family: KrausFamily, tol: float = COMPLETENESS_TOL) -> CompletenessReport:
    """Per source ``y``: ``sum_x M*_{x,y} M_{x,y}`` against ``|y><y| (x) I``."""
    dim = 1 << (family.d * family.K)
    eye = np.eye(dim, dtype=complex)
    entries = []
    for y in family.window.sites():
        acc = np.zeros((dim, dim), dtype=complex)
        ops = family.from_source(y)
        for _, m in ops:
            acc += (m.adjoint() @ m).to_dense()
        deficiency = eye - acc
        residual = float(np.max(np.abs(deficiency)))
        interior = family.window.is_interior(y)
        if interior:
            status = "pass" if residual <= tol else "fail"
        else:
            status = "incomplete-by-truncation"
        entries.append({"y": y, "interior": interior, "status": status, "operators": len(ops),
                        "residual": residual, "deficiency_trace": float(np.trace(deficiency).real),
                        "deficiency_norm": float(np.linalg.norm(deficiency))})
    return CompletenessReport(family.window, family.n, family.K, entries, tol)


def apply_channel(family: KrausFamily, omega: Nucleus) -> Nucleus:
    """``sum M omega M*`` acting on nucleus form; blocks stay diagonal.

    The supported sites and their one-step halo must lie in the window
    interior, so no probability can leak through the truncation.
    """
    if omega.d != family.d:
        raise DimensionMismatchError(f"d={omega.d} nucleus, d={family.d} family")
    if omega.retired or omega.iso is not None or omega.K != family.K:
        raise DimensionMismatchError("the channel acts on unretired canonical nuclei of the same budget")
    if omega.cursor != family.n:
        raise CursorMismatchError(f"family is for step {family.n}, nucleus is at step {omega.cursor}")
    for y in omega.sites:
        for eps in displacements(omega.d):
            x = tuple(a + e for a, e in zip(y, eps))
            if not family.window.is_interior(x):
                raise SupportBoundaryError(f"site {y} reaches {x}, outside the window interior")
    dense = {}
    out: dict[Site, list] = {}
    # eps outer, sources inner: per target the terms arrive in eps order
    for eps in displacements(omega.d):
        for y, v in omega.sites.items():
            x = tuple(a + e for a, e in zip(y, eps))
            m = family.ops[(x, y)]
            c = dense.setdefault(eps, m.to_dense())
            if omega.storage == "factor":
                out.setdefault(x, []).append(c @ v)
            else:
                out.setdefault(x, []).append(c @ v @ c.conj().T)
    sites = {}
    for x, terms in out.items():
        if omega.storage == "factor":
            val = compress_factor(np.hstack(terms))
            if float(np.vdot(val, val).real) >= 1e-15:
                sites[x] = val
        else:
            val = terms[0]
            for t in terms[1:]:
                val = val + t
            if abs(float(np.trace(val).real)) >= 1e-15:
                sites[x] = val
    return replace(omega, sites=sites, cursor=omega.cursor + 1)


def dense_channel_oracle(family: KrausFamily, omega: Nucleus) -> tuple[dict[Site, np.ndarray], float]:
    """Materialize the full window state and Kraus matrices (tiny windows only).

    Returns the diagonal blocks of ``sum M w M*`` and the largest entry
    outside them, which must vanish.
    """
    sites = family.window.sites()
    if family.d != 1 or family.K != 1 or len(sites) > 5:
        raise ValueError("dense channel oracle is limited to d=1, K=1, at most 5 sites")
    pos = {x: i for i, x in enumerate(sites)}
    dim = 1 << family.K
    big = np.zeros((len(sites) * dim,) * 2, dtype=complex)
    for x in omega.sites:
        if x not in pos:
            raise SupportBoundaryError(f"site {x} outside the window")
        i = pos[x] * dim
        big[i:i + dim, i:i + dim] = omega.operator(x)
    total = np.zeros_like(big)
    for (x, y), m in family.ops.items():
        ket = np.zeros((len(sites), len(sites)))
        ket[pos[x], pos[y]] = 1.0
        full = np.kron(ket, m.to_dense())
        total += full @ big @ full.conj().T
    blocks = {}
    off = total.copy()
    for x, i in pos.items():
        i *= dim
        block = total[i:i + dim, i:i + dim].copy()
        off[i:i + dim, i:i + dim] = 0
        if np.trace(block).real >= 1e-15:
            blocks[x] = block
    return blocks, float(np.max(np.abs(off), initial=0.0))
