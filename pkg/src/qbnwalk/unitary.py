"""Unitary QBN walk on l2(Z^d, H) and its comparison with the open walk.

The stepping kernel here deliberately does not reuse the open-walk code:
2x2 coin factors are applied by pairing basis indices that differ in one
bit, rather than by the reshape/tensordot kernel of ``fock``. Agreement of
the two walks is then a genuine cross-check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

import numpy as np

from .errors import CursorMismatchError, DimensionMismatchError, ModeBudgetError
from .fock import SubsetMask, displacements
from .initial import Dirac, check_budget, joint_index, required_budget
from .openwalk import mode_retire, nucleus_from_spec, step_d
from .stats import Distribution, fmt

Site = tuple[int, ...]

# same matrices as fock.L_BLOCK / R_BLOCK, written out independently
_L = np.array([[-0.5, 0.5], [0.5, -0.5]], dtype=complex)
_R = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)


@dataclass(frozen=True, eq=False)
class VectorState:
    """Site -> internal amplitude vector over ``d*K`` joint modes."""

    d: int
    K: int
    sites: Mapping[Site, np.ndarray]
    cursor: int = 0

    def __post_init__(self):
        dim = 1 << (self.d * self.K)
        for x, v in self.sites.items():
            if len(x) != self.d or v.shape != (dim,):
                raise DimensionMismatchError(f"site {x}: vector of shape {v.shape} for dim {dim}")
        object.__setattr__(self, "sites", dict(sorted(self.sites.items())))

    @classmethod
    def dirac(cls, sigmas: Sequence[SubsetMask], x0: Site, K: int) -> "VectorState":
        x0 = tuple(x0)
        v = np.zeros(1 << (len(x0) * K), dtype=complex)
        v[joint_index(sigmas, K)] = 1.0
        return cls(len(x0), K, {x0: v})

    @property
    def dim(self) -> int:
        return 1 << (self.d * self.K)

    def norm_sq(self) -> float:
        return math.fsum(float(np.vdot(v, v).real) for v in self.sites.values())


def _bit_pairs(dim: int, bit: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(dim)
    lo = idx[(idx >> bit) & 1 == 0]
    return lo, lo | (1 << bit)


def _apply_factor(v: np.ndarray, block: np.ndarray, bit: int) -> np.ndarray:
    lo, hi = _bit_pairs(v.shape[0], bit)
    out = np.empty_like(v)
    a, b = v[lo], v[hi]
    out[lo] = block[0, 0] * a + block[0, 1] * b
    out[hi] = block[1, 0] * a + block[1, 1] * b
    return out


def apply_coin_vector(v: np.ndarray, eps: Sequence[int], n: int, K: int) -> np.ndarray:
    """``C_n^(eps) v`` with axis 0 the most significant block of ``K`` bits."""
    d = len(eps)
    for j, e in enumerate(eps):
        bit = (d - 1 - j) * K + n
        v = _apply_factor(v, _R if e == 1 else _L, bit)
    return v


def step_unitary(W: VectorState, n: int) -> VectorState:
    """``W'(x) = sum_eps C_n^(eps) W(x - eps)``."""
    if n != W.cursor:
        raise CursorMismatchError(f"step {n} requested but the state is at step {W.cursor}")
    if n >= W.K:
        raise ModeBudgetError(f"step {n} needs mode {n}, budget is K={W.K}")
    out: dict[Site, np.ndarray] = {}
    for eps in displacements(W.d):
        for y, v in W.sites.items():
            x = tuple(a + e for a, e in zip(y, eps))
            w = apply_coin_vector(v, eps, n, W.K)
            out[x] = out[x] + w if x in out else w
    out = {x: v for x, v in out.items() if float(np.vdot(v, v).real) >= 1e-15}
    return VectorState(W.d, W.K, out, n + 1)


def norm_distribution(W: VectorState) -> Distribution:
    return Distribution({x: float(np.vdot(v, v).real) for x, v in W.sites.items()}, W.d)


def unitary_evolve(W: VectorState, steps: int) -> list[VectorState]:
    """States after 0..steps steps."""
    out = [W]
    for n in range(W.cursor, W.cursor + steps):
        out.append(step_unitary(out[-1], n))
    return out


# open vs unitary ------------------------------------------------------------

def witness_expected(d: int) -> float:
    """Trace-norm gap at two steps, start site: 2^d orthogonal paths of weight 4^-d."""
    m = 1 << d
    return 2.0 * (m - 1) / (m * m)


def trace_norm_gap(factor: np.ndarray, w: np.ndarray) -> float:
    """``|| F F^* - w w^* ||_1`` computed on the span of F's columns and w."""
    basis, _ = np.linalg.qr(np.column_stack([factor, w]))
    f = basis.conj().T @ factor
    u = basis.conj().T @ w
    small = f @ f.conj().T - np.outer(u, u.conj())
    return float(np.abs(np.linalg.eigvalsh((small + small.conj().T) / 2)).sum())


@dataclass
class CompareReport:
    d: int
    K: int
    x0: Site
    steps: int
    max_gaps: list[float] = field(default_factory=list)
    trace_norm_gaps: list = field(default_factory=list)
    witness: float | None = None
    tol: float = 1e-12

    @property
    def max_gap(self) -> float:
        return max(self.max_gaps, default=0.0)

    @property
    def witness_threshold(self) -> float:
        return 0.8 * witness_expected(self.d)

    @property
    def passed(self) -> bool:
        ok = self.max_gap <= self.tol
        if self.steps >= 2:
            ok = ok and self.witness is not None and self.witness >= self.witness_threshold
        return ok

    def to_json(self) -> dict:
        gaps = []
        for entry in self.trace_norm_gaps:
            if entry is None:
                gaps.append(None)
            else:
                gaps.append([{"x": list(x), "gap": fmt(g)} for x, g in sorted(entry.items())])
        return {
            "d": self.d, "K": self.K, "x0": list(self.x0), "steps": self.steps,
            "tol": fmt(self.tol),
            "max_gap_per_step": [fmt(g) for g in self.max_gaps],
            "max_gap": fmt(self.max_gap),
            "trace_norm_gaps": gaps,
            "witness": {"n": 2, "x": list(self.x0),
                        "gap": None if self.witness is None else fmt(self.witness),
                        "expected": fmt(witness_expected(self.d)),
                        "threshold": fmt(self.witness_threshold)},
            "pass": self.passed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def compare_open_unitary(init_sigma: Sequence[SubsetMask], x0: Site, steps: int, K: int | None = None,
                         gap_memory: int = 256 << 20) -> CompareReport:
    """Run both walks from ``Z_sigma`` at ``x0`` and compare them step by step.

    Trace-norm gaps need the unretired open state; once it would exceed
    ``gap_memory`` bytes the open walk switches to mode retirement and the
    remaining gap entries are ``None``.
    """
    x0 = tuple(x0)
    init_sigma = tuple(init_sigma)
    d = len(x0)
    if len(init_sigma) != d:
        raise DimensionMismatchError(f"{len(init_sigma)} masks for a rank-{d} site")
    spec = Dirac(init_sigma, x0)
    K = required_budget(spec, steps) if K is None else K
    check_budget(spec, steps, K)

    report = CompareReport(d, K, x0, steps)
    W = VectorState.dirac(init_sigma, x0, K)
    omega = nucleus_from_spec(spec, K, storage="factor", engine="dense")
    retiring = False
    for n in range(steps):
        W = step_unitary(W, n)
        if not retiring:
            cols = sum(f.shape[1] for f in omega.sites.values())
            if cols * (1 << d) * omega.dim * 16 > gap_memory:
                retiring = True
        omega = step_d(omega, n)
        if retiring:
            omega = mode_retire(omega)
        law_open = omega.distribution()
        law_unit = norm_distribution(W)
        report.max_gaps.append(law_open.max_abs_gap(law_unit))
        if retiring:
            report.trace_norm_gaps.append(None)
            continue
        gaps = {}
        for x, f in omega.sites.items():
            w = W.sites.get(x, np.zeros(W.dim, dtype=complex))
            gaps[x] = trace_norm_gap(f, w)
        report.trace_norm_gaps.append(gaps)
        if n == 1:
            report.witness = gaps.get(x0, 0.0)
    return report


# snapshots ------------------------------------------------------------------

def write_vector_snapshot(W: VectorState, out: TextIO):
    out.write("# qbnwalk vector snapshot\n")
    out.write(f"# d={W.d}\n# K={W.K}\n# mode_cursor={W.cursor}\n# retired_modes=0\n# engine=unitary\n")
    for x, v in W.sites.items():
        nz = np.nonzero(v)[0]
        out.write("site," + ",".join(map(str, x)) + f",{nz.size}\n")
        for i in nz:
            out.write(f"{int(i)},{fmt(v[i].real)},{fmt(v[i].imag)}\n")


def read_vector_snapshot(src: TextIO) -> VectorState:
    header = {}
    sites = {}
    lines = iter(src.read().splitlines())
    for line in lines:
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                header[k] = v
            continue
        d, K = int(header["d"]), int(header["K"])
        parts = line.split(",")[1:]
        x = tuple(int(p) for p in parts[:d])
        v = np.zeros(1 << (d * K), dtype=complex)
        for _ in range(int(parts[d])):
            i, re_, im = next(lines).split(",")
            v[int(i)] = complex(float(re_), float(im))
        sites[x] = v
    return VectorState(int(header["d"]), int(header["K"]), sites, int(header["mode_cursor"]))
