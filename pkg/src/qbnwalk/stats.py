"""Distribution analytics for lattice walks.

Convergence in law is checked through characteristic functions evaluated
exactly on the finite support, compared with the standard Gaussian
``exp(-|t|^2 / 2)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError

Site = tuple[int, ...]


def fmt(v: float) -> str:
    """17 significant digits, the format of every float we write."""
    return format(float(v), ".17g")


class Distribution:
    """Probabilities on a finite subset of Z^d, keyed by integer tuples."""

    __slots__ = ("d", "_p")

    def __init__(self, probs: Mapping, d: int | None = None):
        items = {}
        for x, p in probs.items():
            key = (int(x),) if np.isscalar(x) else tuple(int(v) for v in x)
            items[key] = float(p)
        if d is None:
            if not items:
                raise ValueError("cannot infer d of an empty distribution")
            d = len(next(iter(items)))
        if any(len(x) != d for x in items):
            raise DimensionMismatchError(f"sites of mixed rank for d={d}")
        self.d = int(d)
        self._p = dict(sorted(items.items()))

    @classmethod
    def delta(cls, x0: Sequence[int]) -> "Distribution":
        x0 = tuple(x0)
        return cls({x0: 1.0}, len(x0))

    def __getitem__(self, x) -> float:
        key = (int(x),) if np.isscalar(x) else tuple(x)
        return self._p.get(key, 0.0)

    def __iter__(self):
        return iter(self._p)

    def __len__(self):
        return len(self._p)

    def items(self):
        return self._p.items()

    @property
    def support(self) -> list[Site]:
        return list(self._p)

    def total(self) -> float:
        return math.fsum(self._p.values())

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(self.total() - 1.0) <= tol and min(self._p.values(), default=0.0) >= -1e-15

    def marginal(self, axis: int) -> "Distribution":
        out: dict[Site, float] = {}
        for x, p in self._p.items():
            out[(x[axis],)] = out.get((x[axis],), 0.0) + p
        return Distribution(out, 1)

    def max_abs_gap(self, other: "Distribution") -> float:
        _check_d(self, other)
        keys = set(self._p) | set(other._p)
        return max((abs(self[x] - other[x]) for x in keys), default=0.0)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(sites as an (N, d) int array, probabilities as a length-N array)."""
        if not self._p:
            return np.zeros((0, self.d), dtype=np.int64), np.zeros(0)
        xs = np.array(list(self._p), dtype=np.int64)
        return xs, np.array(list(self._p.values()))

    def to_csv(self) -> str:
        head = ",".join(f"x{i + 1}" for i in range(self.d)) + ",p"
        lines = [head]
        for x, p in self._p.items():
            lines.append(",".join(str(v) for v in x) + "," + fmt(max(p, 0.0) if p > -1e-15 else p))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"d": self.d, "sites": [list(x) for x in self._p], "p": [fmt(p) for p in self._p.values()]}

    @classmethod
    def from_csv(cls, text: str) -> "Distribution":
        lines = text.strip().splitlines()
        d = len(lines[0].split(",")) - 1
        probs = {}
        for line in lines[1:]:
            parts = line.split(",")
            probs[tuple(int(v) for v in parts[:d])] = float(parts[d])
        return cls(probs, d)

    def __repr__(self):
        return f"Distribution(d={self.d}, support={len(self._p)})"


def _check_d(a: Distribution, b: Distribution):
    if a.d != b.d:
        raise DimensionMismatchError(f"distributions of dimension {a.d} and {b.d}")


def product_distribution(factors: Iterable[Distribution]) -> Distribution:
    """Joint law of independent axes (each factor one-dimensional)."""
    out = {(): 1.0}
    for f in factors:
        if f.d != 1:
            raise DimensionMismatchError("product factors must be one-dimensional")
        out = {s + x: p * q for s, p in out.items() for x, q in f.items()}
    return Distribution(out, len(next(iter(out))) if out else 0)


def binomial_reference(n: int) -> Distribution:
    """Law on {-n, -n+2, ..., n} with mass C(n, j) / 2**n at n - 2j.

    Each float is the correctly rounded dyadic rational; ``binomial_exact``
    keeps them as Fractions.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    return Distribution({(n - 2 * j,): math.comb(n, j) / (1 << n) for j in range(n + 1)}, 1)


def binomial_exact(n: int) -> dict[int, Fraction]:
    return {n - 2 * j: Fraction(math.comb(n, j), 1 << n) for j in range(n + 1)}


# characteristic functions -----------------------------------------------------

def default_grid(d: int = 1, t_max: float = 3.0, t_step: float = 0.1) -> np.ndarray:
    """Per-axis t from -t_max to t_max; the cartesian product for d > 1."""
    count = int(round(2 * t_max / t_step))
    axis = np.round(np.linspace(-t_max, t_max, count + 1), 12)
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float)


@dataclass(frozen=True)
class CharFnTable:
    t: np.ndarray            # (G, d)
    values: np.ndarray       # (G,) complex
    n: int

    @property
    def gauss(self) -> np.ndarray:
        return np.exp(-0.5 * np.sum(self.t ** 2, axis=1))

    def to_csv(self) -> str:
        d = self.t.shape[1]
        head = ",".join(f"t{i + 1}" for i in range(d)) + ",re,im,gauss_ref,abs_err"
        lines = [head]
        ref = self.gauss
        err = np.abs(self.values - ref)
        for row, v, g, e in zip(self.t, self.values, ref, err):
            lines.append(",".join(fmt(t) for t in row) + f",{fmt(v.real)},{fmt(v.imag)},{fmt(g)},{fmt(e)}")
        return "\n".join(lines) + "\n"


def char_function(dist: Distribution, n: int, t_grid=None, chunk: int | None = None) -> CharFnTable:
    """``sum_x exp(i t.x / sqrt(n)) p(x)`` on every grid point."""
    if n < 1:
        raise ValueError("n must be at least 1")
    t = default_grid(dist.d) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape[1] != dist.d:
        raise DimensionMismatchError(f"grid of rank {t.shape[1]} for a d={dist.d} distribution")
    xs, ps = dist.arrays()
    if chunk is None:
        # keep each phase block near 2**22 entries
        chunk = max(1, (1 << 22) // max(1, xs.shape[0]))
    scale = 1.0 / math.sqrt(n)
    values = np.empty(t.shape[0], dtype=complex)
    for start in range(0, t.shape[0], chunk):
        block = t[start:start + chunk]
        values[start:start + chunk] = np.exp(1j * scale * (block @ xs.T)) @ ps
    return CharFnTable(t, values, int(n))


def gauss_sup_error(table: CharFnTable) -> float:
    return float(np.max(np.abs(table.values - table.gauss), initial=0.0))


def binomial_charfn(t, n: int) -> np.ndarray:
    """Closed form ``prod_j cos(t_j / sqrt(n))**n`` of the binomial family."""
    t = np.asarray(t, dtype=float)
    if t.ndim < 2:
        t = t.reshape(-1, 1)
    return np.prod(np.cos(t / math.sqrt(n)) ** n, axis=1)


# moments ------------------------------------------------------------------------

def moments(dist: Distribution, order: int = 4) -> dict[str, float]:
    """Raw per-axis moments up to ``order``, per-axis variances and covariances.

    Keys: ``m{k}_x{i}`` (raw moment of order k on axis i), ``mean_x{i}``,
    ``var_x{i}``, ``cov_x{i}_x{j}`` for i < j.
    """
    if not 1 <= order <= 4:
        raise ValueError("order must be between 1 and 4")
    xs, ps = dist.arrays()
    xs = xs.astype(float)
    out: dict[str, float] = {}
    means = []
    for i in range(dist.d):
        col = xs[:, i]
        for k in range(1, order + 1):
            out[f"m{k}_x{i + 1}"] = math.fsum(ps * col ** k)
        means.append(out[f"m1_x{i + 1}"])
        out[f"mean_x{i + 1}"] = means[-1]
    if order >= 2:
        for i in range(dist.d):
            out[f"var_x{i + 1}"] = math.fsum(ps * (xs[:, i] - means[i]) ** 2)
        for i, j in itertools.combinations(range(dist.d), 2):
            out[f"cov_x{i + 1}_x{j + 1}"] = math.fsum(ps * (xs[:, i] - means[i]) * (xs[:, j] - means[j]))
    return out


def moments_csv(m: Mapping[str, float]) -> str:
    return "key,value\n" + "".join(f"{k},{fmt(v)}\n" for k, v in m.items())


def total_variation(a: Distribution, b: Distribution) -> float:
    _check_d(a, b)
    keys = set(a) | set(b)
    return 0.5 * math.fsum(abs(a[x] - b[x]) for x in keys)


def gauss_error_series(dists: Mapping[int, Distribution], t_grid=None) -> dict[int, float]:
    """``n -> gauss_sup_error`` for a family of n-step distributions."""
    return {n: gauss_sup_error(char_function(dist, n, t_grid)) for n, dist in sorted(dists.items())}


def is_strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))
