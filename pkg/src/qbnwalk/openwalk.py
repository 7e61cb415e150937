"""Open QBN walk: nucleus states, the one-step maps, and four engines.

A nucleus maps lattice sites to positive internal operators with unit total
trace. Site operators are held in one of two storages:

``"factor"``
    a ``dim x r`` array ``F`` with operator ``F F^*``. The update
    ``C rho C = (C F)(C F)^*`` is exact, so a step just stacks the columns
    ``C F`` arriving from each neighbour. Memory grows with the number of
    paths instead of ``dim**2``.
``"matrix"``
    the full ``dim x dim`` Hermitian matrix, updated literally as
    ``C rho C``. Used as the small-size oracle.

Engines: ``dense`` (full joint space), ``retire`` (dense plus tracing out
consumed modes after every step), ``weights`` (classical walk on branch
weights for product initial states) and ``separable`` (one 1-D walk per
axis).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, TextIO

import numpy as np

from .errors import (
    CursorMismatchError,
    DimensionMismatchError,
    EngineSpecMismatchError,
    ModeBudgetError,
    PositivityError,
)
from .fock import (
    L_BLOCK,
    R_BLOCK,
    InternalOperator,
    PermutedIsomorphism,
    build_LR,
    build_coin,
    displacements,
    joint_mode,
    partial_trace_dense,
)
from .initial import (
    InitialSpec,
    Separable,
    check_budget,
    init_vectors,
    product_mode_states,
    required_budget,
)
from .stats import Distribution, fmt, product_distribution

Site = tuple[int, ...]

PRUNE_TRACE = 1e-15
POSITIVITY_FLOOR = -1e-12
ENGINES = ("dense", "retire", "weights", "separable")
STORAGES = ("factor", "matrix")


def worker_count() -> int:
    """Thread cap from ``QBNWALK_THREADS`` (default 1)."""
    raw = os.environ.get("QBNWALK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_sites(fn, keys):
    workers = worker_count()
    if workers == 1 or len(keys) < 2:
        return [fn(k) for k in keys]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, keys))


def _operator_of(value: np.ndarray, storage: str) -> np.ndarray:
    if storage == "matrix":
        return value
    return value @ value.conj().T


def _trace_of(value: np.ndarray, storage: str) -> float:
    if storage == "matrix":
        return float(np.trace(value).real)
    return float(np.vdot(value, value).real)


def compress_factor(f: np.ndarray) -> np.ndarray:
    """Same ``F F^*`` with at most ``dim`` columns."""
    rows, cols = f.shape
    if cols <= rows:
        return f
    r = np.linalg.qr(f.conj().T, mode="r")
    return np.ascontiguousarray(r.conj().T)


@dataclass(frozen=True, eq=False)
class Nucleus:
    """Nucleus on Z^d; the 1-D nucleus is the ``d == 1`` case.

    ``K`` is the per-axis mode budget. After retirement the site operators
    act on the ``K - retired`` modes per axis that remain, laid out with the
    canonical joint relabeling.
    """

    d: int
    K: int
    sites: Mapping[Site, np.ndarray]
    cursor: int = 0
    retired: int = 0
    storage: str = "factor"
    iso: PermutedIsomorphism | None = None
    engine: str = "dense"

    def __post_init__(self):
        if self.storage not in STORAGES:
            raise ValueError(f"unknown storage {self.storage!r}")
        if not 0 <= self.retired <= self.cursor:
            raise ValueError("retired modes must not exceed the cursor")
        for x, v in self.sites.items():
            if len(x) != self.d:
                raise DimensionMismatchError(f"site {x} in a d={self.d} nucleus")
            if v.shape[0] != self.dim or (self.storage == "matrix" and v.shape != (self.dim, self.dim)):
                raise DimensionMismatchError(f"site {x} operator has shape {v.shape}, dim is {self.dim}")
        object.__setattr__(self, "sites", dict(sorted(self.sites.items())))

    @property
    def local_modes(self) -> int:
        return self.K - self.retired

    @property
    def n_modes(self) -> int:
        return self.d * self.local_modes

    @property
    def dim(self) -> int:
        return 1 << self.n_modes

    @property
    def support(self) -> list[Site]:
        return list(self.sites)

    def operator(self, x) -> np.ndarray:
        """Dense site operator (zero matrix off the support)."""
        x = tuple(x)
        if x not in self.sites:
            return np.zeros((self.dim, self.dim), dtype=complex)
        return _operator_of(self.sites[x], self.storage)

    def internal_operator(self, x) -> InternalOperator:
        return InternalOperator(self.n_modes, dense=self.operator(x))

    def trace(self, x) -> float:
        x = tuple(x)
        return _trace_of(self.sites[x], self.storage) if x in self.sites else 0.0

    def total_trace(self) -> float:
        return math.fsum(self.trace(x) for x in self.sites)

    def distribution(self) -> Distribution:
        return Distribution({x: self.trace(x) for x in self.sites}, self.d)

    def min_eigenvalue(self) -> float:
        return float(min((np.linalg.eigvalsh(self.operator(x)).min() for x in self.sites), default=0.0))

    def validate(self, tol: float = 1e-12, relaxed: bool = False):
        """Check unit total trace and positivity; ``relaxed`` skips the trace check."""
        if not relaxed and abs(self.total_trace() - 1.0) > tol:
            raise ValueError(f"total trace {self.total_trace()!r} differs from 1")
        if self.storage == "matrix":
            for x, v in self.sites.items():
                if np.max(np.abs(v - v.conj().T), initial=0.0) > tol:
                    raise ValueError(f"site {x} operator is not Hermitian")
            if self.sites and self.min_eigenvalue() < POSITIVITY_FLOOR:
                raise PositivityError(f"min eigenvalue {self.min_eigenvalue()!r} below floor")
        return self

    def to_matrix(self) -> "Nucleus":
        if self.storage == "matrix":
            return self
        return replace(self, sites={x: _operator_of(v, "factor") for x, v in self.sites.items()},
                       storage="matrix")

    def max_site_gap(self, other: "Nucleus") -> float:
        """Largest entrywise difference between site operators."""
        if (self.d, self.n_modes) != (other.d, other.n_modes):
            raise DimensionMismatchError("nuclei live on different spaces")
        gap = 0.0
        for x in set(self.sites) | set(other.sites):
            gap = max(gap, float(np.max(np.abs(self.operator(x) - other.operator(x)), initial=0.0)))
        return gap


def nucleus_from_spec(spec: InitialSpec, K: int, storage: str = "factor",
                      iso: PermutedIsomorphism | None = None, engine: str = "dense") -> Nucleus:
    d = spec.d
    sites = {}
    for x, vecs in init_vectors(spec, K).items():
        f = np.column_stack(vecs)
        if iso is not None:
            if iso.n_modes != d * K:
                raise DimensionMismatchError(f"isomorphism on {iso.n_modes} modes, joint space has {d * K}")
            f = iso.apply_vectors(f)
        f = compress_factor(f)
        sites[x] = f if storage == "factor" else f @ f.conj().T
    return Nucleus(d, K, sites, storage=storage, iso=iso, engine=engine)


def nucleus_from_operators(ops: Mapping[Site, np.ndarray], K: int, cursor: int = 0,
                           storage: str = "matrix") -> Nucleus:
    """Nucleus from explicit positive site matrices (validated)."""
    ops = {(x,) if np.isscalar(x) else tuple(x): np.asarray(m, dtype=complex) for x, m in ops.items()}
    if not ops:
        raise ValueError("use Nucleus(...) directly for an empty nucleus")
    d = len(next(iter(ops)))
    nuc = Nucleus(d, K, ops, cursor=cursor, storage="matrix").validate()
    if storage == "matrix":
        return nuc
    sites = {}
    for x, m in nuc.sites.items():
        w, v = np.linalg.eigh((m + m.conj().T) / 2)
        keep = w > 0
        sites[x] = v[:, keep] * np.sqrt(w[keep])
    return Nucleus(d, K, sites, cursor=cursor, storage="factor")


# coins ----------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _canonical_coins(n_local: int, K_local: int, d: int) -> tuple:
    return tuple((eps, build_coin(eps, n_local, K_local, d)) for eps in displacements(d))


def _coins_for(nuc: Nucleus, n: int) -> tuple:
    if nuc.iso is None:
        return _canonical_coins(n - nuc.retired, nuc.local_modes, nuc.d)
    return tuple((eps, build_coin(eps, n, nuc.K, nuc.d, nuc.iso)) for eps in displacements(nuc.d))


def _check_step(nuc: Nucleus, n: int):
    if n != nuc.cursor:
        raise CursorMismatchError(f"step {n} requested but the nucleus is at step {nuc.cursor}")
    if n >= nuc.K:
        raise ModeBudgetError(f"step {n} needs mode {n}, budget is K={nuc.K}")


def _sandwich(coin: InternalOperator, value: np.ndarray, storage: str) -> np.ndarray:
    left = coin.apply(value)
    if storage == "factor":
        return left
    # (C rho) C = ((C) (C rho)^*)^* for self-adjoint C
    return coin.apply(left.conj().T).conj().T


def _finish(value_list, storage, dim):
    if storage == "factor":
        return compress_factor(np.hstack(value_list))
    out = value_list[0]
    for v in value_list[1:]:
        out = out + v
    return out


def _check_positive(sites: Mapping[Site, np.ndarray]):
    for x, v in sites.items():
        lo = np.linalg.eigvalsh((v + v.conj().T) / 2).min()
        if lo < POSITIVITY_FLOOR:
            raise PositivityError(f"site {x}: eigenvalue {lo!r} below {POSITIVITY_FLOOR}")


def step_d(omega: Nucleus, n: int, check_positivity: bool = True) -> Nucleus:
    """``omega'(x) = sum_eps C_eps omega(x - eps) C_eps`` over {-1, +1}^d."""
    _check_step(omega, n)
    coins = _coins_for(omega, n)
    storage = omega.storage
    src = omega.sites
    targets = sorted({tuple(a + e for a, e in zip(y, eps)) for y in src for eps, _ in coins})

    def gather(x):
        terms = []
        for eps, coin in coins:
            y = tuple(a - e for a, e in zip(x, eps))
            if y in src:
                terms.append(_sandwich(coin, src[y], storage))
        return _finish(terms, storage, omega.dim)

    values = _map_sites(gather, targets)
    sites = {x: v for x, v in zip(targets, values) if abs(_trace_of(v, storage)) >= PRUNE_TRACE}
    if storage == "matrix" and check_positivity:
        _check_positive(sites)
    return replace(omega, sites=sites, cursor=n + 1)


def step_1d(rho: Nucleus, n: int) -> Nucleus:
    """``rho'(x) = L rho(x + 1) L + R rho(x - 1) R`` written out for one axis."""
    if rho.d != 1:
        raise DimensionMismatchError(f"step_1d needs a 1-D nucleus, got d={rho.d}")
    if rho.iso is not None:
        raise EngineSpecMismatchError("step_1d works in the canonical basis only")
    _check_step(rho, n)
    L, R = build_LR(n - rho.retired, rho.local_modes)
    storage = rho.storage
    src = rho.sites
    targets = sorted({(y + s,) for (y,) in src for s in (-1, 1)})
    sites = {}
    for (x,) in targets:
        terms = []
        if (x + 1,) in src:
            terms.append(_sandwich(L, src[(x + 1,)], storage))
        if (x - 1,) in src:
            terms.append(_sandwich(R, src[(x - 1,)], storage))
        v = _finish(terms, storage, rho.dim)
        if abs(_trace_of(v, storage)) >= PRUNE_TRACE:
            sites[(x,)] = v
    return replace(rho, sites=sites, cursor=n + 1)


def mode_retire(nuc):
    """Trace consumed modes (those below the cursor) out of every site operator."""
    if isinstance(nuc, SeparableNucleus):
        return SeparableNucleus(tuple(mode_retire(f) for f in nuc.factors))
    drop = nuc.cursor - nuc.retired
    if drop == 0:
        return nuc
    if nuc.iso is not None:
        raise EngineSpecMismatchError("mode retirement needs the canonical isomorphism")
    Kl, d, M = nuc.local_modes, nuc.d, nuc.n_modes
    traced = sorted((joint_mode(j, k, Kl, d) for j in range(d) for k in range(drop)), reverse=True)
    sites = {}
    if nuc.storage == "factor":
        axes = [M - 1 - b for b in traced]
        kept = [a for a in range(M) if a not in axes]
        for x, f in nuc.sites.items():
            t = f.reshape((2,) * M + (f.shape[1],))
            t = np.transpose(t, kept + sorted(axes) + [M])
            sites[x] = compress_factor(t.reshape(1 << len(kept), -1))
    else:
        for x, m in nuc.sites.items():
            n_modes = M
            for b in traced:
                m = partial_trace_dense(m, b, n_modes)
                n_modes -= 1
            sites[x] = m
    return replace(nuc, sites=sites, retired=nuc.cursor)


# separable engine ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SeparableNucleus:
    """One 1-D nucleus per lattice axis; the joint nucleus is their tensor product."""

    factors: tuple[Nucleus, ...]

    def __post_init__(self):
        if not self.factors:
            raise ValueError("need at least one factor")
        if any(f.d != 1 for f in self.factors):
            raise DimensionMismatchError("separable factors must be 1-D nuclei")
        if len({(f.K, f.cursor, f.retired, f.storage) for f in self.factors}) != 1:
            raise DimensionMismatchError("factors must share K, cursor, retirement and storage")

    @property
    def d(self) -> int:
        return len(self.factors)

    @property
    def cursor(self) -> int:
        return self.factors[0].cursor

    def distribution(self) -> Distribution:
        return product_distribution(f.distribution() for f in self.factors)

    def total_trace(self) -> float:
        return math.prod(f.total_trace() for f in self.factors)

    def densify(self, iso: PermutedIsomorphism | None = None) -> Nucleus:
        """Joint nucleus ``omega(x) = K (tensor_j rho_j(x_j)) K^-1``."""
        first = self.factors[0]
        storage = first.storage
        sites = {(): np.ones((1, 1), dtype=complex)}
        for f in self.factors:
            sites = {s + x: np.kron(a, b) for s, a in sites.items() for x, b in f.sites.items()}
        if iso is not None:
            if first.retired:
                raise EngineSpecMismatchError("cannot apply an isomorphism to a retired state")
            if storage == "factor":
                sites = {x: iso.apply_vectors(v) for x, v in sites.items()}
            else:
                sites = {x: iso.conjugate(InternalOperator.from_dense(v)).to_dense() for x, v in sites.items()}
        return Nucleus(self.d, first.K, sites, cursor=first.cursor, retired=first.retired,
                       storage=storage, iso=iso, engine="separable")


def separable_from_spec(spec: Separable, K: int, storage: str = "factor") -> SeparableNucleus:
    if not isinstance(spec, Separable):
        raise EngineSpecMismatchError("the separable engine needs a sep:[...] initial state")
    return SeparableNucleus(tuple(nucleus_from_spec(f, K, storage, engine="separable") for f in spec.factors))


def step_separable(s: SeparableNucleus, n: int) -> SeparableNucleus:
    return SeparableNucleus(tuple(step_1d(f, n) for f in s.factors))


# weights engine ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProductNucleus:
    """Retired nucleus of a product initial state.

    Every site operator is ``weight(x) * tensor of tail mode states`` where
    the tail holds the untouched modes ``cursor .. K-1`` of each axis.
    """

    d: int
    K: int
    cursor: int
    weights: Mapping[Site, float]
    tail: tuple[tuple[np.ndarray, ...], ...]

    @property
    def retired(self) -> int:
        return self.cursor

    @property
    def n_modes(self) -> int:
        return self.d * (self.K - self.cursor)

    def distribution(self) -> Distribution:
        return Distribution(self.weights, self.d)

    def total_trace(self) -> float:
        return math.fsum(self.weights.values())

    def operator(self, x) -> InternalOperator:
        Kl = self.K - self.cursor
        blocks = {joint_mode(j, k, Kl, self.d): self.tail[j][k] for j in range(self.d) for k in range(Kl)}
        return InternalOperator(self.n_modes, blocks=blocks, scale=self.weights.get(tuple(x), 0.0))


def _branch_probabilities(states, n: int, d: int) -> dict[tuple[int, ...], float]:
    per_axis = []
    for j in range(d):
        m = states[j][n]
        per_axis.append({-1: float(np.trace(L_BLOCK @ m @ L_BLOCK).real),
                         1: float(np.trace(R_BLOCK @ m @ R_BLOCK).real)})
    return {eps: math.prod(per_axis[j][e] for j, e in enumerate(eps)) for eps in displacements(d)}


def weights_evolve(spec: InitialSpec, steps: int, K: int) -> ProductNucleus:
    """Classical walk on branch weights; needs a product state at one site."""
    d = spec.d
    decomposed = product_mode_states(spec, K, d)
    if decomposed is None:
        raise EngineSpecMismatchError("the weights engine needs a per-mode product initial state")
    sites, states = decomposed
    if len(sites) != 1:
        raise EngineSpecMismatchError("the weights engine needs a single-site start")
    (x0, w0), = sites.items()
    arr = np.full((1,) * d, w0, dtype=float)
    for n in range(steps):
        probs = _branch_probabilities(states, n, d)
        new = np.zeros(tuple(s + 2 for s in arr.shape))
        for eps, p in probs.items():
            if p == 0.0:
                continue
            idx = tuple(slice(1 + e, 1 + e + s) for e, s in zip(eps, arr.shape))
            new[idx] += p * arr
        arr = new
    origin = np.array(x0) - steps
    weights = {tuple(int(v) for v in origin + np.array(i)): float(arr[i]) for i in zip(*np.nonzero(arr))}
    tail = tuple(tuple(states[j][k] for k in range(steps, K)) for j in range(d))
    return ProductNucleus(d, K, steps, weights, tail)


# orchestration -------------------------------------------------------------------

@dataclass(frozen=True)
class EvolveResult:
    nucleus: object
    distribution: Distribution
    engine: str
    K: int
    history: tuple = field(default=(), repr=False)


def evolve(init: InitialSpec, steps: int, engine: str = "dense", K: int | None = None,
           iso: PermutedIsomorphism | None = None, storage: str = "factor",
           keep_history: bool = False) -> EvolveResult:
    """Run ``steps`` steps from ``init`` and return the final nucleus and law.

    ``keep_history`` stores every intermediate state (index = step count).
    """
    if engine not in ENGINES:
        raise EngineSpecMismatchError(f"unknown engine {engine!r}; choose from {ENGINES}")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    K = required_budget(init, steps) if K is None else int(K)
    check_budget(init, steps, K)
    if iso is not None and engine != "dense":
        raise EngineSpecMismatchError("a permuted isomorphism is only supported by the dense engine")

    history = []
    if engine == "weights":
        nuc = weights_evolve(init, steps, K)
        return EvolveResult(nuc, nuc.distribution(), engine, K)
    if engine == "separable":
        state = separable_from_spec(init, K, storage)
        history.append(state)
        for n in range(steps):
            state = step_separable(state, n)
            if keep_history:
                history.append(state)
        return EvolveResult(state, state.distribution(), engine, K, tuple(history) if keep_history else ())

    state = nucleus_from_spec(init, K, storage, iso, engine)
    if storage == "matrix":
        state.validate()
    history.append(state)
    for n in range(steps):
        state = step_d(state, n)
        if engine == "retire":
            state = mode_retire(state)
        if keep_history:
            history.append(state)
    return EvolveResult(state, state.distribution(), engine, K, tuple(history) if keep_history else ())


def applicable_engines(init: InitialSpec, K: int) -> list[str]:
    engines = ["dense", "retire"]
    decomposed = product_mode_states(init, K, init.d)
    if decomposed is not None and len(decomposed[0]) == 1:
        engines.append("weights")
    if isinstance(init, Separable):
        engines.append("separable")
    return engines


def support_bound_ok(dist: Distribution, x0: Site, n: int) -> bool:
    """Support inside ``x0 + {-n..n}^d`` with every coordinate offset of parity n."""
    for x in dist:
        for a, b in zip(x, x0):
            off = a - b
            if abs(off) > n or (off - n) % 2:
                return False
    return True


# snapshots ---------------------------------------------------------------------

def _site_records(nuc) -> list[tuple[Site, InternalOperator]]:
    if isinstance(nuc, SeparableNucleus):
        nuc = nuc.densify()
    if isinstance(nuc, ProductNucleus):
        return [(x, nuc.operator(x)) for x in sorted(nuc.weights)]
    return [(x, nuc.internal_operator(x)) for x in nuc.sites]


def write_nucleus_snapshot(nuc, out: TextIO, engine: str | None = None):
    """Header lines, then per site ``site,<coords>,<nnz>`` and ``row,col,re,im`` triplets."""
    if isinstance(nuc, SeparableNucleus):
        header_src = nuc.densify()
    else:
        header_src = nuc
    engine = engine or getattr(header_src, "engine", "weights")
    out.write("# qbnwalk nucleus snapshot\n")
    out.write(f"# d={header_src.d}\n# K={header_src.K}\n# mode_cursor={header_src.cursor}\n")
    out.write(f"# retired_modes={header_src.retired}\n# engine={engine}\n")
    for x, op in _site_records(nuc):
        trips = op.triplets()
        out.write("site," + ",".join(map(str, x)) + f",{len(trips)}\n")
        for r, c, v in trips:
            out.write(f"{r},{c},{fmt(v.real)},{fmt(v.imag)}\n")


def read_nucleus_snapshot(src: TextIO) -> Nucleus:
    header = {}
    sites = {}
    lines = iter(src.read().splitlines())
    for line in lines:
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                header[k] = v
            continue
        if not line.startswith("site,"):
            raise ValueError(f"unexpected snapshot line {line!r}")
        d = int(header["d"])
        parts = line.split(",")[1:]
        x = tuple(int(v) for v in parts[:d])
        nnz = int(parts[d])
        K, retired = int(header["K"]), int(header["retired_modes"])
        dim = 1 << (d * (K - retired))
        m = np.zeros((dim, dim), dtype=complex)
        for _ in range(nnz):
            r, c, re_, im = next(lines).split(",")
            m[int(r), int(c)] = complex(float(re_), float(im))
        sites[x] = m
    return Nucleus(int(header["d"]), int(header["K"]), sites, cursor=int(header["mode_cursor"]),
                   retired=int(header["retired_modes"]), storage="matrix", engine=header.get("engine", "dense"))


def random_nucleus(d: int, K: int, rng, n_sites: int = 3, rank: int = 2, radius: int = 2,
                   storage: str = "matrix") -> Nucleus:
    """Random mixed nucleus: positive site operators of the given rank near the origin."""
    rng = np.random.default_rng(rng)
    dim = 1 << (d * K)
    pool = [tuple(int(v) for v in rng.integers(-radius, radius + 1, size=d)) for _ in range(4 * n_sites)]
    chosen = sorted(set(pool))[:n_sites]
    ops = {}
    for x in chosen:
        g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
        ops[x] = g @ g.conj().T
    total = sum(np.trace(m).real for m in ops.values())
    ops = {x: m / total for x, m in ops.items()}
    return nucleus_from_operators(ops, K, storage=storage)
