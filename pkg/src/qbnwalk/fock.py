"""Truncated operator algebra of quantum Bernoulli noises.

The internal space keeps ``K`` modes; mode ``k`` is one two-dimensional
tensor factor and the basis vector ``Z_sigma`` is indexed by the bitmask of
``sigma`` (bit ``k`` set iff ``k`` is in ``sigma``). Masks are ordered as
unsigned integers, so ``Z_empty`` is basis vector 0.

Dense layout convention: a basis index ``i`` has bit ``k`` for mode ``k``.
Reshaping a length ``2**n`` axis to ``(2,) * n`` therefore puts mode ``k``
on axis ``n - 1 - k``, and ``tensor(A, B)`` equals ``np.kron(A, B)`` with
the modes of ``B`` below those of ``A``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, ModeBudgetError

# mode-k 2x2 blocks in the order (k not in sigma, k in sigma)
_ANNIHILATE = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
_CREATE = _ANNIHILATE.T.copy()
_EYE2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class ModeBudget:
    """Number of retained modes; the internal dimension is ``2**K``."""

    K: int

    def __post_init__(self):
        if isinstance(self.K, bool) or not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ModeBudgetError(f"mode budget must be a positive integer, got {self.K!r}")

    @property
    def dim(self) -> int:
        return 1 << int(self.K)

    def check(self, k: int) -> int:
        if k < 0 or k >= self.K:
            raise ModeBudgetError(f"mode {k} outside budget K={self.K}")
        return int(k)


def _budget(K) -> ModeBudget:
    return K if isinstance(K, ModeBudget) else ModeBudget(int(K))


@dataclass(frozen=True)
class SubsetMask:
    """Finite subset of modes stored as a bitmask."""

    bits: int

    def __post_init__(self):
        if self.bits < 0:
            raise ValueError("mask bits must be non-negative")

    @classmethod
    def from_modes(cls, modes: Iterable[int]) -> "SubsetMask":
        bits = 0
        for k in modes:
            if k < 0:
                raise ValueError(f"negative mode {k}")
            bits |= 1 << int(k)
        return cls(bits)

    def modes(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.bits.bit_length()) if self.bits >> k & 1)

    def highest_mode(self) -> int:
        """Largest mode in the set, -1 for the empty set."""
        return self.bits.bit_length() - 1

    def index(self, K) -> int:
        budget = _budget(K)
        if self.bits >= budget.dim:
            raise ModeBudgetError(f"mask {self.bits:#b} needs more than K={budget.K} modes")
        return self.bits

    @classmethod
    def from_index(cls, index: int, K) -> "SubsetMask":
        budget = _budget(K)
        if not 0 <= index < budget.dim:
            raise ModeBudgetError(f"basis index {index} outside dimension {budget.dim}")
        return cls(int(index))

    def __contains__(self, k: int) -> bool:
        return k >= 0 and bool(self.bits >> k & 1)


def check_displacement(eps: Sequence[int], d: int | None = None) -> tuple[int, ...]:
    eps = tuple(int(e) for e in eps)
    if any(e not in (-1, 1) for e in eps):
        raise ValueError(f"displacement entries must be -1 or +1, got {eps}")
    if d is not None and len(eps) != d:
        raise DimensionMismatchError(f"displacement {eps} has length {len(eps)}, expected {d}")
    return eps


def displacements(d: int) -> list[tuple[int, ...]]:
    """All of {-1, +1}^d in the fixed enumeration order used for summation."""
    return list(itertools.product((-1, 1), repeat=d))


def joint_mode(axis: int, k: int, K: int, d: int) -> int:
    """Mode of the joint space holding mode ``k`` of lattice axis ``axis``.

    The canonical relabeling places axis 0 as the leftmost (most significant)
    tensor factor, so ``coin((+1, -1))`` is ``tensor(R, L)``.
    """
    if not 0 <= axis < d:
        raise DimensionMismatchError(f"axis {axis} outside dimension {d}")
    return (d - 1 - axis) * K + k


def remove_bit(i, k: int):
    """Delete bit ``k`` from integer(s) ``i``, shifting higher bits down."""
    low = i & ((1 << k) - 1)
    return ((i >> (k + 1)) << k) | low


def _dense_apply_block(t: np.ndarray, block: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(block, t, axes=([1], [axis])), 0, axis)


def apply_mode_blocks(vectors: np.ndarray, blocks: Mapping[int, np.ndarray], n_modes: int) -> np.ndarray:
    """Apply ``tensor_k blocks[k]`` (identity elsewhere) to the columns of ``vectors``."""
    vectors = np.asarray(vectors)
    if not blocks:
        return vectors.copy()
    shape = vectors.shape
    t = vectors.reshape((2,) * n_modes + shape[1:])
    for k, block in blocks.items():
        t = _dense_apply_block(t, block, n_modes - 1 - k)
    return np.ascontiguousarray(t).reshape(shape)


def partial_trace_dense(a: np.ndarray, k: int, n_modes: int) -> np.ndarray:
    """Trace mode ``k`` out of a dense ``2**n_modes`` square matrix."""
    axis = n_modes - 1 - k
    t = np.asarray(a).reshape((2,) * (2 * n_modes))
    out = np.trace(t, axis1=axis, axis2=n_modes + axis)
    m = 1 << (n_modes - 1)
    return out.reshape(m, m)


class InternalOperator:
    """Linear operator on the ``2**n_modes`` dimensional truncated space.

    Exactly one of three representations backs an instance: a dense matrix,
    a scipy sparse matrix (triplet list), or a factored product
    ``scale * tensor_k blocks[k]`` with identity on modes without a block.
    Instances are immutable.
    """

    __slots__ = ("n_modes", "_dense", "_sparse", "_blocks", "_scale")

    def __init__(self, n_modes: int, *, dense=None, sparse=None, blocks=None, scale=1.0):
        if n_modes < 0:
            raise ValueError("n_modes must be non-negative")
        self.n_modes = int(n_modes)
        given = sum(x is not None for x in (dense, sparse, blocks))
        if given > 1:
            raise ValueError("give exactly one representation")
        dim = 1 << self.n_modes
        self._dense = self._sparse = self._blocks = None
        self._scale = complex(scale)
        if dense is not None:
            arr = np.array(dense, dtype=complex)
            if arr.shape != (dim, dim):
                raise DimensionMismatchError(f"dense shape {arr.shape} does not match dim {dim}")
            arr.flags.writeable = False
            self._dense = arr
        elif sparse is not None:
            mat = sp.csr_matrix(sparse, dtype=complex)
            if mat.shape != (dim, dim):
                raise DimensionMismatchError(f"sparse shape {mat.shape} does not match dim {dim}")
            mat.sum_duplicates()
            self._sparse = mat
        else:
            clean = {}
            for k, b in dict(blocks or {}).items():
                if not 0 <= k < self.n_modes:
                    raise ModeBudgetError(f"block on mode {k} outside {self.n_modes} modes")
                b = np.array(b, dtype=complex)
                if b.shape != (2, 2):
                    raise DimensionMismatchError("per-mode blocks must be 2x2")
                b.flags.writeable = False
                clean[int(k)] = b
            self._blocks = dict(sorted(clean.items()))

    # construction ----------------------------------------------------------

    @classmethod
    def identity(cls, n_modes: int) -> "InternalOperator":
        return cls(n_modes, blocks={})

    @classmethod
    def zeros(cls, n_modes: int) -> "InternalOperator":
        return cls(n_modes, sparse=sp.csr_matrix((1 << n_modes, 1 << n_modes), dtype=complex))

    @classmethod
    def from_dense(cls, matrix) -> "InternalOperator":
        matrix = np.asarray(matrix)
        n = int(matrix.shape[0]).bit_length() - 1
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or (1 << n) != matrix.shape[0]:
            raise DimensionMismatchError(f"matrix of shape {matrix.shape} is not 2**n square")
        return cls(n, dense=matrix)

    @classmethod
    def from_triplets(cls, n_modes: int, rows, cols, values) -> "InternalOperator":
        dim = 1 << n_modes
        mat = sp.coo_matrix((np.asarray(values, dtype=complex), (np.asarray(rows), np.asarray(cols))),
                            shape=(dim, dim))
        return cls(n_modes, sparse=mat)

    @classmethod
    def factored(cls, n_modes: int, blocks: Mapping[int, np.ndarray], scale=1.0) -> "InternalOperator":
        return cls(n_modes, blocks=blocks, scale=scale)

    # inspection ------------------------------------------------------------

    @property
    def kind(self) -> str:
        if self._dense is not None:
            return "dense"
        if self._sparse is not None:
            return "sparse"
        return "factored"

    @property
    def dim(self) -> int:
        return 1 << self.n_modes

    @property
    def blocks(self) -> dict[int, np.ndarray]:
        if self._blocks is None:
            raise TypeError("operator is not factored")
        return dict(self._blocks)

    @property
    def scale(self) -> complex:
        return self._scale

    def block(self, k: int) -> np.ndarray:
        """The 2x2 factor on mode ``k`` (identity when absent)."""
        return self.blocks.get(k, _EYE2)

    def to_dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense.copy()
        if self._sparse is not None:
            return self._sparse.toarray()
        out = np.array([[self._scale]], dtype=complex)
        for k in range(self.n_modes - 1, -1, -1):
            out = np.kron(out, self._blocks.get(k, _EYE2))
        return out

    def to_sparse(self) -> sp.csr_matrix:
        if self._sparse is not None:
            return self._sparse.copy()
        if self._dense is not None:
            return sp.csr_matrix(self._dense)
        out = sp.csr_matrix(np.array([[self._scale]], dtype=complex))
        for k in range(self.n_modes - 1, -1, -1):
            out = sp.kron(out, sp.csr_matrix(self._blocks.get(k, _EYE2)), format="csr")
        out.eliminate_zeros()
        return out

    def triplets(self) -> list[tuple[int, int, complex]]:
        """Nonzero entries as (row, col, value), sorted by row then column."""
        coo = self.to_sparse().tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[i]), int(coo.col[i]), complex(coo.data[i])) for i in order if coo.data[i] != 0]

    def as_kind(self, kind: str) -> "InternalOperator":
        if kind == self.kind:
            return self
        if kind == "dense":
            return InternalOperator(self.n_modes, dense=self.to_dense())
        if kind == "sparse":
            return InternalOperator(self.n_modes, sparse=self.to_sparse())
        raise ValueError("only dense and sparse conversions are generic")

    def __repr__(self):
        return f"InternalOperator(n_modes={self.n_modes}, kind={self.kind!r})"

    # algebra ---------------------------------------------------------------

    def _check_same(self, other: "InternalOperator"):
        if not isinstance(other, InternalOperator):
            raise TypeError(f"expected InternalOperator, got {type(other).__name__}")
        if other.n_modes != self.n_modes:
            raise DimensionMismatchError(f"{self.n_modes} modes vs {other.n_modes} modes")

    def adjoint(self) -> "InternalOperator":
        if self._dense is not None:
            return InternalOperator(self.n_modes, dense=self._dense.conj().T)
        if self._sparse is not None:
            return InternalOperator(self.n_modes, sparse=self._sparse.conj().T)
        return InternalOperator(self.n_modes, blocks={k: b.conj().T for k, b in self._blocks.items()},
                                scale=self._scale.conjugate())

    def __matmul__(self, other):
        if isinstance(other, np.ndarray):
            return self.apply(other)
        self._check_same(other)
        if self.kind == "factored" and other.kind == "factored":
            modes = sorted(set(self._blocks) | set(other._blocks))
            blocks = {k: self.block(k) @ other.block(k) for k in modes}
            return InternalOperator(self.n_modes, blocks=blocks, scale=self._scale * other._scale)
        if self.kind != "dense" and other.kind != "dense":
            return InternalOperator(self.n_modes, sparse=self.to_sparse() @ other.to_sparse())
        return InternalOperator(self.n_modes, dense=self.to_dense() @ other.to_dense())

    def __add__(self, other):
        self._check_same(other)
        if self.kind == "dense" or other.kind == "dense":
            return InternalOperator(self.n_modes, dense=self.to_dense() + other.to_dense())
        return InternalOperator(self.n_modes, sparse=self.to_sparse() + other.to_sparse())

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        if self._dense is not None:
            return InternalOperator(self.n_modes, dense=self._dense * c)
        if self._sparse is not None:
            return InternalOperator(self.n_modes, sparse=self._sparse * c)
        return InternalOperator(self.n_modes, blocks=self._blocks, scale=self._scale * c)

    __rmul__ = __mul__

    def tensor(self, other: "InternalOperator") -> "InternalOperator":
        """``self (x) other``; the modes of ``other`` become the low modes."""
        if not isinstance(other, InternalOperator):
            raise TypeError("tensor expects an InternalOperator")
        n = self.n_modes + other.n_modes
        if self.kind == "factored" and other.kind == "factored":
            blocks = dict(other._blocks)
            blocks.update({k + other.n_modes: b for k, b in self._blocks.items()})
            return InternalOperator(n, blocks=blocks, scale=self._scale * other._scale)
        if self.kind != "dense" and other.kind != "dense":
            return InternalOperator(n, sparse=sp.kron(self.to_sparse(), other.to_sparse(), format="csr"))
        return InternalOperator(n, dense=np.kron(self.to_dense(), other.to_dense()))

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        """Act on a vector or on the columns of a ``dim x r`` array."""
        vectors = np.asarray(vectors, dtype=complex)
        if vectors.shape[0] != self.dim:
            raise DimensionMismatchError(f"vector length {vectors.shape[0]} vs dim {self.dim}")
        if self._dense is not None:
            return self._dense @ vectors
        if self._sparse is not None:
            return np.asarray(self._sparse @ vectors)
        return self._scale * apply_mode_blocks(vectors, self._blocks, self.n_modes)

    def trace(self) -> complex:
        if self._dense is not None:
            return complex(np.trace(self._dense))
        if self._sparse is not None:
            return complex(self._sparse.diagonal().sum())
        out = self._scale
        for k in range(self.n_modes):
            out *= np.trace(self._blocks[k]) if k in self._blocks else 2.0
        return complex(out)

    def trace_norm(self) -> float:
        m = self.to_dense()
        if np.allclose(m, m.conj().T, rtol=0, atol=1e-13):
            return float(np.abs(np.linalg.eigvalsh((m + m.conj().T) / 2)).sum())
        return float(np.linalg.svd(m, compute_uv=False).sum())

    def frobenius_distance(self, other: "InternalOperator") -> float:
        self._check_same(other)
        return float(np.linalg.norm(self.to_dense() - other.to_dense()))

    def max_abs_diff(self, other) -> float:
        if isinstance(other, InternalOperator):
            self._check_same(other)
            other = other.to_dense()
        return float(np.max(np.abs(self.to_dense() - np.asarray(other)), initial=0.0))

    def is_hermitian(self, tol: float = 1e-14) -> bool:
        return self.max_abs_diff(self.adjoint()) <= tol

    def partial_trace(self, k: int) -> "InternalOperator":
        """Trace out mode ``k``; higher modes shift down by one."""
        if not 0 <= k < self.n_modes:
            raise ModeBudgetError(f"mode {k} outside {self.n_modes} modes")
        n = self.n_modes - 1
        if self._blocks is not None:
            scale = self._scale * (np.trace(self._blocks[k]) if k in self._blocks else 2.0)
            blocks = {}
            for m, b in self._blocks.items():
                if m != k:
                    blocks[m - 1 if m > k else m] = b
            return InternalOperator(n, blocks=blocks, scale=scale)
        if self._dense is not None:
            return InternalOperator(n, dense=partial_trace_dense(self._dense, k, self.n_modes))
        coo = self._sparse.tocoo()
        keep = ((coo.row >> k) & 1) == ((coo.col >> k) & 1)
        rows = remove_bit(coo.row[keep], k)
        cols = remove_bit(coo.col[keep], k)
        return InternalOperator.from_triplets(n, rows, cols, coo.data[keep])

    # debug dump --------------------------------------------------------------

    def to_csv(self) -> str:
        """Dense dump in the ``row,col,re,im`` layout (every entry, row-major)."""
        m = self.to_dense()
        lines = ["row,col,re,im"]
        for i in range(self.dim):
            for j in range(self.dim):
                v = m[i, j]
                lines.append(f"{i},{j},{float(v.real):.17g},{float(v.imag):.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "InternalOperator":
        rows, cols, vals = [], [], []
        for line in text.strip().splitlines()[1:]:
            r, c, re_, im = line.split(",")
            rows.append(int(r))
            cols.append(int(c))
            vals.append(complex(float(re_), float(im)))
        size = max(max(rows), max(cols)) + 1
        n = size.bit_length() - 1
        m = np.zeros((1 << n, 1 << n), dtype=complex)
        m[rows, cols] = vals
        return cls(n, dense=m)


# QBN operators --------------------------------------------------------------

def _single_mode(block: np.ndarray, k: int, K, representation: str) -> InternalOperator:
    budget = _budget(K)
    budget.check(k)
    op = InternalOperator(budget.K, blocks={k: block})
    if representation == "factored":
        return op
    return op.as_kind(representation)


def build_annihilation(k: int, K, representation: str = "factored") -> InternalOperator:
    """``d_k Z_sigma = Z_{sigma minus k}`` if ``k`` in ``sigma`` else 0.

    ``representation="sparse"`` builds the triplet list straight from the
    action on basis masks rather than from the 2x2 block.
    """
    budget = _budget(K)
    budget.check(k)
    if representation == "sparse":
        cols = [m for m in range(budget.dim) if m >> k & 1]
        rows = [m & ~(1 << k) for m in cols]
        return InternalOperator.from_triplets(budget.K, rows, cols, np.ones(len(cols)))
    return _single_mode(_ANNIHILATE, k, budget, representation)


def build_creation(k: int, K, representation: str = "factored") -> InternalOperator:
    """``d_k^* Z_sigma = Z_{sigma plus k}`` if ``k`` not in ``sigma`` else 0."""
    budget = _budget(K)
    budget.check(k)
    if representation == "sparse":
        cols = [m for m in range(budget.dim) if not m >> k & 1]
        rows = [m | (1 << k) for m in cols]
        return InternalOperator.from_triplets(budget.K, rows, cols, np.ones(len(cols)))
    return _single_mode(_CREATE, k, budget, representation)


# L = (a* + a - I)/2, R = (a* + a + I)/2 restricted to one mode
L_BLOCK = 0.5 * (_CREATE + _ANNIHILATE - _EYE2)
R_BLOCK = 0.5 * (_CREATE + _ANNIHILATE + _EYE2)
L_BLOCK.flags.writeable = False
R_BLOCK.flags.writeable = False


def coin_block(e: int) -> np.ndarray:
    """The single-axis factor: L for a step of -1, R for +1."""
    if e == -1:
        return L_BLOCK
    if e == 1:
        return R_BLOCK
    raise ValueError(f"displacement entry must be -1 or +1, got {e}")


def build_LR(k: int, K) -> tuple[InternalOperator, InternalOperator]:
    budget = _budget(K)
    budget.check(k)
    return (InternalOperator(budget.K, blocks={k: L_BLOCK}),
            InternalOperator(budget.K, blocks={k: R_BLOCK}))


class PermutedIsomorphism:
    """A basis permutation used as the joint-space isomorphism.

    ``P e_i = e_{perm[i]}``; operators transform as ``P A P^T``. Every
    trace and norm is unchanged, which is what the invariance tests use.
    """

    def __init__(self, perm):
        perm = np.asarray(perm, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("perm must be a permutation of range(n)")
        n = perm.size.bit_length() - 1
        if (1 << n) != perm.size:
            raise DimensionMismatchError("permutation length must be a power of 2")
        self.perm = perm
        self.perm.flags.writeable = False
        self.n_modes = n

    @classmethod
    def random(cls, n_modes: int, rng=None) -> "PermutedIsomorphism":
        rng = np.random.default_rng(rng)
        return cls(rng.permutation(1 << n_modes))

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.asarray(vectors)
        out = np.empty_like(vectors)
        out[self.perm] = vectors
        return out

    def conjugate(self, op: InternalOperator) -> InternalOperator:
        if op.n_modes != self.n_modes:
            raise DimensionMismatchError(f"isomorphism on {self.n_modes} modes, operator on {op.n_modes}")
        m = op.to_dense()
        out = np.empty_like(m)
        out[np.ix_(self.perm, self.perm)] = m
        return InternalOperator(op.n_modes, dense=out)

    def __eq__(self, other):
        return isinstance(other, PermutedIsomorphism) and np.array_equal(self.perm, other.perm)

    def __hash__(self):
        return hash(self.perm.tobytes())


def coin_blocks(eps: Sequence[int], n: int, K: int, d: int) -> dict[int, np.ndarray]:
    """Per-mode blocks of the canonical coin on the ``d*K`` mode joint space."""
    eps = check_displacement(eps, d)
    _budget(K).check(n)
    return {joint_mode(j, n, K, d): coin_block(e) for j, e in enumerate(eps)}


def build_coin(eps: Sequence[int], n: int, K, d: int, iso: PermutedIsomorphism | None = None) -> InternalOperator:
    """Tensor product of L/R factors selected by ``eps``, acting on mode ``n`` of each axis."""
    budget = _budget(K)
    eps = check_displacement(eps, d)
    op = InternalOperator(d * budget.K, blocks=coin_blocks(eps, n, budget.K, d))
    if iso is not None:
        return iso.conjugate(op)
    return op


# generic operator utilities --------------------------------------------------

def adjoint(a: InternalOperator) -> InternalOperator:
    return a.adjoint()


def multiply(*ops: InternalOperator) -> InternalOperator:
    out = ops[0]
    for op in ops[1:]:
        out = out @ op
    return out


def add(a: InternalOperator, b: InternalOperator) -> InternalOperator:
    return a + b


def tensor(*ops: InternalOperator) -> InternalOperator:
    out = ops[0]
    for op in ops[1:]:
        out = out.tensor(op)
    return out


def trace(a: InternalOperator) -> complex:
    return a.trace()


def trace_norm(a: InternalOperator) -> float:
    return a.trace_norm()


def frobenius_distance(a: InternalOperator, b: InternalOperator) -> float:
    return a.frobenius_distance(b)


def partial_trace_mode(a: InternalOperator, k: int) -> InternalOperator:
    return a.partial_trace(k)


def basis_projector(mask: SubsetMask | int, K) -> InternalOperator:
    """``|Z_sigma><Z_sigma|`` as a factored operator."""
    budget = _budget(K)
    bits = mask.bits if isinstance(mask, SubsetMask) else int(mask)
    SubsetMask(bits).index(budget)
    blocks = {}
    for k in range(budget.K):
        b = np.zeros((2, 2), dtype=complex)
        b[bits >> k & 1, bits >> k & 1] = 1.0
        blocks[k] = b
    return InternalOperator(budget.K, blocks=blocks)
