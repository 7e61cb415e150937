import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qbnwalk.errors import DimensionMismatchError, ModeBudgetError
from qbnwalk.fock import (
    L_BLOCK,
    R_BLOCK,
    InternalOperator,
    ModeBudget,
    PermutedIsomorphism,
    SubsetMask,
    adjoint,
    basis_projector,
    build_LR,
    build_annihilation,
    build_coin,
    build_creation,
    check_displacement,
    displacements,
    frobenius_distance,
    multiply,
    partial_trace_mode,
    tensor,
    trace,
    trace_norm,
)

from oracles import kron_coin, lr_from_definition, mask_annihilation, mask_creation

TOL = 1e-14


def close(a, b, tol=TOL):
    a = a.to_dense() if isinstance(a, InternalOperator) else a
    b = b.to_dense() if isinstance(b, InternalOperator) else b
    return np.max(np.abs(a - b), initial=0.0) <= tol


def basis(sigma, K):
    v = np.zeros(1 << K, dtype=complex)
    v[sigma] = 1.0
    return v


class TestBudgetAndMasks:
    def test_dim(self):
        assert ModeBudget(3).dim == 8

    @pytest.mark.parametrize("K", [0, -1, 1.5, True])
    def test_bad_budget(self, K):
        with pytest.raises(ModeBudgetError):
            ModeBudget(K)

    def test_check(self):
        with pytest.raises(ModeBudgetError):
            ModeBudget(2).check(2)

    @given(st.sets(st.integers(0, 9)))
    def test_mask_roundtrip(self, modes):
        m = SubsetMask.from_modes(modes)
        assert set(m.modes()) == modes
        assert SubsetMask.from_index(m.index(10), 10) == m

    def test_mask_outside_budget(self):
        with pytest.raises(ModeBudgetError):
            SubsetMask.from_modes([2]).index(2)

    def test_highest_mode(self):
        assert SubsetMask(0).highest_mode() == -1
        assert SubsetMask.from_modes([1, 3]).highest_mode() == 3
        assert 3 in SubsetMask.from_modes([1, 3])

    def test_displacements(self):
        assert displacements(2) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
        with pytest.raises(ValueError):
            check_displacement((0, 1))
        with pytest.raises(DimensionMismatchError):
            check_displacement((1,), 2)


class TestQBN:
    def test_annihilation_examples(self):
        a0 = build_annihilation(0, 2)
        assert close(a0.apply(basis(0b01, 2)), basis(0b00, 2))
        assert close(a0.apply(basis(0b00, 2)), np.zeros(4))
        assert close(build_annihilation(1, 2).apply(basis(0b11, 2)), basis(0b01, 2))

    def test_creation_examples(self):
        c0 = build_creation(0, 1)
        assert close(c0.apply(basis(0, 1)), basis(1, 1))
        assert close(c0.apply(basis(1, 1)), np.zeros(2))
        assert close(build_creation(1, 2), build_annihilation(1, 2).to_dense().conj().T, 0.0)

    @pytest.mark.parametrize("K", [1, 2, 4])
    @pytest.mark.parametrize("rep", ["factored", "dense", "sparse"])
    def test_representations_match_mask_oracle(self, K, rep):
        for k in range(K):
            assert close(build_annihilation(k, K, rep), mask_annihilation(k, K))
            assert close(build_creation(k, K, rep), mask_creation(k, K))

    def test_one_nonzero_per_set_column(self):
        a = build_annihilation(1, 3).to_dense()
        for sigma in range(8):
            col = a[:, sigma]
            assert np.count_nonzero(col) == (sigma >> 1 & 1)

    def test_out_of_budget(self):
        with pytest.raises(ModeBudgetError):
            build_annihilation(2, 2)
        with pytest.raises(ModeBudgetError):
            build_LR(3, 3)

    @pytest.mark.parametrize("k", range(4))
    def test_car(self, k):
        K = 4
        a, c = build_annihilation(k, K), build_creation(k, K)
        assert close(a @ a, np.zeros((16, 16)))
        assert close(c @ c, np.zeros((16, 16)))
        assert close(a @ c + c @ a, np.eye(16))

    def test_commutation_examples(self):
        c0, a1 = build_creation(0, 2), build_annihilation(1, 2)
        assert close(c0 @ a1, a1 @ c0)

    @given(st.integers(0, 4), st.integers(0, 4))
    def test_cross_mode_commutation(self, k, l):
        K = 5
        if k == l:
            return
        a, c = build_annihilation, build_creation
        assert close(a(k, K) @ a(l, K), a(l, K) @ a(k, K))
        assert close(c(k, K) @ c(l, K), c(l, K) @ c(k, K))
        assert close(c(k, K) @ a(l, K), a(l, K) @ c(k, K))


class TestLR:
    def test_blocks(self):
        assert np.array_equal(L_BLOCK, [[-0.5, 0.5], [0.5, -0.5]])
        assert np.array_equal(R_BLOCK, [[0.5, 0.5], [0.5, 0.5]])

    def test_factored_on_single_mode(self):
        L, R = build_LR(1, 3)
        assert L.kind == "factored" and set(L.blocks) == {1}
        assert close(L, lr_from_definition(1, 3)[0])
        assert close(R, lr_from_definition(1, 3)[1])

    @pytest.mark.parametrize("k", range(3))
    def test_product_rules(self, k):
        L, R = (op.to_dense() for op in build_LR(k, 3))
        zero = np.zeros((8, 8))
        assert close(L @ L, -L)
        assert close(R @ R, R)
        assert close(L @ R, zero) and close(R @ L, zero)
        assert close(L @ L + R @ R, np.eye(8))
        assert close(L, L.conj().T) and close(R, R.conj().T)

    @given(st.integers(0, 3), st.integers(0, 3))
    def test_commutative_family(self, k, l):
        Lk, Rk = build_LR(k, 4)
        Ll, Rl = build_LR(l, 4)
        assert close(Lk @ Ll, Ll @ Lk)
        assert close(Rk @ Ll, Ll @ Rk)
        assert close(Rk @ Rl, Rl @ Rk)


class TestCoins:
    def test_d1(self):
        assert close(build_coin((-1,), 0, 2, 1), build_LR(0, 2)[0])

    def test_d2_is_R_tensor_L(self):
        L, R = build_LR(0, 1)
        assert close(build_coin((1, -1), 0, 1, 2), np.kron(R.to_dense(), L.to_dense()))

    @pytest.mark.parametrize("d,K", [(1, 1), (1, 3), (2, 1), (2, 2), (3, 1), (3, 2)])
    def test_match_kron_oracle(self, d, K):
        for n in range(K):
            for eps in displacements(d):
                assert close(build_coin(eps, n, K, d), kron_coin(eps, n, K))

    @pytest.mark.parametrize("d,K", [(1, 2), (2, 1), (2, 2), (3, 2)])
    def test_resolution_orthogonality_unitarity(self, d, K):
        dim = 1 << (d * K)
        for n in range(K):
            coins = {e: build_coin(e, n, K, d).to_dense() for e in displacements(d)}
            assert close(sum(c @ c for c in coins.values()), np.eye(dim))
            for e in coins:
                for f in coins:
                    if e != f:
                        assert close(coins[e] @ coins[f], np.zeros((dim, dim)))
            u = sum(coins.values())
            assert close(u @ u.conj().T, np.eye(dim))

    def test_budget_and_dimension_errors(self):
        with pytest.raises(ModeBudgetError):
            build_coin((1,), 2, 2, 1)
        with pytest.raises(DimensionMismatchError):
            build_coin((1, 1), 0, 2, 1)

    def test_permuted_isomorphism(self, rng):
        iso = PermutedIsomorphism.random(4, rng)
        total = sum((build_coin(e, 1, 2, 2, iso) @ build_coin(e, 1, 2, 2, iso)).to_dense() for e in displacements(2))
        assert close(total, np.eye(16))
        c = build_coin((1, -1), 0, 2, 2)
        assert abs(iso.conjugate(c).trace() - c.trace()) <= TOL

    def test_permutation_validation(self):
        with pytest.raises(ValueError):
            PermutedIsomorphism([0, 0, 1, 2])
        with pytest.raises(DimensionMismatchError):
            PermutedIsomorphism([0, 2, 1])


class TestOperatorUtilities:
    def test_trace_identity(self):
        for K in (1, 3, 5):
            assert trace(InternalOperator.identity(K)) == 2 ** K

    def test_adjoint_involution_is_exact(self, rng):
        m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        for op in (InternalOperator.from_dense(m), InternalOperator(3, sparse=m),
                   InternalOperator.factored(3, {1: m[:2, :2]}, scale=2 - 1j)):
            assert close(adjoint(adjoint(op)), op, 0.0)

    def test_disjoint_factored_product_stays_factored(self):
        a, c = build_annihilation(0, 3), build_creation(2, 3)
        prod = multiply(a, c)
        assert prod.kind == "factored"
        assert close(prod, a.to_dense() @ c.to_dense())

    def test_add_and_scalar(self):
        L, R = build_LR(0, 2)
        assert close(R - L, np.eye(4))
        assert close(2 * R, 2 * R.to_dense())

    def test_tensor_puts_right_operand_low(self):
        a = build_annihilation(0, 1)
        eye = InternalOperator.identity(1)
        assert close(tensor(a, eye), build_annihilation(1, 2))
        assert close(tensor(eye, a), build_annihilation(0, 2))
        assert close(tensor(a.as_kind("dense"), eye), build_annihilation(1, 2))

    @given(st.integers(1, 4), st.data())
    def test_factored_matches_dense(self, n, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
        ops = []
        for _ in range(2):
            used = data.draw(st.sets(st.integers(0, n - 1)))
            blocks = {m: rng.uniform(-1, 1, (2, 2)) + 1j * rng.uniform(-1, 1, (2, 2)) for m in used}
            ops.append(InternalOperator.factored(n, blocks))
        f, g = ops
        assert close(f @ g, f.to_dense() @ g.to_dense())
        assert close(f.as_kind("sparse") @ g.as_kind("sparse"), f.to_dense() @ g.to_dense())
        assert close(f + g, f.to_dense() + g.to_dense())

    def test_partial_trace_examples(self, rng):
        x = rng.normal(size=(4, 4)) + 0j
        m = np.array([[0.3, 0.1], [0.1, 0.7]], dtype=complex)
        # X on modes 1..2, m on mode 0
        op = InternalOperator.from_dense(np.kron(x, m))
        assert close(partial_trace_mode(op, 0), x)
        assert close(partial_trace_mode(InternalOperator.identity(2), 1), 2 * np.eye(2))

    @pytest.mark.parametrize("k", range(3))
    def test_partial_trace_against_summation(self, rng, k):
        g = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        a = g @ g.conj().T
        out = partial_trace_mode(InternalOperator.from_dense(a), k).to_dense()
        assert close(out, partial_trace_dense_ref(a, k), 1e-12)
        assert abs(np.trace(out) - np.trace(a)) <= 1e-12
        sparse = InternalOperator(3, sparse=a)
        assert close(sparse.partial_trace(k), partial_trace_dense_ref(a, k), 1e-12)
        factored = InternalOperator.factored(3, {k: a[:2, :2], (k + 1) % 3: a[2:4, 2:4]})
        assert close(factored.partial_trace(k), partial_trace_dense_ref(factored.to_dense(), k), 1e-12)

    def test_partial_trace_mode_error(self):
        with pytest.raises(ModeBudgetError):
            partial_trace_mode(InternalOperator.identity(2), 2)

    def test_norms(self):
        L, R = build_LR(0, 1)
        assert trace_norm(R) == pytest.approx(1.0, abs=TOL)
        assert trace_norm(L) == pytest.approx(1.0, abs=TOL)
        assert frobenius_distance(R, L) == pytest.approx(np.sqrt(2.0), abs=TOL)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            InternalOperator.identity(1) @ InternalOperator.identity(2)
        with pytest.raises(DimensionMismatchError):
            InternalOperator(2, dense=np.eye(3))

    def test_csv_roundtrip(self):
        op = build_annihilation(1, 2)
        text = op.to_csv()
        assert text.splitlines()[0] == "row,col,re,im"
        assert close(InternalOperator.from_csv(text), op, 0.0)

    def test_basis_projector(self):
        p = basis_projector(SubsetMask.from_modes([0, 2]), 3).to_dense()
        assert p[5, 5] == 1 and np.count_nonzero(p) == 1

    def test_triplets_sorted(self):
        trips = build_creation(0, 2).triplets()
        assert trips == sorted(trips, key=lambda t: (t[0], t[1]))
        assert all(v == 1 for _, _, v in trips)


def partial_trace_dense_ref(a, k):
    n = int(a.shape[0]).bit_length() - 1
    out = np.zeros((1 << (n - 1),) * 2, dtype=complex)
    for i in range(a.shape[0]):
        for j in range(a.shape[0]):
            if (i >> k & 1) == (j >> k & 1):
                ri = ((i >> (k + 1)) << k) | (i & ((1 << k) - 1))
                rj = ((j >> (k + 1)) << k) | (j & ((1 << k) - 1))
                out[ri, rj] += a[i, j]
    return out
