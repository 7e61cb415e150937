import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qbnwalk.errors import DimensionMismatchError
from qbnwalk.stats import (
    Distribution,
    binomial_charfn,
    binomial_exact,
    binomial_reference,
    char_function,
    default_grid,
    fmt,
    gauss_error_series,
    gauss_sup_error,
    is_strictly_decreasing,
    moments,
    moments_csv,
    product_distribution,
    total_variation,
)

from oracles import binomial_fractions


class TestDistribution:
    def test_binomial_small(self):
        assert dict(binomial_reference(2).items()) == {(-2,): 0.25, (0,): 0.5, (2,): 0.25}
        assert binomial_reference(0)[(0,)] == 1.0

    @pytest.mark.parametrize("n", [1, 5, 13, 40])
    def test_binomial_matches_fractions(self, n):
        exact = binomial_fractions(n)
        assert binomial_exact(n) == exact
        ref = binomial_reference(n)
        assert all(ref[(x,)] == float(p) for x, p in exact.items())

    def test_mixed_rank_rejected(self):
        with pytest.raises(DimensionMismatchError):
            Distribution({(0,): 0.5, (0, 1): 0.5})

    def test_marginal_of_product(self):
        joint = product_distribution([binomial_reference(2), binomial_reference(3)])
        assert joint.d == 2 and len(joint) == 12
        assert joint.marginal(1).max_abs_gap(binomial_reference(3)) < 1e-15

    def test_csv_roundtrip(self):
        dist = product_distribution([binomial_reference(3), Distribution.delta((4,))])
        text = dist.to_csv()
        assert text.splitlines()[0] == "x1,x2,p"
        assert Distribution.from_csv(text).max_abs_gap(dist) == 0.0

    def test_fmt(self):
        assert fmt(0.1) == "0.10000000000000001"
        assert float(fmt(1 / 3)) == 1 / 3


class TestCharFunction:
    @pytest.mark.parametrize("n", [1, 7, 30])
    def test_binomial_is_cosine_power(self, n):
        table = char_function(binomial_reference(n), n)
        assert np.max(np.abs(table.values - binomial_charfn(table.t, n))) < 1e-13

    def test_origin_and_conjugate_symmetry(self):
        dist = Distribution({(0,): 0.2, (1,): 0.5, (3,): 0.3})
        t = np.array([[0.0], [0.7], [-0.7]])
        v = char_function(dist, 4, t).values
        assert v[0] == pytest.approx(1.0)
        assert v[2] == pytest.approx(np.conj(v[1]))

    def test_product_factorizes(self):
        a, b = binomial_reference(4), Distribution({(-1,): 0.3, (2,): 0.7})
        grid = default_grid(2, t_max=1.0, t_step=0.5)
        joint = char_function(product_distribution([a, b]), 4, grid).values
        sep = char_function(a, 4, grid[:, :1]).values * char_function(b, 4, grid[:, 1:]).values
        assert np.max(np.abs(joint - sep)) < 1e-14

    def test_chunking_is_invisible(self):
        dist = binomial_reference(20)
        assert np.array_equal(char_function(dist, 20, chunk=7).values, char_function(dist, 20, chunk=7).values)
        assert np.max(np.abs(char_function(dist, 20, chunk=7).values
                             - char_function(dist, 20).values)) < 1e-15

    def test_grid(self):
        g = default_grid()
        assert g.shape == (61, 1) and g[0, 0] == -3.0 and g[30, 0] == 0.0
        assert default_grid(2).shape == (61 * 61, 2)

    def test_rank_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            char_function(binomial_reference(2), 2, default_grid(2))

    def test_gauss_error_shrinks(self):
        errs = gauss_error_series({n: binomial_reference(n) for n in (16, 64, 256)})
        assert is_strictly_decreasing(list(errs.values()))
        assert errs[256] < 1e-3

    def test_delta_error(self):
        err = gauss_sup_error(char_function(Distribution.delta((0,)), 1))
        assert err == pytest.approx(1 - math.exp(-4.5))

    def test_csv_header(self):
        text = char_function(binomial_reference(2), 2, [[0.0]]).to_csv()
        assert text.splitlines() == ["t1,re,im,gauss_ref,abs_err", "0,1,0,1,0"]


class TestMoments:
    def test_binomial(self):
        m = moments(binomial_reference(10))
        assert m["mean_x1"] == 0.0 and m["var_x1"] == pytest.approx(10.0)
        assert m["m4_x1"] == pytest.approx(3 * 100 - 2 * 10)

    def test_delta(self):
        m = moments(Distribution.delta((3, -2)), order=2)
        assert m["m1_x1"] == 3 and m["m2_x2"] == 4
        assert m["var_x1"] == 0 and m["cov_x1_x2"] == 0

    def test_independent_axes_uncorrelated(self):
        m = moments(product_distribution([binomial_reference(5), binomial_reference(3)]))
        assert abs(m["cov_x1_x2"]) < 1e-14

    def test_order_bounds(self):
        with pytest.raises(ValueError):
            moments(binomial_reference(1), order=5)

    def test_csv(self):
        text = moments_csv(moments(Distribution.delta((1,)), order=1))
        assert text == "key,value\nm1_x1,1\nmean_x1,1\n"


class TestTotalVariation:
    def test_examples(self):
        a = Distribution({(0,): 1.0})
        b = Distribution({(1,): 1.0})
        assert total_variation(a, b) == 1.0
        assert total_variation(a, a) == 0.0
        assert total_variation(binomial_reference(1), Distribution({(1,): 1.0})) == 0.5

    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6),
           st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6))
    def test_metric_bounds(self, p, q):
        a = Distribution({(i,): v / sum(p) for i, v in enumerate(p)})
        b = Distribution({(i,): v / sum(q) for i, v in enumerate(q)})
        tv = total_variation(a, b)
        assert 0 <= tv <= 1 + 1e-12
        assert tv == pytest.approx(total_variation(b, a))

    def test_rank_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            total_variation(Distribution.delta((0,)), Distribution.delta((0, 0)))
