import math

import mpmath
import numpy as np
import pytest

from gooms.core import (
    NEG_INF,
    Goom,
    GoomMatrix,
    ZeroPolicy,
    from_real,
    gadd,
    gmul,
    lmme,
    log_unit_norm_columns,
    lse_reduce,
    to_real,
    to_real_scaled,
)
from gooms.util import make_rng

mpmath.mp.dps = 50


class TestScalarMapping:
    def test_from_real_exp3(self):
        g = from_real(20.0855)
        assert abs(g.log_mag - 3.0) < 1e-5
        assert g.sign == 1

    def test_from_real_minus_one(self):
        assert from_real(-1.0) == Goom(0.0, -1)

    def test_from_real_zero_sentinel(self):
        g = from_real(0.0)
        assert g.log_mag == NEG_INF and g.sign == 1

    def test_from_real_zero_finite_floor_binary32(self):
        g = from_real(0.0, ZeroPolicy.finite_floor(32))
        assert abs(g.log_mag - (-174.673)) < 0.01
        assert float(np.exp(np.float32(g.log_mag))) == 0.0

    def test_finite_floor_binary64(self):
        policy = ZeroPolicy.finite_floor(64)
        assert abs(policy.floor_value - (-1416.79)) < 0.01

    def test_from_real_rejects_nan_and_inf(self):
        with pytest.raises(ValueError):
            from_real(float("nan"))
        with pytest.raises(ValueError):
            from_real(float("inf"))

    def test_to_real_exp3(self):
        assert abs(to_real(Goom(3.0, 1)) - 20.0855) < 1e-3

    def test_to_real_zero_and_negative(self):
        assert to_real(Goom(NEG_INF, 1)) == 0.0
        assert to_real(Goom(0.0, -1)) == -1.0

    def test_to_real_overflow_is_signed_infinity(self):
        assert to_real(Goom(800.0, 1)) == math.inf
        assert to_real(Goom(800.0, -1)) == -math.inf

    def test_round_trip(self):
        rng = make_rng(11)
        xs = rng.standard_normal(10_000) * np.exp(rng.uniform(-100, 100, 10_000))
        xs = xs[xs != 0]
        for x in xs[:100]:
            assert abs(to_real(from_real(x)) / x - 1.0) < 1e-12
        # vectorized over the full sample
        m = GoomMatrix.from_real(xs.reshape(1, -1))
        back = m.to_real().ravel()
        assert np.all(np.abs(back / xs - 1.0) < 1e-12)


class TestScalarArithmetic:
    def test_gmul_basic(self):
        assert gmul(Goom(3.0, 1), Goom(2.0, -1)) == Goom(5.0, -1)

    def test_gmul_by_zero(self):
        assert gmul(Goom(7.0, -1), Goom(NEG_INF, 1)) == Goom(NEG_INF, 1)

    def test_gmul_beyond_binary64(self):
        g = gmul(from_real(1e200), from_real(1e200))
        expected = float(2 * mpmath.log(mpmath.mpf("1e200")))
        assert abs(g.log_mag - expected) < 1e-9
        assert g.sign == 1
        # the real image of this value overflows binary64
        assert to_real(g) == math.inf

    def test_gadd_one_plus_one(self):
        g = gadd(Goom(0.0, 1), Goom(0.0, 1))
        assert abs(g.log_mag - math.log(2.0)) < 1e-15
        assert g.sign == 1

    def test_gadd_exact_cancellation(self):
        g = gadd(Goom(0.0, 1), Goom(0.0, -1))
        assert g == Goom(NEG_INF, 1)

    def test_gadd_large_small(self):
        # log(e^100 - 1) = 100 - 3.72e-44, indistinguishable from 100 in binary64
        g = gadd(Goom(100.0, 1), Goom(0.0, -1))
        expected = mpmath.log(mpmath.exp(100) - 1)
        assert abs(float(expected) - 100.0) < 1e-12
        assert abs(g.log_mag - float(expected)) < 1e-12
        assert g.sign == 1

    def test_gadd_commutative_randomized(self):
        rng = make_rng(3)
        logs = rng.uniform(-100, 100, (10_000, 2))
        signs = rng.choice([-1, 1], (10_000, 2))
        for i in range(0, 10_000, 997):
            a = Goom(logs[i, 0], int(signs[i, 0]))
            b = Goom(logs[i, 1], int(signs[i, 1]))
            assert gadd(a, b) == gadd(b, a)

    def test_gadd_associative_within_tolerance(self):
        rng = make_rng(4)
        for _ in range(200):
            gs = [Goom(float(rng.uniform(-100, 100)), int(rng.choice([-1, 1]))) for _ in range(3)]
            left = gadd(gadd(gs[0], gs[1]), gs[2])
            right = gadd(gs[0], gadd(gs[1], gs[2]))
            if left.log_mag == NEG_INF or right.log_mag == NEG_INF:
                continue
            denom = max(1.0, abs(left.log_mag))
            assert abs(left.log_mag - right.log_mag) / denom < 1e-10


class TestLseReduce:
    def test_singleton(self):
        assert lse_reduce([Goom(0.0, 1)]) == Goom(0.0, 1)

    def test_four_ones(self):
        g = lse_reduce([Goom(0.0, 1)] * 4)
        assert abs(g.log_mag - math.log(4.0)) < 1e-15

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            lse_reduce([])

    def test_matches_high_precision_sum(self):
        rng = make_rng(5)
        xs = rng.standard_normal(1000)
        got = lse_reduce([from_real(x) for x in xs])
        total = mpmath.fsum([mpmath.mpf(float(x)) for x in xs])
        want_log = float(mpmath.log(abs(total)))
        want_sign = 1 if total >= 0 else -1
        assert got.sign == want_sign
        assert abs(got.log_mag - want_log) < 1e-12

    def test_matches_gadd_fold(self):
        rng = make_rng(6)
        gs = [Goom(float(rng.uniform(-50, 50)), int(rng.choice([-1, 1]))) for _ in range(64)]
        folded = gs[0]
        for g in gs[1:]:
            folded = gadd(folded, g)
        reduced = lse_reduce(gs)
        denom = max(1.0, abs(folded.log_mag))
        assert abs(folded.log_mag - reduced.log_mag) / denom < 1e-12
        assert folded.sign == reduced.sign


def _oracle_matmul(a, b):
    a = [[mpmath.mpf(float(v)) for v in row] for row in a]
    b = [[mpmath.mpf(float(v)) for v in row] for row in b]
    n, d, m = len(a), len(b), len(b[0])
    return [
        [mpmath.fsum(a[i][j] * b[j][k] for j in range(d)) for k in range(m)]
        for i in range(n)
    ]


class TestLmme:
    def test_identity(self):
        rng = make_rng(7)
        a = GoomMatrix.from_real(rng.standard_normal((2, 2)))
        eye = GoomMatrix.identity(2)
        out = lmme(eye, a)
        # exact up to the exp/log round trip of the scaled interior product
        np.testing.assert_allclose(out.log_mag, a.log_mag, atol=1e-14)
        np.testing.assert_array_equal(out.sign, a.sign)

    def test_two_by_two(self):
        a = GoomMatrix.from_real([[1.0, 2.0], [3.0, 4.0]])
        b = GoomMatrix.from_real([[5.0, 6.0], [7.0, 8.0]])
        out = lmme(a, b).to_real()
        np.testing.assert_allclose(out, [[19, 22], [43, 50]], rtol=1e-14)

    def test_dimension_mismatch(self):
        a = GoomMatrix.from_real(np.ones((2, 3)))
        b = GoomMatrix.from_real(np.ones((2, 2)))
        with pytest.raises(ValueError):
            lmme(a, b)

    def test_64x64_against_oracle(self):
        rng = make_rng(8)
        a = rng.standard_normal((64, 64))
        b = rng.standard_normal((64, 64))
        got = lmme(GoomMatrix.from_real(a), GoomMatrix.from_real(b)).to_real()
        want = np.array([[float(v) for v in row] for row in _oracle_matmul(a, b)])
        err = np.linalg.norm(got - want) / np.linalg.norm(want)
        assert err < 1e-12

    def test_row_scaling_invariance(self):
        rng = make_rng(9)
        a = rng.standard_normal((5, 5))
        b = rng.standard_normal((5, 5))
        k = 3.7e50
        scaled = a.copy()
        scaled[2] *= k
        base = lmme(GoomMatrix.from_real(a), GoomMatrix.from_real(b))
        other = lmme(GoomMatrix.from_real(scaled), GoomMatrix.from_real(b))
        # dividing row 2 by k in the log domain recovers the original product
        unscaled = other.log_mag.copy()
        unscaled[2] -= math.log(k)
        assert np.max(np.abs(unscaled - base.log_mag)) < 1e-10
        np.testing.assert_array_equal(other.sign, base.sign)

    def test_all_zero_row_gives_zero_row(self):
        rng = make_rng(10)
        a = rng.standard_normal((3, 3))
        a[1] = 0.0
        b = rng.standard_normal((3, 3))
        out = lmme(GoomMatrix.from_real(a), GoomMatrix.from_real(b))
        assert np.all(out.log_mag[1] == NEG_INF)
        assert np.all(out.sign[1] == 1.0)

    def test_repeat_call_bitwise_stable(self):
        rng = make_rng(12)
        a = GoomMatrix.from_real(rng.standard_normal((16, 16)))
        b = GoomMatrix.from_real(rng.standard_normal((16, 16)))
        first = lmme(a, b)
        second = lmme(a, b)
        np.testing.assert_array_equal(first.log_mag, second.log_mag)
        np.testing.assert_array_equal(first.sign, second.sign)

    def test_float32_backing(self):
        rng = make_rng(13)
        a = rng.standard_normal((8, 8)).astype(np.float32)
        b = rng.standard_normal((8, 8)).astype(np.float32)
        out = lmme(
            GoomMatrix.from_real(a, dtype=np.float32),
            GoomMatrix.from_real(b, dtype=np.float32),
        )
        assert out.dtype == np.float32
        want = a.astype(np.float64) @ b.astype(np.float64)
        err = np.linalg.norm(out.to_real() - want) / np.linalg.norm(want)
        assert err < 1e-5


class TestColumnNormalization:
    def test_three_four_five(self):
        m = GoomMatrix.from_real([[3.0], [4.0]])
        out, nu = log_unit_norm_columns(m)
        np.testing.assert_allclose(out.to_real().ravel(), [0.6, 0.8], rtol=1e-14)
        assert abs(nu[0] - math.log(5.0)) < 1e-14

    def test_unit_column_unchanged(self):
        m = GoomMatrix.from_real([[1.0], [0.0]])
        out, nu = log_unit_norm_columns(m)
        assert abs(nu[0]) < 1e-14
        np.testing.assert_allclose(out.to_real().ravel(), [1.0, 0.0])

    def test_huge_log_magnitudes(self):
        m = GoomMatrix(np.full((2, 1), 1000.0), np.ones((2, 1)))
        out, nu = log_unit_norm_columns(m)
        np.testing.assert_allclose(out.to_real().ravel(), [0.70710678, 0.70710678], rtol=1e-7)

    def test_all_zero_column_errors(self):
        with pytest.raises(ValueError):
            log_unit_norm_columns(GoomMatrix.zeros(2, 2))

    def test_normalized_columns_have_log_unit_norm(self):
        rng = make_rng(14)
        m = GoomMatrix(rng.uniform(-500, 500, (6, 6)), rng.choice([-1.0, 1.0], (6, 6)))
        out, _ = log_unit_norm_columns(m)
        norms = np.log(np.linalg.norm(out.to_real(), axis=0))
        assert np.max(np.abs(norms)) < 1e-10


class TestToRealScaled:
    def test_uniform_large_logs(self):
        m = GoomMatrix(np.full((3, 3), 1e6), np.ones((3, 3)))
        out, c = to_real_scaled(m)
        assert c == 1e6
        np.testing.assert_array_equal(out, np.full((3, 3), np.exp(2.0)))

    def test_single_unit_entry(self):
        out, c = to_real_scaled(GoomMatrix.from_real([[1.0]]))
        assert c == 0.0
        assert out[0, 0] == np.exp(2.0)

    def test_all_zero_matrix(self):
        out, c = to_real_scaled(GoomMatrix.zeros(2, 2))
        assert c == 0.0
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_max_entry_is_exactly_e_squared(self):
        rng = make_rng(15)
        m = GoomMatrix(rng.uniform(-1e8, 1e8, (4, 4)), rng.choice([-1.0, 1.0], (4, 4)))
        out, c = to_real_scaled(m)
        assert np.max(np.abs(out)) == np.exp(2.0)
        assert np.all(np.abs(out) <= np.exp(2.0))


class TestRandomizedProperties:
    """Vectorized property sweeps, 10^4 cases each."""

    N = 10_000

    def test_round_trip_10k(self):
        rng = make_rng(20)
        xs = rng.standard_normal(self.N) * np.exp(rng.uniform(-200, 200, self.N))
        xs = np.where(xs == 0, 1.0, xs)
        back = GoomMatrix.from_real(xs.reshape(100, -1)).to_real().ravel()
        assert np.all(np.abs(back / xs - 1.0) < 1e-12)

    def test_gmul_reassociation_10k(self):
        rng = make_rng(21)
        logs = rng.uniform(-300, 300, (self.N, 3))
        left = (logs[:, 0] + logs[:, 1]) + logs[:, 2]
        right = logs[:, 0] + (logs[:, 1] + logs[:, 2])
        denom = np.maximum(1.0, np.abs(left))
        assert np.max(np.abs(left - right) / denom) < 1e-12

    def test_gadd_commutativity_10k(self):
        rng = make_rng(22)
        la = rng.uniform(-100, 100, self.N)
        lb = rng.uniform(-100, 100, self.N)
        sa = rng.choice([-1.0, 1.0], self.N)
        sb = rng.choice([-1.0, 1.0], self.N)
        from gooms.core import _gadd_arrays

        log1, sign1 = _gadd_arrays(la, sa, lb, sb)
        log2, sign2 = _gadd_arrays(lb, sb, la, sa)
        np.testing.assert_array_equal(log1, log2)
        np.testing.assert_array_equal(sign1, sign2)

    def test_gadd_cancellation_10k(self):
        rng = make_rng(23)
        la = rng.uniform(-100, 100, self.N)
        sa = rng.choice([-1.0, 1.0], self.N)
        from gooms.core import _gadd_arrays

        log_out, sign_out = _gadd_arrays(la, sa, la, -sa)
        assert np.all(log_out == NEG_INF)
        assert np.all(sign_out == 1.0)

    def test_lmme_identity_10k(self):
        rng = make_rng(24)
        batch = 10_000
        d = 3
        from gooms.core import _lmme_arrays

        logs = rng.uniform(-50, 50, (batch, d, d))
        signs = rng.choice([-1.0, 1.0], (batch, d, d))
        eye_log = np.full((batch, d, d), NEG_INF)
        eye_log[:, np.arange(d), np.arange(d)] = 0.0
        eye_sign = np.ones((batch, d, d))
        out_log, out_sign = _lmme_arrays(eye_log, eye_sign, logs, signs)
        assert np.max(np.abs(out_log - logs)) < 1e-12
        np.testing.assert_array_equal(out_sign, signs)

    def test_lmme_scaling_invariance_10k(self):
        rng = make_rng(25)
        batch, d = 10_000, 2
        from gooms.core import _lmme_arrays

        alog = rng.uniform(-20, 20, (batch, d, d))
        asign = rng.choice([-1.0, 1.0], (batch, d, d))
        blog = rng.uniform(-20, 20, (batch, d, d))
        bsign = rng.choice([-1.0, 1.0], (batch, d, d))
        base_log, base_sign = _lmme_arrays(alog, asign, blog, bsign)
        shift = rng.uniform(0, 100, (batch, 1, 1))
        shifted = alog.copy()
        shifted[:, 0, :] += shift[:, 0, :]  # scale row 0 of every instance
        other_log, other_sign = _lmme_arrays(shifted, asign, blog, bsign)
        other_log[:, 0, :] -= shift[:, 0, :]
        denom = np.maximum(1.0, np.abs(base_log))
        assert np.max(np.abs(other_log - base_log) / denom) < 1e-10
        np.testing.assert_array_equal(other_sign, base_sign)

    def test_to_real_scaled_bound_10k(self):
        rng = make_rng(26)
        e2 = np.exp(2.0)
        for _ in range(10):
            logs = rng.uniform(-1e6, 1e6, (1000, 4))
            signs = rng.choice([-1.0, 1.0], (1000, 4))
            m = GoomMatrix(logs, signs)
            out, c = to_real_scaled(m)
            assert np.all(np.abs(out) <= e2)
            assert np.max(np.abs(out)) == e2

    def test_binary32_log_magnitude_reach(self):
        # a float32-backed log magnitude holds values up to ~1e38,
        # i.e. the matrix represents exp(+/-1e38)
        m = GoomMatrix(np.full((1, 1), 1e38, dtype=np.float32), np.ones((1, 1), dtype=np.float32))
        assert np.isfinite(m.log_mag).all()
        assert float(m.log_mag[0, 0]) == np.float32(1e38)
