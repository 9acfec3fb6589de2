import numpy as np
import pytest

from monosep import counter
from monosep.counter import (
    InsufficientSamples,
    covariance,
    disk_decision,
    gde_count,
    gde_factor,
    gde_from_covariance,
    gde_transform,
    rank_count,
    rank_from_covariance,
    synthetic_embeddings,
)
from monosep.metrics import counting_accuracy


def random_psd(rng, dim=20):
    a = rng.standard_normal((dim, dim))
    return a @ a.T / dim


class TestCovariance:
    def test_single_direction(self):
        v = np.zeros((30, 20))
        v[:, 0] = 1
        expected = np.zeros((20, 20))
        expected[0, 0] = 1
        np.testing.assert_array_equal(covariance(v), expected)

    def test_two_directions(self):
        v = np.zeros((40, 20))
        v[::2, 0] = 1
        v[1::2, 1] = 1
        np.testing.assert_allclose(np.diag(covariance(v))[:2], [0.5, 0.5])
        assert np.count_nonzero(covariance(v)) == 2

    def test_naive_loop(self, rng):
        v = rng.standard_normal((50, 6))
        ref = np.zeros((6, 6))
        for row in v:
            for i in range(6):
                for j in range(6):
                    ref[i, j] += row[i] * row[j]
        np.testing.assert_allclose(covariance(v), ref / 50, atol=1e-12)

    def test_trace_and_symmetry(self, rng):
        v = rng.standard_normal((200, 20)).astype(np.float32)
        b = covariance(v)
        assert np.array_equal(b, b.T)
        assert np.trace(b) == pytest.approx(np.sum(v.astype(np.float64) ** 2) / 200, rel=1e-9)
        assert np.linalg.eigvalsh(b).min() > -1e-9

    def test_no_mean_removal(self):
        v = np.ones((25, 20))
        np.testing.assert_allclose(covariance(v), np.ones((20, 20)))

    def test_insufficient(self):
        with pytest.raises(InsufficientSamples):
            covariance(np.zeros((19, 20)))


class TestTransform:
    def test_diagonal(self):
        b = np.diag(np.arange(1.0, 21.0))
        tr = gde_transform(b)
        assert not tr.radii.any()
        np.testing.assert_allclose(tr.eigenvalues, np.arange(19.0, 0, -1))

    @pytest.mark.parametrize("seed", range(100))
    def test_reconstruction(self, seed):
        b = random_psd(np.random.default_rng(seed))
        tr = gde_transform(b)
        u2 = tr.rotation()
        err = np.linalg.norm(u2.T @ b @ u2 - tr.assembled())
        assert err < 1e-9 * np.linalg.norm(b)

    def test_descending(self, rng):
        tr = gde_transform(random_psd(rng))
        assert np.all(np.diff(tr.eigenvalues) <= 0)

    def test_pairs_invariant_to_basis_order(self, rng):
        b = random_psd(rng)
        perm = np.r_[rng.permutation(19), 19]
        a = gde_transform(b)
        p = gde_transform(b[np.ix_(perm, perm)])
        np.testing.assert_allclose(a.eigenvalues, p.eigenvalues, atol=1e-10)
        np.testing.assert_allclose(np.abs(a.radii), np.abs(p.radii), atol=1e-10)


class TestGde:
    def test_formula(self, rng):
        res = gde_from_covariance(random_psd(rng), 5000, factor=0.3)
        mags = np.abs(res.radii)
        np.testing.assert_array_equal(res.gde, mags - 0.3 / 19 * mags.sum())
        assert 0 <= res.estimate <= 19

    def test_zero_radii(self):
        res = gde_from_covariance(np.diag(np.arange(20.0) + 1), 100)
        assert res.estimate == 0 and res.zero_radius
        assert not res.gde.any()

    def test_first_nonpositive(self):
        values, est = disk_decision(np.array([5.0, -4.0, 0.1, 3.0]), 0.5)
        assert est == 2
        assert values[2] <= 0 < values[1]

    def test_saturation(self):
        res = gde_from_covariance(_arrowhead(np.ones(19)), 100, factor=0.5)
        assert res.saturated and res.estimate == 19

    def test_factor_bounds(self, rng):
        for f in (0.0, 1.0, 1.5):
            with pytest.raises(ValueError):
                gde_from_covariance(random_psd(rng), 100, factor=f)

    def test_factor_non_increasing(self):
        values = [gde_factor(n) for n in (10, 100, 1000, 10_000, 10**6)]
        assert values == sorted(values, reverse=True)
        assert all(0 < f < 1 for f in values)
        assert gde_factor(10_000, 0.6) == pytest.approx(0.3)

    @pytest.mark.parametrize("c", [2, 3])
    @pytest.mark.parametrize("seed", range(5))
    def test_monte_carlo(self, c, seed):
        r = np.random.default_rng(seed)
        v = synthetic_embeddings(c, 1000, 0.05, r)
        lam = np.linalg.eigvalsh(covariance(v))
        assert np.sum(lam > 10 * 0.05**2) == c
        assert gde_count(v).estimate == c

    @pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e4])
    def test_scale_invariance(self, rng, alpha):
        v = synthetic_embeddings(3, 800, 0.05, rng)
        assert gde_count(alpha * v).estimate == gde_count(v).estimate

    def test_rotation_keeps_spectrum(self, rng):
        v = synthetic_embeddings(2, 500, 0.05, rng)
        q, _ = np.linalg.qr(rng.standard_normal((20, 20)))
        np.testing.assert_allclose(np.linalg.eigvalsh(covariance(v @ q)),
                                   np.linalg.eigvalsh(covariance(v)), atol=1e-10)


def _arrowhead(radii):
    m = len(radii)
    b = np.diag(np.r_[np.linspace(2, 1, m), 1.0])
    b[:m, m] = radii
    b[m, :m] = radii
    return b


class TestRank:
    def test_direct(self):
        b = np.diag([1.0, 1.0] + [0.001] * 18)
        assert rank_from_covariance(b, 0.1) == 2

    def test_equal_eigenvalues(self):
        assert rank_from_covariance(np.eye(2), 0.9) == 2

    def test_synthetic(self, rng):
        assert rank_count(synthetic_embeddings(3, 1000, 0.05, rng), 0.1) == 3

    def test_threshold_bounds(self, rng):
        with pytest.raises(ValueError):
            rank_count(rng.standard_normal((30, 20)), 1.0)


class TestBenchmark:
    def test_deterministic(self):
        a = counter.counting_benchmark(5, np.random.default_rng(3), n_rows=500)
        b = counter.counting_benchmark(5, np.random.default_rng(3), n_rows=500)
        assert a == b

    def test_table_shape(self, rng):
        table, rows = counter.counting_benchmark(4, rng, n_rows=500)
        assert set(table) == {"gde", "rank"}
        assert set(table["gde"]) == {2, 3, "avg"}
        assert len(rows) == 8

    def test_perfect_stub(self):
        assert counting_accuracy([(2, 2), (3, 3)])["avg"] == 100.0

    def test_constant_two(self):
        acc = counting_accuracy([(2, 2)] * 10 + [(3, 2)] * 10)
        assert acc == {2: 100.0, 3: 0.0, "avg": 50.0}

    def test_calibrations_pick_grid_points(self, rng):
        th, scores = counter.calibrate_rank_threshold(3, rng, n_rows=500)
        assert 0.005 <= th <= 0.5 and scores.max() <= 1
        const, _ = counter.calibrate_gde_constant(3, rng, n_rows=500)
        assert 0.05 <= const <= 1.0
