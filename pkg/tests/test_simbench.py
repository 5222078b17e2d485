"""Tests for the synthetic benchmark generators, scoring, and runner."""

import numpy as np
import pytest

from pwls import simbench
from pwls.numerics import PwlsError
from pwls.simbench import (HeteroSimConfig, HomoSimConfig, MetricsReport,
                           equicorrelation_sqrt, format_row, gen_hetero,
                           gen_homo, run_benchmark, score)


class TestConfigs:
    def test_homo_validation(self):
        with pytest.raises(PwlsError):
            HomoSimConfig(n=10, p=2, k=11)
        with pytest.raises(PwlsError):
            HomoSimConfig(n=5, p=5)

    def test_hetero_validation(self):
        with pytest.raises(PwlsError):
            HeteroSimConfig(case=3)
        with pytest.raises(PwlsError):
            HeteroSimConfig(n=10, p=2, k=11)
        with pytest.raises(PwlsError):
            HeteroSimConfig(n=5, p=5)


class TestEquicorrelationSqrt:
    def test_square_root_of_target_matrix(self):
        for p in (1, 2, 7):
            s = equicorrelation_sqrt(p)
            target = np.full((p, p), 0.5)
            np.fill_diagonal(target, 1.0)
            np.testing.assert_allclose(s @ s, target, atol=1e-12)
            np.testing.assert_allclose(s, s.T, atol=1e-12)


class TestGenHomo:
    def test_deterministic_in_seed(self):
        cfg = HomoSimConfig(n=50, p=3, k=5, seed=4)
        d1, t1 = gen_homo(cfg)
        d2, t2 = gen_homo(cfg)
        assert np.array_equal(d1.X, d2.X) and np.array_equal(d1.y, d2.y)
        assert t1 == t2 == frozenset(range(5))
        d3, _ = gen_homo(HomoSimConfig(n=50, p=3, k=5, seed=5))
        assert not np.array_equal(d1.y, d3.y)

    def test_design_moments(self):
        # each row is u' S with u uniform(-15, 15): covariance 75 * Sigma
        cfg = HomoSimConfig(n=100_000, p=3, k=0, seed=1)
        data, _ = gen_homo(cfg)
        cov = np.cov(data.X, rowvar=False)
        target = 75.0 * (np.full((3, 3), 0.5) + 0.5 * np.eye(3))
        np.testing.assert_allclose(cov, target, rtol=0.03)

    def test_shift_and_noise_structure(self):
        cfg = HomoSimConfig(n=100_000, p=3, k=500, r=5.0, seed=2)
        data, truth = gen_homo(cfg)
        resid = data.y - data.X @ np.ones(3)
        clean = resid[500:]
        assert abs(float(clean.mean())) < 0.02
        assert float(clean.var()) == pytest.approx(1.0, rel=0.03)
        assert float(resid[:500].mean()) == pytest.approx(5.0, abs=0.2)

    def test_leverage_rows_overwritten(self):
        cfg = HomoSimConfig(n=40, p=3, k=6, leverage=15.0, seed=0)
        data, truth = gen_homo(cfg)
        assert np.all(data.X[:6] == 15.0)
        assert not np.all(data.X[6:] == 15.0)
        # response uses the overwritten rows
        resid = data.y - data.X @ np.ones(3)
        assert float(np.abs(resid[:6] - 5.0).max()) < 6.0


class TestGenHetero:
    def test_deterministic_in_seed(self):
        cfg = HeteroSimConfig(n=60, p=3, k=4, seed=9)
        d1, t1, m1 = gen_hetero(cfg)
        d2, t2, m2 = gen_hetero(cfg)
        assert np.array_equal(d1.X, d2.X) and np.array_equal(d1.y, d2.y)
        assert t1 == t2
        assert np.array_equal(m1.theta, m2.theta)

    def test_noise_rides_on_the_scale_function(self):
        cfg = HeteroSimConfig(n=100_000, p=3, k=0, case=1, seed=3)
        data, _, model = gen_hetero(cfg)
        z = model.z_spec.matrix(data.X)
        g = np.abs(z @ model.theta)
        keep = g > 1e-3
        e = (data.y - data.X @ np.ones(3))[keep] / g[keep]
        # e is normal with sd sqrt(pi/2), so E|e| = 1
        assert float(np.abs(e).mean()) == pytest.approx(1.0, rel=0.02)

    def test_case2_uses_exponential_scale(self):
        cfg = HeteroSimConfig(n=20_000, p=3, k=0, case=2, seed=3)
        data, _, model = gen_hetero(cfg)
        assert model.g_kind == "exp-absolute"
        z = model.z_spec.matrix(data.X)
        g = np.exp(np.abs(z @ model.theta))
        e = (data.y - data.X @ np.ones(3)) / g
        assert float(np.abs(e).mean()) == pytest.approx(1.0, rel=0.03)

    def test_truth_is_first_k(self):
        cfg = HeteroSimConfig(n=30, p=2, k=7, seed=0)
        _, truth, _ = gen_hetero(cfg)
        assert truth == frozenset(range(7))


class TestScore:
    def test_exact_recovery(self):
        assert score({0, 1}, {0, 1}, 10) == (0.0, 0.0, True)

    def test_total_miss(self):
        m, s, jd = score({0, 1}, set(), 10)
        assert (m, s, jd) == (1.0, 0.0, False)

    def test_partial_masking(self):
        m, s, jd = score(set(range(5)), {0, 1, 2, 3}, 20)
        assert m == pytest.approx(0.2)
        assert s == 0.0
        assert jd is False

    def test_swamping_denominator_excludes_truth(self):
        truth = set(range(10))
        m, s, jd = score(truth, truth | {50, 60}, 100)
        assert m == 0.0
        assert s == pytest.approx(2.0 / 90.0)
        assert jd is True

    def test_empty_truth_convention(self):
        m, s, jd = score(set(), {1}, 5)
        assert (m, jd) == (0.0, True)
        assert s == pytest.approx(0.2)

    def test_oversized_sets_rejected(self):
        with pytest.raises(PwlsError):
            score(set(range(5)), set(), 4)
        with pytest.raises(PwlsError):
            score(set(), set(range(5)), 4)


class TestRunBenchmark:
    small = HomoSimConfig(n=60, p=2, k=4, r=8.0, seed=0)

    def test_single_rep_equals_direct_score(self):
        rep = run_benchmark("pwls", self.small, reps=1, base_seed=17)
        data, truth = gen_homo(
            HomoSimConfig(n=60, p=2, k=4, r=8.0, seed=17))
        m, s, jd = score(truth, simbench.pwls_flagged(data), 60)
        assert rep.masking == pytest.approx(100.0 * m)
        assert rep.swamping == pytest.approx(100.0 * s)
        assert rep.jd == (100.0 if jd else 0.0)
        assert rep.reps == 1 and rep.failures == 0

    def test_reproducible(self):
        a = run_benchmark("pwls", self.small, reps=3, base_seed=0)
        b = run_benchmark("pwls", self.small, reps=3, base_seed=0)
        assert (a.jd, a.masking, a.swamping) == (b.jd, b.masking, b.swamping)

    def test_workers_match_sequential(self):
        seq = run_benchmark("pwls", self.small, reps=4, base_seed=3, workers=1)
        par = run_benchmark("pwls", self.small, reps=4, base_seed=3, workers=2)
        assert (seq.jd, seq.masking, seq.swamping) == \
               (par.jd, par.masking, par.swamping)

    def test_method_scenario_mismatch_fails(self):
        with pytest.raises(PwlsError, match="repetitions failed"):
            run_benchmark("hpwls", self.small, reps=2, base_seed=0)

    def test_unknown_method_and_bad_reps(self):
        with pytest.raises(PwlsError, match="unknown method"):
            run_benchmark("mle", self.small, reps=1, base_seed=0)
        with pytest.raises(PwlsError):
            run_benchmark("pwls", self.small, reps=0, base_seed=0)

    @pytest.mark.xfail(
        strict=True,
        reason="the selection grid is anchored at the studentized-residual "
               "sup-norm, which grows like the noise scale, while the flag "
               "thresholds grow like its square; on unit-variance noise every "
               "grid point therefore flags well over 10% of rows and the BIC "
               "choice cannot be quiet (see README, known limitations)")
    def test_null_model_rarely_flags(self):
        # no planted shifts: at most 10% of rows flagged in >= 90% of reps
        quiet = 0
        for i in range(50):
            data, truth = gen_homo(
                HomoSimConfig(n=200, p=2, k=0, r=0.0, seed=1000 + i))
            flagged = simbench.pwls_flagged(data)
            if len(flagged) <= 20:
                quiet += 1
        assert quiet >= 45


class TestFormatRow:
    def test_homo_rows(self):
        rep = MetricsReport(jd=70.0, masking=0.4, swamping=2.6, reps=200,
                            failures=0)
        cfg = HomoSimConfig(n=1000, p=15, k=100, r=5.0)
        assert format_row("pwls", cfg, rep) == \
            "pwls,100,15,homo-r5-noL,70,0.4,2.6,200,0"
        cfg_lev = HomoSimConfig(n=1000, p=15, k=100, r=5.0, leverage=15.0)
        assert format_row("pwls", cfg_lev, rep).split(",")[3] == "homo-r5-L15"

    def test_hetero_row(self):
        rep = MetricsReport(jd=94.0, masking=0.7, swamping=0.6, reps=100,
                            failures=1)
        cfg = HeteroSimConfig(n=1000, p=15, k=10, r=20.0, case=1)
        assert format_row("hpwls", cfg, rep) == \
            "hpwls,10,15,hetero-case1-r20,94,0.7,0.6,100,1"
