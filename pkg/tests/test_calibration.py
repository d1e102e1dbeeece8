import numpy as np
import pytest

from priorstack.calibration import (CalibratedSource, build_cumsum_design,
                                    calibrate_exponential, calibrate_isotonic,
                                    filter_source, gamma_from_delta,
                                    rescale_prior)
from priorstack.glm import Dataset, Family, link_inverse, mean_deviance
from priorstack.numerics import RngStream, standardize_columns

from oracles import isotonic_qp_oracle


def trimmed_gaussian(rng, p):
    z = rng.standard_normal(p)
    lo, hi = -2.3263478740408408, 2.3263478740408408   # 1% and 99% quantiles
    return np.clip(z, lo, hi)


def make_target(rng, n, p, beta, noise=0.0):
    X = rng.standard_normal((n, p))
    eta = X @ beta
    sd = np.std(eta) if noise else 0.0
    y = eta + noise * sd * rng.standard_normal(n)
    return Dataset(X, y, Family.GAUSSIAN)


class TestRescale:
    def test_example(self):
        assert np.allclose(rescale_prior(np.array([-2.0, 4.0])), [-0.5, 1.0])

    def test_all_zero_passthrough(self):
        z = np.zeros(3)
        out = rescale_prior(z)
        assert np.array_equal(out, z)

    def test_order_and_signs_preserved(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal(30) * 7
        out = rescale_prior(z)
        assert np.array_equal(np.sign(out), np.sign(z))
        assert np.array_equal(np.argsort(out), np.argsort(z))
        assert np.max(np.abs(out)) == 1.0


class TestExponentialCalibration:
    def test_zero_priors_stay_zero(self):
        rng = np.random.default_rng(1)
        p = 20
        z = trimmed_gaussian(rng, p)
        z[::3] = 0.0
        z = rescale_prior(z)
        data = make_target(rng, 100, p, np.sign(z))
        cal = calibrate_exponential(data, z)
        assert np.all(cal.gamma[z == 0.0] == 0.0)

    def test_identity_scenario_recovers_tau1(self):
        rng = np.random.default_rng(2)
        p = 60
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 150, p, z)      # beta = z, noiseless
        cal = calibrate_exponential(data, z)
        assert cal.tau == 1.0
        assert abs(cal.theta - 1.0) < 0.05

    def test_square_scenario_recovers_tau2(self):
        rng = np.random.default_rng(3)
        p = 60
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 150, p, np.sign(z) * z ** 2)
        cal = calibrate_exponential(data, z)
        assert cal.tau == 2.0

    def test_gamma_reproduces_formula_bitwise(self):
        rng = np.random.default_rng(4)
        p = 25
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 80, p, z, noise=0.5)
        cal = calibrate_exponential(data, z)
        rebuilt = cal.theta * np.sign(z) * np.abs(z) ** cal.tau
        assert np.array_equal(cal.gamma, rebuilt)

    def test_all_zero_source(self):
        rng = np.random.default_rng(5)
        data = make_target(rng, 50, 8, np.ones(8), noise=1.0)
        cal = calibrate_exponential(data, np.zeros(8))
        assert np.all(cal.gamma == 0.0)
        assert cal.pvalue == 1.0 and not cal.retained

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(6)
        p = 30
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 90, p, z, noise=0.4)
        base = calibrate_exponential(data, z)
        for c in (0.1, 3.0, 1000.0):
            scaled = calibrate_exponential(data, rescale_prior(c * z))
            assert np.max(np.abs(scaled.gamma - base.gamma)) <= 1e-8

    def test_negative_theta_flag(self):
        rng = np.random.default_rng(7)
        p = 30
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 120, p, -z)     # anti-correlated prior
        constrained = calibrate_exponential(data, z)
        free = calibrate_exponential(data, z, allow_negative_theta=True)
        assert constrained.theta == 0.0
        assert free.theta < -0.5


class TestCumsumDesign:
    def test_spec_example(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((7, 4))
        z = np.array([-0.3, -0.1, 0.2, 0.7])
        d = build_cumsum_design(X, z)
        assert d.q == 2
        assert np.allclose(d.W[:, 0], X[:, 0])
        assert np.allclose(d.W[:, 1], X[:, 0] + X[:, 1])
        assert np.allclose(d.W[:, 2], X[:, 2] + X[:, 3])
        assert np.allclose(d.W[:, 3], X[:, 3])

    def test_all_positive_suffix_sums(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((5, 3))
        d = build_cumsum_design(X, np.array([0.2, 0.5, 0.9]))
        assert d.q == 0
        assert np.allclose(d.W[:, 0], X.sum(axis=1))
        assert np.allclose(d.W[:, 2], X[:, 2])

    def test_ties_broken_by_index(self):
        X = np.eye(3)
        d = build_cumsum_design(X, np.array([0.5, 0.5, -0.5]))
        assert list(d.ordering) == [2, 0, 1]

    def test_linear_predictor_identity_for_arbitrary_delta(self):
        rng = np.random.default_rng(10)
        n, p = 30, 6
        X = rng.standard_normal((n, p))
        z = rng.standard_normal(p)
        d = build_cumsum_design(X, z)
        delta = rng.standard_normal(p)
        gamma_sorted = gamma_from_delta(delta, d.q)
        lhs = d.W @ delta
        rhs = X[:, d.ordering] @ gamma_sorted
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


class TestIsotonicCalibration:
    def test_partial_sum_backtransform(self):
        g = gamma_from_delta(np.array([-0.2, -0.1, 0.3, 0.1]), q=2)
        assert np.allclose(g, [-0.3, -0.1, 0.3, 0.4])
        assert np.all(np.diff(g) >= 0)

    def test_constraints_hold_exactly(self):
        rng = np.random.default_rng(11)
        p = 25
        z = rescale_prior(trimmed_gaussian(rng, p))
        z[3] = 0.0
        data = make_target(rng, 120, p, z, noise=0.3)
        cal = calibrate_isotonic(data, z, RngStream(1, "iso"))
        assert np.all(cal.gamma[z == 0] == 0.0)
        assert np.all(cal.gamma[z > 0] >= 0.0)
        assert np.all(cal.gamma[z < 0] <= 0.0)
        order = np.argsort(z, kind="stable")
        assert np.all(np.diff(cal.gamma[order]) >= -1e-12)

    def test_step_scenario_beats_exponential(self):
        # beta jumps at z > 1: no power law fits, the monotone fit must win
        rng = np.random.default_rng(12)
        p = 80
        z = trimmed_gaussian(rng, p)          # untrimmed scale, includes z > 1
        beta = (z > 1.0).astype(float)
        data = make_target(rng, 200, p, beta)
        zr = rescale_prior(z)
        iso = calibrate_isotonic(data, zr, RngStream(2, "iso"))
        exp = calibrate_exponential(data, zr)
        mse_iso = np.mean((iso.gamma - beta) ** 2)
        mse_exp = np.mean((exp.gamma - beta) ** 2)
        assert mse_iso < mse_exp

    def test_qp_oracle_small(self):
        rng = np.random.default_rng(13)
        for trial in range(5):
            n, p = 50, int(rng.integers(3, 7))
            z = rng.standard_normal(p)
            beta = np.sign(z) * rng.random(p)
            X = rng.standard_normal((n, p))
            y = X @ beta + 0.3 * rng.standard_normal(n)
            data = Dataset(X, y, Family.GAUSSIAN)
            stream = RngStream(trial, "iso")
            cal = calibrate_isotonic(data, z, stream)
            gamma_ref = _qp_gamma(data, z, stream)
            assert np.max(np.abs(cal.gamma - gamma_ref)) < 1e-5

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(14)
        p = 20
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 80, p, z, noise=0.4)
        base = calibrate_isotonic(data, z, RngStream(5, "iso"))
        for c in (0.1, 3.0, 1000.0):
            scaled = calibrate_isotonic(data, rescale_prior(c * z), RngStream(5, "iso"))
            assert np.max(np.abs(scaled.gamma - base.gamma)) <= 1e-8

    def test_all_zero_source(self):
        rng = np.random.default_rng(15)
        data = make_target(rng, 60, 6, np.ones(6), noise=1.0)
        cal = calibrate_isotonic(data, np.zeros(6), RngStream(6, "iso"))
        assert np.all(cal.gamma == 0.0)
        assert not cal.retained

    def test_inverted_variant_rescues_anticorrelated_prior(self):
        rng = np.random.default_rng(16)
        p = 40
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 150, p, -z)
        plain = calibrate_isotonic(data, z, RngStream(7, "iso"))
        rescued = calibrate_isotonic(data, z, RngStream(7, "iso"), try_inverted=True)
        beta = -z
        assert (np.mean((rescued.gamma - beta) ** 2)
                < np.mean((plain.gamma - beta) ** 2))


def _qp_gamma(data, z, stream):
    """Rebuild the standardised design and solve the same objective as a QP
    at the lambda the implementation's internal cross-validation chose."""
    from priorstack.calibration import ISOTONIC_NLAMBDA
    from priorstack.folds import make_fold_plan
    from priorstack.solver import PenaltySpec, cv_fit

    nz = np.flatnonzero(z != 0.0)
    zg, inverse = np.unique(z[nz], return_inverse=True)
    Xg = np.zeros((data.n, len(zg)))
    for col, grp in zip(nz, inverse):
        Xg[:, grp] += data.X[:, col]
    design = build_cumsum_design(Xg, zg)
    W_std, wmeans, wsds = standardize_columns(design.W)
    r = len(zg)
    lower = np.where(np.arange(r) < design.q, -np.inf, 0.0)
    upper = np.where(np.arange(r) < design.q, 0.0, np.inf)
    plan = make_fold_plan(data.n, 10, stream.child("folds"), y=data.y,
                          family=data.family)
    cvf = cv_fit(Dataset(W_std, data.y, data.family),
                 PenaltySpec(alpha=0.95, lower=lower, upper=upper,
                             nlambda=ISOTONIC_NLAMBDA), plan)
    _, delta_std = isotonic_qp_oracle(W_std, data.y, cvf.lambda_min, 0.95, design.q)
    delta = delta_std / np.where(wsds > 0, wsds, 1.0)
    gamma_sorted = gamma_from_delta(delta, design.q)
    gamma = np.zeros(data.p)
    gamma[nz] = gamma_sorted[inverse]
    return gamma


class TestFilterSource:
    def test_zero_gamma_gives_p_one(self):
        rng = np.random.default_rng(17)
        data = make_target(rng, 50, 5, np.ones(5), noise=1.0)
        cal = CalibratedSource(method="exponential", gamma=np.zeros(5),
                               alpha_k=float(np.mean(data.y)))
        out = filter_source(data, cal)
        assert out.pvalue == 1.0 and not out.retained

    def test_informative_source_retained(self):
        rng = np.random.default_rng(18)
        p = 40
        z = rescale_prior(trimmed_gaussian(rng, p))
        data = make_target(rng, 120, p, z, noise=0.33)   # strong signal, w ~ 0.9
        cal = calibrate_exponential(data, z)
        out = filter_source(data, cal)
        assert out.retained and out.pvalue <= 0.05

    def test_null_retention_rate(self):
        # pure-noise priors on pure-noise targets: ~5% nominal plus optimism
        rng = np.random.default_rng(19)
        hits = 0
        reps = 40
        for _ in range(reps):
            p = 25
            z = rescale_prior(rng.standard_normal(p))
            X = rng.standard_normal((60, p))
            y = rng.standard_normal(60)
            data = Dataset(X, y, Family.GAUSSIAN)
            out = filter_source(data, calibrate_exponential(data, z))
            hits += out.retained
        assert hits / reps <= 0.15


class TestBinomialCalibration:
    def test_exponential_binomial(self):
        rng = np.random.default_rng(20)
        p = 30
        z = rescale_prior(trimmed_gaussian(rng, p))
        X = rng.standard_normal((200, p))
        prob = 1 / (1 + np.exp(-2.0 * X @ z))
        y = (rng.random(200) < prob).astype(float)
        data = Dataset(X, y, Family.BINOMIAL)
        cal = calibrate_exponential(data, z)
        assert cal.theta > 0.5
        out = filter_source(data, cal)
        assert out.retained

    def test_isotonic_binomial_constraints(self):
        rng = np.random.default_rng(21)
        p = 15
        z = rescale_prior(trimmed_gaussian(rng, p))
        X = rng.standard_normal((150, p))
        prob = 1 / (1 + np.exp(-2.0 * X @ z))
        y = (rng.random(150) < prob).astype(float)
        data = Dataset(X, y, Family.BINOMIAL)
        cal = calibrate_isotonic(data, z, RngStream(9, "iso"))
        order = np.argsort(z, kind="stable")
        assert np.all(np.diff(cal.gamma[order]) >= -1e-12)
        assert np.all(cal.gamma[z > 0] >= 0) and np.all(cal.gamma[z < 0] <= 0)
