import json

import numpy as np
import pytest

from priorstack.calibration import (PriorEffects, calibrate_exponential,
                                    calibrate_isotonic, rescale_prior)
from priorstack.errors import ConfigurationError, DataValidationError
from priorstack.folds import make_fold_plan
from priorstack.glm import Dataset, Family, link_inverse
from priorstack.numerics import RngStream
from priorstack.solver import PenaltySpec, cv_fit, fit_path, predict_linear
from priorstack.stacking import (StackConfig, StackedModel, build_meta_design,
                                 fit_simultaneous_stack, fit_standard_stack,
                                 fit_transfer_model, from_json_dict, predict,
                                 to_json_dict)


def toy_problem(seed=0, n=80, p=20, noise=0.5, m_noise_sources=1):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: p // 3] = rng.uniform(0.4, 1.0, p // 3) * rng.choice([-1, 1], p // 3)
    y = X @ beta + noise * rng.standard_normal(n)
    cols = [beta + 0.08 * rng.standard_normal(p)]
    names = ["informative"]
    for i in range(m_noise_sources):
        cols.append(0.3 * rng.standard_normal(p))
        names.append(f"noise{i}")
    priors = PriorEffects(np.column_stack(cols), names)
    return Dataset(X, y, Family.GAUSSIAN), priors, beta


class TestBuildMetaDesign:
    def test_tiny_brute_force_refit(self):
        rng = np.random.default_rng(1)
        n, p = 8, 3
        X = rng.standard_normal((n, p))
        z = np.array([1.0, -0.5, 0.25])
        y = X @ z + 0.1 * rng.standard_normal(n)
        data = Dataset(X, y, Family.GAUSSIAN)
        priors = PriorEffects(z[:, None], ["s"])
        config = StackConfig(calibration="exp", folds=2, nlambda=30)
        stream = RngStream(3, "fit")
        plan = make_fold_plan(n, 2, stream.child("folds"))
        meta = build_meta_design(data, priors, plan, config, stream)
        assert meta.m_retained == 1
        for f in (1, 2):
            tr = plan.train_mask(f)
            cal = calibrate_exponential(Dataset(X[tr], y[tr], Family.GAUSSIAN),
                                        rescale_prior(z))
            manual = X[~tr] @ cal.gamma
            assert np.max(np.abs(meta.H0cv[~tr, 0] - manual)) < 1e-8

    def test_isotonic_leakage_free(self):
        data, priors, _ = toy_problem(seed=2, n=30, p=8, m_noise_sources=0)
        config = StackConfig(calibration="iso", folds=3, cal_folds=5, nlambda=30)
        stream = RngStream(5, "fit")
        plan = make_fold_plan(data.n, 3, stream.child("folds"))
        meta = build_meta_design(data, priors, plan, config, stream)
        z = rescale_prior(priors.Z[:, 0])
        for f in (1, 2, 3):
            tr = plan.train_mask(f)
            cal = calibrate_isotonic(Dataset(data.X[tr], data.y[tr], Family.GAUSSIAN),
                                     z, stream.child(f"cal-fold{f}/0"),
                                     folds=5, nlambda=config.cal_nlambda)
            manual = data.X[~tr] @ cal.gamma
            assert np.max(np.abs(meta.H0cv[~tr, 0] - manual)) < 1e-8

    def test_all_zero_source_filtered(self):
        data, _, beta = toy_problem(seed=3)
        priors = PriorEffects(np.zeros((data.p, 1)), ["empty"])
        config = StackConfig(calibration="exp", folds=5)
        stream = RngStream(7, "fit")
        plan = make_fold_plan(data.n, 5, stream.child("folds"))
        meta = build_meta_design(data, priors, plan, config, stream)
        assert meta.m_retained == 0
        assert meta.sources[0].pvalue == 1.0

    def test_h1_columns_match_cvfit(self):
        data, priors, _ = toy_problem(seed=4)
        config = StackConfig(calibration="exp", folds=5)
        stream = RngStream(9, "fit")
        plan = make_fold_plan(data.n, 5, stream.child("folds"))
        meta = build_meta_design(data, priors, plan, config, stream)
        cvf = cv_fit(data, PenaltySpec(alpha=config.alpha), plan)
        assert np.array_equal(meta.H1cv_min, cvf.cv_eta[:, cvf.idx_min])
        assert np.array_equal(meta.H1cv_1se, cvf.cv_eta[:, cvf.idx_1se])


class TestStandardStack:
    def test_interpretation_arithmetic(self):
        # beta*_j = sum_k omega_k gamma_jk + omega_min beta_min_j + ...
        assert abs(0.5 * 0.2 + 0.4 * 0.1 - 0.14) < 1e-15

    def test_beta_star_reproducible_from_parts(self):
        data, priors, _ = toy_problem(seed=5, m_noise_sources=2)
        model, meta, _ = fit_transfer_model(data, priors,
                                            StackConfig(calibration="exp", seed=11))
        path = meta.cvfit.path
        rebuilt = (model.omega[-2] * path.coefs[:, meta.cvfit.idx_min]
                   + model.omega[-1] * path.coefs[:, meta.cvfit.idx_1se])
        for k, s in enumerate(model.sources):
            rebuilt = rebuilt + model.omega[k] * s.gamma
        assert np.max(np.abs(rebuilt - model.beta_star)) <= 1e-10

    def test_omegas_nonnegative(self):
        data, priors, _ = toy_problem(seed=6, m_noise_sources=3)
        model, _, _ = fit_transfer_model(data, priors,
                                         StackConfig(calibration="exp", seed=13))
        assert np.all(model.omega >= 0.0)

    def test_all_filtered_matches_plain_combination(self):
        data, _, _ = toy_problem(seed=7)
        priors = PriorEffects(np.zeros((data.p, 0)), [])
        config = StackConfig(calibration="exp", seed=17)
        model, meta, _ = fit_transfer_model(data, priors, config)
        # prediction must equal the non-negative combination of the two
        # cv-selected no-co-data models that the meta learner fitted
        path = meta.cvfit.path
        eta_min = predict_linear(path, meta.cvfit.idx_min, data.X)
        eta_1se = predict_linear(path, meta.cvfit.idx_1se, data.X)
        manual = model.omega0 + model.omega[-2] * eta_min + model.omega[-1] * eta_1se
        assert np.max(np.abs(predict(model, data.X) - manual)) < 1e-6

    def test_duplicate_sources_equivalent_predictions(self):
        data, priors, _ = toy_problem(seed=8, m_noise_sources=0)
        z = priors.Z[:, 0]
        single = fit_transfer_model(data, priors, StackConfig(calibration="exp", seed=19))[0]
        doubled = fit_transfer_model(
            data, PriorEffects(np.column_stack([z, z]), ["a", "b"]),
            StackConfig(calibration="exp", seed=19))[0]
        assert np.max(np.abs(predict(single, data.X) - predict(doubled, data.X))) < 1e-6

    def test_useless_source_mostly_excluded(self):
        zero_weight = 0
        reps = 25
        for rep in range(reps):
            data, priors, _ = toy_problem(seed=100 + rep, n=60, p=15,
                                          m_noise_sources=1)
            model, _, _ = fit_transfer_model(
                data, priors, StackConfig(calibration="exp", folds=5, seed=rep))
            zero_weight += model.omega[1] == 0.0
        assert zero_weight / reps >= 0.9

    def test_flattening_identity(self):
        data, priors, _ = toy_problem(seed=9)
        model, meta, _ = fit_transfer_model(data, priors,
                                            StackConfig(calibration="exp", seed=23))
        H_full = []
        for k in meta.retained_idx:
            H_full.append(data.X @ model.sources[k].gamma)
        path = meta.cvfit.path
        H_full.append(predict_linear(path, meta.cvfit.idx_min, data.X))
        H_full.append(predict_linear(path, meta.cvfit.idx_1se, data.X))
        w = np.concatenate([[model.omega[k] for k in meta.retained_idx],
                            model.omega[-2:]])
        eta_meta = model.omega0 + np.column_stack(H_full) @ w
        eta_flat = model.intercept_star + data.X @ model.beta_star
        assert np.max(np.abs(eta_meta - eta_flat)) <= 1e-8


class TestSimultaneousStack:
    def test_no_sources_reduces_to_plain_fit(self):
        data, _, _ = toy_problem(seed=10)
        priors = PriorEffects(np.zeros((data.p, 0)), [])
        config = StackConfig(calibration="exp", stacking="sim", seed=29)
        model, meta, _ = fit_transfer_model(data, priors, config)
        stream = RngStream(29, "fit")
        plan = make_fold_plan(data.n, 10, stream.child("joint-folds"))
        cvf = cv_fit(data, PenaltySpec(alpha=config.alpha, penalty_factors=np.ones(data.p),
                                       lower=np.full(data.p, -np.inf), upper=np.inf),
                     plan)
        assert np.max(np.abs(model.beta_star - cvf.path.coefs[:, cvf.idx_min])) < 1e-8
        assert abs(model.intercept_star - cvf.path.intercepts[cvf.idx_min]) < 1e-8

    def test_lambda_max_shrinks_to_calibrated_prior(self):
        # at the top of the path the feature deviations vanish and the
        # combined coefficients equal omega * gamma
        data, priors, _ = toy_problem(seed=11, m_noise_sources=0)
        config = StackConfig(calibration="exp", stacking="sim", seed=31)
        stream = RngStream(31, "fit")
        plan = make_fold_plan(data.n, 10, stream.child("folds"))
        meta = build_meta_design(data, priors, plan, config, stream)
        design = np.column_stack([meta.H0cv, data.X])
        pf = np.concatenate([np.zeros(1), np.ones(data.p)])
        lower = np.concatenate([np.zeros(1), np.full(data.p, -np.inf)])
        spec = PenaltySpec(alpha=config.alpha, penalty_factors=pf, lower=lower)
        fit = fit_path(Dataset(design, data.y, Family.GAUSSIAN), spec)
        coef_top = fit.coefs[:, 0]
        assert np.max(np.abs(coef_top[1:])) == 0.0
        omega_top = coef_top[0]
        beta_star_top = omega_top * meta.sources[0].gamma
        manual = omega_top * (data.X @ meta.sources[0].gamma)
        flat = data.X @ beta_star_top
        assert np.max(np.abs(manual - flat)) < 1e-6

    def test_guard_on_many_sources(self):
        rng = np.random.default_rng(12)
        n, p = 120, 10
        X = rng.standard_normal((n, p))
        beta = rng.uniform(0.5, 1.0, p)
        y = X @ beta + 0.2 * rng.standard_normal(n)
        Z = np.column_stack([beta + 0.02 * rng.standard_normal(p) for _ in range(11)])
        priors = PriorEffects(Z, [f"s{i}" for i in range(11)])
        with pytest.raises(ConfigurationError, match="standard stacking"):
            fit_transfer_model(Dataset(X, y, Family.GAUSSIAN), priors,
                               StackConfig(calibration="exp", stacking="sim", seed=37))

    def test_flattening_identity(self):
        data, priors, _ = toy_problem(seed=13)
        model, meta, _ = fit_transfer_model(
            data, priors, StackConfig(calibration="exp", stacking="sim", seed=41))
        H = [data.X @ model.sources[k].gamma for k in meta.retained_idx]
        w = np.array([model.omega[k] for k in meta.retained_idx])
        eta_meta = model.omega0 + (np.column_stack(H) @ w if H else 0.0) \
            + data.X @ model.beta_direct
        eta_flat = model.intercept_star + data.X @ model.beta_star
        assert np.max(np.abs(eta_meta - eta_flat)) <= 1e-8


class TestScalingInvariance:
    def test_prior_scaling_leaves_model_unchanged(self):
        data, priors, _ = toy_problem(seed=14, m_noise_sources=1)
        base, _, _ = fit_transfer_model(data, priors,
                                        StackConfig(calibration="exp", seed=43))
        Z = priors.Z.copy()
        Z[:, 0] *= 250.0
        scaled, _, _ = fit_transfer_model(data, PriorEffects(Z, priors.source_names),
                                          StackConfig(calibration="exp", seed=43))
        assert np.max(np.abs(base.beta_star - scaled.beta_star)) <= 1e-8
        assert np.max(np.abs(predict(base, data.X) - predict(scaled, data.X))) <= 1e-8


class TestPredict:
    def test_constant_model(self):
        model = StackedModel(mode="standard", family=Family.BINOMIAL,
                             calibration_method="exponential", omega0=0.3,
                             omega=np.zeros(2), beta_direct=np.zeros(4),
                             beta_star=np.zeros(4), intercept_star=0.3,
                             sources=[])
        mu = predict(model, np.random.default_rng(0).standard_normal((5, 4)))
        assert np.allclose(mu, 1 / (1 + np.exp(-0.3)))

    def test_gaussian_identity(self):
        model = StackedModel(mode="standard", family=Family.GAUSSIAN,
                             calibration_method="exponential", omega0=0.0,
                             omega=np.zeros(2), beta_direct=np.zeros(2),
                             beta_star=np.array([1.0, -2.0]), intercept_star=0.5,
                             sources=[])
        X = np.array([[1.0, 1.0], [2.0, 0.0]])
        assert np.allclose(predict(model, X), 0.5 + X @ np.array([1.0, -2.0]))

    def test_column_mismatch(self):
        model = StackedModel(mode="standard", family=Family.GAUSSIAN,
                             calibration_method="exponential", omega0=0.0,
                             omega=np.zeros(2), beta_direct=np.zeros(3),
                             beta_star=np.zeros(3), intercept_star=0.0,
                             sources=[])
        with pytest.raises(DataValidationError):
            predict(model, np.ones((2, 4)))


class TestSerialization:
    def test_roundtrip_bitwise(self):
        data, priors, _ = toy_problem(seed=15)
        model, _, _ = fit_transfer_model(data, priors,
                                         StackConfig(calibration="iso", seed=47))
        doc = json.loads(json.dumps(to_json_dict(model)))
        model2 = from_json_dict(doc)
        assert np.array_equal(predict(model, data.X), predict(model2, data.X))
        assert model2.fold_seed == 47

    def test_newer_schema_rejected(self):
        data, priors, _ = toy_problem(seed=16)
        model, _, _ = fit_transfer_model(data, priors,
                                         StackConfig(calibration="exp", seed=53))
        doc = to_json_dict(model)
        doc["schema_version"] = 99
        with pytest.raises(DataValidationError, match="newer"):
            from_json_dict(doc)


class TestBinomialPipeline:
    def test_end_to_end(self):
        rng = np.random.default_rng(17)
        n, p = 120, 12
        X = rng.standard_normal((n, p))
        beta = np.zeros(p)
        beta[:4] = (1.2, -1.0, 0.8, 0.9)
        prob = 1 / (1 + np.exp(-(X @ beta)))
        y = (rng.random(n) < prob).astype(float)
        data = Dataset(X, y, Family.BINOMIAL)
        priors = PriorEffects((beta + 0.05 * rng.standard_normal(p))[:, None], ["s"])
        for stacking in ("sta", "sim"):
            model, _, _ = fit_transfer_model(
                data, priors, StackConfig(calibration="exp", stacking=stacking, seed=59))
            mu = predict(model, data.X)
            assert np.all((mu > 0) & (mu < 1))
            assert np.mean((mu > 0.5) == (y == 1)) > 0.7
