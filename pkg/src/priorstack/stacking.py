"""Combine calibrated prior sources and direct fits by stacked generalisation.

The meta design holds cross-validated linear predictors: one intercept-free
column per retained prior source (calibration refitted without the sample's
fold) plus the lambda_min and lambda_1se columns of the no-co-data learner.
Standard stacking regresses the target on those columns under a non-negative
lasso; simultaneous stacking instead fits the meta columns (unpenalised,
non-negative) jointly with the raw features (penalised), shrinking the
combined coefficients towards the calibrated prior effects. Either way the
result flattens into a single coefficient vector beta_star for prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .calibration import (DEFAULT_TAU_GRID, ISOTONIC_NLAMBDA, CalibratedSource,
                          PriorEffects, calibrate_exponential, calibrate_isotonic,
                          filter_source)
from .errors import ConfigurationError, DataValidationError
from .folds import FoldPlan, make_fold_plan
from .glm import Dataset, Family, link_inverse
from .numerics import RngStream
from .parallel import run_indexed
from .solver import CvFit, PenaltySpec, cv_fit

SCHEMA_VERSION = 1
SIMULTANEOUS_MAX_SOURCES = 10


@dataclass
class StackConfig:
    """Everything a transfer fit needs beyond the data and the priors."""

    calibration: str = "iso"            # "exp" | "iso"
    stacking: str = "sta"               # "sta" | "sim"
    alpha: float = 1.0                  # elastic-net mix of the no-co-data learner
    folds: int = 10
    seed: int = 0
    filter_sources: bool = True
    tau_grid: tuple = DEFAULT_TAU_GRID
    nlambda: int = 100
    cal_folds: int = 10
    cal_nlambda: int = ISOTONIC_NLAMBDA
    allow_negative_theta: bool = False
    try_inverted_isotonic: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.calibration not in ("exp", "iso"):
            raise ConfigurationError(f"unknown calibration '{self.calibration}'")
        if self.stacking not in ("sta", "sim"):
            raise ConfigurationError(f"unknown stacking mode '{self.stacking}'")


@dataclass
class MetaDesign:
    """Cross-validated base-learner predictors plus the full-data artifacts."""

    H0cv: np.ndarray             # n x m' retained-source columns, intercept-free
    H1cv_min: np.ndarray         # (n,)
    H1cv_1se: np.ndarray         # (n,)
    labels: list[str]            # names of the retained sources
    sources: list[CalibratedSource]   # all m sources, full-data calibration
    retained_idx: list[int]      # indices into sources for the H0cv columns
    cvfit: CvFit                 # full-data no-co-data learner

    @property
    def m_retained(self) -> int:
        return self.H0cv.shape[1]


@dataclass
class StackedModel:
    """Stacking weights and the flattened combined coefficients."""

    mode: str                    # "standard" | "simultaneous"
    family: Family
    calibration_method: str
    omega0: float                # meta intercept (standard) / joint intercept (simultaneous)
    omega: np.ndarray            # per-source weights (+2 no-co-data weights if standard)
    beta_direct: np.ndarray      # direct coefficient contribution on the features
    beta_star: np.ndarray
    intercept_star: float
    sources: list[CalibratedSource]
    fold_seed: int = 0
    meta_lambda: float | None = None


def _calibrate(data: Dataset, z: np.ndarray, method: str, rng: RngStream,
               config: StackConfig) -> CalibratedSource:
    if method == "exp":
        return calibrate_exponential(data, z, tau_grid=config.tau_grid,
                                     allow_negative_theta=config.allow_negative_theta)
    return calibrate_isotonic(data, z, rng, folds=config.cal_folds,
                              nlambda=config.cal_nlambda,
                              try_inverted=config.try_inverted_isotonic)


def build_meta_design(data: Dataset, priors: PriorEffects, folds: FoldPlan,
                      config: StackConfig, rng: RngStream,
                      cvfit: CvFit | None = None) -> MetaDesign:
    """Assemble leave-fold-out linear predictors for all base learners.

    Sources are calibrated on the full data once (for the significance filter
    and for the final coefficients) and then re-calibrated per fold for the
    meta columns, the intercept being dropped from the emitted predictors.
    Sources failing the filter are excluded from the design but kept in the
    source list with weight zero. A no-co-data CvFit computed on the same
    fold plan and penalty may be passed in to avoid refitting it.
    """
    if priors.p != data.p:
        raise DataValidationError(
            f"priors describe {priors.p} features, data has {data.p}")
    if folds.n != data.n:
        raise DataValidationError("fold plan does not match the data")
    priors = priors.rescaled()
    m = priors.m

    def full_cal(k: int) -> CalibratedSource:
        cal = _calibrate(data, priors.Z[:, k], config.calibration,
                         rng.child(f"cal-full/{k}"), config)
        cal = filter_source(data, cal)
        cal.name = priors.source_names[k]
        if not config.filter_sources:
            cal.retained = True
        return cal

    sources = run_indexed(full_cal, list(range(m)), config.threads)
    retained_idx = [k for k, c in enumerate(sources) if c.retained]

    H0cv = np.zeros((data.n, len(retained_idx)))
    tasks = [(f, k) for f in range(1, folds.K + 1) for k in retained_idx]

    def fold_col(task):
        f, k = task
        tr = folds.train_mask(f)
        sub = Dataset(data.X[tr], data.y[tr], data.family)
        cal = _calibrate(sub, priors.Z[:, k], config.calibration,
                         rng.child(f"cal-fold{f}/{k}"), config)
        return data.X[~tr] @ cal.gamma          # 0 x alpha_k: intercept dropped

    cols = run_indexed(fold_col, tasks, config.threads)
    for (f, k), eta in zip(tasks, cols):
        H0cv[folds.test_mask(f), retained_idx.index(k)] = eta

    if cvfit is None:
        spec = PenaltySpec(alpha=config.alpha, nlambda=config.nlambda)
        cvfit = cv_fit(data, spec, folds, threads=config.threads)
    return MetaDesign(H0cv=H0cv,
                      H1cv_min=cvfit.cv_eta[:, cvfit.idx_min].copy(),
                      H1cv_1se=cvfit.cv_eta[:, cvfit.idx_1se].copy(),
                      labels=[priors.source_names[k] for k in retained_idx],
                      sources=sources, retained_idx=retained_idx, cvfit=cvfit)


def fit_standard_stack(meta: MetaDesign, data: Dataset, config: StackConfig,
                       rng: RngStream) -> StackedModel:
    """Non-negative lasso of the target on the cross-validated predictors."""
    H = np.column_stack([meta.H0cv, meta.H1cv_min, meta.H1cv_1se])
    ncol = H.shape[1]
    spec = PenaltySpec(alpha=1.0, lower=0.0, upper=np.inf, nlambda=config.nlambda)
    plan = make_fold_plan(data.n, config.folds, rng.child("meta-folds"),
                          y=data.y, family=data.family)
    cvf = cv_fit(Dataset(H, data.y, data.family), spec, plan, threads=config.threads)
    w = cvf.path.coefs[:, cvf.idx_min]
    omega0 = float(cvf.path.intercepts[cvf.idx_min])

    path = meta.cvfit.path
    b_min = path.coefs[:, meta.cvfit.idx_min]
    b_1se = path.coefs[:, meta.cvfit.idx_1se]
    w_min, w_1se = float(w[ncol - 2]), float(w[ncol - 1])
    beta_direct = w_min * b_min + w_1se * b_1se

    beta_star = beta_direct.copy()
    omega_sources = np.zeros(len(meta.sources))
    for col, k in enumerate(meta.retained_idx):
        omega_sources[k] = w[col]
        beta_star += w[col] * meta.sources[k].gamma
    intercept_star = (omega0
                      + w_min * float(path.intercepts[meta.cvfit.idx_min])
                      + w_1se * float(path.intercepts[meta.cvfit.idx_1se]))
    omega = np.concatenate([omega_sources, [w_min, w_1se]])
    return StackedModel(mode="standard", family=data.family,
                        calibration_method=meta.sources[0].method if meta.sources else
                        ("exponential" if config.calibration == "exp" else "isotonic"),
                        omega0=omega0, omega=omega, beta_direct=beta_direct,
                        beta_star=beta_star, intercept_star=intercept_star,
                        sources=meta.sources, fold_seed=config.seed,
                        meta_lambda=cvf.lambda_min)


def fit_simultaneous_stack(meta: MetaDesign, data: Dataset, config: StackConfig,
                           rng: RngStream) -> StackedModel:
    """Joint fit of unpenalised meta columns and penalised raw features."""
    mprime = meta.m_retained
    if mprime > SIMULTANEOUS_MAX_SOURCES:
        raise ConfigurationError(
            f"simultaneous stacking supports at most {SIMULTANEOUS_MAX_SOURCES} "
            f"retained sources (got {mprime}); use standard stacking instead")
    p = data.p
    design = np.column_stack([meta.H0cv, data.X]) if mprime else data.X
    pf = np.concatenate([np.zeros(mprime), np.ones(p)])
    lower = np.concatenate([np.zeros(mprime), np.full(p, -np.inf)])
    spec = PenaltySpec(alpha=config.alpha, penalty_factors=pf, lower=lower,
                       upper=np.inf, nlambda=config.nlambda)
    plan = make_fold_plan(data.n, config.folds, rng.child("joint-folds"),
                          y=data.y, family=data.family)
    cvf = cv_fit(Dataset(design, data.y, data.family), spec, plan,
                 threads=config.threads)
    coefs = cvf.path.coefs[:, cvf.idx_min]
    b0 = float(cvf.path.intercepts[cvf.idx_min])
    w = coefs[:mprime]
    beta_direct = coefs[mprime:].copy()

    beta_star = beta_direct.copy()
    omega = np.zeros(len(meta.sources))
    for col, k in enumerate(meta.retained_idx):
        omega[k] = w[col]
        beta_star += w[col] * meta.sources[k].gamma
    return StackedModel(mode="simultaneous", family=data.family,
                        calibration_method=meta.sources[0].method if meta.sources else
                        ("exponential" if config.calibration == "exp" else "isotonic"),
                        omega0=b0, omega=omega, beta_direct=beta_direct,
                        beta_star=beta_star, intercept_star=b0,
                        sources=meta.sources, fold_seed=config.seed,
                        meta_lambda=cvf.lambda_min)


@dataclass
class FitReport:
    """Per-source filter outcomes and the regularisation choices of a fit."""

    source_rows: list[dict]
    lambda_min: float
    lambda_1se: float
    cv_loss_min: float
    meta_lambda: float | None
    retained: int


def fit_transfer_model(data: Dataset, priors: PriorEffects,
                       config: StackConfig) -> tuple[StackedModel, MetaDesign, FitReport]:
    """End-to-end fit: calibrate, filter, cross-validate, stack."""
    rng = RngStream(config.seed, "fit")
    plan = make_fold_plan(data.n, config.folds, rng.child("folds"),
                          y=data.y, family=data.family)
    meta = build_meta_design(data, priors, plan, config, rng)
    if config.stacking == "sta":
        model = fit_standard_stack(meta, data, config, rng)
    else:
        model = fit_simultaneous_stack(meta, data, config, rng)
    report = FitReport(
        source_rows=[{"name": s.name, "pvalue": s.pvalue, "retained": s.retained,
                      "omega": float(model.omega[k])}
                     for k, s in enumerate(model.sources)],
        lambda_min=meta.cvfit.lambda_min,
        lambda_1se=meta.cvfit.lambda_1se,
        cv_loss_min=float(meta.cvfit.cv_loss_mean[meta.cvfit.idx_min]),
        meta_lambda=model.meta_lambda,
        retained=len(meta.retained_idx))
    return model, meta, report


def predict(model: StackedModel, Xnew: np.ndarray) -> np.ndarray:
    """Predicted values (gaussian) or probabilities (binomial) for new rows."""
    Xnew = np.asarray(Xnew, dtype=np.float64)
    if Xnew.ndim != 2 or Xnew.shape[1] != len(model.beta_star):
        raise DataValidationError(
            f"expected {len(model.beta_star)} feature columns, got shape {Xnew.shape}")
    eta = model.intercept_star + Xnew @ model.beta_star
    return np.asarray(link_inverse(model.family, eta))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def to_json_dict(model: StackedModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "family": model.family.value,
        "mode": model.mode,
        "calibration_method": model.calibration_method,
        "sources": [{
            "name": s.name,
            "method": s.method,
            "theta": s.theta,
            "tau": s.tau,
            "alpha_k": s.alpha_k,
            "pvalue": s.pvalue,
            "retained": s.retained,
            "gamma": s.gamma.tolist(),
        } for s in model.sources],
        "omega": model.omega.tolist(),
        "intercept_star": model.intercept_star,
        "beta_star": model.beta_star.tolist(),
        "fold_seed": model.fold_seed,
    }


def from_json_dict(doc: dict) -> StackedModel:
    version = doc.get("schema_version")
    if version is None or version > SCHEMA_VERSION:
        raise DataValidationError(
            f"model schema version {version} is newer than supported ({SCHEMA_VERSION})")
    sources = [CalibratedSource(method=s["method"],
                                gamma=np.asarray(s["gamma"], dtype=np.float64),
                                alpha_k=s["alpha_k"], theta=s["theta"], tau=s["tau"],
                                pvalue=s["pvalue"], retained=s["retained"],
                                name=s["name"])
               for s in doc["sources"]]
    beta_star = np.asarray(doc["beta_star"], dtype=np.float64)
    omega = np.asarray(doc["omega"], dtype=np.float64)
    mode = doc["mode"]
    p = len(beta_star)
    gamma_part = np.zeros(p)
    for k, s in enumerate(sources):
        gamma_part += omega[k] * s.gamma if k < len(omega) else 0.0
    return StackedModel(mode=mode, family=Family(doc["family"]),
                        calibration_method=doc["calibration_method"],
                        omega0=float("nan"), omega=omega,
                        beta_direct=beta_star - gamma_part,
                        beta_star=beta_star,
                        intercept_star=float(doc["intercept_star"]),
                        sources=sources, fold_seed=doc["fold_seed"])


def save_model(model: StackedModel, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> StackedModel:
    with open(path, encoding="utf-8") as fh:
        return from_json_dict(json.load(fh))
