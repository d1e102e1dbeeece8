"""Benchmark data generators and evaluation metrics.

Two generators are provided. The external one uses AR(1)-correlated features
with fixed-size coefficient effects and source coefficients perturbed away
from the target by +-h/p (transferable) or rebuilt with shuffled causal
positions (non-transferable). The internal one draws target and source
coefficients jointly Gaussian with a controllable cross-data-set correlation,
sparsifies them by thresholding a second Gaussian draw, and power-transforms
two of the source coefficient vectors. In both cases the prior effects handed
to the transfer fit are penalised-regression estimates computed from the
source data sets only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .calibration import PriorEffects
from .errors import InvalidParameterError, UndefinedMetricError
from .folds import make_fold_plan
from .glm import Dataset, Family, intercept_only_mu, link_inverse, mean_deviance
from .numerics import CorrelationSpec, RngStream, cholesky_upper, mvnormal_sample
from .solver import PenaltySpec, cv_fit


@dataclass(frozen=True)
class ExternalSimConfig:
    family: Family
    h: float = 5.0
    s: int = 50
    K: int = 5
    Ka: int = 5
    n_target: int = 100
    n_source: int = 150
    p: int = 1000
    n_test: int = 10_000
    alpha_source: float = 0.0   # penalty mix when deriving prior effects

    def __post_init__(self):
        if self.Ka > self.K or self.Ka < 0:
            raise InvalidParameterError(f"need 0 <= Ka <= K, got Ka={self.Ka}, K={self.K}")
        if self.s < 1 or 3 * self.s > self.p:
            raise InvalidParameterError(
                f"need 1 <= s <= p/3 for the non-transferable construction, got s={self.s}")
        if not np.isfinite(self.h):
            raise InvalidParameterError("h must be finite")


@dataclass(frozen=True)
class InternalSimConfig:
    family: Family
    rho_x: float = 0.95
    rho_beta: float = 0.99
    pi: float = 0.2
    w: float = 0.5
    n0: int = 100
    n123: int = 150
    p: int = 1000
    n_test: int = 10_000
    alpha_source: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.w <= 1.0):
            raise InvalidParameterError(f"signal weight w must lie in [0, 1], got {self.w}")
        if not (0.0 <= self.rho_x < 1.0) or not (0.0 <= self.rho_beta < 1.0):
            raise InvalidParameterError("rho_x and rho_beta must lie in [0, 1)")
        if not (0.0 < self.pi <= 1.0):
            raise InvalidParameterError(f"causal proportion pi must lie in (0, 1], got {self.pi}")


@dataclass
class SimOutput:
    """One replicate: target data, held-out test data, and derived priors."""

    target_train: Dataset
    target_test: Dataset
    priors: PriorEffects
    true_beta_target: np.ndarray
    true_source_betas: list = field(default_factory=list)
    source_coef_correlations: dict = field(default_factory=dict)


def _source_priors(datasets: list[Dataset], names: list[str], alpha_source: float,
                   rng: RngStream) -> PriorEffects:
    """Prior effects: cv-selected penalised coefficients per source data set."""
    cols = []
    for k, src in enumerate(datasets):
        plan = make_fold_plan(src.n, 10, rng.child(f"prior-folds/{k}"),
                              y=src.y, family=src.family)
        cvf = cv_fit(src, PenaltySpec(alpha=alpha_source), plan)
        cols.append(cvf.path.coefs[:, cvf.idx_min].copy())
    Z = np.column_stack(cols)
    return PriorEffects(Z=Z, source_names=names)


def _safe_corr(a: np.ndarray, b: np.ndarray) -> float:
    if np.std(a) == 0.0 or np.std(b) == 0.0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _draw_target(family: Family, eta: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    if family == Family.GAUSSIAN:
        return eta + gen.standard_normal(len(eta))
    prob = np.asarray(link_inverse(Family.BINOMIAL, eta))
    return (gen.random(len(eta)) < prob).astype(np.float64)


def external_coefficients(cfg: ExternalSimConfig, rng: RngStream
                          ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Target and per-source coefficient vectors of the external protocol."""
    p, s, h = cfg.p, cfg.s, cfg.h
    beta0 = np.zeros(p)
    beta0[:s] = 0.5
    betas = []
    for k in range(1, cfg.K + 1):
        gen = rng.child(f"src{k}").child("coef").generator()
        flip = np.where(gen.integers(0, 2, size=p) == 1, -1.0, 1.0)
        beta_k = np.empty(p)
        if k <= cfg.Ka:
            beta_k[:] = flip * h / p
            beta_k[:s] += 0.5
        else:
            step = 2.0 * h / p
            beta_k[:s] = flip[:s] * step                    # causal turned off
            beta_k[s:2 * s] = 0.5 + flip[s:2 * s] * step    # non-causal turned on
            rest = np.arange(2 * s, p)
            causal = gen.permutation(len(rest))[:s]
            tail = flip[rest] * step
            tail[causal] += 0.5
            beta_k[rest] = tail
        betas.append(beta_k)
    return beta0, betas


def simulate_external(cfg: ExternalSimConfig, rng: RngStream) -> SimOutput:
    """AR(1) features, fixed-effect coefficients, +-h/p source perturbations."""
    R = cholesky_upper(CorrelationSpec(p=cfg.p, rho=0.5))
    beta0, source_betas = external_coefficients(cfg, rng)

    X0 = mvnormal_sample(rng.child("X0"), cfg.n_target, R)
    Xt = mvnormal_sample(rng.child("Xtest"), cfg.n_test, R)
    y0 = _draw_target(cfg.family, X0 @ beta0, rng.child("y0").generator())
    yt = _draw_target(cfg.family, Xt @ beta0, rng.child("ytest").generator())

    sources = []
    names = []
    true_betas = []
    for k, beta_k in enumerate(source_betas, start=1):
        src_rng = rng.child(f"src{k}")
        Xk = mvnormal_sample(src_rng.child("X"), cfg.n_source, R)
        yk = _draw_target(cfg.family, 0.5 + Xk @ beta_k, src_rng.child("y").generator())
        sources.append(Dataset(Xk, yk, cfg.family))
        names.append(f"source{k}")
        true_betas.append(beta_k)

    priors = _source_priors(sources, names, cfg.alpha_source, rng.child("priors"))
    corrs = {name: {
        "true_vs_target": _safe_corr(bk, beta0),
        "prior_vs_target": _safe_corr(priors.Z[:, k], beta0),
    } for k, (name, bk) in enumerate(zip(names, true_betas))}
    return SimOutput(target_train=Dataset(X0, y0, cfg.family),
                     target_test=Dataset(Xt, yt, cfg.family),
                     priors=priors, true_beta_target=beta0,
                     true_source_betas=true_betas,
                     source_coef_correlations=corrs)


def _standardized_score(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    z = X @ beta
    sd = np.std(z, ddof=1)
    if sd == 0.0:
        return np.zeros_like(z)
    return (z - z.mean()) / sd


def _mix_target(family: Family, zstar: np.ndarray, w: float,
                gen: np.random.Generator) -> np.ndarray:
    eps = gen.standard_normal(len(zstar))
    lin = np.sqrt(w) * zstar + np.sqrt(1.0 - w) * eps
    if family == Family.GAUSSIAN:
        return lin
    # probabilities rounded to classes: 1[prob > 0.5] == 1[lin > 0]
    return (lin > 0.0).astype(np.float64)


def internal_coefficients(cfg: InternalSimConfig, rng: RngStream
                          ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Target and source coefficient vectors of the internal protocol."""
    p = cfg.p
    # coefficient covariance across the 4 data sets: data set 1 uncorrelated,
    # {0,2,3} pairwise rho_beta
    S = np.full((4, 4), cfg.rho_beta)
    S[1, :] = 0.0
    S[:, 1] = 0.0
    np.fill_diagonal(S, 1.0)
    L = np.linalg.cholesky(S)
    B1 = rng.child("B1").generator().standard_normal((p, 4)) @ L.T
    B2 = rng.child("B2").generator().standard_normal((p, 4)) @ L.T
    threshold = norm.ppf(1.0 - cfg.pi)
    B = B1 * (B2 > threshold)

    beta0 = B[:, 0].copy()
    beta1 = B[:, 1].copy()                                   # non-transferable
    beta2 = np.sign(B[:, 2]) * np.abs(B[:, 2]) ** 2
    beta3 = np.sign(B[:, 3]) * np.sqrt(np.abs(B[:, 3]))
    return beta0, [beta1, beta2, beta3]


def simulate_internal(cfg: InternalSimConfig, rng: RngStream) -> SimOutput:
    """Jointly Gaussian coefficients across data sets, thresholded sparse."""
    p = cfg.p
    R = cholesky_upper(CorrelationSpec(p=p, rho=cfg.rho_x))
    beta0, (beta1, beta2, beta3) = internal_coefficients(cfg, rng)

    X0full = mvnormal_sample(rng.child("X0"), cfg.n0 + cfg.n_test, R)
    z0 = _standardized_score(X0full, beta0)
    y0full = _mix_target(cfg.family, z0, cfg.w, rng.child("y0").generator())
    X0, Xt = X0full[:cfg.n0], X0full[cfg.n0:]
    y0, yt = y0full[:cfg.n0], y0full[cfg.n0:]

    sources = []
    names = []
    for k, beta_k in enumerate((beta1, beta2, beta3), start=1):
        Xk = mvnormal_sample(rng.child(f"X{k}"), cfg.n123, R)
        zk = _standardized_score(Xk, beta_k)
        yk = _mix_target(cfg.family, zk, cfg.w, rng.child(f"y{k}").generator())
        sources.append(Dataset(Xk, yk, cfg.family))
        names.append(f"source{k}")

    priors = _source_priors(sources, names, cfg.alpha_source, rng.child("priors"))
    corrs = {name: {
        "true_vs_target": _safe_corr(bk, beta0),
        "prior_vs_target": _safe_corr(priors.Z[:, k], beta0),
    } for k, (name, bk) in enumerate(zip(names, (beta1, beta2, beta3)))}
    return SimOutput(target_train=Dataset(X0, y0, cfg.family),
                     target_test=Dataset(Xt, yt, cfg.family),
                     priors=priors, true_beta_target=beta0,
                     true_source_betas=[beta1, beta2, beta3],
                     source_coef_correlations=corrs)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def relative_test_loss(family: Family, y_test: np.ndarray, predictions: np.ndarray,
                       train_mean_prediction: float) -> float:
    """Test deviance as a percentage of the deviance of predicting a constant."""
    y_test = np.asarray(y_test, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if y_test.shape != predictions.shape:
        raise UndefinedMetricError(
            f"length mismatch: {y_test.shape} truths vs {predictions.shape} predictions")
    const = np.full(len(y_test), float(train_mean_prediction))
    denom = mean_deviance(family, y_test, const)
    if denom == 0.0:
        raise UndefinedMetricError("mean prediction already perfect: relative loss undefined")
    return 100.0 * mean_deviance(family, y_test, predictions) / denom


def concordance_index(y: np.ndarray, score: np.ndarray) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs."""
    y = np.asarray(y, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if y.shape != score.shape:
        raise UndefinedMetricError("y and score must have equal length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("concordance needs both classes present")
    ranks = rankdata(score)   # midranks count ties as half wins
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# benchmark driver: fit selected methods on one replicate
# ---------------------------------------------------------------------------

BENCHMARK_METHODS = ("baseline", "exp.sta", "exp.sim", "iso.sta", "iso.sim")


def run_replicate(sim: SimOutput, alpha_target: float, rng: RngStream,
                  methods=BENCHMARK_METHODS, folds: int = 10,
                  threads: int = 1) -> dict[str, dict[str, float]]:
    """Fit each requested method on one simulated replicate.

    Returns per-method relative test loss (and concordance for binomial).
    The no-co-data cross-validation is shared across methods, so adding or
    removing methods never changes another method's numbers.
    """
    from .solver import predict_linear
    from .stacking import StackConfig, build_meta_design, fit_simultaneous_stack, \
        fit_standard_stack, predict

    data = sim.target_train
    test = sim.target_test
    family = data.family
    train_mean = intercept_only_mu(family, data.y)
    plan = make_fold_plan(data.n, folds, rng.child("folds"), y=data.y, family=family)
    cvfit = cv_fit(data, PenaltySpec(alpha=alpha_target), plan, threads=threads)

    def metrics(pred: np.ndarray, score: np.ndarray) -> dict[str, float]:
        out = {"relative_loss": relative_test_loss(family, test.y, pred, train_mean)}
        if family == Family.BINOMIAL:
            out["cindex"] = concordance_index(test.y, score)
        return out

    results: dict[str, dict[str, float]] = {}
    if "baseline" in methods:
        eta = predict_linear(cvfit.path, cvfit.idx_min, test.X)
        results["baseline"] = metrics(np.asarray(link_inverse(family, eta)), eta)

    metas = {}
    for method in methods:
        if method == "baseline":
            continue
        calib, mode = method.split(".")
        if calib not in metas:
            config = StackConfig(calibration=calib, stacking="sta",
                                 alpha=alpha_target, folds=folds, seed=rng.seed,
                                 threads=threads)
            metas[calib] = (config, build_meta_design(data, sim.priors, plan,
                                                      config, rng, cvfit=cvfit))
        config, meta = metas[calib]
        if mode == "sta":
            model = fit_standard_stack(meta, data, config, rng)
        else:
            model = fit_simultaneous_stack(meta, data, config, rng)
        pred = predict(model, test.X)
        eta = model.intercept_star + test.X @ model.beta_star
        results[method] = metrics(pred, eta)
    return results
