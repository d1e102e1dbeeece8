"""Elastic-net coordinate descent with per-coefficient penalties and sign boxes.

One optimisation engine for every model in the package. It minimises, for a
decreasing sequence of regularisation levels lam,

    (1/n) * sum_i loss_i(b0, beta) + lam * sum_j pf_j * (alpha*|beta_j|
                                                         + (1-alpha)/2*beta_j^2)
    subject to lower_j <= beta_j <= upper_j,

with loss_i = (1/2)(y_i - eta_i)^2 for gaussian targets and the negative
Bernoulli log-likelihood for binomial targets (solved by outer IRLS around
the weighted gaussian kernel). The intercept is unpenalised and
unconstrained. Columns are standardised internally for conditioning only;
the objective above is expressed in original-scale coefficients throughout,
and coefficients are returned on the original scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DataValidationError, DegenerateResponseError, InvalidParameterError
from .folds import FoldPlan
from .glm import Dataset, Family, link_inverse, mean_deviance
from .numerics import standardize_columns
from .parallel import run_indexed

COEF_TOL = 1e-7        # max coefficient change per sweep, standardised scale
KKT_TOL = 1e-7         # max KKT violation of the true objective at exit
MAX_SWEEPS = 100_000
IRLS_WEIGHT_FLOOR = 1e-5
IRLS_MAX_OUTER = 100
_PIN = 1e300           # l1 level that freezes a coefficient at zero


def soft_threshold(zval: float, gamma: float) -> float:
    """sign(zval) * max(|zval| - gamma, 0)."""
    if gamma < 0:
        raise InvalidParameterError(f"soft threshold needs gamma >= 0, got {gamma}")
    if zval > gamma:
        return zval - gamma
    if zval < -gamma:
        return zval + gamma
    return 0.0


@dataclass
class PenaltySpec:
    """Penalty mix, per-coefficient factors, and box constraints.

    penalty_factors, lower, upper may be scalars or p-vectors; 0 must be
    feasible for every box (lower_j <= 0 <= upper_j).
    """

    alpha: float
    penalty_factors: np.ndarray | float = 1.0
    lower: np.ndarray | float = -np.inf
    upper: np.ndarray | float = np.inf
    nlambda: int = 100
    lambda_min_ratio: float | None = None

    def resolve(self, n: int, p: int):
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.nlambda < 1:
            raise InvalidParameterError(f"nlambda must be >= 1, got {self.nlambda}")
        pf = np.broadcast_to(np.asarray(self.penalty_factors, dtype=np.float64), (p,)).copy()
        lo = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), (p,)).copy()
        up = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), (p,)).copy()
        if np.any(pf < 0) or not np.all(np.isfinite(pf)):
            raise InvalidParameterError("penalty factors must be finite and >= 0")
        if np.any(lo > 0) or np.any(up < 0):
            raise InvalidParameterError("boxes must satisfy lower_j <= 0 <= upper_j")
        if not np.any(pf > 0) and p > n:
            warnings.warn("all coefficients unpenalised with p > n: fit may be unbounded",
                          stacklevel=3)
        ratio = self.lambda_min_ratio
        if ratio is None:
            ratio = 0.01 if n < p else 1e-4
        return pf, lo, up, ratio


@dataclass
class PathFit:
    """Solutions along a decreasing lambda sequence, original coefficient scale."""

    lambdas: np.ndarray          # (L,)
    intercepts: np.ndarray       # (L,)
    coefs: np.ndarray            # (p, L)
    spec: PenaltySpec
    family: Family
    means: np.ndarray            # standardisation record
    sds: np.ndarray
    kkt: np.ndarray              # (L,) max KKT violation at exit, standardised scale
    sweeps: np.ndarray           # (L,) coordinate sweeps spent

    @property
    def p(self) -> int:
        return self.coefs.shape[0]

    @property
    def L(self) -> int:
        return self.lambdas.shape[0]


@dataclass
class CvFit:
    """A full-data path plus leave-fold-out linear predictors and loss curves."""

    path: PathFit
    fold_ids: np.ndarray         # (n,) in {1..K}
    cv_eta: np.ndarray           # (n, L)
    cv_loss_mean: np.ndarray     # (L,)
    cv_loss_se: np.ndarray       # (L,)
    idx_min: int
    idx_1se: int

    @property
    def lambda_min(self) -> float:
        return float(self.path.lambdas[self.idx_min])

    @property
    def lambda_1se(self) -> float:
        return float(self.path.lambdas[self.idx_1se])


# ---------------------------------------------------------------------------
# numba kernels: all work happens on standardised columns. The penalty levels
# l1_j, l2_j and the boxes are pre-scaled so that the solution minimises the
# original-scale objective exactly.
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True, fastmath={'reassoc', 'contract'})
def _cd_pass(Xs, w, r, beta, v, l1, l2, lo, up, idx, n_inv):
    maxd = 0.0
    n = r.shape[0]
    for t in range(idx.shape[0]):
        j = idx[t]
        z = 0.0
        for i in range(n):
            z += w[i] * Xs[i, j] * r[i]
        z = z * n_inv + v[j] * beta[j]
        if z > l1[j]:
            num = z - l1[j]
        elif z < -l1[j]:
            num = z + l1[j]
        else:
            num = 0.0
        den = v[j] + l2[j]
        b = num / den if den > 0.0 else 0.0
        if b < lo[j]:
            b = lo[j]
        elif b > up[j]:
            b = up[j]
        d = b - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= d * Xs[i, j]
            beta[j] = b
            if abs(d) > maxd:
                maxd = abs(d)
    return maxd


@njit(cache=True, nogil=True, fastmath={'reassoc', 'contract'})
def _intercept_pass(w, r, wsum):
    num = 0.0
    n = r.shape[0]
    for i in range(n):
        num += w[i] * r[i]
    d = num / wsum
    for i in range(n):
        r[i] -= d
    return d


@njit(cache=True, nogil=True)
def _cd_solve(Xs, w, r, beta, b0, v, l1, l2, lo, up, tol, budget):
    n, p = Xs.shape
    n_inv = 1.0 / n
    wsum = 0.0
    for i in range(n):
        wsum += w[i]
    all_idx = np.arange(p)
    sweeps = 0
    while sweeps < budget:
        d0 = _intercept_pass(w, r, wsum)
        b0 += d0
        maxd = _cd_pass(Xs, w, r, beta, v, l1, l2, lo, up, all_idx, n_inv)
        if abs(d0) > maxd:
            maxd = abs(d0)
        sweeps += 1
        if maxd < tol:
            break
        active = np.nonzero(beta)[0]
        while sweeps < budget and active.shape[0] > 0:
            d0 = _intercept_pass(w, r, wsum)
            b0 += d0
            maxd = _cd_pass(Xs, w, r, beta, v, l1, l2, lo, up, active, n_inv)
            if abs(d0) > maxd:
                maxd = abs(d0)
            sweeps += 1
            if maxd < tol:
                break
    return b0, sweeps


@njit(cache=True, nogil=True, fastmath={'reassoc', 'contract'})
def _col_curvature(Xs, w, n_inv):
    n, p = Xs.shape
    v = np.zeros(p)
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += w[i] * Xs[i, j] * Xs[i, j]
        v[j] = acc * n_inv
    return v


@njit(cache=True, nogil=True, fastmath={'reassoc', 'contract'})
def _grad(Xs, u, n_inv):
    # gradient of the smooth loss wrt standardised coefficients: -(1/n) Xs' u
    n, p = Xs.shape
    g = np.empty(p)
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += Xs[i, j] * u[i]
        g[j] = -acc * n_inv
    return g


@njit(cache=True, nogil=True)
def _kkt_violation(g, beta, l1, l2, lo, up):
    # largest negative directional derivative over feasible directions
    viol = 0.0
    for j in range(beta.shape[0]):
        b = beta[j]
        if b != 0.0:
            sgn = 1.0 if b > 0 else -1.0
            base = g[j] + l2[j] * b + l1[j] * sgn
            dplus = base
            dminus = -base
        else:
            dplus = g[j] + l1[j]
            dminus = -g[j] + l1[j]
        if b < up[j] and -dplus > viol:
            viol = -dplus
        if b > lo[j] and -dminus > viol:
            viol = -dminus
    return viol


@njit(cache=True, nogil=True)
def _sigmoid(eta):
    out = np.empty_like(eta)
    for i in range(eta.shape[0]):
        e = eta[i]
        if e >= 0.0:
            out[i] = 1.0 / (1.0 + np.exp(-e))
        else:
            ex = np.exp(e)
            out[i] = ex / (1.0 + ex)
    return out


@njit(cache=True, nogil=True)
def _fit_at_lambda(Xs, y, beta, b0, l1, l2, lo, up, tol, budget, kkt_tol,
                   binomial, weight_floor, irls_max):
    """Solve one lambda to the KKT tolerance; returns (b0, sweeps, violation)."""
    n = y.shape[0]
    n_inv = 1.0 / n
    total = 0
    if not binomial:
        w = np.ones(n)
        v = _col_curvature(Xs, w, n_inv)
        r = y - b0 - Xs @ beta
        cur_tol = tol
        while True:
            b0, sw = _cd_solve(Xs, w, r, beta, b0, v, l1, l2, lo, up, cur_tol, budget - total)
            total += sw
            g = _grad(Xs, r, n_inv)
            viol = _kkt_violation(g, beta, l1, l2, lo, up)
            gi = 0.0
            for i in range(n):
                gi += r[i]
            gi = abs(gi) * n_inv
            if gi > viol:
                viol = gi
            if viol <= kkt_tol or total >= budget:
                return b0, total, viol
            cur_tol = max(cur_tol * 0.1, 1e-15)
    else:
        eta = b0 + Xs @ beta
        outer = 0
        viol = np.inf
        while True:
            mu = _sigmoid(eta)
            w = np.empty(n)
            r = np.empty(n)
            for i in range(n):
                wi = mu[i] * (1.0 - mu[i])
                if wi < weight_floor:
                    wi = weight_floor
                w[i] = wi
                r[i] = (y[i] - mu[i]) / wi
            v = _col_curvature(Xs, w, n_inv)
            zeta = eta + r
            b0, sw = _cd_solve(Xs, w, r, beta, b0, v, l1, l2, lo, up, tol, budget - total)
            total += sw
            outer += 1
            eta = zeta - r
            mu = _sigmoid(eta)
            u = y - mu
            g = _grad(Xs, u, n_inv)
            viol = _kkt_violation(g, beta, l1, l2, lo, up)
            gi = 0.0
            for i in range(n):
                gi += u[i]
            gi = abs(gi) * n_inv
            if gi > viol:
                viol = gi
            if viol <= kkt_tol or outer >= irls_max or total >= budget:
                return b0, total, viol


# ---------------------------------------------------------------------------
# path driver
# ---------------------------------------------------------------------------

def _true_kkt(Xs, y, beta, b0, l1, l2, lo_std, up_std, binomial) -> float:
    """KKT violation of the true objective at an arbitrary point."""
    eta = b0 + Xs @ beta
    if binomial:
        u = y - np.asarray(link_inverse(Family.BINOMIAL, eta))
    else:
        u = y - eta
    g = -(Xs.T @ u) / len(y)
    viol = _kkt_violation(g, beta, l1, l2, lo_std, up_std)
    return max(viol, abs(float(np.mean(u))))


def _initial_intercept(y: np.ndarray, family: Family) -> float:
    m = float(np.mean(y))
    if family == Family.GAUSSIAN:
        return m
    m = min(max(m, 1e-10), 1.0 - 1e-10)
    return float(np.log(m / (1.0 - m)))


def _lambda_max(Xs, y, family, pf, alpha, s_safe, lo_std, up_std,
                coef_tol, kkt_tol, max_sweeps):
    """Smallest lambda freezing every penalised, box-free-at-zero coefficient."""
    p = Xs.shape[1]
    penalized = pf > 0
    l1 = np.where(penalized, _PIN, 0.0)
    l2 = np.zeros(p)
    beta = np.zeros(p)
    b0 = _initial_intercept(y, family)
    b0, _, _ = _fit_at_lambda(Xs, y, beta, b0, l1, l2, lo_std, up_std,
                              coef_tol, max_sweeps, kkt_tol,
                              family == Family.BINOMIAL, IRLS_WEIGHT_FLOOR,
                              IRLS_MAX_OUTER)
    eta = b0 + Xs @ beta
    if family == Family.BINOMIAL:
        u = y - np.asarray(link_inverse(Family.BINOMIAL, eta))
    else:
        u = y - eta
    g = -(Xs.T @ u) / len(y)
    # a coefficient can leave zero only in directions its box allows
    need = np.maximum(np.where(up_std > 0, -g, 0.0), np.where(lo_std < 0, g, 0.0))
    need = np.where(penalized, np.maximum(need, 0.0), 0.0)
    alpha_eff = max(alpha, 1e-3)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(penalized, need * s_safe / (pf * alpha_eff), 0.0)
    lam_max = float(np.max(lam)) if p else 0.0
    if not np.isfinite(lam_max) or lam_max <= 0.0:
        lam_max = 1.0
    return lam_max, beta, b0


def fit_path(data: Dataset, spec: PenaltySpec,
             lambdas: np.ndarray | None = None, *,
             coef_tol: float = COEF_TOL, kkt_tol: float = KKT_TOL,
             max_sweeps: int = MAX_SWEEPS) -> PathFit:
    """Fit the penalised GLM along a lambda path with warm starts.

    lambdas overrides the automatic sequence (shared sequences across CV
    folds, or a single level such as 0 for an unpenalised fit).
    """
    n, p = data.n, data.p
    y = data.y
    binomial = data.family == Family.BINOMIAL
    if binomial and (np.all(y == 0) or np.all(y == 1)):
        raise DegenerateResponseError("binomial target contains a single class")
    pf, lo, up, ratio = spec.resolve(n, p)

    Xs, means, sds = standardize_columns(data.X)
    Xs = np.asfortranarray(Xs)
    s_safe = np.where(sds > 0, sds, 1.0)
    lo_std = lo * s_safe
    up_std = up * s_safe

    beta = np.zeros(p)
    pin_first = False
    if lambdas is None:
        lam_max, beta, b0 = _lambda_max(Xs, y, data.family, pf, spec.alpha, s_safe,
                                        lo_std, up_std, coef_tol, kkt_tol, max_sweeps)
        if spec.nlambda == 1:
            lambdas = np.array([lam_max])
        else:
            lambdas = np.geomspace(lam_max, lam_max * ratio, spec.nlambda)
        # at lam_max the penalised coefficients are zero by construction;
        # pinning them there avoids float-boundary wiggles
        pin_first = True
    else:
        lambdas = np.asarray(lambdas, dtype=np.float64)
        if lambdas.ndim != 1 or len(lambdas) == 0 or np.any(np.diff(lambdas) > 0):
            raise InvalidParameterError("lambdas must be a non-increasing 1-d sequence")
        b0 = _initial_intercept(y, data.family)

    L = len(lambdas)
    coefs_std = np.zeros((p, L))
    intercepts_std = np.zeros(L)
    kkt = np.zeros(L)
    sweeps = np.zeros(L, dtype=np.int64)
    for l, lam in enumerate(lambdas):
        l1 = lam * pf * spec.alpha / s_safe
        l2 = lam * pf * (1.0 - spec.alpha) / (s_safe * s_safe)
        if l == 0 and pin_first:
            l1_fit = np.where(pf > 0, _PIN, 0.0)
            l2_fit = np.zeros(p)
        else:
            l1_fit, l2_fit = l1, l2
        b0, sw, viol = _fit_at_lambda(Xs, y, beta, b0, l1_fit, l2_fit, lo_std, up_std,
                                      coef_tol, max_sweeps, kkt_tol, binomial,
                                      IRLS_WEIGHT_FLOOR, IRLS_MAX_OUTER)
        if l == 0 and pin_first:
            viol = _true_kkt(Xs, y, beta, b0, l1, l2, lo_std, up_std, binomial)
        coefs_std[:, l] = beta
        intercepts_std[l] = b0
        kkt[l] = viol
        sweeps[l] = sw

    coefs = coefs_std / s_safe[:, None]
    intercepts = intercepts_std - means @ coefs
    return PathFit(lambdas=lambdas, intercepts=intercepts, coefs=coefs, spec=spec,
                   family=data.family, means=means, sds=sds, kkt=kkt, sweeps=sweeps)


def predict_linear(fit: PathFit, lambda_index: int, Xnew: np.ndarray) -> np.ndarray:
    """Linear predictor eta at one lambda for new rows."""
    Xnew = np.asarray(Xnew, dtype=np.float64)
    if Xnew.ndim != 2 or Xnew.shape[1] != fit.p:
        raise DataValidationError(
            f"expected {fit.p} feature columns, got shape {Xnew.shape}")
    return fit.intercepts[lambda_index] + Xnew @ fit.coefs[:, lambda_index]


def objective_value(data: Dataset, spec: PenaltySpec, lam: float,
                    intercept: float, coefs: np.ndarray) -> float:
    """The solver's objective at an arbitrary point, original coefficient scale."""
    pf, _, _, _ = spec.resolve(data.n, data.p)
    eta = intercept + data.X @ coefs
    if data.family == Family.GAUSSIAN:
        loss = 0.5 * float(np.mean((data.y - eta) ** 2))
    else:
        loss = 0.5 * mean_deviance(Family.BINOMIAL, data.y,
                                   link_inverse(Family.BINOMIAL, eta))
    pen = lam * float(np.sum(pf * (spec.alpha * np.abs(coefs)
                                   + 0.5 * (1.0 - spec.alpha) * coefs ** 2)))
    return loss + pen


def cv_fit(data: Dataset, spec: PenaltySpec, folds: FoldPlan,
           threads: int = 1) -> CvFit:
    """K-fold cross-validation on a shared lambda sequence from the full data.

    Returns leave-fold-out linear predictors for every lambda together with
    the lambda_min / lambda_1se indices of the mean deviance curve.
    """
    if folds.n != data.n:
        raise DataValidationError(
            f"fold plan covers {folds.n} samples, data has {data.n}")
    full = fit_path(data, spec)
    lambdas = full.lambdas
    L = len(lambdas)
    n = data.n
    K = folds.K

    def one_fold(k: int):
        tr = folds.train_mask(k)
        sub = Dataset(data.X[tr], data.y[tr], data.family)
        f = fit_path(sub, spec, lambdas=lambdas)
        te = ~tr
        return f.intercepts[None, :] + data.X[te] @ f.coefs

    fold_etas = run_indexed(one_fold, list(range(1, K + 1)), threads)

    cv_eta = np.empty((n, L))
    fold_loss = np.empty((K, L))
    for k, eta_k in zip(range(1, K + 1), fold_etas):
        te = folds.test_mask(k)
        cv_eta[te] = eta_k
        mu = link_inverse(data.family, eta_k)
        for l in range(L):
            fold_loss[k - 1, l] = mean_deviance(data.family, data.y[te], mu[:, l])

    sizes = np.array([np.sum(folds.test_mask(k)) for k in range(1, K + 1)], dtype=np.float64)
    cv_loss_mean = (sizes / n) @ fold_loss
    cv_loss_se = np.std(fold_loss, axis=0, ddof=1) / np.sqrt(K)

    idx_min = int(np.argmin(cv_loss_mean))  # first minimum = largest lambda on ties
    threshold = cv_loss_mean[idx_min] + cv_loss_se[idx_min]
    idx_1se = int(np.flatnonzero(cv_loss_mean <= threshold)[0])
    return CvFit(path=full, fold_ids=folds.assignments.copy(), cv_eta=cv_eta,
                 cv_loss_mean=cv_loss_mean, cv_loss_se=cv_loss_se,
                 idx_min=idx_min, idx_1se=idx_1se)
