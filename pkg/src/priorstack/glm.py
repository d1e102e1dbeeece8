"""Distribution families, links, and deviance losses shared by all learners."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError

# Probabilities are clamped here before logs; keeps deviances finite without
# perturbing anything at the tolerances used elsewhere.
PROB_CLAMP = 1e-12


class Family(enum.Enum):
    GAUSSIAN = "gaussian"
    BINOMIAL = "binomial"


@dataclass
class Dataset:
    """A target vector, a feature matrix, and the distribution family."""

    X: np.ndarray
    y: np.ndarray
    family: Family

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataValidationError(f"X must be 2-d, got shape {self.X.shape}")
        n, p = self.X.shape
        if n < 1 or p < 1:
            raise DataValidationError(f"need n >= 1 and p >= 1, got X of shape {self.X.shape}")
        if self.y.shape != (n,):
            raise DataValidationError(
                f"y must have shape ({n},) to match X, got {self.y.shape}")
        if not np.all(np.isfinite(self.X)):
            i, j = np.argwhere(~np.isfinite(self.X))[0]
            raise DataValidationError(f"non-finite feature value at row {i}, column {j}")
        if not np.all(np.isfinite(self.y)):
            i = int(np.flatnonzero(~np.isfinite(self.y))[0])
            raise DataValidationError(f"non-finite target value at row {i}")
        if self.family == Family.BINOMIAL and not np.all(np.isin(self.y, (0.0, 1.0))):
            i = int(np.flatnonzero(~np.isin(self.y, (0.0, 1.0)))[0])
            raise DataValidationError(
                f"binomial target must be coded 0/1, offending row {i}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def link_inverse(family: Family, eta):
    """Mean response for a linear predictor (identity or overflow-safe logistic)."""
    eta = np.asarray(eta, dtype=np.float64)
    if family == Family.GAUSSIAN:
        return eta.copy()
    # logistic in a form that never overflows for large |eta|
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _clamped(mu):
    return np.clip(mu, PROB_CLAMP, 1.0 - PROB_CLAMP)


def mean_deviance(family: Family, y, mu) -> float:
    """Mean deviance: MSE for gaussian, mean -2 log-likelihood for binomial."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != mu.shape:
        raise DataValidationError(f"length mismatch: y {y.shape} vs mu {mu.shape}")
    if family == Family.GAUSSIAN:
        return float(np.mean((y - mu) ** 2))
    m = _clamped(mu)
    return float(np.mean(-2.0 * (y * np.log(m) + (1.0 - y) * np.log1p(-m))))


def deviance_residuals(family: Family, y, mu) -> np.ndarray:
    """Per-sample absolute residual magnitudes on the deviance scale."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if family == Family.GAUSSIAN:
        return np.abs(y - mu)
    m = _clamped(mu)
    dev = -2.0 * (y * np.log(m) + (1.0 - y) * np.log1p(-m))
    return np.sqrt(np.maximum(dev, 0.0))


def intercept_only_mu(family: Family, y) -> float:
    """Fitted constant mean of the intercept-only model (sample mean, both families)."""
    return float(np.mean(np.asarray(y, dtype=np.float64)))
