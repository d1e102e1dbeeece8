"""Deterministic random streams, AR(1) Gaussian sampling, column standardisation.

Every stochastic step in the package draws from a labelled :class:`RngStream`.
Streams are keyed by (seed, label), so results do not depend on execution
order or on how much parallelism is in play.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class RngStream:
    """A reproducible, labelled random stream.

    Identical (seed, label) pairs always yield identical byte streams, and
    streams with different labels derived from one seed are statistically
    independent (counter-based Philox keyed through SeedSequence).
    """

    seed: int
    label: str = "root"

    def child(self, suffix: str) -> "RngStream":
        """Derive an independent sub-stream for a named sub-task."""
        return RngStream(self.seed, f"{self.label}/{suffix}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        digest = hashlib.sha256(self.label.encode("utf-8")).digest()
        entropy = [int(self.seed) & 0xFFFFFFFFFFFFFFFF,
                   int.from_bytes(digest[:16], "little")]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class CorrelationSpec:
    """AR(1) correlation structure: Sigma_ij = rho^|i-j| over p features."""

    p: int
    rho: float

    def __post_init__(self):
        if self.p < 1:
            raise InvalidParameterError(f"p must be >= 1, got {self.p}")
        if not np.isfinite(self.rho) or not (0.0 <= self.rho < 1.0):
            raise InvalidParameterError(f"rho must lie in [0, 1), got {self.rho}")

    def materialize(self) -> np.ndarray:
        """Explicit p x p correlation matrix (small p only)."""
        idx = np.arange(self.p)
        return self.rho ** np.abs(idx[:, None] - idx[None, :])


def cholesky_upper(spec: CorrelationSpec) -> np.ndarray:
    """Upper-triangular R with R'R = Sigma for the AR(1) correlation.

    Uses the closed form of the AR(1) Cholesky factor: the first row of R is
    rho^j and each later row j has entries rho^(i-j) * sqrt(1 - rho^2) for
    i >= j, so Sigma is never materialised.
    """
    p, rho = spec.p, spec.rho
    R = np.zeros((p, p))
    powers = rho ** np.arange(p)
    R[0, :] = powers
    if p > 1:
        scale = np.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            R[j, j:] = scale * powers[: p - j]
    return R


def mvnormal_sample(rng: RngStream, n: int, R: np.ndarray) -> np.ndarray:
    """Draw n rows from N(0, R'R) as E @ R with E iid standard Gaussian.

    Deterministic given the stream; n = 0 yields an empty (0, p) matrix.
    """
    p = R.shape[1]
    if n == 0:
        return np.empty((0, p))
    E = rng.generator().standard_normal((n, p))
    return E @ R


def standardize_columns(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centre and scale each column to mean 0, population sd 1.

    Constant columns are centred and passed through with their sd recorded
    as 0 (flagging them, not an error). Returns (X_std, means, sds).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise InvalidParameterError("standardize_columns needs at least 2 rows")
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    Xc = X - means
    safe = np.where(sds > 0, sds, 1.0)
    return Xc / safe, means, sds
