"""K-fold assignment plans, stratified for binomial targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFoldError, InvalidParameterError
from .glm import Family
from .numerics import RngStream


@dataclass(frozen=True)
class FoldPlan:
    """Fold memberships in {1..K} for each sample, plus seed provenance."""

    K: int
    assignments: np.ndarray
    rng_label: str = ""

    def __post_init__(self):
        counts = np.bincount(self.assignments, minlength=self.K + 1)[1:]
        if len(counts) != self.K or np.any(counts == 0):
            raise InvalidParameterError("every fold must be nonempty")

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def train_mask(self, k: int) -> np.ndarray:
        return self.assignments != k

    def test_mask(self, k: int) -> np.ndarray:
        return self.assignments == k


def _spread(indices: np.ndarray, K: int, start: int, out: np.ndarray):
    # round-robin so class counts differ by at most one across folds
    for pos, idx in enumerate(indices):
        out[idx] = (start + pos) % K + 1


def make_fold_plan(n: int, K: int, rng: RngStream,
                   y: np.ndarray | None = None,
                   family: Family = Family.GAUSSIAN) -> FoldPlan:
    """Assign samples to K folds.

    Gaussian targets get a simple random split; binomial targets are
    stratified so every training complement keeps both classes whenever
    that is feasible.
    """
    if K < 2:
        raise InvalidParameterError(f"need K >= 2 folds, got {K}")
    if K > n:
        raise InvalidParameterError(f"cannot split {n} samples into {K} nonempty folds")
    gen = rng.generator()
    assignments = np.zeros(n, dtype=np.int64)
    if family == Family.BINOMIAL:
        if y is None:
            raise InvalidParameterError("binomial fold plans need the target vector")
        y = np.asarray(y)
        pos = np.flatnonzero(y == 1)
        neg = np.flatnonzero(y == 0)
        if len(pos) < 2 or len(neg) < 2:
            raise DegenerateFoldError(
                "need at least two samples of each class to keep every "
                f"training complement two-class (got {len(pos)} positives, "
                f"{len(neg)} negatives)")
        _spread(gen.permutation(pos), K, 0, assignments)
        # continuing the round-robin keeps every fold nonempty and sizes balanced
        _spread(gen.permutation(neg), K, len(pos) % K, assignments)
    else:
        perm = gen.permutation(n)
        _spread(perm, K, 0, assignments)
    return FoldPlan(K=K, assignments=assignments, rng_label=rng.label)
