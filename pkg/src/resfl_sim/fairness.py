"""Group-level uncertainty statistics and the uncertainty fairness metric.

The metric compares per-group epistemic uncertainties u_g = 1/alpha0_g:

    ufm = (max_g u_g - min_g u_g) / (mean_g u_g + eps)

and a client's aggregation weight is omega = 1 / (1 + ufm). ufm is 0
when all groups receive equal confidence and approaches (but stays
below) G as a single group dominates the total uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class GroupUncertainty:
    group_id: int
    total_evidence: float
    sample_count: int

    @property
    def uncertainty(self) -> float:
        return 1.0 / self.total_evidence


@dataclass(frozen=True)
class FairnessSignal:
    ufm: float
    mean_uncertainty: float
    uncertainty_variance: float

    @property
    def weight(self) -> float:
        return aggregation_weight(self.ufm)


def group_uncertainties(per_sample_alpha0, num_groups: int) -> list[GroupUncertainty]:
    """Mean per-sample total evidence by group.

    ``per_sample_alpha0`` is a sequence of (alpha0, group_id) pairs with
    0-based group ids. Groups with no samples are omitted.
    """
    if num_groups < 1:
        raise ValueError("num_groups must be >= 1")
    pairs = list(per_sample_alpha0)
    if not pairs:
        raise ValueError("no samples")
    sums = np.zeros(num_groups)
    counts = np.zeros(num_groups, dtype=int)
    for a0, g in pairs:
        if not 0 <= g < num_groups:
            raise ValueError(f"group id {g} out of range [0, {num_groups})")
        sums[g] += a0
        counts[g] += 1
    return [
        GroupUncertainty(g, sums[g] / counts[g], int(counts[g]))
        for g in range(num_groups)
        if counts[g] > 0
    ]


def uncertainty_variance(us) -> float:
    """Population variance of per-group uncertainties."""
    us = np.asarray(list(us), dtype=float)
    if us.size == 0:
        raise ValueError("empty uncertainty list")
    return float(np.mean((us - us.mean()) ** 2))


def ufm(us, eps: float = DEFAULT_EPS) -> float:
    us = np.asarray(list(us), dtype=float)
    if us.size == 0:
        raise ValueError("empty uncertainty list")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return float((us.max() - us.min()) / (us.mean() + eps))


def aggregation_weight(ufm_value: float) -> float:
    if ufm_value < 0:
        raise ValueError("ufm must be >= 0")
    return 1.0 / (1.0 + ufm_value)


def fairness_signal(us, eps: float = DEFAULT_EPS) -> FairnessSignal:
    us = list(us)
    return FairnessSignal(
        ufm=ufm(us, eps),
        mean_uncertainty=float(np.mean(us)),
        uncertainty_variance=uncertainty_variance(us),
    )


def bias_gap(predicted_positive_rate_by_group) -> float:
    """Max pairwise absolute gap in predicted-positive rates."""
    rates = np.asarray(list(predicted_positive_rate_by_group), dtype=float)
    if rates.size < 2:
        raise ValueError("need at least 2 groups")
    return float(rates.max() - rates.min())
