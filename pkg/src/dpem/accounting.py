"""Privacy-budget arithmetic on the zero-concentrated DP scale.

An (eps, delta) budget is converted to a zCDP level rho = eps_tilde^2 via
eps_tilde = sqrt(log(1/delta) + eps) - sqrt(log(1/delta)); a rho-zCDP
mechanism is (rho + 2 sqrt(rho log(1/delta)), delta)-DP, which makes the
conversion exact in both directions.  Gaussian noise with std
sensitivity / sqrt(2 rho) realizes rho-zCDP, and rho splits additively
across sequentially composed releases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError
from .validation import check_count, check_positive, check_probability

__all__ = [
    "PrivacyBudget",
    "make_budget",
    "zcdp_to_approx_dp",
    "gaussian_sigma_for_zcdp",
    "split_budget_alg1",
    "split_budget_alg2",
]


@dataclass(frozen=True)
class PrivacyBudget:
    """(eps, delta) plus the derived zCDP scale eps_tilde (rho = eps_tilde^2)."""

    eps: float
    delta: float
    eps_tilde: float

    def __post_init__(self):
        object.__setattr__(self, "eps", check_positive("eps", self.eps))
        object.__setattr__(self, "delta", check_probability("delta", self.delta))
        object.__setattr__(self, "eps_tilde", check_positive("eps_tilde", self.eps_tilde))
        log_delta = math.log(1.0 / self.delta)
        expected = math.sqrt(log_delta + self.eps) - math.sqrt(log_delta)
        if abs(self.eps_tilde - expected) > 1e-12 * max(1.0, expected):
            raise DomainError(
                f"eps_tilde={self.eps_tilde!r} does not match the budget "
                f"(expected {expected!r})"
            )

    @property
    def rho(self) -> float:
        return self.eps_tilde**2


def make_budget(eps: float, delta: float) -> PrivacyBudget:
    eps = check_positive("eps", eps)
    delta = check_probability("delta", delta)
    log_delta = math.log(1.0 / delta)
    eps_tilde = math.sqrt(log_delta + eps) - math.sqrt(log_delta)
    return PrivacyBudget(eps=eps, delta=delta, eps_tilde=eps_tilde)


def zcdp_to_approx_dp(rho: float, delta: float) -> float:
    """The eps for which a rho-zCDP mechanism is (eps, delta)-DP."""
    rho = check_positive("rho", rho)
    delta = check_probability("delta", delta)
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def gaussian_sigma_for_zcdp(sensitivity: float, rho: float) -> float:
    """Noise std making a release of the given L2 sensitivity rho-zCDP:
    sigma = sensitivity / sqrt(2 rho)."""
    sensitivity = check_positive("sensitivity", sensitivity)
    rho = check_positive("rho", rho)
    return sensitivity / math.sqrt(2.0 * rho)


def split_budget_alg1(budget: PrivacyBudget, T: int) -> float:
    """Per-iteration rho for an algorithm touching the full dataset every
    iteration: sequential composition, rho_iter = eps_tilde^2 / T."""
    T = check_count("T", T)
    return budget.rho / T


def split_budget_alg2(budget: PrivacyBudget, d: int, T: int) -> float:
    """Per-coordinate rho when each iteration works on its own disjoint
    subset: iterations compose in parallel, so only the d coordinate
    releases split the budget and rho_coord = eps_tilde^2 / d regardless
    of T."""
    d = check_count("d", d)
    check_count("T", T)
    return budget.rho / d
