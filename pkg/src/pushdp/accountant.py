"""Gaussian-DP accounting: budget transfer, composition, and noise calibration.

Privacy is tracked in the Gaussian-DP parameter mu.  A single release of a
quantity with L2 sensitivity C plus N(0, sigma^2 I) noise is mu-GDP with
mu = C / sigma, and the guarantee converts to (eps, delta)-DP through

    delta(mu, eps) = Phi(-eps/mu + mu/2) - exp(eps) * Phi(-eps/mu - mu/2),

which is monotone increasing in mu for fixed eps and therefore invertible by
bisection.  K heterogeneous per-step budgets mu_k, each released on a random
1-in-J sample of the local data, compose to

    mu_tot = (1/J) * sqrt(sum_k (exp(mu_k^2) - 1)).

``uniform_budget`` and ``solve_mu0`` invert that composition for a flat and a
geometrically growing budget profile respectively, and
``noise_scale_general`` calibrates a common noise multiplier for an arbitrary
clipping/noise-shape profile from the linearized composition bound.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

# Per-step budgets above this make exp(mu^2) swamp double precision.
MU_STEP_CAP = 8.0
# Bracket for inverting delta(mu, eps) over mu.
MU_BRACKET = (1e-8, 64.0)


class NoBracket(ValueError):
    """The requested (eps, delta) point lies outside the invertible bracket."""


class BudgetOverflow(ValueError):
    """A per-step budget exceeds the representable cap."""

    def __init__(self, k: int, mu: float):
        self.k, self.mu = k, mu
        super().__init__(f"step budget mu_{k} = {mu:g} exceeds cap {MU_STEP_CAP:g}")


class RegimeWarning(UserWarning):
    """A per-step budget left the linearization regime (mu_k^2 > 1).

    Composition itself stays exact; only the closed-form noise-multiplier
    calibration becomes loose there, so this warns instead of failing.
    """


def gaussian_cdf(t: float) -> float:
    """Standard normal CDF via erfc; absolute error below 1e-12 everywhere."""
    return 0.5 * math.erfc(-t / math.sqrt(2.0))


def delta_from_mu_eps(mu: float, eps: float) -> float:
    """delta of the (eps, delta)-DP guarantee implied by mu-GDP.

    The exp(eps) * Phi(...) product is evaluated in log space so large eps
    cannot overflow before the tail probability pulls it back down.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    first = gaussian_cdf(-eps / mu + mu / 2.0)
    second = math.exp(eps + log_ndtr(-eps / mu - mu / 2.0))
    return max(0.0, first - second)


def mu_tot_from_eps_delta(eps: float, delta: float) -> float:
    """Invert the (eps, delta) transfer for the total GDP budget.

    Bisects delta(mu, eps) = delta over the fixed bracket, relying on the
    transfer being monotone in mu.  Raises NoBracket when delta falls outside
    the achievable range on the bracket, and flags results that land within
    rounding of the upper endpoint.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lo, hi = MU_BRACKET
    if not delta_from_mu_eps(lo, eps) <= delta <= delta_from_mu_eps(hi, eps):
        raise NoBracket(
            f"delta = {delta:g} is not reachable for eps = {eps:g} with mu in {MU_BRACKET}"
        )
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if delta_from_mu_eps(mid, eps) < delta:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    if mu > MU_BRACKET[1] - 1e-6:
        warnings.warn(
            f"mu_tot = {mu:g} sits at the upper bracket; the request is degenerate",
            RegimeWarning,
        )
    return mu


@dataclass(frozen=True)
class CompositionLedger:
    """Per-step GDP budgets plus the common subsampling probability."""

    step_budgets: np.ndarray
    sampling_prob: float

    def __post_init__(self):
        budgets = np.asarray(self.step_budgets, dtype=float)
        object.__setattr__(self, "step_budgets", budgets)
        if not 0 < self.sampling_prob <= 1:
            raise ValueError("sampling probability must lie in (0, 1]")


def compose_general(ledger: CompositionLedger) -> float:
    """Total GDP budget of K subsampled releases with heterogeneous budgets.

    Evaluates p * sqrt(sum_k expm1(mu_k^2)); expm1 keeps small budgets exact
    (a zero step contributes exactly zero).  Budgets above MU_STEP_CAP raise
    BudgetOverflow with the offending index; budgets merely past the
    linearization regime only warn.
    """
    mus = ledger.step_budgets
    if (mus < 0).any():
        raise ValueError("step budgets must be nonnegative")
    over = np.flatnonzero(mus > MU_STEP_CAP)
    if over.size:
        k = int(over[0])
        raise BudgetOverflow(k, float(mus[k]))
    if (np.square(mus) > 1.0).any():
        warnings.warn(
            "some per-step budgets exceed mu_k^2 = 1; composition stays exact but "
            "the closed-form noise-multiplier bound is loose in this regime",
            RegimeWarning,
        )
    return float(ledger.sampling_prob * math.sqrt(np.expm1(np.square(mus)).sum()))


def uniform_budget(mu_tot: float, J: int, K: int) -> float:
    """Flat per-step budget whose composition hits mu_tot exactly.

    Closed form mu_bar = sqrt(log1p(J^2 mu_tot^2 / K)); log1p/expm1 make the
    round trip through ``compose_general`` exact to rounding.
    """
    if mu_tot <= 0 or J < 1 or K < 1:
        raise ValueError("need positive budget and at least one node sample and step")
    return math.sqrt(math.log1p((J * mu_tot) ** 2 / K))


def solve_mu0(mu_tot: float, J: int, K: int, rho_mu: float) -> float:
    """Initial budget of a geometric profile mu_k = mu0 * rho_mu^(k/K).

    Solves sum_k expm1(mu_k^2) = (J mu_tot)^2 for mu0 by bisection.  The flat
    budget is always a valid upper bracket because growing profiles dominate
    it termwise; the bracket still auto-expands as a guard.  Raises
    BudgetOverflow when the solution would push the final step budget past
    the representable cap, and accepts rho_mu = 1 by delegating to the
    closed form.
    """
    if rho_mu < 1:
        raise ValueError("budget growth factor must be at least 1")
    if rho_mu == 1:
        return uniform_budget(mu_tot, J, K)
    if mu_tot <= 0 or J < 1 or K < 1:
        raise ValueError("need positive budget and at least one node sample and step")
    growth = rho_mu ** (np.arange(K) / K)
    target = (J * mu_tot) ** 2

    def residual(mu0: float) -> float:
        return float(np.expm1(np.square(mu0 * growth)).sum()) - target

    cap = MU_STEP_CAP / float(growth[-1])
    if residual(cap) < 0:
        raise BudgetOverflow(K - 1, MU_STEP_CAP)
    lo, hi = 0.0, min(uniform_budget(mu_tot, J, K), cap)
    while residual(hi) < 0:
        hi = min(2.0 * hi, cap)
    for _ in range(200):
        if hi - lo <= 1e-15 * hi:
            break
        mid = 0.5 * (lo + hi)
        if residual(mid) < 0:
            lo = mid
        else:
            hi = mid
    mu0 = 0.5 * (lo + hi)
    if abs(residual(mu0)) > 1e-10 * target:
        raise ArithmeticError("budget equation residual failed to converge")
    return mu0


def noise_scale_general(clip_bounds, noise_shape, J: int, mu_tot: float) -> float:
    """Common noise multiplier for an arbitrary clipping/noise-shape profile.

    Given per-step clip bounds C_k and a relative noise shape s_k (the step-k
    noise has standard deviation scale * s_k), returns

        scale = sqrt(2 * sum_k C_k^2 / s_k^2) / (J * mu_tot),

    the linearized-composition calibration; it is conservative while every
    implied step budget satisfies mu_k^2 <= 1.
    """
    C = np.asarray(clip_bounds, dtype=float)
    s = np.asarray(noise_shape, dtype=float)
    if C.shape != s.shape:
        raise ValueError("clip bounds and noise shape must have matching length")
    if (C <= 0).any() or (s <= 0).any():
        raise ValueError("clip bounds and noise shape must be positive")
    if mu_tot <= 0 or J < 1:
        raise ValueError("need a positive budget and at least one sample per node")
    return math.sqrt(2.0 * float(np.square(C / s).sum())) / (J * mu_tot)


@dataclass(frozen=True)
class PrivacySpec:
    """Resolved end-to-end privacy target for a K-step run over J-sample shards."""

    epsilon: float
    delta: float
    J: int
    K: int
    mu_tot: float

    @property
    def sampling_prob(self) -> float:
        return 1.0 / self.J

    @classmethod
    def resolve(cls, epsilon: float, delta: float, J: int, K: int) -> "PrivacySpec":
        """Solve for mu_tot and verify the transfer round-trips."""
        mu_tot = mu_tot_from_eps_delta(epsilon, delta)
        back = delta_from_mu_eps(mu_tot, epsilon)
        if abs(back - delta) > 1e-9:
            raise ArithmeticError(
                f"budget transfer failed to round-trip: delta {delta:g} -> {back:g}"
            )
        return cls(epsilon=epsilon, delta=delta, J=J, K=K, mu_tot=mu_tot)
