"""Closed-form a-priori moments and correlations of claim outcomes.

Everything here is exact arithmetic: each expectation over the effect pair
reduces to product moments E[Theta1^a Theta2^b], supplied in closed form, so
no numerical integration appears in this module.

Counts follow an exponential dispersion family with mean lambda1*theta1,
dispersion psi1 and variance function V1; the average severity given n
claims follows one with mean lambda2*theta2, dispersion psi2/n and variance
function V2.  The Poisson/Gamma pair (V1(mu)=mu, psi1=1; V2(mu)=mu^2) is the
configuration the rest of the package works in, but the formulas accept any
polynomial variance function, which keeps every required effect expectation
in product form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Callable

from bonusmalus.effects import product_moment
from bonusmalus.portfolio import ModelParams, Portfolio, RiskClass

__all__ = [
    "PolyVariance",
    "POISSON_VARIANCE",
    "GAMMA_VARIANCE",
    "AggregateMoments",
    "AggregateCorrelations",
    "IndividualMoments",
    "moment_set_general",
    "correlations_aggregate",
    "correlations_individual",
    "write_moments_csv",
]


@dataclass(frozen=True)
class PolyVariance:
    """Polynomial variance function V(mu) = sum_j coeffs[j] * mu^j.

    Restricting to polynomials keeps E[V(lam*Theta) * companion] expressible
    through product moments; it covers the classical families (Poisson mu,
    Gamma mu^2, inverse Gaussian mu^3).
    """

    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.coeffs:
            raise ValueError("variance polynomial needs at least one coefficient")

    def __call__(self, mu: float) -> float:
        return sum(c * mu**j for j, c in enumerate(self.coeffs))


POISSON_VARIANCE = PolyVariance((0.0, 1.0))
GAMMA_VARIANCE = PolyVariance((0.0, 0.0, 1.0))

MomentOracle = Callable[[float, float], float]


def _against_theta1(v: PolyVariance, lam: float, b: float, m: MomentOracle) -> float:
    """E[ V(lam * Theta1) * Theta2^b ]."""
    return sum(c * lam**j * m(j, b) for j, c in enumerate(v.coeffs) if c != 0.0)


def _against_theta2(v: PolyVariance, lam: float, a: float, m: MomentOracle) -> float:
    """E[ Theta1^a * V(lam * Theta2) ]."""
    return sum(c * lam**j * m(a, j) for j, c in enumerate(v.coeffs) if c != 0.0)


@dataclass(frozen=True)
class AggregateMoments:
    """Moments of yearly count N and aggregate amount S for one class.

    Cross-period entries refer to two distinct years of the same subject;
    the shared effect pair is the only link between years.
    """

    mean_n: float
    var_n: float
    mean_s: float
    var_s: float
    cov_s_s: float
    cov_n_s_same: float
    cov_n_s_cross: float
    cov_n_n: float


def moment_set_general(
    params: ModelParams,
    risk_class: RiskClass,
    effect_moment: MomentOracle | None = None,
    v1: PolyVariance = POISSON_VARIANCE,
    v2: PolyVariance = GAMMA_VARIANCE,
) -> AggregateMoments:
    """All aggregate-outcome moments for one risk class.

    Parameters
    ----------
    params : ModelParams
    risk_class : RiskClass
    effect_moment : callable (a, b) -> E[Theta1^a Theta2^b], optional
        Defaults to the closed form of the lognormal pair in ``params``.
        Supplying a different oracle evaluates the same structural formulas
        under another effect law.
    v1, v2 : PolyVariance
        Variance functions of the count and severity families.

    Notes
    -----
    With m(a,b) the product moments, lam1, lam2 the class means:

        E[S]              = lam1 lam2 m(1,1)
        Var[S]            = psi2 lam1 E[Theta1 V2(lam2 Theta2)]
                            + psi1 lam2^2 E[Theta2^2 V1(lam1 Theta1)]
                            + (lam1 lam2)^2 (m(2,2) - m(1,1)^2)
        cov(S_t1, S_t2)   = (lam1 lam2)^2 (m(2,2) - m(1,1)^2)
        cov(N_t, S_t)     = psi1 lam2 E[V1(lam1 Theta1) Theta2]
                            + lam1^2 lam2 (m(2,1) - m(1,1))
        cov(N_t1, S_t2)   = lam1^2 lam2 (m(2,1) - m(1,1))
        cov(N_t1, N_t2)   = lam1^2 (m(2,0) - 1)
        Var[N]            = psi1 E[V1(lam1 Theta1)] + lam1^2 (m(2,0) - 1)
    """
    m = effect_moment
    if m is None:
        eff = params.effects
        m = lambda a, b: product_moment(eff, a, b)  # noqa: E731
    l1, l2 = risk_class.lambda1, risk_class.lambda2
    psi1, psi2 = params.psi1, params.psi2

    m11 = m(1, 1)
    m21 = m(2, 1)
    m22 = m(2, 2)
    m20 = m(2, 0)

    var_pp = (l1 * l2) ** 2 * (m22 - m11 * m11)  # shared-effect channel of S
    var_s = (
        psi2 * l1 * _against_theta2(v2, l2, 1, m)
        + psi1 * l2 * l2 * _against_theta1(v1, l1, 2, m)
        + var_pp
    )
    cov_ns_cross = l1 * l1 * l2 * (m21 - m11)
    return AggregateMoments(
        mean_n=l1,
        var_n=psi1 * _against_theta1(v1, l1, 0, m) + l1 * l1 * (m20 - 1.0),
        mean_s=l1 * l2 * m11,
        var_s=var_s,
        cov_s_s=var_pp,
        cov_n_s_same=psi1 * l2 * _against_theta1(v1, l1, 1, m) + cov_ns_cross,
        cov_n_s_cross=cov_ns_cross,
        cov_n_n=l1 * l1 * (m20 - 1.0),
    )


@dataclass(frozen=True)
class AggregateCorrelations:
    corr_n_n: float
    corr_s_s: float
    corr_n_s_same: float
    corr_n_s_cross: float


def correlations_aggregate(params: ModelParams, risk_class: RiskClass) -> AggregateCorrelations:
    """Correlations implied by :func:`moment_set_general` for one class."""
    mom = moment_set_general(params, risk_class)
    sd_n = math.sqrt(mom.var_n)
    sd_s = math.sqrt(mom.var_s)
    return AggregateCorrelations(
        corr_n_n=mom.cov_n_n / (sd_n * sd_n),
        corr_s_s=mom.cov_s_s / (sd_s * sd_s),
        corr_n_s_same=mom.cov_n_s_same / (sd_n * sd_s),
        corr_n_s_cross=mom.cov_n_s_cross / (sd_n * sd_s),
    )


@dataclass(frozen=True)
class IndividualMoments:
    """Moments involving individual severities Y.

    Y values are iid across claims given the effect pair, with mean
    lambda2*theta2 and dispersion psi2, drawn independently of the count.
    corr_y_y links two distinct claims (same or different years); it carries
    no class subscript because every lambda2 cancels.
    """

    mean_y: float
    var_y: float
    cov_y_y: float
    cov_n_y: float
    corr_n_n: float
    corr_n_y: float
    corr_y_y: float


def correlations_individual(
    params: ModelParams,
    risk_class: RiskClass,
    effect_moment: MomentOracle | None = None,
    v1: PolyVariance = POISSON_VARIANCE,
    v2: PolyVariance = GAMMA_VARIANCE,
) -> IndividualMoments:
    """Individual-severity moment and correlation collection for one class."""
    m = effect_moment
    if m is None:
        eff = params.effects
        m = lambda a, b: product_moment(eff, a, b)  # noqa: E731
    l1, l2 = risk_class.lambda1, risk_class.lambda2
    m02 = m(0, 2)
    m11 = m(1, 1)
    var_y = params.psi2 * _against_theta2(v2, l2, 0, m) + l2 * l2 * (m02 - 1.0)
    cov_y_y = l2 * l2 * (m02 - 1.0)
    cov_n_y = l1 * l2 * (m11 - 1.0)
    var_n = params.psi1 * _against_theta1(v1, l1, 0, m) + l1 * l1 * (m(2, 0) - 1.0)
    return IndividualMoments(
        mean_y=l2,
        var_y=var_y,
        cov_y_y=cov_y_y,
        cov_n_y=cov_n_y,
        corr_n_n=(l1 * l1 * (m(2, 0) - 1.0)) / var_n,
        corr_n_y=cov_n_y / math.sqrt(var_n * var_y),
        corr_y_y=cov_y_y / var_y,
    )


def write_moments_csv(params: ModelParams, portfolio: Portfolio, path) -> None:
    """One row per (class, statistic): aggregate moments, then correlations."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "statistic", "value"])
        for rc in portfolio.classes:
            mom = moment_set_general(params, rc)
            for f in fields(mom):
                writer.writerow([rc.label, f.name, repr(getattr(mom, f.name))])
            corr = correlations_aggregate(params, rc)
            for f in fields(corr):
                writer.writerow([rc.label, f.name, repr(getattr(corr, f.name))])
            ind = correlations_individual(params, rc)
            for f in fields(ind):
                writer.writerow([rc.label, "individual_" + f.name, repr(getattr(ind, f.name))])
