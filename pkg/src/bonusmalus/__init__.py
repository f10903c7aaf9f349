"""Bonus-Malus relativities under correlated frequency-severity random effects.

A portfolio of risk classes is priced with a -1/+h Bonus-Malus scale whose
premium multipliers (relativities) account for a pair of time-constant latent
effects acting multiplicatively on claim frequency and average severity.  The
effects carry lognormal marginals tied together by a Gaussian copula, so the
degree of dependence feeds directly into the optimal relativities.

Subpackage map:

- :mod:`bonusmalus.effects` -- the bivariate random-effect law
- :mod:`bonusmalus.chain` -- the -1/+h level chain and its stationary law
- :mod:`bonusmalus.quadrature` -- Gauss-Hermite expectations over the effects
- :mod:`bonusmalus.portfolio` -- risk classes, design coding, claims panels
- :mod:`bonusmalus.relativity` -- level distribution, relativities, HMSE
- :mod:`bonusmalus.moments` -- closed-form moments and correlations
- :mod:`bonusmalus.simulate` -- Monte Carlo panel and level simulation
- :mod:`bonusmalus.estimate` -- Bayesian estimation of the full model
- :mod:`bonusmalus.config` / :mod:`bonusmalus.cli` -- file formats and commands
"""

from bonusmalus.effects import EffectsSpec, product_moment
from bonusmalus.chain import TransitionRule, StationaryDist
from bonusmalus.quadrature import QuadratureSpec
from bonusmalus.portfolio import (
    CoefficientSet,
    RiskClass,
    Portfolio,
    ClaimsPanel,
    ModelParams,
)
from bonusmalus.relativity import RelativityTable

__all__ = [
    "EffectsSpec",
    "product_moment",
    "TransitionRule",
    "StationaryDist",
    "QuadratureSpec",
    "CoefficientSet",
    "RiskClass",
    "Portfolio",
    "ClaimsPanel",
    "ModelParams",
    "RelativityTable",
]

__version__ = "0.1.0"
