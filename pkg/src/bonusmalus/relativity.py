"""Level distribution, optimal relativities, and HMSE for a -1/+h scale.

For a subject in class kappa with frequency effect theta1, the long-run level
occupancy is the stationary law pi(lambda1_kappa * theta1) of the chain.  With
L the stationary level of a randomly drawn subject, the quantities computed
here are, per level l:

    P(L=l)    = sum_k w_k E[pi_l(lam1_k Theta1)]
    r_l^Dep   = E[(Lam1 Lam2)^2 Theta1 Theta2 | L=l] / E[(Lam1 Lam2)^2 | L=l]
    r_l^Indep = E[(Lam1 Lam2)^2 Theta1        | L=l] / E[(Lam1 Lam2)^2 | L=l]
    r_l^Tan   = E[(Lam1)^2     Theta1         | L=l] / E[(Lam1)^2      | L=l]

r^Dep minimizes the hypothetical mean square error

    HMSE(r) = E[(Lam1 Lam2 Theta1 Theta2 - Lam1 Lam2 r_L)^2],

r^Indep is the same construction with the effect dependence dropped, and
r^Tan additionally drops the severity means from the weighting.  Every
conditional expectation is a quotient of class-weighted quadrature sums with
the denominator shared per level.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from bonusmalus.chain import TransitionRule, stationary_batch
from bonusmalus.effects import EffectsSpec, product_moment
from bonusmalus.portfolio import Portfolio
from bonusmalus.quadrature import QuadratureSpec, expect1, expect2

__all__ = [
    "RelativityTable",
    "level_distribution",
    "relativities_dep",
    "relativities_indep",
    "relativities_tan",
    "relativity_table",
    "hmse",
    "balance_check",
]


class _StationaryCache:
    """Stationary vectors keyed by the exact float mean lambda*theta.

    Quadrature nodes repeat across levels, classes sharing a lambda, and the
    tensor grid's first axis, so the chain is solved once per distinct mean.
    """

    def __init__(self, rule: TransitionRule) -> None:
        self.rule = rule
        self._hit: dict[float, np.ndarray] = {}

    def column(self, means: np.ndarray, level: int) -> np.ndarray:
        out = np.empty(means.shape[0])
        missing = [float(m) for m in means if float(m) not in self._hit]
        if missing:
            distinct = sorted(set(missing))
            solved = stationary_batch(self.rule, np.asarray(distinct))
            for m, pi in zip(distinct, solved):
                self._hit[m] = pi
        col = level - 1
        for i, m in enumerate(means):
            out[i] = self._hit[float(m)][col]
        return out


def _building_blocks(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-(class, level) expectations feeding every public quantity.

    Returns (B, C, D), each of shape (K, z):

        B[k,l] = E[ pi_l(lam1_k Theta1) ]
        C[k,l] = E[ Theta1 pi_l(lam1_k Theta1) ]
        D[k,l] = E[ Theta1 Theta2 pi_l(lam1_k Theta1) ]

    D's integrand is linear in theta2 with no constant term, so its theta2
    axis folds exactly into E[Theta2 | X1] and all three blocks run on the
    1-D rule whatever scheme the caller picked; cost stays linear in order.
    """
    z = rule.z
    K = len(portfolio)
    cache = _StationaryCache(rule)
    reduced = QuadratureSpec(order1=quad.order1, scheme="conditional-reduction")
    lam1 = portfolio.lambda1
    B = np.empty((K, z))
    C = np.empty((K, z))
    D = np.empty((K, z))
    for k in range(K):
        lam = lam1[k]
        for level in range(1, z + 1):
            B[k, level - 1] = expect1(
                quad, effects, 1, lambda t: cache.column(lam * t, level)
            )
            C[k, level - 1] = expect1(
                quad, effects, 1, lambda t: t * cache.column(lam * t, level)
            )
            D[k, level - 1] = expect2(
                reduced, effects, lambda t1, t2: t1 * t2 * cache.column(lam * t1, level)
            )
    return B, C, D


def _guard_positive(p: np.ndarray, what: str) -> None:
    if np.any(p <= 0.0):
        level = int(np.argmax(p <= 0.0)) + 1
        raise ValueError(f"{what} vanished at level {level}; cannot form quotients")


def level_distribution(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
) -> np.ndarray:
    """P(L=l), l = 1..z, for a randomly drawn stationary subject."""
    B, _, _ = _building_blocks(portfolio, effects, rule, quad)
    return portfolio.weights @ B


def relativities_dep(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
) -> np.ndarray:
    """Optimal relativities under the dependent effect law."""
    B, _, D = _building_blocks(portfolio, effects, rule, quad)
    wl = portfolio.weights * (portfolio.lambda1 * portfolio.lambda2) ** 2
    den = wl @ B
    _guard_positive(den, "denominator E[(Lam1 Lam2)^2, L=l]")
    return (wl @ D) / den


def relativities_indep(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
) -> np.ndarray:
    """Relativities computed as if the two effects were independent.

    Contains no rho anywhere: only the Theta1 marginal enters.
    """
    B, C, _ = _building_blocks(portfolio, effects, rule, quad)
    wl = portfolio.weights * (portfolio.lambda1 * portfolio.lambda2) ** 2
    den = wl @ B
    _guard_positive(den, "denominator E[(Lam1 Lam2)^2, L=l]")
    return (wl @ C) / den


def relativities_tan(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
) -> np.ndarray:
    """Frequency-only relativities: severity means play no role."""
    B, C, _ = _building_blocks(portfolio, effects, rule, quad)
    wl = portfolio.weights * portfolio.lambda1**2
    den = wl @ B
    _guard_positive(den, "denominator E[(Lam1)^2, L=l]")
    return (wl @ C) / den


@dataclass(frozen=True)
class RelativityTable:
    """All per-level outputs for one transition rule."""

    rule: TransitionRule
    p_level: np.ndarray
    r_dep: np.ndarray
    r_indep: np.ndarray
    r_tan: np.ndarray

    def __post_init__(self) -> None:
        z = self.rule.z
        for name in ("p_level", "r_dep", "r_indep", "r_tan"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (z,):
                raise ValueError(f"{name} must have length z={z}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if abs(self.p_level.sum() - 1.0) > 1e-10:
            raise ValueError(f"p_level must sum to 1 within 1e-10, got {self.p_level.sum()!r}")
        for name in ("r_dep", "r_indep", "r_tan"):
            if np.any(getattr(self, name) <= 0.0):
                raise ValueError(f"{name} must be strictly positive")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "p", "r_dep", "r_indep", "r_tan"])
            for i in range(self.rule.z):
                writer.writerow(
                    [
                        i + 1,
                        repr(float(self.p_level[i])),
                        repr(float(self.r_dep[i])),
                        repr(float(self.r_indep[i])),
                        repr(float(self.r_tan[i])),
                    ]
                )


def relativity_table(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
) -> RelativityTable:
    """Level distribution plus all three relativity vectors in one pass."""
    B, C, D = _building_blocks(portfolio, effects, rule, quad)
    w = portfolio.weights
    wl = w * (portfolio.lambda1 * portfolio.lambda2) ** 2
    wt = w * portfolio.lambda1**2
    den = wl @ B
    den_t = wt @ B
    _guard_positive(den, "denominator E[(Lam1 Lam2)^2, L=l]")
    _guard_positive(den_t, "denominator E[(Lam1)^2, L=l]")
    return RelativityTable(
        rule=rule,
        p_level=w @ B,
        r_dep=(wl @ D) / den,
        r_indep=(wl @ C) / den,
        r_tan=(wt @ C) / den_t,
    )


def hmse(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
    r: np.ndarray,
    normalized: bool = False,
) -> float:
    """Hypothetical mean square error of a relativity vector.

    Expanding the square inside
    sum_k w_k (lam1_k lam2_k)^2 E[ sum_l (Theta1 Theta2 - r_l)^2
    pi_l(lam1_k Theta1) ] and using sum_l pi_l = 1 gives

        sum_k w_k (lam1_k lam2_k)^2
            ( E[(Theta1 Theta2)^2] - 2 sum_l r_l D[k,l] + sum_l r_l^2 B[k,l] ),

    with E[(Theta1 Theta2)^2] in closed form.  ``normalized`` divides by
    (sum_k w_k lam1_k lam2_k)^2, which removes the currency scale: the raw
    value carries the square of the monetary unit and is otherwise hard to
    compare across portfolios.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (rule.z,):
        raise ValueError(f"r must have length z={rule.z}, got {r.shape}")
    B, _, D = _building_blocks(portfolio, effects, rule, quad)
    m22 = product_moment(effects, 2, 2)
    per_class = m22 - 2.0 * (D @ r) + B @ (r * r)
    wl = portfolio.weights * (portfolio.lambda1 * portfolio.lambda2) ** 2
    value = float(wl @ per_class)
    if normalized:
        scale = float(portfolio.weights @ (portfolio.lambda1 * portfolio.lambda2))
        value /= scale * scale
    return value


def balance_check(
    portfolio: Portfolio,
    effects: EffectsSpec,
    rule: TransitionRule,
    quad: QuadratureSpec,
    r: np.ndarray,
) -> tuple[float, float, float]:
    """First-order-condition audit for a relativity vector.

    Returns (lhs, rhs, gap) with

        lhs = sum_l P(L=l) E[(Lam1 Lam2)^2 | L=l] r_l
        rhs = E[(Lam1 Lam2)^2 Theta1 Theta2]
        gap = |lhs - rhs|.

    The rhs uses the closed-form product moment, so for r computed by
    :func:`relativities_dep` the gap measures pure quadrature error.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (rule.z,):
        raise ValueError(f"r must have length z={rule.z}, got {r.shape}")
    B, _, _ = _building_blocks(portfolio, effects, rule, quad)
    wl = portfolio.weights * (portfolio.lambda1 * portfolio.lambda2) ** 2
    lhs = float((wl @ B) @ r)
    rhs = float(wl.sum() * product_moment(effects, 1, 1))
    return lhs, rhs, abs(lhs - rhs)
