"""Monte Carlo oracle: effects, claim panels, and stationary level draws.

Every closed-form or quadrature quantity in the package has an empirical
twin here.  Generation is organized in fixed-size batches, each owning a
Philox counter-based stream spawned from the master seed, so results are
reproducible and independent of how batches would be distributed across
workers.  Batches are processed sequentially in this implementation; the
stream layout is what makes parallel execution safe.

Gamma parameterization used throughout: a mean mu with dispersion phi is
shape 1/phi and scale mu*phi, so the variance is phi*mu^2.  The average
claim amount in a year with n claims has mean lambda2*theta2 and dispersion
psi2/n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from bonusmalus.chain import TransitionRule
from bonusmalus.effects import sample_effects
from bonusmalus.portfolio import ClaimsPanel, ModelParams, Portfolio

__all__ = [
    "SimConfig",
    "SimulatedOutcomes",
    "IndividualClaims",
    "LevelSample",
    "simulate_outcomes",
    "simulate_panel",
    "simulate_individual_claims",
    "simulate_levels",
    "posterior_predictive_total",
    "write_totals_csv",
]


@dataclass(frozen=True)
class SimConfig:
    """Size, seed, and trajectory settings for the simulators.

    burn_in is the number of yearly transitions discarded before the level
    of a subject counts as stationary; the default is far beyond the mixing
    time of any chain with z <= 10.  initial_level is where trajectories
    start; the burn-in makes the estimates insensitive to it, which the test
    suite verifies by running from both ends of the scale.
    """

    subjects: int
    years: int = 1
    seed: int = 0
    rule: TransitionRule | None = None
    burn_in: int = 1000
    initial_level: int = 1
    batch_size: int = 1_000_000

    def __post_init__(self) -> None:
        if self.subjects < 1:
            raise ValueError(f"subjects must be >= 1, got {self.subjects}")
        if self.years < 1:
            raise ValueError(f"years must be >= 1, got {self.years}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.rule is not None and not (1 <= self.initial_level <= self.rule.z):
            raise ValueError(
                f"initial_level must lie in [1, {self.rule.z}], got {self.initial_level}"
            )

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=seed)


def _batch_streams(seed: int, n_batches: int) -> list[np.random.Generator]:
    """One Philox stream per batch, all spawned from the master seed."""
    children = np.random.SeedSequence(seed).spawn(n_batches)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def _batch_sizes(total: int, batch_size: int) -> list[int]:
    sizes = [batch_size] * (total // batch_size)
    if total % batch_size:
        sizes.append(total % batch_size)
    return sizes


def _draw_population(
    portfolio: Portfolio, params: ModelParams, rng: np.random.Generator, size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Class indices and effect pairs for one batch of subjects."""
    w = portfolio.weights
    class_idx = rng.choice(len(w), size=size, p=w)
    theta = sample_effects(params.effects, size, rng)
    return class_idx, theta[:, 0], theta[:, 1]


@dataclass(frozen=True)
class SimulatedOutcomes:
    """Raw simulated panel in array form (bulk interface).

    counts and amounts have shape (subjects, years); theta1/theta2 are the
    per-subject effects, constant across years by construction.
    """

    portfolio: Portfolio
    class_idx: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    counts: np.ndarray
    amounts: np.ndarray

    @property
    def lambda1(self) -> np.ndarray:
        return self.portfolio.lambda1[self.class_idx]

    @property
    def lambda2(self) -> np.ndarray:
        return self.portfolio.lambda2[self.class_idx]


def simulate_outcomes(
    params: ModelParams, portfolio: Portfolio, config: SimConfig
) -> SimulatedOutcomes:
    """Simulate claim outcomes for config.subjects x config.years.

    Per subject: draw a class by weight and one effect pair; per year draw
    n ~ Poisson(lambda1*theta1); when n > 0 draw the average amount
    m ~ Gamma(mean lambda2*theta2, dispersion psi2/n) and set s = n*m.
    """
    I, T = config.subjects, config.years
    sizes = _batch_sizes(I, config.batch_size)
    streams = _batch_streams(config.seed, len(sizes))
    ci_parts, t1_parts, t2_parts, n_parts, s_parts = [], [], [], [], []
    for size, rng in zip(sizes, streams):
        class_idx, th1, th2 = _draw_population(portfolio, params, rng, size)
        mu = portfolio.lambda1[class_idx] * th1
        counts = rng.poisson(mu[:, None], size=(size, T))
        amounts = np.zeros((size, T))
        pos = counts > 0
        if np.any(pos):
            n_pos = counts[pos].astype(float)
            mean_sev = (portfolio.lambda2[class_idx] * th2)[:, None]
            mean_pos = np.broadcast_to(mean_sev, (size, T))[pos]
            shape = n_pos / params.psi2
            scale = mean_pos * params.psi2 / n_pos
            amounts[pos] = n_pos * rng.gamma(shape, scale)
        ci_parts.append(class_idx)
        t1_parts.append(th1)
        t2_parts.append(th2)
        n_parts.append(counts)
        s_parts.append(amounts)
    return SimulatedOutcomes(
        portfolio=portfolio,
        class_idx=np.concatenate(ci_parts),
        theta1=np.concatenate(t1_parts),
        theta2=np.concatenate(t2_parts),
        counts=np.concatenate(n_parts, axis=0),
        amounts=np.concatenate(s_parts, axis=0),
    )


def simulate_panel(
    params: ModelParams, portfolio: Portfolio, config: SimConfig
) -> ClaimsPanel:
    """Simulated outcomes packaged as a validated ClaimsPanel.

    Subject ids are s0000000, s0000001, ...; years run 1..T.  Covariate
    columns come from each class's level tuple when it has the
    (entity, coverage) shape, otherwise from its label.
    """
    out = simulate_outcomes(params, portfolio, config)
    I, T = config.subjects, config.years
    ids = np.array([f"s{i:07d}" for i in range(I)], dtype=object)
    entity = np.empty(len(portfolio), dtype=object)
    coverage = np.empty(len(portfolio), dtype=object)
    for k, rc in enumerate(portfolio.classes):
        if len(rc.levels) >= 2:
            entity[k], coverage[k] = rc.levels[0], rc.levels[1]
        else:
            entity[k], coverage[k] = rc.label, "All"
    return ClaimsPanel(
        subject=np.repeat(ids, T),
        year=np.tile(np.arange(1, T + 1), I),
        n=out.counts.reshape(-1),
        s=out.amounts.reshape(-1),
        entity=np.repeat(entity[out.class_idx], T),
        coverage=np.repeat(coverage[out.class_idx], T),
    )


class _RatioAccumulator:
    """Per-level sums for a ratio estimator sum(a)/sum(b) with delta-method SE."""

    def __init__(self, z: int) -> None:
        self.sa = np.zeros(z)
        self.sb = np.zeros(z)
        self.saa = np.zeros(z)
        self.sbb = np.zeros(z)
        self.sab = np.zeros(z)

    def add(self, levels0: np.ndarray, a: np.ndarray, b: np.ndarray, z: int) -> None:
        self.sa += np.bincount(levels0, weights=a, minlength=z)
        self.sb += np.bincount(levels0, weights=b, minlength=z)
        self.saa += np.bincount(levels0, weights=a * a, minlength=z)
        self.sbb += np.bincount(levels0, weights=b * b, minlength=z)
        self.sab += np.bincount(levels0, weights=a * b, minlength=z)

    def ratio(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sa / self.sb

    def se(self) -> np.ndarray:
        r = self.ratio()
        resid = self.saa - 2.0 * r * self.sab + r * r * self.sbb
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(np.maximum(resid, 0.0)) / self.sb


@dataclass(frozen=True)
class LevelSample:
    """Empirical stationary-level estimates from subject trajectories.

    Each relativity estimate is the quotient of two per-level sample sums,
    with a delta-method standard error.  The hmse sums allow evaluating the
    empirical mean square error of an arbitrary relativity vector afterward.
    """

    rule: TransitionRule
    subjects: int
    counts: np.ndarray
    p: np.ndarray
    p_se: np.ndarray
    r_dep: np.ndarray
    r_dep_se: np.ndarray
    r_indep: np.ndarray
    r_indep_se: np.ndarray
    r_tan: np.ndarray
    r_tan_se: np.ndarray
    _hmse_s0: np.ndarray = field(repr=False, default=None)
    _hmse_s1: np.ndarray = field(repr=False, default=None)
    _hmse_s2: np.ndarray = field(repr=False, default=None)

    def empirical_hmse(self, r: np.ndarray) -> float:
        """Mean over subjects of (lam1 lam2)^2 (theta1 theta2 - r_L)^2."""
        r = np.asarray(r, dtype=float)
        if r.shape != self._hmse_s0.shape:
            raise ValueError(f"r must have shape {self._hmse_s0.shape}, got {r.shape}")
        total = self._hmse_s2 - 2.0 * r * self._hmse_s1 + r * r * self._hmse_s0
        return float(total.sum() / self.subjects)


def simulate_levels(
    params: ModelParams, portfolio: Portfolio, config: SimConfig
) -> LevelSample:
    """Stationary level draws with per-level conditional-mean estimates.

    Each subject's level trajectory is advanced burn_in transitions from
    initial_level under its own Poisson mean lambda1*theta1, and the final
    level is recorded as a stationary draw.
    """
    if config.rule is None:
        raise ValueError("simulate_levels requires config.rule")
    rule = config.rule
    z = rule.z
    sizes = _batch_sizes(config.subjects, config.batch_size)
    streams = _batch_streams(config.seed, len(sizes))
    counts = np.zeros(z)
    dep = _RatioAccumulator(z)
    indep = _RatioAccumulator(z)
    tan = _RatioAccumulator(z)
    s2 = np.zeros(z)
    lam1 = portfolio.lambda1
    lam2 = portfolio.lambda2
    for size, rng in zip(sizes, streams):
        class_idx, th1, th2 = _draw_population(portfolio, params, rng, size)
        mu = lam1[class_idx] * th1
        levels = np.full(size, config.initial_level, dtype=np.int64)
        for _ in range(config.burn_in):
            n = rng.poisson(mu)
            levels = np.where(
                n == 0, np.maximum(levels - 1, 1), np.minimum(levels + n * rule.h, z)
            )
        lev0 = levels - 1
        counts += np.bincount(lev0, minlength=z)
        b1 = (lam1[class_idx] * lam2[class_idx]) ** 2
        prod = th1 * th2
        dep.add(lev0, b1 * prod, b1, z)
        indep.add(lev0, b1 * th1, b1, z)
        b3 = lam1[class_idx] ** 2
        tan.add(lev0, b3 * th1, b3, z)
        s2 += np.bincount(lev0, weights=b1 * prod * prod, minlength=z)
    total = counts.sum()
    p = counts / total
    p_se = np.sqrt(p * (1.0 - p) / total)
    return LevelSample(
        rule=rule,
        subjects=int(total),
        counts=counts,
        p=p,
        p_se=p_se,
        r_dep=dep.ratio(),
        r_dep_se=dep.se(),
        r_indep=indep.ratio(),
        r_indep_se=indep.se(),
        r_tan=tan.ratio(),
        r_tan_se=tan.se(),
        _hmse_s0=dep.sb.copy(),
        _hmse_s1=dep.sa.copy(),
        _hmse_s2=s2,
    )


def posterior_predictive_total(
    param_draws: Sequence[ModelParams], portfolio: Portfolio, config: SimConfig
) -> np.ndarray:
    """One simulated portfolio-year total per parameter draw.

    For each draw, config.subjects subjects are generated for a single year
    and their aggregate amounts are summed; config.years is ignored.  The
    portfolio fixes the class composition (weights and level tuples); the
    per-class means are recomputed from each draw's coefficients, so the
    sample reflects parameter uncertainty, not just process noise.
    """
    draws = list(param_draws)
    streams = _batch_streams(config.seed, max(len(draws), 1))
    totals = np.empty(len(draws))
    level_tuples = [rc.levels for rc in portfolio.classes]
    for i, (params, rng) in enumerate(zip(draws, streams)):
        X = np.stack([params.coeffs.design_row(lv) for lv in level_tuples])
        lam1 = np.exp(X @ params.coeffs.beta1)
        lam2 = np.exp(X @ params.coeffs.beta2)
        class_idx, th1, th2 = _draw_population(portfolio, params, rng, config.subjects)
        mu = lam1[class_idx] * th1
        n = rng.poisson(mu)
        pos = n > 0
        total = 0.0
        if np.any(pos):
            n_pos = n[pos].astype(float)
            mean_pos = (lam2[class_idx] * th2)[pos]
            m = rng.gamma(n_pos / params.psi2, mean_pos * params.psi2 / n_pos)
            total = float((n_pos * m).sum())
        totals[i] = total
    return totals


def write_totals_csv(totals: np.ndarray, path) -> None:
    """Predictive totals, one value per row under a `total` header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("total\n")
        for value in np.asarray(totals, dtype=float):
            fh.write(repr(float(value)) + "\n")


@dataclass(frozen=True)
class IndividualClaims:
    """Counts alongside members of the per-claim severity stream.

    Under the individual-severity view, claim amounts are iid given the
    effect pair, with mean lambda2*theta2 and dispersion psi2, independent
    of the counts; a year's average amount is then the mean of its n stream
    members.  counts has shape (subjects, years); severities has shape
    (subjects, 2) and holds two stream members per subject, enough for every
    count-severity and severity-severity moment.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    counts: np.ndarray
    severities: np.ndarray


def simulate_individual_claims(
    params: ModelParams, risk_class, config: SimConfig
) -> IndividualClaims:
    """Oracle sample for individual-severity moments of one risk class.

    Severities are drawn without conditioning on the counts being positive;
    estimating their moments from observed claims alone would tilt the
    effect distribution toward high-frequency subjects.
    """
    I, T = config.subjects, config.years
    sizes = _batch_sizes(I, config.batch_size)
    streams = _batch_streams(config.seed, len(sizes))
    t1_parts, t2_parts, n_parts, y_parts = [], [], [], []
    for size, rng in zip(sizes, streams):
        theta = sample_effects(params.effects, size, rng)
        th1, th2 = theta[:, 0], theta[:, 1]
        counts = rng.poisson((risk_class.lambda1 * th1)[:, None], size=(size, T))
        mean_y = (risk_class.lambda2 * th2)[:, None]
        severities = rng.gamma(1.0 / params.psi2, mean_y * params.psi2, size=(size, 2))
        t1_parts.append(th1)
        t2_parts.append(th2)
        n_parts.append(counts)
        y_parts.append(severities)
    return IndividualClaims(
        theta1=np.concatenate(t1_parts),
        theta2=np.concatenate(t2_parts),
        counts=np.concatenate(n_parts, axis=0),
        severities=np.concatenate(y_parts, axis=0),
    )
