"""INI-backed run configuration.

One file describes a complete run: the fitted model (coefficients, effect
law, dispersion), the portfolio composition, the transition rule, and the
numeric settings for quadrature, simulation, and estimation.  The CLI and
the tests both go through :func:`load_config`, so a config file is the unit
of reproducibility; hash it and you have pinned the run.

Effect variances appear in the file as ``sigma1_sq``/``sigma2_sq`` and the
severity dispersion may be given as either ``psi2`` or its reciprocal
``inv_psi2``, matching how fitted values are usually reported.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bonusmalus.chain import TransitionRule
from bonusmalus.effects import EffectsSpec
from bonusmalus.estimate import McmcConfig, PriorSpec
from bonusmalus.portfolio import (
    CoefficientSet,
    ModelParams,
    Portfolio,
    build_classes,
    cross_classes,
    cross_weights,
)
from bonusmalus.quadrature import QuadratureSpec
from bonusmalus.simulate import SimConfig

__all__ = [
    "AppConfig",
    "load_config",
    "config_sha256",
    "EXAMPLE_CONFIG",
]


@dataclass(frozen=True)
class AppConfig:
    """Everything a run needs, parsed and validated."""

    params: ModelParams
    portfolio: Portfolio
    rule: TransitionRule
    quad: QuadratureSpec
    mcmc: McmcConfig
    priors: PriorSpec
    sim: SimConfig
    entity_levels: tuple[str, ...]
    coverage_levels: tuple[str, ...]


def _split(raw: str) -> list[str]:
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


def _floats(raw: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in _split(raw)])
    except ValueError as exc:
        raise ValueError(f"expected a comma-separated float list, got {raw!r}") from exc


def _require(cfg: configparser.ConfigParser, section: str) -> configparser.SectionProxy:
    if not cfg.has_section(section):
        raise ValueError(f"config is missing the [{section}] section")
    return cfg[section]


def load_config(path) -> AppConfig:
    """Parse an INI run configuration.

    Sections [coefficients], [effects], [portfolio], and [bms] are
    required; [quadrature], [mcmc], [priors], and [simulation] fall back to
    the package defaults.  Errors name the offending section and key.
    """
    path = Path(path)
    cfg = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cfg.read(path)
    if not read:
        raise ValueError(f"cannot read config file {path}")

    sec = _require(cfg, "coefficients")
    labels = tuple(_split(sec.get("labels", "")))
    baselines = tuple(_split(sec.get("baselines", "")))
    beta1 = _floats(sec.get("beta1", ""))
    beta2 = _floats(sec.get("beta2", ""))
    if not labels:
        raise ValueError("[coefficients] labels must be a nonempty list")
    if "psi2" in sec and "inv_psi2" in sec:
        raise ValueError("[coefficients] give psi2 or inv_psi2, not both")
    if "psi2" in sec:
        psi2 = sec.getfloat("psi2")
    elif "inv_psi2" in sec:
        inv = sec.getfloat("inv_psi2")
        if inv <= 0:
            raise ValueError("[coefficients] inv_psi2 must be positive")
        psi2 = 1.0 / inv
    else:
        raise ValueError("[coefficients] needs psi2 or inv_psi2")
    coeffs = CoefficientSet(beta1, beta2, labels, baselines)

    sec = _require(cfg, "effects")
    s1sq = sec.getfloat("sigma1_sq")
    s2sq = sec.getfloat("sigma2_sq")
    if s1sq is None or s2sq is None or sec.get("rho") is None:
        raise ValueError("[effects] needs sigma1_sq, sigma2_sq, and rho")
    if s1sq <= 0 or s2sq <= 0:
        raise ValueError("[effects] variances must be positive")
    effects = EffectsSpec(math.sqrt(s1sq), math.sqrt(s2sq), sec.getfloat("rho"))
    params = ModelParams(coeffs, effects, psi2)

    sec = _require(cfg, "portfolio")
    entity_levels = tuple(_split(sec.get("entity_levels", "")))
    coverage_levels = tuple(_split(sec.get("coverage_levels", "")))
    if not entity_levels or not coverage_levels:
        raise ValueError("[portfolio] needs entity_levels and coverage_levels")
    class_defs = cross_classes(entity_levels, coverage_levels)
    if "joint_weights" in sec:
        weights = _floats(sec.get("joint_weights"))
        if weights.shape != (len(class_defs),):
            raise ValueError(
                f"[portfolio] joint_weights needs {len(class_defs)} entries "
                f"(entity-major), got {weights.shape[0]}"
            )
    else:
        ew = _floats(sec.get("entity_weights", ""))
        cw = _floats(sec.get("coverage_weights", ""))
        if ew.shape != (len(entity_levels),) or cw.shape != (len(coverage_levels),):
            raise ValueError(
                "[portfolio] entity_weights and coverage_weights must match "
                "their level lists"
            )
        weights = cross_weights(ew, cw)
    portfolio = build_classes(coeffs, class_defs, weights)

    sec = _require(cfg, "bms")
    rule = TransitionRule(sec.getint("levels"), sec.getint("penalty"))

    quad = QuadratureSpec()
    if cfg.has_section("quadrature"):
        sec = cfg["quadrature"]
        quad = QuadratureSpec(
            order1=sec.getint("order", QuadratureSpec().order1),
            scheme=sec.get("scheme", QuadratureSpec().scheme),
        )

    mcmc = McmcConfig()
    if cfg.has_section("mcmc"):
        sec = cfg["mcmc"]
        kwargs = {}
        for key, getter in (
            ("iterations", sec.getint),
            ("burn_in", sec.getint),
            ("thin", sec.getint),
            ("seed", sec.getint),
            ("adapt_interval", sec.getint),
            ("step_beta1", sec.getfloat),
            ("step_beta2", sec.getfloat),
            ("step_log_psi2", sec.getfloat),
            ("step_sigma1", sec.getfloat),
            ("step_sigma2", sec.getfloat),
            ("step_atanh_rho", sec.getfloat),
            ("step_latent", sec.getfloat),
        ):
            if key in sec:
                kwargs[key] = getter(key)
        if "fix_rho" in sec and sec.get("fix_rho").strip().lower() != "none":
            kwargs["fix_rho"] = sec.getfloat("fix_rho")
        if "prior_only" in sec:
            kwargs["prior_only"] = sec.getboolean("prior_only")
        mcmc = McmcConfig(**kwargs)

    priors = PriorSpec.default(coeffs.size)
    if cfg.has_section("priors"):
        sec = cfg["priors"]
        var = sec.getfloat("normal_variance", 100.0)
        dim = coeffs.size
        priors = PriorSpec(
            np.zeros(dim),
            var * np.eye(dim),
            np.zeros(dim),
            var * np.eye(dim),
            c0=sec.getfloat("c0", 0.01),
            d0=sec.getfloat("d0", 0.01),
            e0=sec.getfloat("e0", 0.0),
            f0=sec.getfloat("f0", 5.0),
            g0=sec.getfloat("g0", 0.0),
            h0=sec.getfloat("h0", 5.0),
        )

    sim = SimConfig(subjects=10_000, rule=rule)
    if cfg.has_section("simulation"):
        sec = cfg["simulation"]
        kwargs = {"rule": rule}
        for key, getter in (
            ("subjects", sec.getint),
            ("years", sec.getint),
            ("seed", sec.getint),
            ("burn_in", sec.getint),
            ("initial_level", sec.getint),
            ("batch_size", sec.getint),
        ):
            if key in sec:
                kwargs[key] = getter(key)
        sim = SimConfig(**kwargs)

    return AppConfig(
        params=params,
        portfolio=portfolio,
        rule=rule,
        quad=quad,
        mcmc=mcmc,
        priors=priors,
        sim=sim,
        entity_levels=entity_levels,
        coverage_levels=coverage_levels,
    )


def config_sha256(path) -> str:
    """Hex digest of the raw config bytes, for run manifests."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# A complete worked configuration: a six-by-three portfolio of local
# government entities and coverage tiers with fitted example coefficients.
# `bonusmalus example-config` prints it; the README quickstart uses it.
EXAMPLE_CONFIG = """\
[coefficients]
labels = Intercept, City, County, School, Town, Village, Coverage2, Coverage3
baselines = Miscellaneous, Coverage1
beta1 = -2.767, 0.597, 1.907, 0.411, -1.351, -0.012, 1.247, 2.139
beta2 = 8.829, -0.036, 0.341, -0.173, 0.497, 0.316, 0.180, -0.027
inv_psi2 = 0.670

[effects]
sigma1_sq = 0.992
sigma2_sq = 0.293
rho = -0.447

[portfolio]
entity_levels = Miscellaneous, City, County, School, Town, Village
entity_weights = 0.0503, 0.0966, 0.1147, 0.3642, 0.1690, 0.2052
coverage_levels = Coverage1, Coverage2, Coverage3
coverage_weights = 0.3340, 0.3320, 0.3340

[bms]
levels = 10
penalty = 1

[quadrature]
order = 512
scheme = tensor2d

[simulation]
subjects = 10000
years = 5
seed = 20260815
burn_in = 300

[mcmc]
iterations = 60000
burn_in = 20000
thin = 5
seed = 0
"""
