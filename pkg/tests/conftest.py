"""Shared fixtures: the worked example configuration used across the suite.

The fitted example coefficients describe a portfolio of local government
entities (six types) crossed with three coverage tiers.  Two portfolio
variants exist: `product_portfolio` combines the published marginal
compositions by independence, and `matched_portfolio` uses the joint
composition recovered by a constrained fit to the reference per-level
relativity values (marginals held fixed).  Tests that pin reference numbers
say which variant they assume.
"""

import math

import numpy as np
import pytest

from bonusmalus.chain import TransitionRule
from bonusmalus.effects import EffectsSpec
from bonusmalus.portfolio import (
    COVERAGE_LEVELS,
    ENTITY_LEVELS,
    CoefficientSet,
    ModelParams,
    build_classes,
    cross_classes,
    cross_weights,
)
from bonusmalus.quadrature import QuadratureSpec

REF_LABELS = ("Intercept", "City", "County", "School", "Town", "Village", "Coverage2", "Coverage3")
REF_BASELINES = ("Miscellaneous", "Coverage1")
REF_BETA1 = (-2.767, 0.597, 1.907, 0.411, -1.351, -0.012, 1.247, 2.139)
REF_BETA2 = (8.829, -0.036, 0.341, -0.173, 0.497, 0.316, 0.180, -0.027)
REF_SIGMA1_SQ = 0.992
REF_SIGMA2_SQ = 0.293
REF_RHO = -0.447
REF_INV_PSI2 = 0.670

ENTITY_PROPS = (0.0503, 0.0966, 0.1147, 0.3642, 0.1690, 0.2052)
COVERAGE_PROPS = (0.3340, 0.3320, 0.3340)

# Joint entity x coverage composition recovered by a constrained fit to the
# reference relativities (rows: entities in ENTITY_LEVELS order; columns:
# coverage tiers).  Cells were clipped at 0.0005 and renormalized.
REFERENCE_JOINT_WEIGHTS = np.array(
    [
        [0.0055, 0.0447, 0.0005],
        [0.0005, 0.0005, 0.0964],
        [0.0016, 0.0017, 0.1111],
        [0.0988, 0.2224, 0.0423],
        [0.0513, 0.0626, 0.0548],
        [0.1761, 0.0005, 0.0287],
    ]
)
REFERENCE_JOINT_WEIGHTS = REFERENCE_JOINT_WEIGHTS / REFERENCE_JOINT_WEIGHTS.sum()


@pytest.fixture(scope="session")
def ref_coeffs() -> CoefficientSet:
    return CoefficientSet(np.array(REF_BETA1), np.array(REF_BETA2), REF_LABELS, REF_BASELINES)


@pytest.fixture(scope="session")
def ref_effects() -> EffectsSpec:
    return EffectsSpec(math.sqrt(REF_SIGMA1_SQ), math.sqrt(REF_SIGMA2_SQ), REF_RHO)


@pytest.fixture(scope="session")
def ref_params(ref_coeffs, ref_effects) -> ModelParams:
    return ModelParams(ref_coeffs, ref_effects, 1.0 / REF_INV_PSI2)


@pytest.fixture(scope="session")
def product_portfolio(ref_coeffs):
    defs = cross_classes(ENTITY_LEVELS, COVERAGE_LEVELS)
    return build_classes(ref_coeffs, defs, cross_weights(ENTITY_PROPS, COVERAGE_PROPS))


@pytest.fixture(scope="session")
def matched_portfolio(ref_coeffs):
    defs = cross_classes(ENTITY_LEVELS, COVERAGE_LEVELS)
    return build_classes(ref_coeffs, defs, REFERENCE_JOINT_WEIGHTS.ravel())


@pytest.fixture(scope="session")
def quad() -> QuadratureSpec:
    return QuadratureSpec()


@pytest.fixture(scope="session")
def rule_h1() -> TransitionRule:
    return TransitionRule(10, 1)
