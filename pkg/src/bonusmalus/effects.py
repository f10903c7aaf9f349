"""Bivariate random effects: lognormal marginals joined by a Gaussian copula.

The latent pair (Theta1, Theta2) multiplies the frequency and severity means
of every subject.  Each marginal is LogNormal(-sigma^2/2, sigma^2), so
E[Theta] = 1 and the scale split between regression coefficients and latent
effects is identified.  The copula of a bivariate normal with correlation rho
applied to these marginals makes the pair exactly bivariate lognormal in the
normal scale:

    Theta_j = exp(sigma_j * X_j - sigma_j^2 / 2),   (X1, X2) ~ N2(0, R(rho)).

That representation gives a closed form for every product moment,

    E[Theta1^a * Theta2^b]
        = exp((a^2 - a) sigma1^2 / 2 + (b^2 - b) sigma2^2 / 2
              + a b rho sigma1 sigma2),

which the rest of the package leans on whenever an integral can be avoided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EffectsSpec",
    "marginal_density",
    "joint_density",
    "conditional_mean",
    "sample_effects",
    "product_moment",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EffectsSpec:
    """Parameters of the bivariate lognormal effect law.

    Attributes
    ----------
    sigma1, sigma2 : float
        Normal-scale standard deviations of the frequency and severity
        effects.  Both must be strictly positive.
    rho : float
        Correlation of the underlying bivariate normal, in [-1, 1].
    """

    sigma1: float
    sigma2: float
    rho: float

    def __post_init__(self) -> None:
        if not (self.sigma1 > 0.0 and math.isfinite(self.sigma1)):
            raise ValueError(f"sigma1 must be positive and finite, got {self.sigma1}")
        if not (self.sigma2 > 0.0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if not (-1.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")

    def sigma(self, which: int) -> float:
        """Marginal sigma for component 1 or 2."""
        if which == 1:
            return self.sigma1
        if which == 2:
            return self.sigma2
        raise ValueError(f"component must be 1 or 2, got {which}")


def marginal_density(spec: EffectsSpec, which: int, theta) -> np.ndarray | float:
    """Density of one effect: LogNormal(-sigma^2/2, sigma^2).

    Parameters
    ----------
    spec : EffectsSpec
    which : {1, 2}
        Component selector.
    theta : array_like
        Evaluation points; the density is 0 for theta <= 0.

    Returns
    -------
    Density values, same shape as ``theta``.
    """
    sigma = spec.sigma(which)
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    pos = theta > 0.0
    t = theta[pos] if theta.ndim else (theta if theta > 0 else None)
    if theta.ndim == 0:
        if t is None:
            return 0.0
        x = (math.log(float(t)) + sigma * sigma / 2.0) / sigma
        return math.exp(-0.5 * x * x) / (float(t) * sigma * math.sqrt(2.0 * math.pi))
    x = (np.log(t) + sigma * sigma / 2.0) / sigma
    out[pos] = np.exp(-0.5 * x * x) / (t * sigma * math.sqrt(2.0 * math.pi))
    return out


def joint_density(spec: EffectsSpec, theta1, theta2) -> np.ndarray | float:
    """Joint density of (Theta1, Theta2) on the positive quadrant.

    Bivariate lognormal: with x_j = (log theta_j + sigma_j^2/2) / sigma_j,

        h(t1, t2) = phi2(x1, x2; rho) / (t1 t2 sigma1 sigma2),

    where phi2 is the standard bivariate normal density.  Degenerate
    correlations (|rho| within 1e-12 of 1) are rejected: the joint law is
    then singular and has no two-dimensional density.
    """
    if 1.0 - abs(spec.rho) < 1e-12:
        raise ValueError(
            f"joint density is singular at rho={spec.rho}; |rho| must stay below 1 - 1e-12"
        )
    if spec.rho == 0.0:
        # independence copula: the joint is the product of the marginals,
        # computed through the same code path so the identity is bitwise
        return marginal_density(spec, 1, theta1) * marginal_density(spec, 2, theta2)
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    scalar = t1.ndim == 0 and t2.ndim == 0
    t1, t2 = np.atleast_1d(t1), np.atleast_1d(t2)
    t1, t2 = np.broadcast_arrays(t1, t2)
    out = np.zeros(t1.shape, dtype=float)
    pos = (t1 > 0.0) & (t2 > 0.0)
    s1, s2, rho = spec.sigma1, spec.sigma2, spec.rho
    x1 = (np.log(t1[pos]) + s1 * s1 / 2.0) / s1
    x2 = (np.log(t2[pos]) + s2 * s2 / 2.0) / s2
    om = 1.0 - rho * rho
    q = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / om
    log_phi2 = -0.5 * q - 0.5 * math.log(om) - _LOG_2PI
    out[pos] = np.exp(log_phi2) / (t1[pos] * t2[pos] * s1 * s2)
    return float(out[0]) if scalar else out


def log_joint_density(spec: EffectsSpec, theta1, theta2) -> np.ndarray:
    """Log of :func:`joint_density`, vectorized, for strictly positive inputs.

    Summing many per-subject densities in log space is the only stable way
    to evaluate likelihood products; exponentiating this reproduces
    joint_density exactly.
    """
    if 1.0 - abs(spec.rho) < 1e-12:
        raise ValueError(
            f"joint density is singular at rho={spec.rho}; |rho| must stay below 1 - 1e-12"
        )
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    if np.any(t1 <= 0.0) or np.any(t2 <= 0.0):
        raise ValueError("log_joint_density requires strictly positive effects")
    s1, s2, rho = spec.sigma1, spec.sigma2, spec.rho
    lt1, lt2 = np.log(t1), np.log(t2)
    x1 = (lt1 + s1 * s1 / 2.0) / s1
    x2 = (lt2 + s2 * s2 / 2.0) / s2
    om = 1.0 - rho * rho
    q = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / om
    return (
        -0.5 * q
        - 0.5 * math.log(om)
        - _LOG_2PI
        - lt1
        - lt2
        - math.log(s1)
        - math.log(s2)
    )


def conditional_mean(spec: EffectsSpec, x1) -> np.ndarray | float:
    """E[Theta2 | X1 = x1] where X1 is the normal score of Theta1.

    Exact reduction used to fold the second integration axis into a 1-D rule:
    X2 | X1 = x1 is N(rho*x1, 1-rho^2), hence

        E[Theta2 | x1] = exp(rho sigma2 x1 - rho^2 sigma2^2 / 2).
    """
    x1 = np.asarray(x1, dtype=float)
    val = np.exp(spec.rho * spec.sigma2 * x1 - 0.5 * (spec.rho * spec.sigma2) ** 2)
    return float(val[()]) if val.ndim == 0 else val


def normal_score(spec: EffectsSpec, which: int, theta) -> np.ndarray | float:
    """Map an effect value to its underlying standard-normal coordinate."""
    sigma = spec.sigma(which)
    theta = np.asarray(theta, dtype=float)
    val = (np.log(theta) + sigma * sigma / 2.0) / sigma
    return float(val[()]) if val.ndim == 0 else val


def sample_effects(spec: EffectsSpec, count: int, seed) -> np.ndarray:
    """Draw ``count`` iid effect pairs.

    Parameters
    ----------
    spec : EffectsSpec
    count : int
        Number of pairs.
    seed : int, SeedSequence or Generator
        Anything :func:`numpy.random.default_rng` accepts.  The same seed
        yields the same draws.

    Returns
    -------
    ndarray of shape (count, 2)
        Columns are (theta1, theta2).  Handles rho = +-1 by construction
        (the second normal score is then a deterministic multiple of the
        first).
    """
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(size=(count, 2))
    rho = spec.rho
    x1 = z[:, 0]
    x2 = rho * x1 + math.sqrt(max(1.0 - rho * rho, 0.0)) * z[:, 1]
    theta1 = np.exp(spec.sigma1 * x1 - spec.sigma1**2 / 2.0)
    theta2 = np.exp(spec.sigma2 * x2 - spec.sigma2**2 / 2.0)
    return np.column_stack([theta1, theta2])


def product_moment(spec: EffectsSpec, a: float, b: float) -> float:
    """Closed-form E[Theta1^a * Theta2^b] for real exponents.

    Follows from the normal-scale representation: the exponent
    a*(sigma1 X1 - sigma1^2/2) + b*(sigma2 X2 - sigma2^2/2) is normal with
    known mean and variance, so the expectation is its moment generating
    function evaluated at 1.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"exponents must be finite, got a={a}, b={b}")
    s1, s2, rho = spec.sigma1, spec.sigma2, spec.rho
    return math.exp(
        0.5 * (a * a - a) * s1 * s1
        + 0.5 * (b * b - b) * s2 * s2
        + a * b * rho * s1 * s2
    )
