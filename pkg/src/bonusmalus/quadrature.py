"""Gauss-Hermite expectations over the random effects.

All integrals run in the normal scale: with X standard normal and
theta = exp(sigma X - sigma^2/2),

    E[f(Theta)] = integral f(exp(sigma x - sigma^2/2)) phi(x) dx,

approximated by a Gauss-Hermite rule mapped onto phi.  Lognormal tails make
rules stated directly in theta unstable, so the normal scale is the only one
used here.  Two-dimensional expectations either run on a tensor grid (with
the second normal coordinate built from the first via the correlation) or,
for integrands of the form f(t1, t2) = t2 * u(t1), collapse exactly to a
one-dimensional rule through E[Theta2 | X1 = x].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import roots_hermite

from bonusmalus.effects import EffectsSpec, conditional_mean

__all__ = ["QuadratureSpec", "expect1", "expect2", "normal_nodes"]

TENSOR = "tensor2d"
CONDITIONAL = "conditional-reduction"
_SCHEMES = (TENSOR, CONDITIONAL)

_node_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


@dataclass(frozen=True)
class QuadratureSpec:
    """Rule size and 2-D evaluation scheme.

    Attributes
    ----------
    order1 : int
        Nodes per axis, at least 8.  The stationary-distribution integrands
        saturate in both tails, which slows Gauss-Hermite convergence to
        root-exponential; 512 nodes push the order-doubling drift below
        1e-8 on the worst reference-portfolio class (frequency ~3.6) and
        still cost well under a second for a full relativity table.
    scheme : str
        ``"tensor2d"`` or ``"conditional-reduction"``.  The reduction is
        exact only for integrands linear in theta2 with no constant term;
        callers of :func:`expect2` are responsible for respecting that.
    """

    order1: int = 512
    scheme: str = TENSOR

    def __post_init__(self) -> None:
        if not (isinstance(self.order1, (int, np.integer)) and self.order1 >= 8):
            raise ValueError(f"order1 must be an integer >= 8, got {self.order1}")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")


def normal_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights integrating E[g(X)] for X standard normal.

    Physicists' Gauss-Hermite rule rescaled: x -> sqrt(2) x, w -> w/sqrt(pi).
    scipy's root finder stays stable past order 1000, unlike the polynomial
    companion-matrix route.  Cached per order; returned arrays are read-only.
    """
    if order not in _node_cache:
        x, w = roots_hermite(order)
        x = math.sqrt(2.0) * x
        w = w / math.sqrt(math.pi)
        x.setflags(write=False)
        w.setflags(write=False)
        _node_cache[order] = (x, w)
    return _node_cache[order]


def _check_finite(values: np.ndarray, nodes: np.ndarray, label: str) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"integrand returned a non-finite value at {label} node "
            f"index {i} (theta={nodes[i]!r})"
        )


def expect1(
    spec: QuadratureSpec,
    effects: EffectsSpec,
    which: int,
    f: Callable[[np.ndarray], np.ndarray],
) -> float:
    """E[f(Theta_which)] for one marginal effect.

    ``f`` must accept a vector of theta values and return a same-shaped
    vector.  A non-finite value at any node is an error, not a warning.
    """
    sigma = effects.sigma(which)
    x, w = normal_nodes(spec.order1)
    theta = np.exp(sigma * x - sigma * sigma / 2.0)
    values = np.asarray(f(theta), dtype=float)
    if values.shape != theta.shape:
        raise ValueError(
            f"integrand must map shape {theta.shape} to itself, got {values.shape}"
        )
    _check_finite(values, theta, "marginal")
    return float(w @ values)


def expect2(
    spec: QuadratureSpec,
    effects: EffectsSpec,
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> float:
    """E[f(Theta1, Theta2)] over the correlated pair.

    tensor2d
        Full tensor rule.  The second normal coordinate is
        x2 = rho x1 + sqrt(1-rho^2) x2', the Cholesky factorization of the
        2x2 correlation, so the grid stays exact for any |rho| <= 1.
    conditional-reduction
        Assumes f(t1, t2) = t2 * u(t1) and integrates
        u(theta1(x)) * E[Theta2 | X1 = x] with the 1-D rule.  ``f`` is probed
        at t2 = 1 to recover u.  Exact for theta2-linear integrands only.
    """
    s1, s2, rho = effects.sigma1, effects.sigma2, effects.rho
    x, w = normal_nodes(spec.order1)
    theta1 = np.exp(s1 * x - s1 * s1 / 2.0)

    if spec.scheme == CONDITIONAL:
        u = np.asarray(f(theta1, np.ones_like(theta1)), dtype=float)
        _check_finite(u, theta1, "reduction")
        return float(w @ (u * conditional_mean(effects, x)))

    x1 = np.repeat(x, spec.order1)
    x2 = rho * x1 + math.sqrt(max(1.0 - rho * rho, 0.0)) * np.tile(x, spec.order1)
    w2 = np.repeat(w, spec.order1) * np.tile(w, spec.order1)
    t1 = np.exp(s1 * x1 - s1 * s1 / 2.0)
    t2 = np.exp(s2 * x2 - s2 * s2 / 2.0)
    values = np.asarray(f(t1, t2), dtype=float)
    if values.shape != t1.shape:
        raise ValueError(
            f"integrand must map shape {t1.shape} to itself, got {values.shape}"
        )
    _check_finite(values, t1, "tensor")
    return float(w2 @ values)
