"""The -1/+h Bonus-Malus level chain.

Levels are labeled 1..z.  A claim-free year moves a policyholder one level
down (floor 1); each claim in a year moves it h levels up (cap z).  With
Poisson annual claim counts the level process is an irreducible aperiodic
Markov chain on {1..z}, so each claim-count mean owns a unique stationary
distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "TransitionRule",
    "StationaryDist",
    "next_level",
    "transition_matrix",
    "transition_matrices",
    "stationary",
    "stationary_batch",
]

_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class TransitionRule:
    """A -1/+h rule on z levels.

    z >= 2 and 1 <= h <= z-1, so both directions of movement are possible.
    """

    z: int
    h: int

    def __post_init__(self) -> None:
        if not (isinstance(self.z, (int, np.integer)) and self.z >= 2):
            raise ValueError(f"z must be an integer >= 2, got {self.z}")
        if not (isinstance(self.h, (int, np.integer)) and 1 <= self.h <= self.z - 1):
            raise ValueError(f"h must satisfy 1 <= h <= z-1, got h={self.h}, z={self.z}")


@dataclass(frozen=True)
class StationaryDist:
    """Stationary level distribution, validated on construction."""

    pi: np.ndarray

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "pi", pi)
        if pi.ndim != 1:
            raise ValueError("pi must be a vector")
        if np.any(pi < -1e-15):
            raise ValueError(f"pi has a negative entry: min {pi.min()}")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"pi must sum to 1 within 1e-12, got {pi.sum()!r}")

    def __len__(self) -> int:
        return self.pi.shape[0]


def next_level(rule: TransitionRule, level: int, claims: int) -> int:
    """Level after one year with the given claim count."""
    if not 1 <= level <= rule.z:
        raise ValueError(f"level must lie in [1, {rule.z}], got {level}")
    if claims < 0:
        raise ValueError(f"claims must be nonnegative, got {claims}")
    if claims == 0:
        return max(level - 1, 1)
    return min(level + claims * rule.h, rule.z)


def transition_matrices(rule: TransitionRule, means: np.ndarray) -> np.ndarray:
    """Stack of one-year transition matrices, one per claim-count mean.

    Parameters
    ----------
    rule : TransitionRule
    means : array_like
        Positive Poisson means, shape (M,).

    Returns
    -------
    ndarray of shape (M, z, z)
        Row l of each matrix accumulates the Poisson pmf over claim counts
        mapped through :func:`next_level`.  Counts large enough to hit the
        cap are folded into the cap column as 1 minus the accumulated mass,
        so every row sums to 1 exactly.
    """
    means = np.atleast_1d(np.asarray(means, dtype=float))
    if not np.all(np.isfinite(means)) or np.any(means <= 0.0):
        bad = means[~(np.isfinite(means) & (means > 0.0))][:1]
        raise ValueError(f"means must be positive and finite, got {bad}")
    z, h = rule.z, rule.h
    M = means.shape[0]
    P = np.zeros((M, z, z))
    log_means = np.log(means)
    pmf0 = np.exp(-means)
    for level in range(1, z + 1):
        row = level - 1
        P[:, row, max(level - 1, 1) - 1] += pmf0
        mass = pmf0.copy()
        n = 1
        while level + n * h < z:
            pmf = np.exp(-means + n * log_means - gammaln(n + 1))
            P[:, row, level + n * h - 1] += pmf
            mass += pmf
            n += 1
        P[:, row, z - 1] += 1.0 - mass
    return P


def transition_matrix(rule: TransitionRule, mean: float) -> np.ndarray:
    """One-year transition matrix for a single Poisson mean.

    See :func:`transition_matrices`.
    """
    return transition_matrices(rule, np.asarray([mean]))[0]


def _stationary_direct(P: np.ndarray) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1 by state elimination (GTH order).

    Gaussian elimination on the balance equations arranged so every update
    adds nonnegative terms; no cancellation means each stationary entry
    comes out with small relative error even when it is as small as
    exp(-40), which a plain (P^T - I) solve would round to zero.  Works on
    a stack (M, z, z) -> (M, z).
    """
    A = np.array(P, dtype=float, copy=True)
    z = A.shape[-1]
    lead = P.shape[:-2]
    # dead[k]: downward flow out of state k underflowed (or is so tiny that
    # scaling by 1/s would overflow), so all states below k carry zero
    # stationary mass at float precision; happens only for means large
    # enough that exp(-mean) is below ~1e-250
    dead = np.zeros(lead + (z,), dtype=bool)
    for k in range(z - 1, 0, -1):
        s = A[..., k, :k].sum(axis=-1)
        dead[..., k] = s < 1e-250
        A[..., :k, k] /= np.where(dead[..., k], 1.0, s)[..., None]
        A[..., :k, :k] += A[..., :k, k, None] * A[..., k, None, :k]
    pi = np.zeros(lead + (z,))
    pi[..., 0] = 1.0
    for k in range(1, z):
        val = (pi[..., :k] * A[..., :k, k]).sum(axis=-1)
        reset = dead[..., k]
        if np.any(reset):
            pi[..., :k] = np.where(reset[..., None], 0.0, pi[..., :k])
            pi[..., k] = np.where(reset, 1.0, val)
        else:
            pi[..., k] = val
        # only ratios matter until the final normalization; rescale before
        # strongly upward-drifting chains (huge means) overflow.  Scaled
        # column entries are bounded by 1/s <= 1e250, so capping the running
        # max at 1e50 keeps every product below float max.
        top = pi[..., : k + 1].max(axis=-1)
        big = top > 1e50
        if np.any(big):
            pi[..., : k + 1] /= np.where(big, top, 1.0)[..., None]
    return pi / pi.sum(axis=-1, keepdims=True)


def _stationary_power(P: np.ndarray, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration fallback for a single matrix."""
    z = P.shape[-1]
    pi = np.full(z, 1.0 / z)
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    residual = np.max(np.abs(pi @ P - pi))
    raise RuntimeError(
        f"power iteration did not converge in {max_iter} iterations; residual {residual:.3e}"
    )


def stationary_batch(rule: TransitionRule, means: np.ndarray) -> np.ndarray:
    """Stationary vectors for many means at once, shape (M, z).

    Direct linear solve on the whole stack; any matrix the solver cannot
    handle (singular to machine precision) falls back to power iteration.
    Each result is checked against the residual bound before being returned.
    """
    means = np.atleast_1d(np.asarray(means, dtype=float))
    P = transition_matrices(rule, means)
    try:
        pis = _stationary_direct(P)
    except np.linalg.LinAlgError:
        pis = np.stack([_stationary_power(P[i]) for i in range(P.shape[0])])
    residual = np.max(np.abs(np.einsum("mi,mij->mj", pis, P) - pis), axis=1)
    bad = residual >= _RESIDUAL_TOL
    for i in np.flatnonzero(bad):
        pis[i] = _stationary_power(P[i])
        res_i = np.max(np.abs(pis[i] @ P[i] - pis[i]))
        if res_i >= _RESIDUAL_TOL:
            raise RuntimeError(
                f"stationary solve failed for mean {means[i]!r}: residual {res_i:.3e}"
            )
    return pis


def stationary(rule: TransitionRule, mean: float) -> StationaryDist:
    """Stationary distribution of the level chain for one claim-count mean."""
    if not (math.isfinite(mean) and mean > 0.0):
        raise ValueError(f"mean must be positive and finite, got {mean}")
    return StationaryDist(stationary_batch(rule, np.asarray([mean]))[0])
