"""Objective pieces: penalties, data fits, conjugates, and prox maps.

The variational model is

    minimize_x  alpha * ||x||^2  +  sum_i (1/N) * ||A_i x - d_i||^2

with N the gate count.  This module owns the two summand families and
everything the solvers need from them: proximal maps, convex
conjugates, and strong convexity moduli.  The closed forms are locked
in by independent numerical-minimizer oracle tests, since a sign or
scale slip in the N-dependent constants would silently wreck the
solver rates.

With f(y) = (1/N) ||y - d||^2 the convex conjugate is
f*(w) = (N/4) ||w||^2 + <w, d>, so both f* and g(x) = alpha ||x||^2
are strongly convex, with moduli N/2 and 2*alpha respectively.  That
pair of moduli is what the rate predictions in :mod:`mctomo.theory`
consume.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .linops import LinearMap

__all__ = [
    "prox_g",
    "prox_fstar",
    "g_value",
    "fit_value",
    "fstar_value",
    "objective",
    "moduli",
]


def prox_g(alpha: float, tau: float, v: np.ndarray) -> np.ndarray:
    """Proximal map of ``tau * alpha * ||.||^2`` at ``v``.

    Solves ``argmin_u 0.5 ||u - v||^2 + tau * alpha * ||u||^2``, which
    is the elementwise shrinkage ``v / (1 + 2 * alpha * tau)``.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return np.asarray(v, dtype=np.float64) / (1.0 + 2.0 * alpha * tau)


def prox_fstar(
    num_gates: int, data: np.ndarray, sigma: float, v: np.ndarray
) -> np.ndarray:
    """Proximal map of ``sigma * f*`` at ``v`` for one gate's fit term.

    With ``f(y) = (1/N) ||y - d||^2`` and conjugate
    ``f*(w) = (N/4) ||w||^2 + <w, d>``, the prox is
    ``(v - sigma * d) / (1 + sigma * N / 2)`` elementwise.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if num_gates < 1:
        raise ValueError("num_gates must be >= 1")
    v = np.asarray(v, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    return (v - sigma * data) / (1.0 + sigma * num_gates / 2.0)


def g_value(alpha: float, x: np.ndarray) -> float:
    """Penalty value ``alpha * ||x||^2``."""
    x = np.asarray(x, dtype=np.float64)
    return float(alpha * np.vdot(x, x))


def fit_value(num_gates: int, data: np.ndarray, y: np.ndarray) -> float:
    """One gate's data fit ``(1/N) ||y - d||^2``."""
    if num_gates < 1:
        raise ValueError("num_gates must be >= 1")
    diff = np.asarray(y, dtype=np.float64) - np.asarray(data, dtype=np.float64)
    return float(np.vdot(diff, diff)) / num_gates


def fstar_value(num_gates: int, data: np.ndarray, w: np.ndarray) -> float:
    """Convex conjugate of the gate fit: ``(N/4) ||w||^2 + <w, d>``."""
    if num_gates < 1:
        raise ValueError("num_gates must be >= 1")
    w = np.asarray(w, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    return float(num_gates / 4.0 * np.vdot(w, w) + np.vdot(w, data))


def objective(
    alpha: float,
    gates: Sequence[tuple[LinearMap, np.ndarray]],
    x: np.ndarray,
) -> float:
    """Full objective ``alpha ||x||^2 + sum_i (1/N) ||A_i x - d_i||^2``.

    ``gates`` is the sequence of (operator, data) pairs; its length
    defines N.  Nonnegative, and zero exactly when x = 0 and every
    data block is zero.
    """
    gates = list(gates)
    if not gates:
        raise ValueError("at least one gate required")
    n = len(gates)
    total = g_value(alpha, x)
    for op, data in gates:
        total += fit_value(n, data, op.apply(x))
    return total


def moduli(alpha: float, num_gates: int) -> tuple[float, float]:
    """Strong convexity moduli ``(mu_g, mu_fstar)`` of the model.

    ``mu_g = 2 * alpha`` for the penalty and ``mu_fstar = N / 2`` for
    each gate conjugate.  Requires ``alpha > 0``; without strong
    convexity on both sides the linear rate machinery does not apply.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if num_gates < 1:
        raise ValueError("num_gates must be >= 1")
    return 2.0 * alpha, num_gates / 2.0
