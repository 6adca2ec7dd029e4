"""Linear operator contract and combinators.

Every operator in the toolkit (ray transform, image warps, their
compositions and stacks) implements the :class:`LinearMap` contract: a
pair of maps ``apply`` / ``adjoint_apply`` between fixed-shape real
grids.  The inner product throughout is the unweighted Euclidean one on
the raveled grids (unit pixel and bin area), so ``adjoint_apply`` is
the exact transpose of ``apply``.  Saddle point convergence theory
assumes a true adjoint, which is why the test suite checks the pairing
at near machine precision rather than approximately.

Operators are immutable after construction and safe to apply
concurrently.  Norms are always estimated by power iteration, never by
materializing a matrix.
"""

from __future__ import annotations

import warnings
from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np

__all__ = [
    "LinearMap",
    "IdentityMap",
    "DiagonalMap",
    "ComposedMap",
    "StackedMap",
    "GramSumMap",
    "compose",
    "power_method",
    "stacked_norm_sq",
    "adjoint_mismatch",
]


class LinearMap(ABC):
    """A linear map between real coordinate grids.

    Subclasses set ``domain_shape`` and ``range_shape`` (tuples of ints)
    and implement :meth:`apply` and :meth:`adjoint_apply`.  Both methods
    must be linear, accept float64 arrays of the declared shape, and
    return new float64 arrays without mutating their input.
    """

    domain_shape: tuple[int, ...]
    range_shape: tuple[int, ...]

    @abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the map at ``x`` (shape ``domain_shape``)."""

    @abstractmethod
    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        """Evaluate the transpose at ``y`` (shape ``range_shape``)."""

    def _check_domain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != tuple(self.domain_shape):
            raise ValueError(
                f"expected domain shape {tuple(self.domain_shape)}, got {x.shape}"
            )
        return x

    def _check_range(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != tuple(self.range_shape):
            raise ValueError(
                f"expected range shape {tuple(self.range_shape)}, got {y.shape}"
            )
        return y


class IdentityMap(LinearMap):
    """Identity on a grid of the given shape."""

    def __init__(self, shape: tuple[int, ...]):
        self.domain_shape = tuple(int(n) for n in shape)
        self.range_shape = self.domain_shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._check_domain(x).copy()

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self._check_range(y).copy()


class DiagonalMap(LinearMap):
    """Elementwise multiplication by a fixed array (self-adjoint)."""

    def __init__(self, diag: np.ndarray):
        self.diag = np.asarray(diag, dtype=np.float64).copy()
        self.domain_shape = self.diag.shape
        self.range_shape = self.diag.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._check_domain(x) * self.diag

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self._check_range(y) * self.diag


class ComposedMap(LinearMap):
    """Composition ``outer o inner``; build through :func:`compose`."""

    def __init__(self, outer: LinearMap, inner: LinearMap):
        if tuple(inner.range_shape) != tuple(outer.domain_shape):
            raise ValueError(
                "cannot compose: inner range "
                f"{tuple(inner.range_shape)} != outer domain {tuple(outer.domain_shape)}"
            )
        self.outer = outer
        self.inner = inner
        self.domain_shape = tuple(inner.domain_shape)
        self.range_shape = tuple(outer.range_shape)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.outer.apply(self.inner.apply(x))

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.inner.adjoint_apply(self.outer.adjoint_apply(y))


def compose(outer: LinearMap, inner: LinearMap) -> ComposedMap:
    """Return the composition ``x -> outer(inner(x))``.

    Raises ``ValueError`` when the inner range shape does not match the
    outer domain shape.
    """
    return ComposedMap(outer, inner)


class StackedMap(LinearMap):
    """Row stack of N maps sharing one domain.

    ``apply`` evaluates every block and stacks the results along a new
    leading axis, so all blocks must share one range shape as well.
    ``adjoint_apply`` sums the block adjoints.  The squared norm of the
    stack equals the largest eigenvalue of the Gram sum over blocks
    (see :func:`stacked_norm_sq`).
    """

    def __init__(self, blocks: Sequence[LinearMap]):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("StackedMap needs at least one block")
        dom = tuple(blocks[0].domain_shape)
        rng = tuple(blocks[0].range_shape)
        for k, b in enumerate(blocks):
            if tuple(b.domain_shape) != dom:
                raise ValueError(f"block {k} domain {tuple(b.domain_shape)} != {dom}")
            if tuple(b.range_shape) != rng:
                raise ValueError(f"block {k} range {tuple(b.range_shape)} != {rng}")
        self.blocks = blocks
        self.domain_shape = dom
        self.range_shape = (len(blocks),) + rng

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check_domain(x)
        return np.stack([b.apply(x) for b in self.blocks])

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        y = self._check_range(y)
        out = self.blocks[0].adjoint_apply(y[0])
        for b, yk in zip(self.blocks[1:], y[1:]):
            out += b.adjoint_apply(yk)
        return out


class GramSumMap(LinearMap):
    """The self-adjoint map ``x -> c*x + sum_i w_i * B_i^T B_i x``.

    Used to estimate stacked norms and to express normal equations
    without materializing anything.  ``weights`` defaults to all ones
    and ``identity_coefficient`` to zero.
    """

    def __init__(
        self,
        blocks: Sequence[LinearMap],
        weights: Sequence[float] | None = None,
        identity_coefficient: float = 0.0,
    ):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("GramSumMap needs at least one block")
        dom = tuple(blocks[0].domain_shape)
        for k, b in enumerate(blocks):
            if tuple(b.domain_shape) != dom:
                raise ValueError(f"block {k} domain {tuple(b.domain_shape)} != {dom}")
        if weights is None:
            weights = (1.0,) * len(blocks)
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(blocks):
            raise ValueError("one weight per block required")
        self.blocks = blocks
        self.weights = weights
        self.identity_coefficient = float(identity_coefficient)
        self.domain_shape = dom
        self.range_shape = dom

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check_domain(x)
        out = self.identity_coefficient * x
        for w, b in zip(self.weights, self.blocks):
            out += w * b.adjoint_apply(b.apply(x))
        return out

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.apply(y)


def power_method(
    op: LinearMap,
    iterations: int = 100,
    seed: int = 0,
    rtol: float = 1e-10,
) -> float:
    """Estimate the operator norm of ``op`` by power iteration on its Gram.

    Starting from a seeded Gaussian vector on the domain, repeatedly
    applies ``op.adjoint_apply(op.apply(.))`` and tracks the Rayleigh
    quotient, which is monotone non-decreasing for this iteration.
    Stops early once the quotient changes by less than ``rtol``
    relatively between iterations.

    Parameters
    ----------
    op : LinearMap
        Operator whose largest singular value is wanted.
    iterations : int
        Maximum number of Gram applications, at least 1.
    seed : int
        Seed for the random start; the estimate is deterministic given
        ``(op, iterations, seed)``.
    rtol : float
        Relative change of the Rayleigh quotient below which the
        iteration is declared converged.

    Returns
    -------
    float
        Estimate of the operator norm (square root of the top Gram
        eigenvalue).  Returns 0.0, with a ``RuntimeWarning``, when the
        iteration degenerates to the zero vector (zero operator or a
        start in its null space).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(op.domain_shape)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        warnings.warn("degenerate start vector; returning 0", RuntimeWarning)
        return 0.0
    b /= nb
    rayleigh = 0.0
    for _ in range(iterations):
        w = op.adjoint_apply(op.apply(b))
        new_rayleigh = float(np.vdot(b, w)) / float(np.vdot(b, b))
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            warnings.warn("power iteration degenerated to zero vector; returning 0", RuntimeWarning)
            return 0.0
        b = w / nw
        if new_rayleigh > 0 and abs(new_rayleigh - rayleigh) <= rtol * new_rayleigh:
            rayleigh = new_rayleigh
            break
        rayleigh = new_rayleigh
    return float(np.sqrt(max(rayleigh, 0.0)))


def stacked_norm_sq(
    blocks: Sequence[LinearMap],
    iterations: int = 100,
    seed: int = 0,
) -> float:
    """Estimate the squared norm of the row stack of ``blocks``.

    Equals the largest eigenvalue of ``sum_i B_i^T B_i``, estimated by
    power iteration on that (self-adjoint) Gram sum.  Always at most
    ``sum_i ||B_i||^2`` up to estimation error.
    """
    gram = GramSumMap(blocks)
    # power_method on a self-adjoint PSD map G returns sqrt(lambda_max(G^2)),
    # which is lambda_max(G) itself.
    return power_method(gram, iterations=iterations, seed=seed)


def adjoint_mismatch(op: LinearMap, pairs: int = 20, seed: int = 0) -> float:
    """Worst relative defect of ``<Ax, y> = <x, A^T y>`` over random pairs.

    A matched implementation stays near machine precision; the suite
    requires <= 1e-8 for every shipped operator.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        x = rng.standard_normal(op.domain_shape)
        y = rng.standard_normal(op.range_shape)
        lhs = float(np.vdot(op.apply(x), y))
        rhs = float(np.vdot(x, op.adjoint_apply(y)))
        scale = max(abs(lhs), abs(rhs), np.finfo(np.float64).tiny)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
