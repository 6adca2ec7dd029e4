"""Saddle point solvers for the gated reconstruction model.

The model

    min_x  alpha ||x||^2 + sum_i (1/N) ||A_i x - d_i||^2

is solved through its saddle point formulation with one dual block per
gate.  One iteration performs

    (i)   x <- prox_{tau g}(x - tau * zbar)
    (ii)  draw a gate subset S; for i in S:
          y_i <- prox_{sigma_i f_i*}(y_i + sigma_i A_i x)
    (iii) z <- z + sum_{i in S} A_i^T (y_i - y_i_old)
          zbar <- z + sum_{i in S} (theta / p_i) A_i^T (y_i - y_i_old)

Full sampling (every gate, probabilities 1) is the deterministic
solver, called pdhg throughout; uniform single-gate sampling with
p_i = 1/N is the stochastic one, spdhg.  Both run the same step code,
so full-sampling spdhg reproduces the pdhg trajectory exactly.

The primal step reads the extrapolated aggregate ``zbar``, and the
extrapolation is rebased on the fresh ``z`` each iteration.  Without
that, maintaining ``zbar`` separately would leave it unread and the
theta extrapolation would be dead state; with it, a fixed point of the
iteration is exactly a saddle point of the model.

Epoch accounting is work-fair by construction: an epoch is one full
data pass, i.e. one pdhg iteration or N spdhg iterations, so after K
epochs both solvers report exactly K*N gated forward and K*N adjoint
applications.  Per-epoch diagnostics (objective value, distance to a
reference saddle point) are excluded from those counters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .experiment_io import ConvergenceRecord, rmse
from .functionals import fit_value, g_value, moduli, prox_fstar, prox_g
from .linops import GramSumMap, LinearMap

__all__ = [
    "RHO",
    "DivergenceError",
    "Problem",
    "SolverConfig",
    "SolverState",
    "SaddlePoint",
    "default_config",
    "sample_gates",
    "step",
    "run",
    "cg_reference",
    "optimality_residual",
]

# step size safety factor: admissibility is always checked against
# RHO^2 < 1 so the convergence conditions hold with strict margin
RHO = 0.99

MODES = ("pdhg", "spdhg")


class DivergenceError(RuntimeError):
    """Raised when a solver run leaves the finite/bounded regime."""


@dataclass(frozen=True)
class Problem:
    """Saddle point problem data: operators, data blocks, penalty weight."""

    alpha: float
    operators: tuple[LinearMap, ...]
    data: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.operators:
            raise ValueError("at least one gate required")
        if len(self.operators) != len(self.data):
            raise ValueError("one data block per operator required")
        dom = tuple(self.operators[0].domain_shape)
        for k, (op, d) in enumerate(zip(self.operators, self.data)):
            if tuple(op.domain_shape) != dom:
                raise ValueError(f"gate {k} domain mismatch")
            if d.shape != tuple(op.range_shape):
                raise ValueError(
                    f"gate {k} data shape {d.shape} != operator range "
                    f"{tuple(op.range_shape)}"
                )

    @classmethod
    def from_parts(cls, alpha: float, operators: Sequence[LinearMap], data) -> "Problem":
        return cls(
            alpha=float(alpha),
            operators=tuple(operators),
            data=tuple(np.asarray(d, dtype=np.float64) for d in data),
        )

    @property
    def num_gates(self) -> int:
        return len(self.operators)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.operators[0].domain_shape)

    def objective(self, x: np.ndarray) -> float:
        """Full objective; applies every gated operator once."""
        n = self.num_gates
        total = g_value(self.alpha, x)
        for op, d in zip(self.operators, self.data):
            total += fit_value(n, d, op.apply(x))
        return total

    def data_objective(self) -> float:
        """Objective at x = 0, computable without operator applications."""
        n = self.num_gates
        return sum(fit_value(n, d, np.zeros_like(d)) for d in self.data)


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes, sampling law, and budget of one solver run.

    Admissibility is enforced at construction against the stored norm
    estimates: per gate ``sigma_i * tau * ||A_i||^2 <= RHO^2 * p_i`` in
    spdhg mode, and ``sigma_i * tau * S2 <= RHO^2`` in pdhg mode where
    ``S2`` is the stacked squared norm (the sum of squared gate norms
    is used as a safe upper bound when no stacked estimate is given).
    pdhg mode forces every probability to 1.
    """

    mode: str
    sigmas: tuple[float, ...]
    tau: float
    theta: float
    probs: tuple[float, ...]
    epochs: int
    seed: int
    gate_norms: tuple[float, ...]
    stacked_norm_sq: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        n = len(self.sigmas)
        if n == 0 or len(self.probs) != n or len(self.gate_norms) != n:
            raise ValueError("sigmas, probs, gate_norms must share one length >= 1")
        if not all(s > 0 and math.isfinite(s) for s in self.sigmas):
            raise ValueError("all sigmas must be positive and finite")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive and finite")
        if not (0 < self.theta <= 1):
            raise ValueError("theta must lie in (0, 1]")
        if not all(0 < p <= 1 for p in self.probs):
            raise ValueError("probabilities must lie in (0, 1]")
        if self.mode == "pdhg" and any(p != 1.0 for p in self.probs):
            raise ValueError("pdhg mode requires all probabilities equal to 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not all(v > 0 for v in self.gate_norms):
            raise ValueError("gate norms must be positive")
        slack = 1.0 + 1e-9
        if self.mode == "spdhg":
            for s, p, v in zip(self.sigmas, self.probs, self.gate_norms):
                if s * self.tau * v * v > RHO**2 * p * slack:
                    raise ValueError(
                        "inadmissible step sizes: sigma*tau*||A_i||^2 exceeds "
                        f"RHO^2*p_i for a gate with norm {v:.6g}"
                    )
        else:
            s2 = (
                self.stacked_norm_sq
                if self.stacked_norm_sq is not None
                else sum(v * v for v in self.gate_norms)
            )
            for s in self.sigmas:
                if s * self.tau * s2 > RHO**2 * slack:
                    raise ValueError(
                        "inadmissible step sizes: sigma*tau*||stack||^2 exceeds RHO^2"
                    )

    @property
    def num_gates(self) -> int:
        return len(self.sigmas)

    @property
    def iterations_per_epoch(self) -> int:
        return 1 if self.mode == "pdhg" else self.num_gates


def default_config(
    mode: str,
    gate_norms: Sequence[float],
    alpha: float,
    epochs: int,
    seed: int = 0,
    stacked_norm_sq: float | None = None,
) -> SolverConfig:
    """Strong-convexity-balanced step sizes, admissible by construction.

    With moduli ``mu_g = 2 alpha`` and ``mu_fstar = N/2`` the balance
    parameter is ``gamma = sqrt(mu_g / mu_fstar)``.  spdhg uses uniform
    probabilities 1/N, per-gate duals ``sigma_i = gamma RHO / ||A_i||``
    and ``tau = RHO / (gamma max_i(||A_i|| / p_i))``; pdhg scales both
    step sizes by the stacked norm, ``sigma = gamma RHO / S`` and
    ``tau = RHO / (gamma S)`` with ``S^2`` the stacked squared norm
    (estimated by ``sum ||A_i||^2`` from above when not supplied).
    Every sigma and tau is exposed on the returned config for override.
    """
    gate_norms = tuple(float(v) for v in gate_norms)
    if not gate_norms:
        raise ValueError("at least one gate norm required")
    if not all(v > 0 for v in gate_norms):
        raise ValueError("gate norms must be positive")
    n = len(gate_norms)
    mu_g, mu_fstar = moduli(alpha, n)
    gamma = math.sqrt(mu_g / mu_fstar)
    if mode == "pdhg":
        probs = (1.0,) * n
        s2 = stacked_norm_sq if stacked_norm_sq is not None else sum(v * v for v in gate_norms)
        s = math.sqrt(s2)
        sigmas = (gamma * RHO / s,) * n
        tau = RHO / (gamma * s)
    elif mode == "spdhg":
        probs = (1.0 / n,) * n
        sigmas = tuple(gamma * RHO / v for v in gate_norms)
        tau = RHO / (gamma * max(v / p for v, p in zip(gate_norms, probs)))
    else:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return SolverConfig(
        mode=mode,
        sigmas=sigmas,
        tau=tau,
        theta=1.0,
        probs=probs,
        epochs=int(epochs),
        seed=int(seed),
        gate_norms=gate_norms,
        stacked_norm_sq=stacked_norm_sq,
    )


@dataclass
class SolverState:
    """Mutable iterate of a run: primal, duals, and adjoint aggregates.

    ``z`` always equals ``sum_i A_i^T y_i`` up to float accumulation;
    ``zbar`` is the extrapolated aggregate read by the next primal
    step.  ``epoch`` advances by |S|/N per iteration.
    """

    x: np.ndarray
    y: list[np.ndarray]
    z: np.ndarray
    zbar: np.ndarray
    iteration: int = 0
    epoch: float = 0.0
    fwd_calls: int = 0
    adj_calls: int = 0
    last_projections: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, problem: Problem) -> "SolverState":
        return cls(
            x=np.zeros(problem.image_shape),
            y=[np.zeros(d.shape) for d in problem.data],
            z=np.zeros(problem.image_shape),
            zbar=np.zeros(problem.image_shape),
        )


@dataclass
class SaddlePoint:
    """Primal-dual optimum used as the distance reference."""

    x_star: np.ndarray
    y_star: list[np.ndarray]
    source: str
    converged: bool
    residual: float

    def distance_sq(self, x: np.ndarray, y: Sequence[np.ndarray]) -> float:
        """Squared distance ||x - x*||^2 + sum_i ||y_i - y*_i||^2."""
        total = float(np.vdot(x - self.x_star, x - self.x_star))
        for yk, ystar in zip(y, self.y_star):
            diff = yk - ystar
            total += float(np.vdot(diff, diff))
        return total


def sample_gates(
    rng: np.random.Generator, probs: Sequence[float], mode: str
) -> tuple[int, ...]:
    """Draw the gate subset for one iteration.

    pdhg mode returns the full ordered set without consuming
    randomness; spdhg mode draws a single gate from ``probs`` using the
    supplied generator, so draw sequences are reproducible given the
    generator seed.
    """
    if mode == "pdhg":
        return tuple(range(len(probs)))
    if mode == "spdhg":
        p = np.asarray(probs, dtype=np.float64)
        return (int(rng.choice(len(probs), p=p / p.sum())),)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def step(
    state: SolverState,
    config: SolverConfig,
    problem: Problem,
    draw: Callable[[], tuple[int, ...]],
) -> SolverState:
    """Advance the state by one iteration (in place; returns the state).

    ``draw`` supplies the gate subset; an empty draw is retried, never
    silently skipped.  Raises :class:`DivergenceError` on the first
    non-finite iterate.
    """
    n = problem.num_gates
    x_new = prox_g(problem.alpha, config.tau, state.x - config.tau * state.zbar)
    if not np.isfinite(x_new).all():
        raise DivergenceError(
            f"non-finite primal iterate at iteration {state.iteration + 1}"
        )
    subset = draw()
    while len(subset) == 0:
        subset = draw()
    state.last_projections = {}
    deltas = []
    for i in subset:
        op = problem.operators[i]
        projected = op.apply(x_new)
        state.fwd_calls += 1
        state.last_projections[i] = projected
        y_new = prox_fstar(
            n,
            problem.data[i],
            config.sigmas[i],
            state.y[i] + config.sigmas[i] * projected,
        )
        if not np.isfinite(y_new).all():
            raise DivergenceError(
                f"non-finite dual iterate (gate {i}) at iteration {state.iteration + 1}"
            )
        delta_z = op.adjoint_apply(y_new - state.y[i])
        state.adj_calls += 1
        state.y[i] = y_new
        deltas.append((i, delta_z))
    for _, delta_z in deltas:
        state.z += delta_z
    state.zbar = state.z.copy()
    for i, delta_z in deltas:
        state.zbar += (config.theta / config.probs[i]) * delta_z
    state.x = x_new
    state.iteration += 1
    state.epoch += len(subset) / n
    return state


def run(
    config: SolverConfig,
    problem: Problem,
    saddle: SaddlePoint | None = None,
    truth: np.ndarray | None = None,
    on_epoch: Callable[[int, SolverState], None] | None = None,
) -> tuple[np.ndarray, ConvergenceRecord]:
    """Run the configured solver for ``config.epochs`` full data passes.

    Logs one row per epoch: squared distance to ``saddle`` (NaN when
    absent), objective value, rmse against ``truth`` (NaN when absent),
    and cumulative solver-internal forward/adjoint counts.  Diagnostics
    are not counted as solver work.  ``on_epoch`` is invoked after each
    logged epoch with ``(epoch_index, state)``.

    Aborts with :class:`DivergenceError` when an iterate goes
    non-finite or the objective exceeds a million times its initial
    value.
    """
    if config.num_gates != problem.num_gates:
        raise ValueError("config and problem disagree on the gate count")
    state = SolverState.zeros(problem)
    record = ConvergenceRecord()
    rng = np.random.default_rng(config.seed)
    guard = 1e6 * max(problem.data_objective(), np.finfo(np.float64).tiny)

    def draw() -> tuple[int, ...]:
        return sample_gates(rng, config.probs, config.mode)

    for epoch_index in range(1, config.epochs + 1):
        for _ in range(config.iterations_per_epoch):
            step(state, config, problem, draw)
        objective_value = _epoch_objective(problem, state, config.mode)
        if not math.isfinite(objective_value) or objective_value > guard:
            raise DivergenceError(
                f"objective {objective_value:.3e} exceeded the divergence guard "
                f"at epoch {epoch_index} (iteration {state.iteration})"
            )
        dist = saddle.distance_sq(state.x, state.y) if saddle is not None else math.nan
        err = rmse(state.x, truth) if truth is not None else math.nan
        record.append(
            epoch=float(epoch_index),
            dist_sq=dist,
            objective=objective_value,
            rmse_to_truth=err,
            fwd_calls=state.fwd_calls,
            adj_calls=state.adj_calls,
        )
        if on_epoch is not None:
            on_epoch(epoch_index, state)
    return state.x.copy(), record


def _epoch_objective(problem: Problem, state: SolverState, mode: str) -> float:
    # pdhg just projected every gate at the current primal iterate, so
    # the logged objective reuses those projections instead of paying
    # another full data pass
    n = problem.num_gates
    if mode == "pdhg" and len(state.last_projections) == n:
        total = g_value(problem.alpha, state.x)
        for i in range(n):
            total += fit_value(n, problem.data[i], state.last_projections[i])
        return total
    return problem.objective(state.x)


def cg_reference(
    problem: Problem, tol: float = 1e-12, max_iter: int = 500
) -> SaddlePoint:
    """Independent saddle point via conjugate gradient on the normal equations.

    Solves ``(alpha I + (1/N) sum_i A_i^T A_i) x = (1/N) sum_i A_i^T d_i``
    from zero to relative residual ``tol``, then recovers the dual
    blocks as ``y_i = (2/N)(A_i x - d_i)``.  The reported residual is
    the true relative residual recomputed at the end; hitting
    ``max_iter`` returns the best iterate flagged as non-converged.
    """
    if not (tol > 0):
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    n = problem.num_gates
    normal = GramSumMap(
        problem.operators, weights=(1.0 / n,) * n, identity_coefficient=problem.alpha
    )
    b = np.zeros(problem.image_shape)
    for op, d in zip(problem.operators, problem.data):
        b += op.adjoint_apply(d)
    b /= n
    b_norm = float(np.linalg.norm(b))
    x = np.zeros(problem.image_shape)
    converged = True
    if b_norm > 0:
        r = b.copy()
        p = r.copy()
        rs = float(np.vdot(r, r))
        converged = False
        for _ in range(max_iter):
            if math.sqrt(rs) <= tol * b_norm:
                converged = True
                break
            mp = normal.apply(p)
            alpha_cg = rs / float(np.vdot(p, mp))
            x += alpha_cg * p
            r -= alpha_cg * mp
            rs_new = float(np.vdot(r, r))
            p = r + (rs_new / rs) * p
            rs = rs_new
        else:
            converged = math.sqrt(rs) <= tol * b_norm
    true_residual = float(np.linalg.norm(b - normal.apply(x)))
    residual = true_residual / b_norm if b_norm > 0 else 0.0
    y_star = [
        (2.0 / n) * (op.apply(x) - d) for op, d in zip(problem.operators, problem.data)
    ]
    return SaddlePoint(
        x_star=x,
        y_star=y_star,
        source="cg_reference",
        converged=converged,
        residual=residual,
    )


def optimality_residual(problem: Problem, saddle: SaddlePoint) -> float:
    """Norm of the primal optimality defect ``2 alpha x* + sum_i A_i^T y*_i``."""
    defect = 2.0 * problem.alpha * saddle.x_star
    for op, y in zip(problem.operators, saddle.y_star):
        defect += op.adjoint_apply(y)
    return float(np.linalg.norm(defect))
