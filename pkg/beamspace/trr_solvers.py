"""
=============================================================================
Trimmed-Ridge Regression Solvers
=============================================================================

Everything here works in the lifted nonnegative space: x = u - v with
u, v >= 0, z = [u; v] and A = [Phi, -Phi]. Sign handling becomes a
projection onto the nonnegative orthant.

Objective:
----------
    F(z) = 1/2 ||y - A z||^2 + rho (||z||^2 - top_k2_norm(z, K))

    grad F(z) = A^T (A z - y) + 2 rho (z - trim_top_k(z, K))

Solvers:
--------
- itrr           : Fixed step 1/(k + 2 rho), monotone descent
- itrr_bb        : Barzilai-Borwein step with t/(t+3) relaxation, monotone
- itrr_nesterov  : Fixed step with Nesterov extrapolation
- pgd_ridge      : Same machinery with K = 0 (ridge regression)
- pgd_lasso      : ||y - Phi x||^2 + lambda1 ||x||_1 with BB steps
- omp            : Orthogonal matching pursuit baseline

Author: TRR Workbench Team
=============================================================================
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .channel_model import top_indices
from .exceptions import (
    DegenerateInputError,
    DegenerateStepError,
    DimensionMismatchError,
    InvalidDimensionError,
    NumericalError,
    PowerIterationError,
    TopKRangeError,
)


logger = logging.getLogger(__name__)


# Stopping rules for the two experiment families
EXACT_SPARSE_EPS = 1e-10
EXACT_SPARSE_MAX_ITER = 3000
CHANNEL_EPS = 1e-6
CHANNEL_MAX_ITER = 600

LIPSCHITZ_INFLATION = 1.001
POWER_ITER_TOL = 1e-8
POWER_ITER_MAX = 10_000


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class TrrProblem:
    """
    Lifted trimmed-ridge problem shared by every solver.

    lipschitz is lambda_max(A^T A) inflated by LIPSCHITZ_INFLATION; for
    A = [Phi, -Phi] that is twice lambda_max(Phi^T Phi).
    """

    a_matrix: np.ndarray
    measurement: np.ndarray
    rho: float
    top_k: int
    lipschitz: float

    def __post_init__(self):
        m, n_lifted = self.a_matrix.shape
        if self.measurement.shape != (m,):
            raise DimensionMismatchError(
                f"measurement has shape {self.measurement.shape}, expected ({m},)"
            )
        if not 0 <= self.top_k <= n_lifted:
            raise TopKRangeError(f"top_k must lie in [0, {n_lifted}], got {self.top_k}")
        if self.rho < 0:
            raise InvalidDimensionError(f"rho must be nonnegative, got {self.rho}")

    @property
    def n_cols(self) -> int:
        return self.a_matrix.shape[1] // 2

    @property
    def fixed_step(self) -> float:
        return 1.0 / (self.lipschitz + 2.0 * self.rho)

    @classmethod
    def from_phi(cls, phi, y, rho: float = 1.0, top_k: int = 0, lipschitz: Optional[float] = None):
        a_matrix = lift_matrix(phi)
        if lipschitz is None:
            lipschitz = lipschitz_constant(a_matrix)
        return cls(
            a_matrix=a_matrix,
            measurement=np.asarray(y, dtype=float),
            rho=float(rho),
            top_k=int(top_k),
            lipschitz=float(lipschitz),
        )


@dataclass
class SolverState:
    """Mutable iterate bookkeeping inside one solve; z stays nonnegative."""

    z: np.ndarray
    z_prev: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None
    grad_prev: Optional[np.ndarray] = None
    iteration: int = 0
    objective: float = 0.0


@dataclass
class SolverReport:
    solution: np.ndarray
    iterations_run: int
    objective_trace: List[float] = field(default_factory=list)
    error_trace: Optional[List[float]] = None
    norm_trace: List[float] = field(default_factory=list)
    converged: bool = False


# =============================================================================
# LIFT HELPERS
# =============================================================================

def _entries(matrix) -> np.ndarray:
    return np.asarray(getattr(matrix, "entries", matrix), dtype=float)


def lift_matrix(phi) -> np.ndarray:
    phi = _entries(phi)
    return np.hstack([phi, -phi])


def lift(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([np.maximum(x, 0.0), np.maximum(-x, 0.0)], axis=-1)


def unlift(z: np.ndarray) -> np.ndarray:
    n = z.shape[-1] // 2
    return z[..., :n] - z[..., n:]


def initial_point(problem: TrrProblem, init: str = "lift") -> np.ndarray:
    """Default start is the lift of Phi^T y, the network's initializing layer."""
    if init == "zero":
        return np.zeros(problem.a_matrix.shape[1])
    if init != "lift":
        raise InvalidDimensionError(f"unknown init '{init}' (expected 'lift' or 'zero')")
    phi = problem.a_matrix[:, :problem.n_cols]
    return lift(phi.T @ problem.measurement)


# =============================================================================
# TOP-K OPERATORS
# =============================================================================

def _check_k(length: int, k: int):
    if not 0 <= k <= length:
        raise TopKRangeError(f"k must lie in [0, {length}], got {k}")


def top_k2_norm(x: np.ndarray, k: int) -> float:
    """Sum of squares of the k largest-magnitude entries."""
    x = np.asarray(x, dtype=float)
    _check_k(x.shape[0], k)
    kept = x[top_indices(x, k)]
    return float(np.dot(kept, kept))


def trim_top_k(z: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries, zero the rest (ties: lowest index)."""
    z = np.asarray(z, dtype=float)
    _check_k(z.shape[0], k)
    trimmed = np.zeros_like(z)
    idx = top_indices(z, k)
    trimmed[idx] = z[idx]
    return trimmed


# =============================================================================
# OBJECTIVE & GRADIENT
# =============================================================================

def _check_iterate(problem: TrrProblem, z: np.ndarray):
    if z.shape != (problem.a_matrix.shape[1],):
        raise DimensionMismatchError(
            f"iterate has shape {z.shape}, expected ({problem.a_matrix.shape[1]},)"
        )


def objective(problem: TrrProblem, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    _check_iterate(problem, z)
    residual = problem.measurement - problem.a_matrix @ z
    penalty = float(np.dot(z, z)) - top_k2_norm(z, problem.top_k)
    return 0.5 * float(np.dot(residual, residual)) + problem.rho * penalty


def gradient(problem: TrrProblem, z: np.ndarray) -> np.ndarray:
    """
    A^T (A z - y) + 2 rho (z - trim_top_k(z, K)).

    This is the descent direction of F; the residual sign is A z - y.
    """
    z = np.asarray(z, dtype=float)
    _check_iterate(problem, z)
    a = problem.a_matrix
    grad = a.T @ (a @ z - problem.measurement)
    if problem.rho:
        grad = grad + 2.0 * problem.rho * (z - trim_top_k(z, problem.top_k))
    return grad


def lipschitz_constant(a_matrix, tol: float = POWER_ITER_TOL, max_iter: int = POWER_ITER_MAX) -> float:
    """
    lambda_max(A^T A) by power iteration, inflated by 0.1 %.

    Iterates on the smaller of A^T A and A A^T (same nonzero spectrum) from
    a fixed pseudo-random start, so the result is deterministic.
    """
    a = _entries(a_matrix)
    if not a.any():
        raise DegenerateInputError("Lipschitz constant of a zero matrix is undefined")

    gram = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    v = np.random.default_rng(0).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)

    estimate = 0.0
    for _ in range(max_iter):
        w = gram @ v
        updated = float(np.dot(v, w))
        norm = np.linalg.norm(w)
        if norm == 0:
            raise DegenerateInputError("power iteration collapsed to the null space")
        v = w / norm
        if abs(updated - estimate) <= tol * abs(updated):
            return updated * LIPSCHITZ_INFLATION
        estimate = updated

    raise PowerIterationError(f"power iteration did not converge in {max_iter} steps")


def bb_step(z, z_prev, g, g_prev, fallback: float) -> float:
    """
    Barzilai-Borwein (BB1) step ||dz||^2 / (dz . dg).

    Returns `fallback` (normally 1/(k + 2 rho)) when the curvature along dz
    is not positive.
    """
    dz = np.asarray(z, dtype=float) - np.asarray(z_prev, dtype=float)
    if not dz.any():
        raise DegenerateStepError("BB step needs two distinct iterates")
    dg = np.asarray(g, dtype=float) - np.asarray(g_prev, dtype=float)
    curvature = float(np.dot(dz, dg))
    if curvature <= 0:
        return fallback
    return float(np.dot(dz, dz)) / curvature


# =============================================================================
# SHARED ITERATION ENGINE
# =============================================================================

class _Trace:
    """Objective / error / norm traces of one solve."""

    def __init__(self, label: Optional[np.ndarray]):
        self.objective = []
        self.norm = []
        self.label = None
        self.label_energy = 0.0
        if label is not None:
            label = np.asarray(label, dtype=float)
            energy = float(np.dot(label, label))
            if energy > 0:
                self.label = label
                self.label_energy = energy
        self.error = [] if self.label is not None else None

    def record(self, z: np.ndarray, value: float):
        x_hat = unlift(z)
        self.objective.append(value)
        self.norm.append(float(np.linalg.norm(x_hat)))
        if self.label is not None:
            diff = self.label - x_hat
            self.error.append(float(np.dot(diff, diff)) / self.label_energy)

    def report(self, z: np.ndarray, iterations: int, converged: bool) -> SolverReport:
        return SolverReport(
            solution=unlift(z),
            iterations_run=iterations,
            objective_trace=self.objective,
            error_trace=self.error,
            norm_trace=self.norm,
            converged=converged,
        )


def _check_nonnegative(z: np.ndarray, iteration: int):
    if not np.all(z >= 0):
        raise NumericalError(f"iterate {iteration} left the nonnegative orthant")


def _check_stopping(eps: float, max_iter: int):
    if eps < 0:
        raise InvalidDimensionError(f"eps must be nonnegative, got {eps}")
    if max_iter < 1:
        raise InvalidDimensionError(f"max_iter must be >= 1, got {max_iter}")


def _descend(
    objective_fn: Callable[[np.ndarray], float],
    gradient_fn: Callable[[np.ndarray], np.ndarray],
    z0: np.ndarray,
    step_for: Callable[[int, SolverState], float],
    mix_for: Callable[[int], float],
    eps: float,
    max_iter: int,
    label: Optional[np.ndarray],
    retry_step: Optional[float] = None,
) -> SolverReport:
    """
    Projected descent w = (z - alpha grad)_+, z <- z + beta (w - z).

    With retry_step set, an update that raises the objective is replaced by
    the plain step (z - retry_step grad)_+, so the trace is nonincreasing.
    Stops when ||z_new - z|| <= eps or after max_iter updates.
    """
    _check_stopping(eps, max_iter)
    state = SolverState(z=np.array(z0, dtype=float))
    _check_nonnegative(state.z, 0)
    state.objective = objective_fn(state.z)

    trace = _Trace(label)
    trace.record(state.z, state.objective)

    for t in range(1, max_iter + 1):
        state.grad = gradient_fn(state.z)
        alpha = step_for(t, state)
        w = np.maximum(state.z - alpha * state.grad, 0.0)
        beta = mix_for(t)
        z_new = w if beta == 1.0 else state.z + beta * (w - state.z)
        new_objective = objective_fn(z_new)
        if retry_step is not None and new_objective > state.objective:
            z_new = np.maximum(state.z - retry_step * state.grad, 0.0)
            new_objective = objective_fn(z_new)
        _check_nonnegative(z_new, t)

        delta = float(np.linalg.norm(z_new - state.z))
        state.z_prev, state.grad_prev = state.z, state.grad
        state.z, state.grad = z_new, None
        state.iteration = t
        state.objective = new_objective
        trace.record(state.z, state.objective)

        if delta <= eps:
            return trace.report(state.z, t, converged=True)

    return trace.report(state.z, max_iter, converged=False)


def _fixed_step(alpha: float):
    return lambda t, state: alpha


def _bb_steps(fallback: float):
    def step(t, state):
        if t == 1 or state.z_prev is None:
            return fallback
        return bb_step(state.z, state.z_prev, state.grad, state.grad_prev, fallback)
    return step


def _no_mixing(t: int) -> float:
    return 1.0


def _relaxation(t: int) -> float:
    return t / (t + 3.0)


# =============================================================================
# TRIMMED-RIDGE SOLVERS
# =============================================================================

def _start(problem: TrrProblem, z0) -> np.ndarray:
    return initial_point(problem) if z0 is None else np.asarray(z0, dtype=float)


def itrr(problem: TrrProblem, z0=None, eps: float = CHANNEL_EPS, max_iter: int = CHANNEL_MAX_ITER, label=None) -> SolverReport:
    """
    Iterative trimmed-ridge regression with the fixed step 1/(k + 2 rho).

    The step majorizes the DC objective, so the objective trace never
    increases (up to rounding).
    """
    if eps <= 0:
        raise InvalidDimensionError(f"eps must be positive, got {eps}")
    return _descend(
        lambda z: objective(problem, z),
        lambda z: gradient(problem, z),
        _start(problem, z0),
        _fixed_step(problem.fixed_step),
        _no_mixing,
        eps,
        max_iter,
        label,
    )


def itrr_bb(problem: TrrProblem, z0=None, eps: float = CHANNEL_EPS, max_iter: int = CHANNEL_MAX_ITER, label=None) -> SolverReport:
    """
    Monotone ITRR with BB steps (first step 1/(k + 2 rho)) and
    beta_t = t/(t+3). A relaxed BB update that raises F is redone with the
    fixed step 1/(k + 2 rho).
    """
    if eps <= 0:
        raise InvalidDimensionError(f"eps must be positive, got {eps}")
    return _descend(
        lambda z: objective(problem, z),
        lambda z: gradient(problem, z),
        _start(problem, z0),
        _bb_steps(problem.fixed_step),
        _relaxation,
        eps,
        max_iter,
        label,
        retry_step=problem.fixed_step,
    )


def itrr_nesterov(problem: TrrProblem, z0=None, eps: float = CHANNEL_EPS, max_iter: int = CHANNEL_MAX_ITER, label=None) -> SolverReport:
    """
    Fixed-step ITRR with Nesterov extrapolation:
    w_{t+1} = (z_t - alpha grad)_+, z_{t+1} = (w_{t+1} + beta_t (w_{t+1} - w_t))_+.
    """
    if eps <= 0:
        raise InvalidDimensionError(f"eps must be positive, got {eps}")
    _check_stopping(eps, max_iter)

    alpha = problem.fixed_step
    z = _start(problem, z0).copy()
    _check_nonnegative(z, 0)
    w_prev = z.copy()

    trace = _Trace(label)
    trace.record(z, objective(problem, z))

    for t in range(1, max_iter + 1):
        w = np.maximum(z - alpha * gradient(problem, z), 0.0)
        z_new = np.maximum(w + _relaxation(t) * (w - w_prev), 0.0)
        _check_nonnegative(z_new, t)

        delta = float(np.linalg.norm(z_new - z))
        z, w_prev = z_new, w
        trace.record(z, objective(problem, z))

        if delta <= eps:
            return trace.report(z, t, converged=True)

    return trace.report(z, max_iter, converged=False)


# =============================================================================
# BASELINES
# =============================================================================

def pgd_ridge(
    phi,
    y,
    lambda2: float,
    step_rule: Union[str, Sequence[float]] = "bb",
    eps: float = CHANNEL_EPS,
    max_iter: int = CHANNEL_MAX_ITER,
    z0=None,
    label=None,
    mixing: Optional[float] = None,
    lipschitz: Optional[float] = None,
) -> SolverReport:
    """
    Projected gradient on 1/2 ||y - Phi x||^2 + lambda2 ||x||^2 in the lifted
    space (a trimmed-ridge problem with K = 0).

    step_rule:
        "fixed" : 1/(k + 2 lambda2), no relaxation
        "bb"    : BB steps with t/(t+3) relaxation (PGD-BB)
        list    : explicit per-iteration steps; runs at most len(list)
                  iterations with the constant relaxation `mixing`
    """
    problem = TrrProblem.from_phi(phi, y, rho=lambda2, top_k=0, lipschitz=lipschitz)
    start = _start(problem, z0)
    obj = lambda z: objective(problem, z)
    grad = lambda z: gradient(problem, z)

    if isinstance(step_rule, str):
        if step_rule == "fixed":
            step_for, mix_for = _fixed_step(problem.fixed_step), _no_mixing
        elif step_rule == "bb":
            step_for, mix_for = _bb_steps(problem.fixed_step), _relaxation
        else:
            raise InvalidDimensionError(f"unknown step rule '{step_rule}'")
        if mixing is not None:
            mix_for = lambda t: float(mixing)
        return _descend(obj, grad, start, step_for, mix_for, eps, max_iter, label)

    steps = [float(s) for s in step_rule]
    beta = 1.0 if mixing is None else float(mixing)
    return _descend(
        obj,
        grad,
        start,
        lambda t, state: steps[t - 1],
        lambda t: beta,
        eps,
        min(max_iter, len(steps)),
        label,
    )


def pgd_lasso(
    phi,
    y,
    lambda1: float,
    eps: float = CHANNEL_EPS,
    max_iter: int = CHANNEL_MAX_ITER,
    z0=None,
    label=None,
    lipschitz: Optional[float] = None,
) -> SolverReport:
    """
    ||y - Phi x||^2 + lambda1 ||x||_1 by lifted projected gradient with BB
    steps. On z >= 0 the l1 term is linear: lambda1 * sum(z).
    """
    if lambda1 < 0:
        raise InvalidDimensionError(f"lambda1 must be nonnegative, got {lambda1}")

    problem = TrrProblem.from_phi(phi, y, rho=0.0, top_k=0, lipschitz=lipschitz)
    a, target = problem.a_matrix, problem.measurement

    def lasso_objective(z):
        residual = target - a @ z
        return float(np.dot(residual, residual)) + lambda1 * float(z.sum())

    def lasso_gradient(z):
        return 2.0 * (a.T @ (a @ z - target)) + lambda1

    fallback = 1.0 / (2.0 * problem.lipschitz)
    return _descend(
        lasso_objective,
        lasso_gradient,
        _start(problem, z0),
        _bb_steps(fallback),
        _relaxation,
        eps,
        max_iter,
        label,
    )


def omp(phi, y, sparsity: int) -> np.ndarray:
    """
    Orthogonal matching pursuit with a least-squares refit each round.

    Columns of a Bernoulli Phi already have unit norm, so raw correlations
    pick the atoms.
    """
    phi = _entries(phi)
    y = np.asarray(y, dtype=float)
    m, n = phi.shape
    if y.shape != (m,):
        raise DimensionMismatchError(f"measurement has shape {y.shape}, expected ({m},)")
    if not 1 <= sparsity <= min(m, n):
        raise InvalidDimensionError(f"sparsity must lie in [1, {min(m, n)}], got {sparsity}")

    x_hat = np.zeros(n)
    residual = y.copy()
    support = []
    coef = np.zeros(0)

    for _ in range(sparsity):
        if not residual.any():
            break
        correlation = np.abs(phi.T @ residual)
        correlation[support] = -1.0
        support.append(int(np.argmax(correlation)))

        atoms = phi[:, support]
        if np.linalg.matrix_rank(atoms) < len(support):
            raise NumericalError(f"active set of size {len(support)} is rank deficient")
        coef, *_ = np.linalg.lstsq(atoms, y, rcond=None)
        residual = y - atoms @ coef

    x_hat[support] = coef
    return x_hat
