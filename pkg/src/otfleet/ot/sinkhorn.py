"""Entropically regularized transport via log-domain Sinkhorn iterations.

Updates run on the dual potentials with log-sum-exp reductions, so the
scaling vectors never underflow even at small regularization; a
``SolverError`` is raised only if the potentials themselves become
non-finite. Convergence is declared when the worst row/column marginal
violation drops below the configured tolerance; otherwise the solve
returns with ``converged=False`` and the achieved violation, never a
silently infeasible plan.

``solve_sinkhorn_batch`` runs the same iteration across a stack of cost
matrices sharing one shape (the monitor scores all demonstrations at
once); potentials can be passed back in to warm-start the next, slightly
longer prefix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from otfleet.errors import DomainError, SolverError
from otfleet.ot.cost import CostMatrix
from otfleet.ot.plan import TransportPlan

_CHECK_EVERY = 5


@dataclass(frozen=True)
class SinkhornConfig:
    regularization: float = 0.05
    max_iterations: int = 500
    marginal_tolerance: float = 1e-6

    def __post_init__(self):
        if not (self.regularization > 0.0 and np.isfinite(self.regularization)):
            raise DomainError("regularization must be a positive finite scalar")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if not (self.marginal_tolerance > 0.0):
            raise DomainError("marginal_tolerance must be > 0")


@dataclass(frozen=True)
class SinkhornResult:
    plan: TransportPlan
    converged: bool
    iterations: int
    marginal_violation: float


@dataclass(frozen=True)
class BatchSinkhornResult:
    mass: np.ndarray  # (batch, l_e, l_b)
    costs: np.ndarray  # (batch,)
    converged: bool  # every instance met the tolerance
    iterations: int
    marginal_violation: float  # worst instance
    potentials: tuple[np.ndarray, np.ndarray]  # log-domain row/col potentials
    violations: np.ndarray  # (batch,) per-instance, at the final iterate
    converged_each: np.ndarray  # (batch,) bool


def _iterate(
    log_kernel: np.ndarray,
    log_mu_row: float,
    log_mu_col: float,
    config: SinkhornConfig,
    warm: tuple[np.ndarray, np.ndarray] | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool, int, float]:
    """Shared iteration core; ``log_kernel`` is (..., l_e, l_b)."""
    shape = log_kernel.shape
    f = np.zeros(shape[:-1]) if warm is None else warm[0].copy()
    g = np.zeros(shape[:-2] + shape[-1:]) if warm is None else warm[1].copy()

    l_e = shape[-2]
    l_b = shape[-1]
    iterations = 0
    violation = np.inf
    converged = False
    while iterations < config.max_iterations:
        iterations += 1
        f = log_mu_row - logsumexp(log_kernel + g[..., None, :], axis=-1)
        g = log_mu_col - logsumexp(log_kernel + f[..., :, None], axis=-2)
        if iterations % _CHECK_EVERY == 0 or iterations == config.max_iterations:
            if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
                raise SolverError(
                    "sinkhorn potentials diverged; increase regularization"
                )
            mass = np.exp(log_kernel + f[..., :, None] + g[..., None, :])
            # column marginals are exact right after the g-update
            row_err = np.abs(mass.sum(axis=-1) - 1.0 / l_e).max()
            col_err = np.abs(mass.sum(axis=-2) - 1.0 / l_b).max()
            violation = float(max(row_err, col_err))
            if violation <= config.marginal_tolerance:
                converged = True
                break
    mass = np.exp(log_kernel + f[..., :, None] + g[..., None, :])
    return f, g, mass, converged, iterations, violation


def solve_sinkhorn(
    cost: CostMatrix,
    config: SinkhornConfig | None = None,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> SinkhornResult:
    """Entropic plan for one cost matrix under uniform marginals."""
    config = config or SinkhornConfig()
    l_e, l_b = cost.values.shape
    log_kernel = -cost.values / config.regularization
    _, _, mass, converged, iterations, violation = _iterate(
        log_kernel, -np.log(l_e), -np.log(l_b), config, warm_start
    )
    return SinkhornResult(
        plan=TransportPlan.from_mass(cost, mass),
        converged=converged,
        iterations=iterations,
        marginal_violation=violation,
    )


def solve_sinkhorn_batch(
    costs: np.ndarray,
    config: SinkhornConfig | None = None,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> BatchSinkhornResult:
    """Entropic plans for a (batch, l_e, l_b) stack of cost matrices.

    The reported violation and convergence flag cover the whole batch
    (worst entry); iteration count is shared by construction.
    """
    config = config or SinkhornConfig()
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 3:
        raise DomainError(f"expected (batch, l_e, l_b) costs, got shape {costs.shape}")
    if not np.all(np.isfinite(costs)) or np.any(costs < 0.0):
        raise DomainError("batch costs must be finite and non-negative")
    batch, l_e, l_b = costs.shape
    log_kernel = -costs / config.regularization
    f, g, mass, _, iterations, _ = _iterate(
        log_kernel, -np.log(l_e), -np.log(l_b), config, warm_start
    )
    totals = np.einsum("bij,bij->b", mass, costs)
    row_err = np.abs(mass.sum(axis=-1) - 1.0 / l_e).max(axis=-1)
    col_err = np.abs(mass.sum(axis=-2) - 1.0 / l_b).max(axis=-1)
    violations = np.maximum(row_err, col_err)
    converged_each = violations <= config.marginal_tolerance
    return BatchSinkhornResult(
        mass=mass,
        costs=totals,
        converged=bool(converged_each.all()),
        iterations=iterations,
        marginal_violation=float(violations.max()),
        potentials=(f, g),
        violations=violations,
        converged_each=converged_each,
    )
