"""Transport plans: couplings of two trajectories under uniform marginals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from otfleet.errors import DomainError, SchemaError
from otfleet.ot.cost import CostMatrix

# slack for float accumulation when validating marginal sums
MARGINAL_ATOL = 1e-10


@dataclass(frozen=True)
class TransportPlan:
    """Non-negative coupling matrix plus its transport cost.

    Row ``i`` sums to ``1/l_e`` and column ``j`` to ``1/l_b``;
    ``total_cost`` is the Frobenius inner product with the cost matrix it
    was solved against.
    """

    mass: np.ndarray
    total_cost: float

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        if mass.ndim != 2:
            raise SchemaError(f"plan mass must be 2-D, got shape {mass.shape}")
        if np.any(mass < -1e-15):
            raise DomainError("plan mass contains negative entries")
        object.__setattr__(self, "mass", np.maximum(mass, 0.0))

    @classmethod
    def from_mass(cls, cost: CostMatrix, mass: np.ndarray) -> "TransportPlan":
        mass = np.asarray(mass, dtype=np.float64)
        if mass.shape != cost.values.shape:
            raise SchemaError(
                f"plan shape {mass.shape} does not match cost shape {cost.values.shape}"
            )
        return cls(mass=mass, total_cost=float(np.sum(mass * cost.values)))

    def marginal_violation(self) -> float:
        """Max deviation of row/column sums from the uniform marginals."""
        l_e, l_b = self.mass.shape
        row_err = np.max(np.abs(self.mass.sum(axis=1) - 1.0 / l_e))
        col_err = np.max(np.abs(self.mass.sum(axis=0) - 1.0 / l_b))
        return float(max(row_err, col_err))
