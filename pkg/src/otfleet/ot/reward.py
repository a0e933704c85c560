"""Per-timestep transport reward.

The reward of rollout step ``t`` is the negated cost mass flowing into
its column: ``r_t = -sum_i c[i, t] * mass[i, t]``. Summing ``-r_t`` over
all columns recovers the plan's total cost exactly.
"""

from __future__ import annotations

import numpy as np

from otfleet.errors import SchemaError
from otfleet.ot.cost import CostMatrix
from otfleet.ot.plan import TransportPlan


def per_step_reward(cost: CostMatrix, plan: TransportPlan, t: int) -> float:
    """Reward of rollout timestep ``t`` (zero-based); always <= 0."""
    if plan.mass.shape != cost.values.shape:
        raise SchemaError(
            f"plan shape {plan.mass.shape} does not match cost shape {cost.values.shape}"
        )
    l_b = cost.values.shape[1]
    if not 0 <= t < l_b:
        raise IndexError(f"rollout timestep {t} out of range [0, {l_b})")
    return -float(np.dot(cost.values[:, t], plan.mass[:, t]))
