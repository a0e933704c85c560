"""Discrete optimal transport between trajectory embeddings.

Couples two time-ordered embedding sequences under uniform marginals:
row ``i`` of the cost matrix is an expert timestep carrying mass
``1/l_e``, column ``j`` a rollout timestep carrying mass ``1/l_b``.
``solve_exact`` is a min-cost-flow reference solver; ``solve_sinkhorn``
is the entropically regularized production path.
"""

from otfleet.ot.cost import CostMatrix, cosine_distance, cost_matrix_from_embeddings
from otfleet.ot.exact import solve_exact
from otfleet.ot.plan import TransportPlan
from otfleet.ot.reward import per_step_reward
from otfleet.ot.sinkhorn import (
    SinkhornConfig,
    SinkhornResult,
    solve_sinkhorn,
    solve_sinkhorn_batch,
)

__all__ = [
    "CostMatrix",
    "TransportPlan",
    "SinkhornConfig",
    "SinkhornResult",
    "cosine_distance",
    "cost_matrix_from_embeddings",
    "solve_exact",
    "solve_sinkhorn",
    "solve_sinkhorn_batch",
    "per_step_reward",
]
