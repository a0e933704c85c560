"""Pairwise transport costs between embedding sequences.

The default cost is cosine distance ``1 - cos(u, v)``, which lies in
``[0, 2]`` and vanishes exactly on positively parallel vectors, so the
transport plan pairs *similar* embeddings. A ``similarity`` mode is kept
for fidelity experiments: it uses ``1 + cos(u, v)``, which is the raw
cosine-similarity objective shifted by a constant (+1 across the whole
matrix, hence the same optimal plan) so that entries stay non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from otfleet.errors import DomainError, SchemaError

COST_MODES = ("distance", "similarity")


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine distance ``1 - u.v / (|u||v|)``.

    Raises ``DomainError`` naming the offending vector when either input
    has zero norm.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise SchemaError(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0:
        raise DomainError("cosine_distance: first vector has zero norm")
    if nv == 0.0:
        raise DomainError("cosine_distance: second vector has zero norm")
    d = 1.0 - float(np.dot(u, v)) / (nu * nv)
    # float cancellation can leave a few ulps outside [0, 2]
    return min(max(d, 0.0), 2.0)


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise costs; rows are expert timesteps, columns rollout timesteps."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise SchemaError(f"cost matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DomainError("cost matrix must have at least one row and column")
        if not np.all(np.isfinite(values)):
            raise DomainError("cost matrix contains non-finite entries")
        if np.any(values < 0.0):
            raise DomainError("cost matrix contains negative entries")
        object.__setattr__(self, "values", values)

    @property
    def n_expert(self) -> int:
        return self.values.shape[0]

    @property
    def n_rollout(self) -> int:
        return self.values.shape[1]


def _unit_rows(embeddings: np.ndarray, name: str) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise SchemaError(f"{name} embeddings must be 2-D, got shape {embeddings.shape}")
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0.0):
        idx = int(np.argmin(norms))
        raise DomainError(f"{name} embedding {idx} has zero norm")
    return embeddings / norms[:, None]


def cost_matrix_from_embeddings(
    expert: np.ndarray, rollout: np.ndarray, mode: str = "distance"
) -> CostMatrix:
    """Cost matrix between an expert and a rollout embedding sequence."""
    if mode not in COST_MODES:
        raise DomainError(f"unknown cost mode {mode!r}; expected one of {COST_MODES}")
    e = _unit_rows(expert, "expert")
    b = _unit_rows(rollout, "rollout")
    if e.shape[1] != b.shape[1]:
        raise SchemaError(
            f"embedding dimensions differ: expert {e.shape[1]} vs rollout {b.shape[1]}"
        )
    sims = e @ b.T
    values = 1.0 + sims if mode == "similarity" else 1.0 - sims
    return CostMatrix(np.clip(values, 0.0, 2.0))
