"""State featurization for the simulator.

Raw features are goal- and object-relative offsets, the effector's step
displacement, grip state, and a normalized clock; a fixed seeded random
projection mixes them into the first ``dim - 1`` embedding coordinates
and a constant bias fills the last, so every embedding has norm >= 1
and cosine distances are always defined. The projection is a pure
function of the encoder seed, making embeddings reproducible across
processes; ``encoder_id`` names the recipe so banks and rollouts from
different encoders refuse to mix.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from otfleet.errors import ConfigError
from otfleet.seeding import derive_rng
from otfleet.sim.world import WorldState

RAW_FEATURES = 16
CLOCK_SCALE = 1.0 / 48.0
# orientation errors displace far less feature mass than position errors;
# weighting the angle pair keeps goal-adjacent faults visible in cosine costs
ANGLE_SCALE = 3.0
# positions alone barely register thrash, stalls, and veering under
# direction-based costs; the step displacement pair makes them loud
VELOCITY_SCALE = 6.0

DEFAULT_DIM = 16
DEFAULT_ENCODER_SEED = 7


class FeatureEncoder:
    """Deterministic map from world states to unit-workspace embeddings."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = DEFAULT_ENCODER_SEED):
        if dim < 2:
            raise ConfigError(f"encoder dim must be >= 2, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        rng = derive_rng(self.seed, "encoder-projection")
        self.projection = rng.normal(size=(self.dim - 1, RAW_FEATURES)) / np.sqrt(
            RAW_FEATURES
        )
        self.projection.flags.writeable = False
        self.encoder_id = f"waypoint-enc-v2-d{self.dim}-s{self.seed}"

    def features(
        self, state: WorldState, prev: Optional[WorldState] = None
    ) -> np.ndarray:
        """Centered, balanced state features.

        Absolute positions are centered on the workspace midpoint and
        relative offsets scaled up, so feature vectors of distinct
        states spread over the sphere instead of sharing one dominant
        direction; that keeps cosine costs O(1) across path-scale
        differences. ``prev`` supplies the step displacement; without
        it the effector is treated as at rest.
        """
        manipuland = state.objects[0, :2]
        anchor = state.objects[1, :2]
        theta = float(state.objects[0, 2])
        if prev is None:
            velocity = np.zeros(2)
        else:
            velocity = VELOCITY_SCALE * (state.effector - prev.effector)
        return np.concatenate(
            [
                2.0 * (state.effector - 0.5),
                2.0 * (manipuland - 0.5),
                2.0 * (anchor - 0.5),
                [ANGLE_SCALE * np.sin(theta), ANGLE_SCALE * (1.0 - np.cos(theta))],
                4.0 * (manipuland - state.effector),
                4.0 * (manipuland - anchor),
                velocity,
                [1.0 if state.holding else -1.0],
                [state.clock * CLOCK_SCALE],
            ]
        )

    def embed(
        self, state: WorldState, prev: Optional[WorldState] = None
    ) -> np.ndarray:
        """Embed one state; the final coordinate is the constant bias 1."""
        projected = self.projection @ self.features(state, prev)
        return np.concatenate([projected, [1.0]])
