"""Deterministic 2-D manipulation simulator with scripted faults."""

from otfleet.sim.encoder import FeatureEncoder
from otfleet.sim.episodes import (
    EpisodeRecord,
    generate_expert_demos,
    load_episodes,
    post_train,
    run_episode,
    sample_injection,
    save_episodes,
)
from otfleet.sim.tasks import TASKS, TaskSpec, get_task
from otfleet.sim.world import (
    FAULT_MODES,
    FailureInjection,
    ScriptedPolicy,
    World,
    WorldState,
    restore,
)

__all__ = [
    "FAULT_MODES",
    "TASKS",
    "EpisodeRecord",
    "FailureInjection",
    "FeatureEncoder",
    "ScriptedPolicy",
    "TaskSpec",
    "World",
    "WorldState",
    "generate_expert_demos",
    "get_task",
    "load_episodes",
    "post_train",
    "restore",
    "run_episode",
    "sample_injection",
    "save_episodes",
]
