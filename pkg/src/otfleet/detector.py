"""Online rollout monitoring against a demo bank.

The monitor scores a live rollout prefix by its minimum transport cost
to any padded demonstration (the *match index*): low means the rollout
still tracks expert behavior, high means it has drifted. Episode-level
calibration collects indices from successful rollouts and thresholds new
ones at the ``1 - delta/100`` linear-interpolation quantile; ``delta``
itself adapts when the fleet verifies a missed failure or false alarm.

Scoring a short prefix against full-length padded demos structurally
inflates the index (every future demo row must still couple somewhere),
so warnings are gated until the prefix reaches a configured fraction of
``l_max``, and the default calibration summary records the *maximum*
gated prefix index of a successful episode rather than only its final
index, keeping the calibrated statistic aligned with what the online
check actually compares.

Concurrency: one ``DetectorState`` per robot; shared calibration is
mutated only through a single writer (the fleet engine enforces this).
The evaluation stride plus the request/reply pattern in the fleet keep
scoring from ever blocking environment stepping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence

import numpy as np

from otfleet.demos import DemoBank, Trajectory
from otfleet.errors import DomainError, SchemaError
from otfleet.ot import SinkhornConfig, solve_sinkhorn_batch

DELTA_MIN = 0.5
DELTA_MAX = 50.0

CALIBRATION_SUMMARIES = ("max_prefix", "final")

MISSED_FAILURE = "missed_failure"
FALSE_ALARM = "false_alarm"

RAISE = "raise"
SILENT = "silent"


@dataclass(frozen=True)
class MatchIndex:
    """Minimum transport cost of a rollout prefix over the demo bank."""

    value: float
    nearest_demo: int
    prefix_len: int

    def __post_init__(self):
        if self.value < 0.0 or not math.isfinite(self.value):
            raise DomainError(f"match index must be finite and >= 0, got {self.value}")
        if self.prefix_len < 1:
            raise DomainError(f"prefix_len must be >= 1, got {self.prefix_len}")
        if self.nearest_demo < 0:
            raise DomainError(f"nearest_demo must be a bank index, got {self.nearest_demo}")


@dataclass(frozen=True)
class RewindConfig:
    epsilon: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError(f"rewind epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass
class DetectorConfig:
    """Tunables for monitoring, calibration, and rewinding."""

    delta: float = 10.0  # percent; threshold is the (1 - delta/100) quantile
    delta_step: float = 2.5
    warmup_min_successes: int = 5
    min_prefix_fraction: float = 0.25
    stride: int = 4
    rewind: RewindConfig = field(default_factory=RewindConfig)
    solver: SinkhornConfig = field(default_factory=SinkhornConfig)
    calibration_summary: str = "max_prefix"
    # swap the adaptation direction (missed failure -> larger quantile,
    # hence *less* sensitive); kept for replicating systems wired that way
    invert_delta_updates: bool = False

    def __post_init__(self):
        if not DELTA_MIN <= self.delta <= DELTA_MAX:
            raise DomainError(
                f"delta must lie in [{DELTA_MIN}, {DELTA_MAX}], got {self.delta}"
            )
        if self.delta_step <= 0.0:
            raise DomainError("delta_step must be > 0")
        if self.warmup_min_successes < 1:
            raise DomainError("warmup_min_successes must be >= 1")
        if not 0.0 < self.min_prefix_fraction < 1.0:
            raise DomainError("min_prefix_fraction must lie in (0, 1)")
        if self.stride < 1:
            raise DomainError("stride must be >= 1")
        if self.calibration_summary not in CALIBRATION_SUMMARIES:
            raise DomainError(
                f"calibration_summary must be one of {CALIBRATION_SUMMARIES}, "
                f"got {self.calibration_summary!r}"
            )


def linear_quantile(values: Sequence[float], q: float) -> float:
    """Quantile with linear interpolation between order statistics.

    Hand-rolled on purpose: this is the package's single percentile
    convention, pinned independently of any library default.
    """
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"quantile level must lie in [0, 1], got {q}")
    data = sorted(float(v) for v in values)
    if not data:
        raise DomainError("cannot take a quantile of zero values")
    if len(data) == 1:
        return data[0]
    position = (len(data) - 1) * q
    low = int(math.floor(position))
    high = min(low + 1, len(data) - 1)
    weight = position - low
    return data[low] * (1.0 - weight) + data[high] * weight


class SharedCalibration:
    """Success statistics and the adaptive threshold, shared per task.

    All mutation must come from one writer at a time; readers may poll
    ``threshold`` freely (floats are replaced atomically).
    """

    def __init__(self, config: DetectorConfig):
        self.delta = float(config.delta)
        self.delta_step = float(config.delta_step)
        self.warmup_min_successes = int(config.warmup_min_successes)
        self.invert_delta_updates = bool(config.invert_delta_updates)
        self.success_indices: list[float] = []
        self.threshold: Optional[float] = None

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None

    def recalibrate(self) -> Optional[float]:
        if len(self.success_indices) < self.warmup_min_successes:
            self.threshold = None
        else:
            self.threshold = linear_quantile(
                self.success_indices, 1.0 - self.delta / 100.0
            )
        return self.threshold

    def record_success(self, value: float) -> Optional[float]:
        if value < 0.0 or not math.isfinite(value):
            raise DomainError(f"success index must be finite and >= 0, got {value}")
        self.success_indices.append(float(value))
        return self.recalibrate()

    def update_delta(self, event: str) -> float:
        """Nudge sensitivity after a verified detection mistake.

        A missed failure lowers the quantile (more sensitive); a false
        alarm raises it. ``invert_delta_updates`` swaps the directions.
        """
        if event not in (MISSED_FAILURE, FALSE_ALARM):
            raise DomainError(f"unknown adaptation event {event!r}")
        step = self.delta_step
        if event == FALSE_ALARM:
            step = -step
        if self.invert_delta_updates:
            step = -step
        self.delta = min(max(self.delta + step, DELTA_MIN), DELTA_MAX)
        self.recalibrate()
        return self.delta


@dataclass
class DetectorState:
    """Per-robot monitoring state: shared calibration plus the live
    rollout's evaluated prefix indices (strictly increasing in t)."""

    calibration: SharedCalibration
    config: DetectorConfig
    prefix_index_cache: list = field(default_factory=list)

    @property
    def threshold(self) -> Optional[float]:
        return self.calibration.threshold

    @property
    def delta(self) -> float:
        return self.calibration.delta

    @property
    def delta_step(self) -> float:
        return self.calibration.delta_step

    @property
    def success_indices(self) -> list:
        return self.calibration.success_indices

    @property
    def warmup_min_successes(self) -> int:
        return self.calibration.warmup_min_successes

    @property
    def min_prefix_fraction(self) -> float:
        return self.config.min_prefix_fraction

    def cache_index(self, idx: MatchIndex) -> None:
        if self.prefix_index_cache and idx.prefix_len <= self.prefix_index_cache[-1].prefix_len:
            raise DomainError(
                f"prefix index cache must grow strictly in prefix_len; got "
                f"{idx.prefix_len} after {self.prefix_index_cache[-1].prefix_len}"
            )
        self.prefix_index_cache.append(idx)

    def reset_rollout(self) -> None:
        self.prefix_index_cache = []

    def truncate_cache(self, t: int) -> None:
        """Drop evaluated indices for prefixes longer than ``t``."""
        self.prefix_index_cache = [
            idx for idx in self.prefix_index_cache if idx.prefix_len <= t
        ]


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("cannot cosine-score zero-norm embeddings")
    return matrix / norms


def prefix_costs(bank: DemoBank, prefix_embeddings: np.ndarray) -> np.ndarray:
    """(N, l_max, t) stack of cosine-distance cost matrices."""
    prefix_embeddings = np.asarray(prefix_embeddings, dtype=np.float64)
    if prefix_embeddings.ndim != 2:
        raise SchemaError(
            f"prefix embeddings must be 2-D, got shape {prefix_embeddings.shape}"
        )
    if prefix_embeddings.shape[0] < 1:
        raise DomainError("prefix must contain at least one step")
    if prefix_embeddings.shape[1] != bank.dim:
        raise SchemaError(
            f"prefix dimension {prefix_embeddings.shape[1]} does not match "
            f"bank dimension {bank.dim}"
        )
    demo_units = _unit_rows(bank.padded_embeddings)
    prefix_units = _unit_rows(prefix_embeddings)
    sims = np.einsum("nld,td->nlt", demo_units, prefix_units)
    return np.clip(1.0 - sims, 0.0, 2.0)


def match_index(
    prefix: Trajectory | np.ndarray,
    bank: DemoBank,
    solver: Optional[SinkhornConfig] = None,
    warm_start: Optional[tuple] = None,
) -> MatchIndex:
    """Minimum transport cost between the prefix and any padded demo.

    All demos are scored in one batched entropic solve; ties pick the
    lowest demo index. Accepts either a Trajectory or a raw (t, d)
    embedding matrix.
    """
    embeddings = prefix.embeddings if isinstance(prefix, Trajectory) else prefix
    costs = prefix_costs(bank, embeddings)
    result = solve_sinkhorn_batch(costs, solver or SinkhornConfig(), warm_start)
    best = int(np.argmin(result.costs))
    return MatchIndex(
        value=float(max(result.costs[best], 0.0)),
        nearest_demo=best,
        prefix_len=embeddings.shape[0],
    )


def calibrate_threshold(state: DetectorState) -> Optional[float]:
    """Recompute the warning threshold; None while below warm-up."""
    return state.calibration.recalibrate()


def record_success(state: DetectorState, final_index: MatchIndex | float) -> Optional[float]:
    value = final_index.value if isinstance(final_index, MatchIndex) else float(final_index)
    return state.calibration.record_success(value)


def update_delta(state: DetectorState, event: str) -> float:
    return state.calibration.update_delta(event)


@dataclass(frozen=True)
class CheckDecision:
    decision: str  # RAISE or SILENT
    reason: str

    @property
    def raised(self) -> bool:
        return self.decision == RAISE


def gate_length(min_prefix_fraction: float, l_max: int) -> int:
    """Earliest prefix length at which warnings may fire."""
    return max(1, math.floor(min_prefix_fraction * l_max))


def check(
    state: DetectorState,
    idx: MatchIndex,
    rollout_len_so_far: int,
    l_max: int,
) -> CheckDecision:
    """Pure warning decision for one evaluated prefix.

    Raises only when calibrated, past the early-prefix gate, and the
    index strictly exceeds the threshold.
    """
    if idx.prefix_len > rollout_len_so_far:
        raise DomainError(
            f"prefix_len {idx.prefix_len} exceeds rollout length {rollout_len_so_far}"
        )
    if not state.calibration.calibrated:
        return CheckDecision(SILENT, "warming-up")
    if idx.prefix_len < gate_length(state.config.min_prefix_fraction, l_max):
        return CheckDecision(SILENT, "prefix-gated")
    if idx.value > state.calibration.threshold:
        return CheckDecision(RAISE, "above-threshold")
    return CheckDecision(SILENT, "within-threshold")


def rewind_target(
    cache: Sequence[MatchIndex], t0: int, cfg: Optional[RewindConfig] = None
) -> int:
    """Latest evaluated timestep whose index is within epsilon of the
    current one; falls back to timestep 1.

    ``cache`` must contain an entry for ``t0`` itself (the prefix that
    triggered the decision).
    """
    cfg = cfg or RewindConfig()
    if not cache:
        raise DomainError("rewind requires at least one evaluated prefix index")
    current = None
    for idx in cache:
        if idx.prefix_len == t0:
            current = idx
            break
    if current is None:
        raise DomainError(f"no cached index for prefix length {t0}")
    bound = cfg.epsilon * current.value
    for idx in sorted(cache, key=lambda item: item.prefix_len, reverse=True):
        if idx.prefix_len <= t0 and idx.value <= bound:
            return idx.prefix_len
    return 1


def episode_summary(state: DetectorState, l_max: int) -> float:
    """Calibration statistic of a finished successful episode.

    ``max_prefix`` (default) takes the largest gated evaluated index so
    the threshold is calibrated against the same quantity the online
    check compares; ``final`` keeps only the last evaluated index.
    """
    cache = state.prefix_index_cache
    if not cache:
        raise DomainError("episode produced no evaluated prefix indices")
    if state.config.calibration_summary == "final":
        return cache[-1].value
    gate = gate_length(state.config.min_prefix_fraction, l_max)
    gated = [idx.value for idx in cache if idx.prefix_len >= gate]
    return max(gated) if gated else cache[-1].value


class RolloutMonitor:
    """Per-robot orchestration: stride, warm starts, cache, event log.

    ``observe`` ingests one embedding per environment step and returns
    the scored index on stride boundaries (None otherwise). The warm
    start reuses the previous evaluation's potentials, extended to the
    grown prefix, which cuts iteration counts on the hot path without
    changing any fixed point.
    """

    def __init__(
        self,
        bank: DemoBank,
        state: DetectorState,
        robot_id: str = "robot-0",
        event_log: Optional["DetectorEventLog"] = None,
    ):
        self.bank = bank
        self.state = state
        self.robot_id = robot_id
        self.event_log = event_log
        self._embeddings: list[np.ndarray] = []
        self._warm: Optional[tuple] = None

    @property
    def steps_seen(self) -> int:
        return len(self._embeddings)

    def reset(self) -> None:
        self._embeddings = []
        self._warm = None
        self.state.reset_rollout()

    def due(self, t: int) -> bool:
        return t % self.state.config.stride == 0

    def observe(self, embedding: np.ndarray) -> Optional[MatchIndex]:
        self._embeddings.append(np.asarray(embedding, dtype=np.float64))
        t = len(self._embeddings)
        if not self.due(t):
            return None
        return self.evaluate_prefix(t)

    def evaluate_prefix(self, t0: int) -> MatchIndex:
        """Score the first ``t0`` observed steps and cache the result."""
        if not 1 <= t0 <= len(self._embeddings):
            raise DomainError(
                f"prefix length {t0} outside observed range 1..{len(self._embeddings)}"
            )
        prefix = np.asarray(self._embeddings[:t0])
        costs = prefix_costs(self.bank, prefix)
        warm = self._extend_warm(t0)
        result = solve_sinkhorn_batch(costs, self.state.config.solver, warm)
        self._warm = (result.potentials[0], result.potentials[1], t0)
        best = int(np.argmin(result.costs))
        idx = MatchIndex(
            value=float(max(result.costs[best], 0.0)),
            nearest_demo=best,
            prefix_len=t0,
        )
        self.state.cache_index(idx)
        return idx

    def _extend_warm(self, t0: int) -> Optional[tuple]:
        if self._warm is None:
            return None
        f, g, t_prev = self._warm
        if t_prev >= t0:
            return None
        # new prefix columns start from the last column's potential
        tail = np.repeat(g[..., -1:], t0 - t_prev, axis=-1)
        return f, np.concatenate([g, tail], axis=-1)

    def decide(self, idx: MatchIndex) -> CheckDecision:
        decision = check(self.state, idx, self.steps_seen, self.bank.l_max)
        if self.event_log is not None:
            self.event_log.append(
                robot_id=self.robot_id,
                idx=idx,
                threshold=self.state.threshold,
                delta=self.state.delta,
                decision=decision.decision,
                reason=decision.reason,
            )
        return decision

    def truncate(self, t: int) -> None:
        """Forget observed steps past ``t`` after an external rewind.

        Cached indices for longer prefixes are dropped with them; the
        warm start is invalidated because the next prefix is shorter.
        """
        if not 0 <= t <= len(self._embeddings):
            raise DomainError(
                f"cannot truncate to {t}; observed steps span 0..{len(self._embeddings)}"
            )
        self._embeddings = self._embeddings[:t]
        self._warm = None
        self.state.truncate_cache(t)

    def rewind_to(self, t0: int) -> int:
        return rewind_target(self.state.prefix_index_cache, t0, self.state.config.rewind)


class DetectorEventLog:
    """Append-only JSON Lines log of scoring decisions."""

    def __init__(self, target: Path | str | IO[str]):
        if hasattr(target, "write"):
            self._handle = target
            self._owns = False
        else:
            self._handle = Path(target).open("a", encoding="utf-8")
            self._owns = True

    def append(self, robot_id, idx: MatchIndex, threshold, delta, decision, reason=""):
        record = {
            "robot_id": robot_id,
            "t0": idx.prefix_len,
            "lambda": idx.value,
            "nearest_demo": idx.nearest_demo,
            "threshold": threshold,
            "delta": delta,
            "decision": decision,
        }
        if reason:
            record["reason"] = reason
        self._handle.write(json.dumps(record) + "\n")

    def close(self) -> None:
        if self._owns:
            self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
