"""Evaluation metrics over labeled episodes.

Episode-level rates treat a warning anywhere in a failed episode as a hit
and any warning in a successful episode as a false alarm. Step-level and
duration-based rates work from the per-episode counts carried on each
outcome. Undefined rates (a degenerate denominator, such as a batch with
no failures) are reported as None and propagate through derived metrics
rather than collapsing to zero.
"""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .errors import DomainError, OtfleetError, SchemaError

REPORT_FORMAT_VERSION = 1
REPORT_FORMATS = ("json", "csv")

CSV_COLUMNS = (
    "report_version",
    "config_hash",
    "seeds",
    "episodes",
    "failures",
    "successes",
    "true_positives",
    "false_negatives",
    "true_negatives",
    "false_positives",
    "tpr",
    "tnr",
    "accuracy",
    "weighted_accuracy",
    "sample_level_tnr",
    "success_rate",
    "intervention_rate",
    "intervention_episode_fraction",
    "steps_total",
    "steps_intervened",
)


@dataclass(frozen=True)
class EpisodeOutcome:
    """Ground truth and detector output for one finished episode.

    ``failure_onset`` is the injection tick for failed episodes and None
    for successes. ``warnings`` holds the timesteps at which the detector
    raised, strictly increasing, each within [1, steps_total].
    """

    episode_id: str
    success: bool
    failure_onset: Optional[int]
    warnings: tuple
    steps_total: int
    steps_intervened: int = 0

    def __post_init__(self):
        object.__setattr__(self, "warnings", tuple(int(w) for w in self.warnings))
        if self.steps_total < 1:
            raise DomainError("steps_total must be >= 1")
        if not 0 <= self.steps_intervened <= self.steps_total:
            raise DomainError(
                f"steps_intervened {self.steps_intervened} outside "
                f"[0, {self.steps_total}]"
            )
        if self.success:
            if self.failure_onset is not None:
                raise SchemaError("successful episodes carry no failure onset")
        else:
            if self.failure_onset is None:
                raise SchemaError("failed episodes must carry a failure onset")
            if not 1 <= self.failure_onset <= self.steps_total:
                raise DomainError(
                    f"failure onset {self.failure_onset} outside "
                    f"[1, {self.steps_total}]"
                )
        previous = 0
        for w in self.warnings:
            if not 1 <= w <= self.steps_total:
                raise DomainError(
                    f"warning timestep {w} outside [1, {self.steps_total}]"
                )
            if w <= previous:
                raise SchemaError("warning timesteps must be strictly increasing")
            previous = w

    @property
    def warned(self) -> bool:
        return len(self.warnings) > 0


@dataclass(frozen=True)
class ConfusionCounts:
    true_positives: int
    false_negatives: int
    true_negatives: int
    false_positives: int

    @property
    def failures(self) -> int:
        return self.true_positives + self.false_negatives

    @property
    def successes(self) -> int:
        return self.true_negatives + self.false_positives


def _require_outcomes(outcomes: Sequence[EpisodeOutcome]) -> None:
    if not outcomes:
        raise DomainError("metrics require at least one episode outcome")


def episode_confusion(outcomes: Sequence[EpisodeOutcome]):
    """Episode-level (tpr, tnr, counts).

    A failed episode with at least one warning is a true positive; a
    successful episode with none is a true negative. A side of the
    confusion with no episodes yields None for its rate.
    """
    _require_outcomes(outcomes)
    tp = fn = tn = fp = 0
    for outcome in outcomes:
        if outcome.success:
            if outcome.warned:
                fp += 1
            else:
                tn += 1
        else:
            if outcome.warned:
                tp += 1
            else:
                fn += 1
    counts = ConfusionCounts(tp, fn, tn, fp)
    tpr = tp / counts.failures if counts.failures else None
    tnr = tn / counts.successes if counts.successes else None
    return tpr, tnr, counts


def _check_rate(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def accuracy(tpr: Optional[float], tnr: Optional[float]) -> Optional[float]:
    """Balanced accuracy; None when either side is undefined."""
    if tpr is None or tnr is None:
        return None
    return (_check_rate("tpr", tpr) + _check_rate("tnr", tnr)) / 2


def weighted_accuracy(
    tpr: Optional[float], tnr: Optional[float], sr: float
) -> Optional[float]:
    """Accuracy reweighted by the success rate of the batch."""
    sr = _check_rate("sr", sr)
    if tpr is None or tnr is None:
        return None
    return _check_rate("tpr", tpr) * sr + _check_rate("tnr", tnr) * (1.0 - sr)


def sample_level_tnr(
    outcomes: Sequence[EpisodeOutcome], pooled: bool = False
) -> Optional[float]:
    """Fraction of pre-failure steps left unflagged in failed episodes.

    For each failed episode with onset t_f >= 2, the steps 1..t_f-1 are
    ground-truth clean; the episode's rate is the share of them with no
    warning. The default aggregation is the mean of per-episode rates;
    ``pooled`` sums clean steps over summed pre-failure steps instead.
    Episodes with t_f = 1 have no clean prefix and are skipped; None is
    returned when no failed episode has one.
    """
    _require_outcomes(outcomes)
    rates = []
    clean_total = 0
    steps_total = 0
    for outcome in outcomes:
        if outcome.success or outcome.failure_onset < 2:
            continue
        pre_failure = outcome.failure_onset - 1
        flagged = sum(1 for w in outcome.warnings if w < outcome.failure_onset)
        clean = pre_failure - flagged
        rates.append(clean / pre_failure)
        clean_total += clean
        steps_total += pre_failure
    if not rates:
        return None
    if pooled:
        return clean_total / steps_total
    return sum(rates) / len(rates)


def success_rate(outcomes: Sequence[EpisodeOutcome]) -> float:
    _require_outcomes(outcomes)
    return sum(1 for o in outcomes if o.success) / len(outcomes)


def intervention_rate(outcomes: Sequence[EpisodeOutcome]) -> float:
    """Operator-controlled share of all executed steps."""
    _require_outcomes(outcomes)
    total = sum(o.steps_total for o in outcomes)
    return sum(o.steps_intervened for o in outcomes) / total


def intervention_episode_fraction(outcomes: Sequence[EpisodeOutcome]) -> float:
    """Share of episodes that needed any operator step at all."""
    _require_outcomes(outcomes)
    return sum(1 for o in outcomes if o.steps_intervened > 0) / len(outcomes)


def intervention_reduction(before: float, after: float):
    """(absolute, relative) drop between two intervention rates.

    The relative drop is None when the baseline is zero.
    """
    before = _check_rate("before", before)
    after = _check_rate("after", after)
    absolute = before - after
    relative = absolute / before if before > 0.0 else None
    return absolute, relative


@dataclass(frozen=True)
class MetricsReport:
    """Full evaluation summary for one batch of episodes."""

    tpr: Optional[float]
    tnr: Optional[float]
    accuracy: Optional[float]
    weighted_accuracy: Optional[float]
    sample_level_tnr: Optional[float]
    success_rate: float
    intervention_rate: float
    intervention_episode_fraction: float
    counts: ConfusionCounts
    episodes: int
    steps_total: int
    steps_intervened: int


def build_report(
    outcomes: Sequence[EpisodeOutcome], pooled_sample_tnr: bool = False
) -> MetricsReport:
    """Compute every scalar from one pass over the outcomes."""
    _require_outcomes(outcomes)
    tpr, tnr, counts = episode_confusion(outcomes)
    sr = success_rate(outcomes)
    return MetricsReport(
        tpr=tpr,
        tnr=tnr,
        accuracy=accuracy(tpr, tnr),
        weighted_accuracy=weighted_accuracy(tpr, tnr, sr),
        sample_level_tnr=sample_level_tnr(outcomes, pooled=pooled_sample_tnr),
        success_rate=sr,
        intervention_rate=intervention_rate(outcomes),
        intervention_episode_fraction=intervention_episode_fraction(outcomes),
        counts=counts,
        episodes=len(outcomes),
        steps_total=sum(o.steps_total for o in outcomes),
        steps_intervened=sum(o.steps_intervened for o in outcomes),
    )


def report_fields(
    report: MetricsReport, config_hash: str = "", seeds: str = ""
) -> dict:
    """Flat name -> value mapping in the documented column order."""
    values = {
        "report_version": REPORT_FORMAT_VERSION,
        "config_hash": config_hash,
        "seeds": seeds,
        "episodes": report.episodes,
        "failures": report.counts.failures,
        "successes": report.counts.successes,
        "true_positives": report.counts.true_positives,
        "false_negatives": report.counts.false_negatives,
        "true_negatives": report.counts.true_negatives,
        "false_positives": report.counts.false_positives,
        "tpr": report.tpr,
        "tnr": report.tnr,
        "accuracy": report.accuracy,
        "weighted_accuracy": report.weighted_accuracy,
        "sample_level_tnr": report.sample_level_tnr,
        "success_rate": report.success_rate,
        "intervention_rate": report.intervention_rate,
        "intervention_episode_fraction": report.intervention_episode_fraction,
        "steps_total": report.steps_total,
        "steps_intervened": report.steps_intervened,
    }
    assert tuple(values) == CSV_COLUMNS
    return values


def render_report(
    report: MetricsReport,
    fmt: str = "json",
    config_hash: str = "",
    seeds: str = "",
) -> str:
    """Serialize a report deterministically.

    JSON carries None for undefined rates; the CSV table (one header row,
    one data row, columns in ``CSV_COLUMNS`` order, '.' decimal, LF line
    endings) leaves undefined cells empty.
    """
    if fmt not in REPORT_FORMATS:
        raise DomainError(f"format must be one of {REPORT_FORMATS}, got {fmt!r}")
    fields = report_fields(report, config_hash=config_hash, seeds=seeds)
    if fmt == "json":
        return json.dumps(fields, indent=2, sort_keys=False) + "\n"
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerow(
        ["" if fields[name] is None else fields[name] for name in CSV_COLUMNS]
    )
    return buffer.getvalue()


def emit_report(
    report: MetricsReport,
    path,
    fmt: str = "json",
    config_hash: str = "",
    seeds: str = "",
) -> None:
    """Write the serialized report; identical inputs yield identical bytes."""
    path = Path(path)
    text = render_report(report, fmt=fmt, config_hash=config_hash, seeds=seeds)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OtfleetError(f"cannot write report to {path}: {exc}") from exc


def parse_report(text: str) -> dict:
    """Read back a JSON report into the flat field mapping."""
    fields = json.loads(text)
    if not isinstance(fields, dict):
        raise SchemaError("report must be a JSON object")
    missing = [name for name in CSV_COLUMNS if name not in fields]
    if missing:
        raise SchemaError(f"report missing fields: {', '.join(missing)}")
    return fields
