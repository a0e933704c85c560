"""Command line entry points: thin wrappers over the library pipelines.

Commands share one option set (--config, --seed, --out, --force, --mode,
--port), serialize the effective configuration next to every artifact,
and translate the package's exception taxonomy into the documented exit
codes (see ``otfleet.errors``).
"""

import functools
import json
import sys
from typing import Optional

import click

from . import __version__
from .artifacts import (
    bank_path,
    ensure_dir,
    guard_overwrite,
    load_rollout_logs,
    rollout_path,
    write_json,
)
from .config import ExperimentConfig, load_config, save_config
from .demos import save_bank
from .detector import DetectorEventLog
from .errors import FileError, OtfleetError
from .experiments import (
    build_banks,
    build_encoder,
    calibrate_detectors,
    generate_rollouts,
    replay_detector,
    run_detection,
    run_fleet_rounds,
)
from .metrics import build_report, report_fields
from .sim.episodes import save_episodes


def _load_effective_config(config_path, seed, out) -> ExperimentConfig:
    config = ExperimentConfig() if config_path is None else load_config(config_path)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["output_dir"] = out
    return config.with_overrides(**overrides) if overrides else config


def _fail(exc: OtfleetError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def cli_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except OtfleetError as exc:
            _fail(exc)

    return wrapper


def common_options(func):
    func = click.option(
        "--config", "config_path", type=click.Path(), default=None,
        help="YAML experiment config; defaults apply when omitted.",
    )(func)
    func = click.option(
        "--seed", type=click.IntRange(min=0), default=None,
        help="Root seed override.",
    )(func)
    func = click.option(
        "--out", type=click.Path(), default=None,
        help="Output directory override.",
    )(func)
    return func


@click.group(help=__doc__)
@click.version_option(version=__version__, prog_name="otfleet")
def main() -> None:
    pass


@main.command("gen-demos", help="Generate one expert demo bank per task.")
@common_options
@click.option("--force", is_flag=True, help="Overwrite existing outputs.")
@cli_errors
def gen_demos(config_path, seed, out, force) -> None:
    config = _load_effective_config(config_path, seed, out)
    out_dir = ensure_dir(config.output_dir)
    targets = [bank_path(out_dir, task) for task in config.tasks]
    guard_overwrite(targets, force)
    banks = build_banks(config)
    for task, target in zip(config.tasks, targets):
        save_bank(banks[task], target)
        click.echo(
            f"{task}: N={banks[task].size} l_max={banks[task].l_max} -> {target}"
        )
    save_config(config, out_dir / "config.yaml")
    click.echo(f"config {config.digest()} -> {out_dir / 'config.yaml'}")


@main.command("gen-rollouts", help="Record seeded evaluation rollouts per task.")
@common_options
@click.option("--force", is_flag=True, help="Overwrite existing outputs.")
@click.option(
    "--episodes", type=click.IntRange(min=1), default=None,
    help="Episodes per task (defaults to the config's per-round count).",
)
@cli_errors
def gen_rollouts(config_path, seed, out, force, episodes) -> None:
    config = _load_effective_config(config_path, seed, out)
    out_dir = ensure_dir(config.output_dir)
    targets = [rollout_path(out_dir, task) for task in config.tasks]
    guard_overwrite(targets, force)
    encoder = build_encoder(config)
    banks = build_banks(config, encoder)
    rollouts = generate_rollouts(config, banks, encoder, episodes_per_task=episodes)
    for task, target in zip(config.tasks, targets):
        save_episodes(rollouts[task], target, encoder.encoder_id)
        failures = sum(1 for r in rollouts[task] if not r.success)
        click.echo(
            f"{task}: {len(rollouts[task])} episodes "
            f"({failures} failures) -> {target}"
        )
    save_config(config, out_dir / "config.yaml")
    click.echo(f"config {config.digest()} -> {out_dir / 'config.yaml'}")


def _print_report(label: str, fields: dict) -> None:
    def fmt(key):
        value = fields.get(key)
        return "n/a" if value is None else f"{value:.4f}"

    click.echo(
        f"{label}: episodes={fields['episodes']} failures={fields['failures']} "
        f"tpr={fmt('tpr')} tnr={fmt('tnr')} accuracy={fmt('accuracy')} "
        f"sample_tnr={fmt('sample_level_tnr')}"
    )


@main.command("detect", help="Replay the detector over rollouts and report metrics.")
@common_options
@click.option("--force", is_flag=True, help="Overwrite existing outputs.")
@click.option(
    "--rollouts", "rollouts_dir", type=click.Path(), default=None,
    help="Directory of recorded rollouts-*.jsonl logs; omitted means "
    "generate the benchmark rollouts from the config.",
)
@cli_errors
def detect(config_path, seed, out, force, rollouts_dir) -> None:
    config = _load_effective_config(config_path, seed, out)
    out_dir = ensure_dir(config.output_dir)
    report_target = out_dir / "report.json"
    events_target = out_dir / "detector-events.jsonl"
    guard_overwrite([report_target, events_target], force)
    events_target.unlink(missing_ok=True)

    encoder = build_encoder(config)
    banks = build_banks(config, encoder)
    calibrations = calibrate_detectors(config, banks, encoder)
    detector_config = config.detector_config()
    with DetectorEventLog(events_target) as event_log:
        if rollouts_dir is not None:
            logs = load_rollout_logs(rollouts_dir)
            unknown = sorted(set(logs) - set(config.tasks))
            if unknown:
                raise FileError(
                    f"rollout logs name tasks outside the config: {unknown}"
                )
            per_task = {}
            outcomes = []
            for task, (records, encoder_id) in sorted(logs.items()):
                task_outcomes = replay_detector(
                    banks[task],
                    records,
                    calibrations[task],
                    detector_config,
                    encoder_id=encoder_id,
                    event_log=event_log,
                    id_prefix=task,
                )
                per_task[task] = build_report(task_outcomes)
                outcomes.extend(task_outcomes)
            report = build_report(outcomes)
            thresholds = {task: calibrations[task].threshold for task in logs}
        else:
            result = run_detection(
                config, banks, calibrations, event_log=event_log
            )
            report = result.report
            per_task = result.per_task
            thresholds = result.thresholds

    digest = config.digest()
    payload = {
        "report": report_fields(report, digest, str(config.seed)),
        "per_task": {
            task: report_fields(rep, digest, str(config.seed))
            for task, rep in per_task.items()
        },
        "thresholds": thresholds,
        "config": config.to_dict(),
    }
    write_json(report_target, payload)
    for task in sorted(per_task):
        _print_report(task, payload["per_task"][task])
    _print_report("total", payload["report"])
    click.echo(f"report -> {report_target}")
    click.echo(f"detector events -> {events_target}")


@main.command(
    "run-fleet", help="Run deployment rounds with post-training between them."
)
@common_options
@click.option("--force", is_flag=True, help="Overwrite existing outputs.")
@click.option(
    "--mode", type=click.Choice(["logical", "realtime"]), default="logical",
    help="logical: deterministic single-threaded clock; realtime: paced.",
)
@cli_errors
def run_fleet_cmd(config_path, seed, out, force, mode) -> None:
    config = _load_effective_config(config_path, seed, out)
    out_dir = ensure_dir(config.output_dir)
    rounds_target = out_dir / "rounds.json"
    event_targets = [
        out_dir / f"fleet-events-{r}.jsonl" for r in range(config.rounds)
    ]
    guard_overwrite([rounds_target, *event_targets], force)

    result = run_fleet_rounds(
        config, pacing_interval=0.005 if mode == "realtime" else None
    )
    digest = config.digest()
    rows = []
    for summary in result.rounds:
        rows.append(
            {
                "round": summary.index,
                "skill": summary.skill,
                "episodes": summary.episodes,
                "success_rate": summary.report.success_rate,
                "intervention_rate": summary.report.intervention_rate,
                "intervention_episode_fraction": (
                    summary.report.intervention_episode_fraction
                ),
            }
        )
        click.echo(
            f"round {summary.index}: episodes={summary.episodes} "
            f"skill={summary.skill:.3f} "
            f"success_rate={summary.report.success_rate:.3f} "
            f"intervention_rate={summary.report.intervention_rate:.3f}"
        )
    for target, round_result in zip(event_targets, result.results):
        round_result.event_log.save(target)
    write_json(
        rounds_target,
        {
            "rounds": rows,
            "final_skill": result.final_skill,
            "config_hash": digest,
            "config": config.to_dict(),
            "mode": mode,
        },
    )
    click.echo(f"final skill {result.final_skill:.3f}")
    click.echo(f"rounds -> {rounds_target}")


@main.command("serve", help="Host the live fleet and the console bridge.")
@common_options
@click.option("--port", type=click.IntRange(1, 65535), default=8000)
@click.option("--host", default="127.0.0.1", help="Bind address (loopback default).")
@click.option(
    "--mode", type=click.Choice(["logical", "realtime"]), default="realtime",
    help="realtime paces engine ticks; logical runs them back to back.",
)
@cli_errors
def serve(config_path, seed, out, port, host, mode) -> None:
    import uvicorn

    from .service import create_app

    config = _load_effective_config(config_path, seed, out)
    interval = 0.01 if mode == "realtime" else 0.0
    app = create_app(config, serve_fleet=True, engine_interval=interval)
    click.echo(
        f"serving fleet on {host}:{port} "
        f"(config {config.digest()}, mode {mode})"
    )
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as exc:
        raise FileError(f"cannot bind {host}:{port}: {exc}") from exc


if __name__ == "__main__":
    main()
