"""Output-directory conventions shared by the CLI and the service.

Artifacts use fixed names inside one output directory so a detection run
can find the banks a generation run wrote. Nothing is ever overwritten
unless the caller passes ``force``.
"""

import json
from pathlib import Path
from typing import Sequence

from .errors import FileError
from .sim.episodes import load_episodes


def bank_path(out_dir, task: str) -> Path:
    return Path(out_dir) / f"bank-{task}.jsonl"


def rollout_path(out_dir, task: str) -> Path:
    return Path(out_dir) / f"rollouts-{task}.jsonl"


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FileError(f"cannot create output directory {path}: {exc}") from exc
    return path


def guard_overwrite(paths: Sequence, force: bool) -> None:
    """Refuse to clobber existing outputs unless forced."""
    if force:
        return
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing:
        raise FileError(
            "output already exists (pass --force to overwrite): "
            + ", ".join(existing)
        )


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    try:
        path.write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise FileError(f"cannot write {path}: {exc}") from exc
    return path


def load_rollout_logs(rollout_dir) -> dict:
    """Read every rollout log in a directory, keyed by task name.

    Returns {task: (records, encoder_id)}. An empty or missing directory
    is an explicit error rather than a silent no-op run.
    """
    rollout_dir = Path(rollout_dir)
    if not rollout_dir.is_dir():
        raise FileError(f"rollout directory {rollout_dir} does not exist")
    found = sorted(rollout_dir.glob("rollouts-*.jsonl"))
    if not found:
        raise FileError(
            f"rollout directory {rollout_dir} holds no rollouts-*.jsonl files"
        )
    logs = {}
    for path in found:
        task = path.stem[len("rollouts-"):]
        logs[task] = load_episodes(path)
    return logs
