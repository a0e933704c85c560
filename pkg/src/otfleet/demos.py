"""Expert demonstration bank: storage, padding, and persistence.

A bank holds N reference trajectories padded to a common length
``l_max`` (the longest demo, which doubles as the rollout-length cap):
rows past a demo's own end repeat its final embedding, so a short demo
"waits" at its last observation. The monitor consumes only the padded
embeddings; actions, per-step intervention flags, and live state
snapshots ride along for replay and rewinding.

On disk a bank is UTF-8 JSON Lines: line 1 a manifest
``{version, N, dim, l_max, encoder_id}``, then one record per demo
``{id, length, embeddings, actions, intervention_flags}``. Floats are
serialized with shortest round-trip precision, so persistence is
bit-exact. State snapshots are runtime-only and never persisted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from otfleet.errors import (
    CompatibilityError,
    DomainError,
    ParseError,
    SchemaError,
)

BANK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Trajectory:
    """One episode: per-step embeddings, actions, and bookkeeping.

    All per-step sequences share a single length ``l >= 1``. Embeddings
    are the monitor's input; actions and optional state snapshots exist
    so an episode can be replayed or rewound.
    """

    embeddings: np.ndarray  # (l, d)
    actions: np.ndarray  # (l, a)
    intervention_flags: np.ndarray = None  # (l,) bool
    state_refs: Optional[tuple] = None  # length l, opaque snapshots

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        act = np.asarray(self.actions, dtype=np.float64)
        if emb.ndim != 2:
            raise SchemaError(f"embeddings must be 2-D, got shape {emb.shape}")
        if emb.shape[0] < 1 or emb.shape[1] < 1:
            raise DomainError("trajectory needs at least one step and one feature")
        if not np.all(np.isfinite(emb)):
            raise DomainError("embeddings contain non-finite values")
        if act.ndim != 2 or act.shape[0] != emb.shape[0]:
            raise SchemaError(
                f"actions must be (length, action_dim), got {act.shape} for "
                f"length {emb.shape[0]}"
            )
        if not np.all(np.isfinite(act)):
            raise DomainError("actions contain non-finite values")
        flags = self.intervention_flags
        if flags is None:
            flags = np.zeros(emb.shape[0], dtype=bool)
        flags = np.asarray(flags, dtype=bool)
        if flags.shape != (emb.shape[0],):
            raise SchemaError(
                f"intervention_flags must have shape ({emb.shape[0]},), got {flags.shape}"
            )
        if self.state_refs is not None and len(self.state_refs) != emb.shape[0]:
            raise SchemaError(
                f"state_refs length {len(self.state_refs)} does not match "
                f"trajectory length {emb.shape[0]}"
            )
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "actions", act)
        object.__setattr__(self, "intervention_flags", flags)

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class DemoBank:
    """Immutable set of reference demos plus their padded embeddings.

    ``padded_embeddings`` is an (N, l_max, d) array; row ``t >= l_n`` of
    demo ``n`` equals its row ``l_n - 1``. Safe for concurrent reads.
    """

    demos: tuple
    padded_embeddings: np.ndarray
    l_max: int
    encoder_id: str

    @property
    def size(self) -> int:
        return len(self.demos)

    @property
    def dim(self) -> int:
        return self.padded_embeddings.shape[2]

    def lengths(self) -> np.ndarray:
        return np.array([demo.length for demo in self.demos], dtype=np.int64)


def build_bank(demos: Sequence[Trajectory], encoder_id: str = "unknown") -> DemoBank:
    """Pad a nonempty demo set to the longest length by last-row repetition."""
    demos = tuple(demos)
    if not demos:
        raise DomainError("cannot build a bank from zero demonstrations")
    dims = {demo.dim for demo in demos}
    if len(dims) != 1:
        raise SchemaError(f"mixed embedding dimensions in demo set: {sorted(dims)}")
    l_max = max(demo.length for demo in demos)
    dim = demos[0].dim
    padded = np.empty((len(demos), l_max, dim), dtype=np.float64)
    for n, demo in enumerate(demos):
        padded[n, : demo.length] = demo.embeddings
        padded[n, demo.length :] = demo.embeddings[-1]
    return DemoBank(
        demos=demos, padded_embeddings=padded, l_max=l_max, encoder_id=encoder_id
    )


def check_encoder(bank: DemoBank, encoder_id: str) -> None:
    """Refuse to mix a bank with embeddings from a different encoder."""
    if bank.encoder_id != encoder_id:
        raise CompatibilityError(
            f"demo bank was encoded with {bank.encoder_id!r} but the current "
            f"encoder is {encoder_id!r}"
        )


def save_bank(bank: DemoBank, path) -> None:
    path = Path(path)
    lines = [
        json.dumps(
            {
                "version": BANK_FORMAT_VERSION,
                "N": bank.size,
                "dim": bank.dim,
                "l_max": bank.l_max,
                "encoder_id": bank.encoder_id,
            }
        )
    ]
    for n, demo in enumerate(bank.demos):
        lines.append(
            json.dumps(
                {
                    "id": n,
                    "length": demo.length,
                    "embeddings": demo.embeddings.tolist(),
                    "actions": demo.actions.tolist(),
                    "intervention_flags": demo.intervention_flags.tolist(),
                }
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_record(text: str, index: int) -> dict:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"malformed JSON: {exc.msg}", record_index=index
        ) from exc
    if not isinstance(record, dict):
        raise ParseError("record is not an object", record_index=index)
    return record


def _require(record: dict, key: str, index: int):
    if key not in record:
        raise ParseError(f"record missing field {key!r}", record_index=index)
    return record[key]


def load_bank(path) -> DemoBank:
    """Load a bank, validating the manifest against the records.

    Raises ``ParseError`` (with the offending record index) on malformed
    content and ``CompatibilityError`` on an unsupported format version.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ParseError("file is empty; expected a manifest line", record_index=0)

    manifest = _parse_record(lines[0], 0)
    version = _require(manifest, "version", 0)
    if version != BANK_FORMAT_VERSION:
        raise CompatibilityError(
            f"unsupported bank format version {version!r}; "
            f"this build reads version {BANK_FORMAT_VERSION}"
        )
    expected_n = _require(manifest, "N", 0)
    expected_dim = _require(manifest, "dim", 0)
    expected_l_max = _require(manifest, "l_max", 0)
    encoder_id = _require(manifest, "encoder_id", 0)

    body = [line for line in lines[1:] if line.strip()]
    if len(body) != expected_n:
        raise ParseError(
            f"manifest says N={expected_n} but file holds {len(body)} records",
            record_index=len(body),
        )

    demos = []
    for index, line in enumerate(body, start=1):
        record = _parse_record(line, index)
        embeddings = np.asarray(_require(record, "embeddings", index), dtype=np.float64)
        actions = np.asarray(_require(record, "actions", index), dtype=np.float64)
        flags = np.asarray(
            _require(record, "intervention_flags", index), dtype=bool
        )
        length = _require(record, "length", index)
        try:
            demo = Trajectory(
                embeddings=embeddings, actions=actions, intervention_flags=flags
            )
        except (SchemaError, DomainError) as exc:
            raise ParseError(str(exc), record_index=index) from exc
        if demo.length != length:
            raise ParseError(
                f"declared length {length} but embeddings have {demo.length} rows",
                record_index=index,
            )
        if demo.dim != expected_dim:
            raise ParseError(
                f"embedding dimension {demo.dim} does not match manifest dim "
                f"{expected_dim}",
                record_index=index,
            )
        demos.append(demo)

    bank = build_bank(demos, encoder_id=encoder_id)
    if bank.l_max != expected_l_max:
        raise ParseError(
            f"manifest l_max {expected_l_max} does not match computed {bank.l_max}",
            record_index=0,
        )
    return bank
