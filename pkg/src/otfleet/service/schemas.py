"""Pydantic models for the HTTP API and the console wire protocol.

Every console message is one JSON object with a ``type`` field. The
schema is versioned through the hello handshake; unknown fields are
ignored on input so older servers and newer clients can interoperate.
"""

from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import ProtocolError

PROTOCOL_VERSION = 1


class _Loose(BaseModel):
    """Base for wire messages: tolerate and drop unknown fields."""

    model_config = ConfigDict(extra="ignore")


# ------------------------------------------------------- client -> server


class ClientHello(_Loose):
    type: Literal["hello"]
    version: int = PROTOCOL_VERSION


class ClaimMessage(_Loose):
    type: Literal["claim"]


class TakeoverStepMessage(_Loose):
    type: Literal["takeover_step"]
    robot_id: str
    action: list[float]


class ReleaseMessage(_Loose):
    type: Literal["release"]


class MarkFalseAlarmMessage(_Loose):
    type: Literal["mark_false_alarm"]
    robot_id: str


ClientMessage = Union[
    ClientHello,
    ClaimMessage,
    TakeoverStepMessage,
    ReleaseMessage,
    MarkFalseAlarmMessage,
]


class _ClientEnvelope(_Loose):
    message: ClientMessage = Field(discriminator="type")


def parse_client_message(payload) -> ClientMessage:
    """Validate one inbound console message.

    Raises ProtocolError with a readable reason for anything that is not
    a well-formed message of a known type.
    """
    if not isinstance(payload, dict):
        raise ProtocolError("console message must be a JSON object")
    try:
        return _ClientEnvelope(message=payload).message
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"][1:]) or "message"
        raise ProtocolError(
            f"invalid console message ({where}: {first['msg']})"
        ) from exc


# ------------------------------------------------------- server -> client


class RobotCard(_Loose):
    """Everything the console renders for one robot."""

    robot_id: str
    task: str
    phase: str
    episode: Optional[int] = None
    steps: int = 0
    clock: Optional[int] = None
    effector: Optional[list[float]] = None
    index_value: Optional[float] = None
    threshold: Optional[float] = None
    delta: Optional[float] = None
    index_trace: list[list[float]] = Field(default_factory=list)
    pending_sequence: Optional[int] = None


class AlertInfo(_Loose):
    robot_id: str
    sequence: int
    raise_timestep: int
    float_value: float


class OperatorInfo(_Loose):
    operator_id: str
    kind: str
    status: str
    robot_id: Optional[str] = None


class HelloMessage(_Loose):
    type: Literal["hello"] = "hello"
    version: int = PROTOCOL_VERSION
    operator_id: str
    config_digest: str
    tasks: list[str]
    robots: int


class FleetStateMessage(_Loose):
    type: Literal["fleet_state"] = "fleet_state"
    seq: int
    clock: int
    episodes_done: int
    episode_budget: int
    finished: bool
    robots: list[RobotCard]
    queue: list[AlertInfo]
    operators: list[OperatorInfo]


class AlertMessage(_Loose):
    type: Literal["alert"] = "alert"
    robot_id: str
    sequence: int
    raise_timestep: int
    float_value: float
    threshold: Optional[float] = None


class AssignMessage(_Loose):
    type: Literal["assign"] = "assign"
    operator_id: str
    robot_id: str
    sequence: int
    rewind_target: int


class RewoundMessage(_Loose):
    type: Literal["rewound"] = "rewound"
    robot_id: str
    from_step: int
    to_step: int


class MetricsTickMessage(_Loose):
    type: Literal["metrics_tick"] = "metrics_tick"
    clock: int
    episodes_done: int
    delta: dict[str, float]
    threshold: dict[str, Optional[float]]
    success_rate: Optional[float] = None
    intervention_rate: Optional[float] = None


class ErrorMessage(_Loose):
    type: Literal["error"] = "error"
    code: str
    detail: str


# --------------------------------------------------------------- REST API


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    name: str
    version: str
    protocol_version: int = PROTOCOL_VERSION


class ConfigResponse(BaseModel):
    config: dict
    digest: str


class GenerateDemosRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = Field(default_factory=dict)
    out: Optional[str] = None
    force: bool = False


class BankSummary(BaseModel):
    demos: int
    l_max: int
    dim: int
    path: Optional[str] = None


class GenerateDemosResponse(BaseModel):
    banks: dict[str, BankSummary]
    encoder_id: str
    config_digest: str


class DetectRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = Field(default_factory=dict)


class DetectResponse(BaseModel):
    report: dict
    per_task: dict[str, dict]
    thresholds: dict[str, Optional[float]]
    config_digest: str


class FleetRunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = Field(default_factory=dict)


class RoundRow(BaseModel):
    round: int
    skill: float
    episodes: int
    success_rate: float
    intervention_rate: float


class FleetRunResponse(BaseModel):
    rounds: list[RoundRow]
    final_skill: float
    config_digest: str


class FleetStateResponse(BaseModel):
    running: bool
    state: Optional[dict] = None
