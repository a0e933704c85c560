"""Live fleet hosting and the websocket console hub.

The fleet engine runs paced on a plain thread; the hub translates its
event log and snapshots into wire messages and applies console commands
back onto the engine. All engine calls from async context go through a
worker thread so a long Sinkhorn evaluation never stalls the socket
loop.
"""

import asyncio
import threading
from typing import Optional

from starlette.concurrency import run_in_threadpool

from ..errors import OtfleetError, ProtocolError
from ..fleet import FleetEngine, FleetResult
from ..metrics import build_report
from .schemas import (
    AlertInfo,
    AlertMessage,
    AssignMessage,
    ClaimMessage,
    ClientHello,
    ErrorMessage,
    FleetStateMessage,
    HelloMessage,
    MarkFalseAlarmMessage,
    MetricsTickMessage,
    OperatorInfo,
    ReleaseMessage,
    RewoundMessage,
    RobotCard,
    TakeoverStepMessage,
    parse_client_message,
)

ERROR_CODES = {2: "config", 3: "compatibility", 4: "io", 5: "protocol"}


def error_code(exc: Exception) -> str:
    """Wire error code for an exception, aligned with the exit table."""
    return ERROR_CODES.get(getattr(exc, "exit_code", 1), "internal")


class LiveFleet:
    """One paced fleet engine on a background thread.

    ``fault`` captures an engine abort (for example operator starvation)
    so status endpoints can report it instead of dying with the thread.
    """

    def __init__(self, engine: FleetEngine, config, calibrations, interval: float = 0.01):
        self.engine = engine
        self.config = config
        self.calibrations = dict(calibrations)
        self.interval = float(interval)
        self.result: Optional[FleetResult] = None
        self.fault: Optional[Exception] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        if self._thread is not None:
            raise ProtocolError("live fleet already started")
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        try:
            self.result = self.engine.run_paced(self.interval, self._stop)
        except OtfleetError as exc:
            self.fault = exc

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=10.0)

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()


class ConsoleSession:
    """One connected console: a registered operator plus its socket."""

    def __init__(self, operator_id: str, websocket):
        self.operator_id = operator_id
        self.websocket = websocket
        self.send_lock = asyncio.Lock()

    async def send(self, message) -> bool:
        try:
            async with self.send_lock:
                await self.websocket.send_text(
                    message.model_dump_json(exclude_none=False)
                )
            return True
        except Exception:
            return False


class ConsoleHub:
    """Session registry plus the broadcast loop over one live fleet."""

    def __init__(self, live: LiveFleet, *, frame_interval: float = 0.05, metrics_every: int = 10):
        self.live = live
        self.frame_interval = float(frame_interval)
        self.metrics_every = int(metrics_every)
        self.sessions: dict[str, ConsoleSession] = {}
        self._frame_seq = 0
        self._event_cursor = 0
        self._last_raise: dict[str, dict] = {}
        self._task: Optional[asyncio.Task] = None

    # ------------------------------------------------------------ sessions

    async def register(self, websocket) -> ConsoleSession:
        engine = self.live.engine
        operator = await run_in_threadpool(engine.add_operator, "human_console")
        session = ConsoleSession(operator.operator_id, websocket)
        self.sessions[session.operator_id] = session
        await session.send(
            HelloMessage(
                operator_id=session.operator_id,
                config_digest=self.live.config.digest(),
                tasks=list(self.live.config.tasks),
                robots=len(engine.robots),
            )
        )
        return session

    async def unregister(self, session: ConsoleSession) -> None:
        self.sessions.pop(session.operator_id, None)
        try:
            await run_in_threadpool(
                self.live.engine.remove_operator, session.operator_id
            )
        except OtfleetError:
            pass  # engine already dropped it (for example after a fault)

    # ------------------------------------------------------------ inbound

    async def handle_text(self, session: ConsoleSession, payload) -> None:
        try:
            message = parse_client_message(payload)
        except ProtocolError as exc:
            await session.send(ErrorMessage(code="protocol", detail=str(exc)))
            return
        try:
            await self._dispatch(session, message)
        except OtfleetError as exc:
            await session.send(ErrorMessage(code=error_code(exc), detail=str(exc)))

    async def _dispatch(self, session: ConsoleSession, message) -> None:
        engine = self.live.engine
        if isinstance(message, ClientHello):
            return  # handshake echo; nothing to do
        if isinstance(message, ClaimMessage):
            request = await run_in_threadpool(engine.claim, session.operator_id)
            if request is None:
                await session.send(
                    ErrorMessage(code="protocol", detail="no pending alerts to claim")
                )
                return
            await session.send(
                AssignMessage(
                    operator_id=session.operator_id,
                    robot_id=request.robot_id,
                    sequence=request.sequence,
                    rewind_target=request.rewind_target,
                )
            )
            return
        if isinstance(message, TakeoverStepMessage):
            await self._takeover(session, message)
            return
        if isinstance(message, ReleaseMessage):
            await run_in_threadpool(engine.console_release, session.operator_id)
            return
        if isinstance(message, MarkFalseAlarmMessage):
            await run_in_threadpool(engine.mark_false_alarm, message.robot_id)
            return

    async def _takeover(self, session: ConsoleSession, message) -> None:
        engine = self.live.engine
        bound = None
        for operator in engine.operators:
            if operator.operator_id == session.operator_id:
                bound = operator.robot_id
                break
        if bound != message.robot_id:
            raise ProtocolError(
                f"operator {session.operator_id!r} is not assigned to "
                f"{message.robot_id!r}"
            )
        await run_in_threadpool(
            engine.console_step, session.operator_id, message.action
        )

    # ----------------------------------------------------------- outbound

    def start_broadcast(self) -> None:
        if self._task is None:
            self._task = asyncio.create_task(self._broadcast_loop())

    async def stop_broadcast(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None

    async def _broadcast_loop(self) -> None:
        while True:
            await self.send_frame()
            await asyncio.sleep(self.frame_interval)

    async def send_frame(self) -> None:
        """One broadcast round: events first, then the state frame."""
        outbound = list(self._drain_events())
        outbound.append(self.state_message())
        if self._frame_seq % self.metrics_every == 0:
            outbound.append(self.metrics_message())
        if self.live.fault is not None and self._frame_seq % self.metrics_every == 0:
            outbound.append(
                ErrorMessage(
                    code=error_code(self.live.fault), detail=str(self.live.fault)
                )
            )
        for message in outbound:
            for session in list(self.sessions.values()):
                await session.send(message)

    def _drain_events(self):
        events = self.live.engine.event_log.since(self._event_cursor)
        if events:
            self._event_cursor = events[-1].seq + 1
        for event in events:
            if event.kind == "RAISE":
                self._last_raise[event.robot_id] = dict(event.payload)
            elif event.kind == "ENQUEUE":
                raise_info = self._last_raise.get(event.robot_id, {})
                yield AlertMessage(
                    robot_id=event.robot_id,
                    sequence=event.payload["sequence"],
                    raise_timestep=int(raise_info.get("t", 0)),
                    float_value=float(raise_info.get("index", 0.0)),
                    threshold=raise_info.get("threshold"),
                )
            elif event.kind == "REWIND":
                yield RewoundMessage(
                    robot_id=event.robot_id,
                    from_step=event.payload["from_t"],
                    to_step=event.payload["to_t"],
                )

    def state_message(self) -> FleetStateMessage:
        snapshot = self.live.engine.snapshot()
        self._frame_seq += 1
        return FleetStateMessage(
            seq=self._frame_seq,
            clock=snapshot["clock"],
            episodes_done=snapshot["episodes_done"],
            episode_budget=snapshot["episode_budget"],
            finished=snapshot["finished"],
            robots=[RobotCard(**card) for card in snapshot["robots"]],
            queue=[AlertInfo(**item) for item in snapshot["queue"]],
            operators=[OperatorInfo(**item) for item in snapshot["operators"]],
        )

    def metrics_message(self) -> MetricsTickMessage:
        live = self.live
        outcomes = list(live.engine.outcomes)
        success_rate = None
        intervention_rate = None
        if outcomes:
            report = build_report(outcomes)
            success_rate = report.success_rate
            intervention_rate = report.intervention_rate
        return MetricsTickMessage(
            clock=live.engine.clock,
            episodes_done=len(outcomes),
            delta={task: cal.delta for task, cal in live.calibrations.items()},
            threshold={task: cal.threshold for task, cal in live.calibrations.items()},
            success_rate=success_rate,
            intervention_rate=intervention_rate,
        )
