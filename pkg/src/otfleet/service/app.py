"""FastAPI application: REST pipelines plus the live console bridge.

The app always exposes the batch endpoints. When built with
``serve_fleet=True`` it additionally hosts one paced fleet engine for
the whole process lifetime and bridges it to websocket consoles at
``/ws/console``.
"""

import json
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .. import __version__
from ..artifacts import bank_path, ensure_dir, guard_overwrite
from ..config import ExperimentConfig, config_from_dict
from ..demos import save_bank
from ..errors import OtfleetError
from ..experiments import (
    build_banks,
    build_encoder,
    calibrate_detectors,
    run_detection,
    run_fleet_rounds,
)
from ..fleet import FleetEngine
from ..metrics import report_fields
from ..seeding import derive_seed
from .bridge import ConsoleHub, LiveFleet, error_code
from .schemas import (
    BankSummary,
    ConfigResponse,
    DetectRequest,
    DetectResponse,
    ErrorMessage,
    FleetRunRequest,
    FleetRunResponse,
    FleetStateResponse,
    GenerateDemosRequest,
    GenerateDemosResponse,
    HealthResponse,
    RoundRow,
)

HTTP_STATUS = {2: 400, 3: 409, 4: 422, 5: 409}

SERVE_NOISE = 0.006


def _merged_config(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    document = base.to_dict()
    document.pop("config_version", None)
    document.update(overrides)
    return config_from_dict(document)


def build_live_fleet(
    config: ExperimentConfig,
    *,
    engine_interval: float = 0.01,
    operators: Optional[int] = None,
) -> LiveFleet:
    """Assemble banks, calibrations, and a paced engine for serve mode.

    Consoles join as operators at runtime, so the engine starts with the
    configured operator pool (possibly empty) and keeps accepting joins.
    """
    encoder = build_encoder(config)
    banks = build_banks(config, encoder)
    calibrations = calibrate_detectors(config, banks, encoder)
    engine = FleetEngine(
        banks,
        calibrations,
        config.detector_config(),
        encoder,
        tasks=config.tasks,
        robots=config.fleet_robots,
        operators=config.fleet_operators if operators is None else operators,
        operator_kind=config.operator_kind,
        episode_budget=config.rounds * config.episodes_per_round,
        skill=config.initial_skill,
        noise_scale=SERVE_NOISE,
        seed=derive_seed(config.seed, "serve"),
        allow_operator_join=True,
    )
    return LiveFleet(engine, config, calibrations, interval=engine_interval)


def create_app(
    config: Optional[ExperimentConfig] = None,
    *,
    serve_fleet: bool = False,
    engine_interval: float = 0.01,
    frame_interval: float = 0.05,
    serve_operators: Optional[int] = None,
) -> FastAPI:
    config = config or ExperimentConfig()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if serve_fleet:
            live = await run_in_threadpool(
                build_live_fleet,
                config,
                engine_interval=engine_interval,
                operators=serve_operators,
            )
            app.state.live = live
            app.state.hub = ConsoleHub(live, frame_interval=frame_interval)
            live.start()
            app.state.hub.start_broadcast()
        yield
        if app.state.hub is not None:
            await app.state.hub.stop_broadcast()
        if app.state.live is not None:
            app.state.live.stop()

    app = FastAPI(title="otfleet", version=__version__, lifespan=lifespan)
    app.state.config = config
    app.state.live = None
    app.state.hub = None

    @app.exception_handler(OtfleetError)
    async def _domain_error(request, exc: OtfleetError):
        status = HTTP_STATUS.get(exc.exit_code, 500)
        return JSONResponse(
            status_code=status,
            content={"error": {"code": error_code(exc), "detail": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(name="otfleet", version=__version__)

    @app.get("/config", response_model=ConfigResponse)
    async def get_config() -> ConfigResponse:
        return ConfigResponse(config=config.to_dict(), digest=config.digest())

    @app.post("/demos/generate", response_model=GenerateDemosResponse)
    async def generate_demos(request: GenerateDemosRequest) -> GenerateDemosResponse:
        cfg = _merged_config(config, request.config)
        banks = await run_in_threadpool(build_banks, cfg, build_encoder(cfg))
        summaries = {}
        for task, bank in banks.items():
            path = None
            if request.out is not None:
                out_dir = ensure_dir(request.out)
                target = bank_path(out_dir, task)
                guard_overwrite([target], request.force)
                await run_in_threadpool(save_bank, bank, target)
                path = str(target)
            summaries[task] = BankSummary(
                demos=bank.size, l_max=bank.l_max, dim=bank.dim, path=path
            )
        encoder_id = next(iter(banks.values())).encoder_id
        return GenerateDemosResponse(
            banks=summaries, encoder_id=encoder_id, config_digest=cfg.digest()
        )

    @app.post("/detect", response_model=DetectResponse)
    async def detect(request: DetectRequest) -> DetectResponse:
        cfg = _merged_config(config, request.config)
        result = await run_in_threadpool(run_detection, cfg)
        return DetectResponse(
            report=report_fields(result.report, cfg.digest(), str(cfg.seed)),
            per_task={
                task: report_fields(rep, cfg.digest(), str(cfg.seed))
                for task, rep in result.per_task.items()
            },
            thresholds=result.thresholds,
            config_digest=cfg.digest(),
        )

    @app.post("/fleet/run", response_model=FleetRunResponse)
    async def fleet_run(request: FleetRunRequest) -> FleetRunResponse:
        cfg = _merged_config(config, request.config)
        result = await run_in_threadpool(run_fleet_rounds, cfg)
        rows = [
            RoundRow(
                round=summary.index,
                skill=summary.skill,
                episodes=summary.episodes,
                success_rate=summary.report.success_rate,
                intervention_rate=summary.report.intervention_rate,
            )
            for summary in result.rounds
        ]
        return FleetRunResponse(
            rounds=rows, final_skill=result.final_skill, config_digest=cfg.digest()
        )

    @app.get("/fleet/state", response_model=FleetStateResponse)
    async def fleet_state() -> FleetStateResponse:
        live: Optional[LiveFleet] = app.state.live
        if live is None:
            return FleetStateResponse(running=False, state=None)
        snapshot = await run_in_threadpool(live.engine.snapshot)
        if live.fault is not None:
            snapshot["fault"] = str(live.fault)
        return FleetStateResponse(running=live.running, state=snapshot)

    @app.websocket("/ws/console")
    async def console(websocket: WebSocket) -> None:
        await websocket.accept()
        hub: Optional[ConsoleHub] = app.state.hub
        if hub is None:
            await websocket.send_text(
                ErrorMessage(
                    code="protocol",
                    detail="no live fleet: start the server in serve mode",
                ).model_dump_json()
            )
            await websocket.close(code=1008)
            return
        session = await hub.register(websocket)
        try:
            while True:
                text = await websocket.receive_text()
                try:
                    payload = json.loads(text)
                except ValueError:
                    await session.send(
                        ErrorMessage(
                            code="protocol", detail="message is not valid JSON"
                        )
                    )
                    continue
                await hub.handle_text(session, payload)
        except WebSocketDisconnect:
            pass
        finally:
            await hub.unregister(session)

    return app
