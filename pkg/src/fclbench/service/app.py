"""FastAPI application wrapping the experiment runner.

Every engine error surfaces as a JSON body {"detail": {"kind", "message"}}
where kind is one of config/io/runtime; clients map kinds to exit codes
without parsing messages.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import parse_config_text, resolve_config
from ..errors import ConfigurationError, FclbenchError, error_kind
from ..runner import compare_schemes, export_dataset, run_config, validate_config_text
from .schemas import (
    CompareResponse,
    ExperimentRequest,
    ExportRequest,
    ExportResponse,
    HealthResponse,
    RunResponse,
    RunSummary,
    ValidateResponse,
)

_STATUS_BY_KIND = {"config": 400, "io": 500, "runtime": 500}


def _resolve(request: ExperimentRequest) -> dict:
    return resolve_config(parse_config_text(request.config_text), request.overrides)


def create_app() -> FastAPI:
    app = FastAPI(title="fclbench", version=__version__)

    @app.exception_handler(FclbenchError)
    async def engine_error_handler(_: Request, exc: FclbenchError) -> JSONResponse:
        kind = error_kind(exc)
        return JSONResponse(
            status_code=_STATUS_BY_KIND.get(kind, 500),
            content={"detail": {"kind": kind, "message": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/experiments/run", response_model=RunResponse)
    async def run(request: ExperimentRequest) -> RunResponse:
        resolved = _resolve(request)
        summaries = run_config(resolved)
        return RunResponse(
            experiment_name=resolved["experiment_name"],
            out_dir=resolved["out_dir"],
            runs=[RunSummary(**s) for s in summaries],
        )

    @app.post("/experiments/compare-schemes", response_model=CompareResponse)
    async def compare(request: ExperimentRequest) -> CompareResponse:
        resolved = _resolve(request)
        return CompareResponse(**compare_schemes(resolved))

    @app.post("/datasets/export", response_model=ExportResponse)
    async def export(request: ExportRequest) -> ExportResponse:
        if not request.path:
            raise ConfigurationError("export path must be non-empty")
        resolved = _resolve(request)
        return ExportResponse(**export_dataset(resolved, request.path))

    @app.post("/configs/validate", response_model=ValidateResponse)
    async def validate(request: ExperimentRequest) -> ValidateResponse:
        return ValidateResponse(**validate_config_text(request.config_text, request.overrides))

    return app
