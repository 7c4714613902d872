"""HTTP front end: one POST endpoint per experiment subcommand."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .errors import ConfigError
from .experiments import SUBCOMMANDS, execute


class ExperimentRequest(BaseModel):
    config: str = Field(description="key = value configuration text")


class ExperimentResponse(BaseModel):
    subcommand: str
    exit_code: int
    files: dict[str, str]
    summary: dict
    message: str = ""


class Health(BaseModel):
    status: str
    version: str
    subcommands: list[str]


app = FastAPI(title="sdflab", version=__version__)


def _handle(subcommand: str, request: ExperimentRequest) -> ExperimentResponse:
    try:
        outcome = execute(subcommand, request.config)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    return ExperimentResponse(
        subcommand=subcommand,
        exit_code=outcome.exit_code,
        files=outcome.files,
        summary=outcome.summary,
        message=outcome.message,
    )


@app.get("/health", response_model=Health)
def health():
    return Health(status="ok", version=__version__, subcommands=list(SUBCOMMANDS))


@app.post("/run", response_model=ExperimentResponse)
def run(request: ExperimentRequest):
    return _handle("run", request)


@app.post("/stability", response_model=ExperimentResponse)
def stability(request: ExperimentRequest):
    return _handle("stability", request)


@app.post("/identity", response_model=ExperimentResponse)
def identity(request: ExperimentRequest):
    return _handle("identity", request)


@app.post("/probe", response_model=ExperimentResponse)
def probe(request: ExperimentRequest):
    return _handle("probe", request)


def serve(host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port)
