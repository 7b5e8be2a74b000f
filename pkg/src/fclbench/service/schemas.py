"""Request/response models for the experiment service.

Configs travel as the raw dotted-key text plus an ordered list of key=value
overrides, exactly what the CLI reads from disk and flags; the service owns
parsing and validation so every entry point shares one code path.
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class ExperimentRequest(BaseModel):
    config_text: str
    overrides: list[str] = Field(default_factory=list)


class RunSummary(BaseModel):
    experiment_name: str
    scheme: str
    seed: int
    num_rounds: int
    final_avg_accuracy: float
    mean_avg_accuracy: float
    artifact_dir: str
    wall_time_s: float


class RunResponse(BaseModel):
    experiment_name: str
    out_dir: str
    runs: list[RunSummary]


class SchemeResult(BaseModel):
    mean_final_avg_accuracy: float
    per_seed_final_avg_accuracy: dict[str, float]


class CompareResponse(BaseModel):
    experiment_name: str
    seeds: list[int]
    schemes: dict[str, SchemeResult]
    comparison_path: str


class ExportRequest(ExperimentRequest):
    path: str


class ExportResponse(BaseModel):
    path: str
    seed: int
    num_examples: int
    num_classes: int
    num_tasks: int
    input_dim: int


class ValidateResponse(BaseModel):
    resolved: dict[str, Any]
    resolved_text: str


class ErrorDetail(BaseModel):
    kind: str
    message: str


class HealthResponse(BaseModel):
    status: str
    version: Optional[str] = None
