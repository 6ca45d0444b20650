"""Pydantic request/response models for the HTTP service.

These mirror the on-disk scenario document one to one, so a client can
load a YAML scenario file and post it unchanged.  Shape and type
problems are caught here; semantic validation (connectivity, gain
positivity, expression parsing, dimension checks) happens in the core
package, which reports every violation in one response.
"""

from __future__ import annotations

from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field


class GraphModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int
    edges: list[tuple[int, int, float]]


class AgentModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    b: float
    theta: list[float] = []
    phi: list[str] = []


class GainsModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    rho: float
    nu: float
    lam: float | None = Field(default=None, alias="lambda")
    gamma: Union[float, list[float]]
    xbar: Union[Literal["initial"], list[float]]


class SimModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = 1e-3
    horizon: float
    decimation: int = 10


class ScenarioModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    order: Literal[1, 2]
    graph: GraphModel
    agents: list[AgentModel]
    gains: GainsModel
    x0: list[float]
    v0: list[float] | None = None
    sim: SimModel
    nussbaum: str = "k2cos"

    def to_document(self) -> dict:
        """Plain dict in the on-disk schema (lambda under its YAML key)."""
        return self.model_dump(by_alias=True, exclude_none=True)


class ReportModel(BaseModel):
    predicted_consensus: float
    final_positions: list[float]
    final_spread: float
    final_velocity_norm: float | None = None
    z_sup_tail: float
    bounded: dict[str, bool]
    lyapunov_residuals: list[float]
    text: str


class SimulateRequest(BaseModel):
    scenario: ScenarioModel
    dt: float | None = None
    horizon: float | None = None


class SimulateResponse(BaseModel):
    report: ReportModel
    csv: str


class AnalyzeRequest(BaseModel):
    scenario: ScenarioModel
    csv: str


class AnalyzeResponse(BaseModel):
    report: ReportModel


class PredictRequest(BaseModel):
    scenario: ScenarioModel


class PredictResponse(BaseModel):
    consensus: float
    omega: list[float]


class GraphCheckRequest(BaseModel):
    graph: GraphModel


class GraphCheckResponse(BaseModel):
    strongly_connected: bool
    laplacian: list[list[float]]
    omega: list[float] | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
