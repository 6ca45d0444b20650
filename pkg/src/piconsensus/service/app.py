"""FastAPI service wrapping the consensus simulator.

Error contract: semantic scenario problems come back as 400 with
``{"kind": "validation", "errors": [...]}``; a run that leaves the
numerically trusted region comes back as 422 with
``{"kind": "divergence", ...}``.  Request-shape problems surface as the
framework's standard 422 payload.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..analysis import ConsensusReport, consensus_metrics
from ..csvio import TrajectoryFormatError, trajectory_from_csv, trajectory_to_csv
from ..graph import GraphError, build_graph, is_strongly_connected, laplacian, left_eigenvector
from ..scenario import Scenario, ScenarioValidationError, build_scenario
from ..sim import DivergenceError, simulate
from . import schemas


def _scenario(model: schemas.ScenarioModel) -> Scenario:
    try:
        return build_scenario(model.to_document(), default_name=model.name)
    except ScenarioValidationError as exc:
        raise HTTPException(400, detail={"kind": "validation", "errors": exc.errors})


def _report_model(report: ConsensusReport) -> schemas.ReportModel:
    return schemas.ReportModel(
        predicted_consensus=report.predicted_consensus,
        final_positions=[float(v) for v in report.final_positions],
        final_spread=report.final_spread,
        final_velocity_norm=report.final_velocity_norm,
        z_sup_tail=report.z_sup_tail,
        bounded=report.bounded,
        lyapunov_residuals=[float(r) for r in report.lyapunov_residuals],
        text=report.to_text(),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="piconsensus", version=__version__,
                  description="Adaptive leaderless consensus simulation service")

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def run_simulation(req: schemas.SimulateRequest):
        sc = _scenario(req.scenario)
        try:
            traj = simulate(sc, dt=req.dt, horizon=req.horizon)
        except ScenarioValidationError as exc:
            raise HTTPException(400, detail={"kind": "validation", "errors": exc.errors})
        except DivergenceError as exc:
            raise HTTPException(422, detail={
                "kind": "divergence", "message": str(exc),
                "t": exc.t, "agent": exc.agent, "field": exc.field_name,
            })
        report = consensus_metrics(traj, sc.omega, sc.gains.xbar, scenario=sc)
        return schemas.SimulateResponse(report=_report_model(report),
                                        csv=trajectory_to_csv(traj))

    @app.post("/analyze", response_model=schemas.AnalyzeResponse)
    def analyze(req: schemas.AnalyzeRequest):
        sc = _scenario(req.scenario)
        try:
            traj = trajectory_from_csv(req.csv, sc)
        except TrajectoryFormatError as exc:
            raise HTTPException(400, detail={"kind": "validation", "errors": [str(exc)]})
        report = consensus_metrics(traj, sc.omega, sc.gains.xbar, scenario=sc)
        return schemas.AnalyzeResponse(report=_report_model(report))

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(req: schemas.PredictRequest):
        sc = _scenario(req.scenario)
        return schemas.PredictResponse(
            consensus=float(sc.omega @ sc.gains.xbar),
            omega=[float(v) for v in sc.omega],
        )

    @app.post("/graph-check", response_model=schemas.GraphCheckResponse)
    def graph_check(req: schemas.GraphCheckRequest):
        try:
            g = build_graph(req.graph.n, req.graph.edges)
        except GraphError as exc:
            raise HTTPException(400, detail={"kind": "validation", "errors": [str(exc)]})
        lap = laplacian(g)
        connected = is_strongly_connected(g)
        omega = [float(v) for v in left_eigenvector(lap).omega] if connected else None
        return schemas.GraphCheckResponse(
            strongly_connected=connected,
            laplacian=[[float(v) for v in row] for row in lap.matrix],
            omega=omega,
        )

    return app


app = create_app()
