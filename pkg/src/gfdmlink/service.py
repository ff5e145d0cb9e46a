"""FastAPI service exposing campaigns, cost curves, the CRLB and the selftest.

The service is the process boundary: the CLI is a thin HTTP client of these
endpoints.  Long campaigns run synchronously inside the request; clients use
an in-process transport or disable read timeouts.
"""

from __future__ import annotations

import math

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .configfile import build_campaign_config
from .errors import ConfigurationError, GfdmLinkError, NumericalError
from .estimator import CfoCostEvaluator, decompose_frame, plan_pilots
from .harness import (CampaignConfig, build_plan, run_campaign,
                      synthesize_trial_frame, trial_seed)
from .selftest import run_selftest
from .waveform import SystemConfig
from . import crlb as crlb_mod


class SystemModel(BaseModel):
    K: int = 16
    M: int = 4
    U: int = 2
    K_D: int = 14
    L: int = 3
    L_cp: int = 4
    N_r: int = 4
    N_s: int = 200
    rolloff: float = 0.4
    P_pil: int = 1
    delta: float = 0.01
    prototype: str = "rrc"


class CampaignModel(BaseModel):
    system: SystemModel = Field(default_factory=SystemModel)
    assignment: str = "contiguous-block"
    explicit_sets: list[list[list[int]]] | None = None
    snr_db_list: list[float] = [10.0, 20.0, 30.0]
    trials: int = 50
    master_seed: int = 1
    cfo_max: float = 0.5
    eps_range: tuple[float, float] = (0.8, 1.2)
    theta_range_deg: tuple[float, float] = (-15.0, 15.0)
    outage_threshold: float = 0.01
    modes: list[str] = ["jcciqe", "genie"]
    crlb: bool = False
    rms_delay: float = 1.5
    timing_in_csv: bool = False
    workers: int = 1


class TrialRecordModel(BaseModel):
    snr_db: float
    trial: int
    mode: str
    mse_cfo: float | None
    mse_channel_iq: float | None
    ber: float | None
    outage_flag: int
    crlb_cfo: float | None
    seed: int
    wall_ms: float
    ok: bool
    note: str


class SummaryRowModel(BaseModel):
    snr_db: float
    mode: str
    trials_ok: int
    trials_failed: int
    mean_mse_cfo: float | None
    mean_mse_channel_iq: float | None
    mean_ber: float | None
    outage_prob: float | None
    mean_crlb_cfo: float | None


class CampaignResponse(BaseModel):
    records: list[TrialRecordModel]
    summary: list[SummaryRowModel]
    trial_csv: str
    summary_csv: str
    failed_fraction: float


class CostCurveRequest(BaseModel):
    campaign: CampaignModel = Field(default_factory=CampaignModel)
    snr_db: float
    trial: int = 0
    user: int = 1
    phi_step: float = 0.001


class CostCurveResponse(BaseModel):
    phi: list[float]
    log_det_cost: list[float]
    min_eig_cost: list[float]
    csv: str


class CrlbRow(BaseModel):
    snr_db: float
    trials: int
    mean_crlb_cfo: float


class CrlbResponse(BaseModel):
    rows: list[CrlbRow]
    csv: str


class SelftestCheck(BaseModel):
    name: str
    ok: bool
    detail: str


class SelftestResponse(BaseModel):
    passed: bool
    checks: list[SelftestCheck]


app = FastAPI(title="gfdmlink", version=__version__,
              description="Multiuser SIMO GFDM link simulation service")


def _none_if_nan(value: float | None):
    if value is None:
        return None
    return None if math.isnan(value) else float(value)


def _to_campaign_config(model: CampaignModel) -> CampaignConfig:
    try:
        system = SystemConfig(**model.system.model_dump())
        explicit = None
        if model.explicit_sets is not None:
            explicit = tuple(tuple(tuple(int(k) for k in row) for row in user)
                             for user in model.explicit_sets)
        return CampaignConfig(
            system=system,
            snr_db_list=tuple(model.snr_db_list),
            trials=model.trials,
            master_seed=model.master_seed,
            assignment=model.assignment,
            explicit_sets=explicit,
            cfo_max=model.cfo_max,
            eps_range=tuple(model.eps_range),
            theta_range_deg=tuple(model.theta_range_deg),
            outage_threshold=model.outage_threshold,
            modes=tuple(model.modes),
            crlb=model.crlb,
            rms_delay=model.rms_delay,
            timing_in_csv=model.timing_in_csv,
            workers=model.workers,
        )
    except ConfigurationError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/campaign", response_model=CampaignResponse)
def campaign(request: CampaignModel) -> CampaignResponse:
    cfg = _to_campaign_config(request)
    try:
        result = run_campaign(cfg)
    except ConfigurationError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    records = [TrialRecordModel(
        snr_db=r.snr_db, trial=r.trial, mode=r.mode,
        mse_cfo=_none_if_nan(r.mse_cfo), mse_channel_iq=_none_if_nan(r.mse_channel_iq),
        ber=_none_if_nan(r.ber), outage_flag=r.outage_flag,
        crlb_cfo=_none_if_nan(r.crlb_cfo), seed=r.seed, wall_ms=r.wall_ms,
        ok=r.ok, note=r.note,
    ) for r in result.records]
    summary = [SummaryRowModel(
        snr_db=s.snr_db, mode=s.mode, trials_ok=s.trials_ok, trials_failed=s.trials_failed,
        mean_mse_cfo=_none_if_nan(s.mean_mse_cfo),
        mean_mse_channel_iq=_none_if_nan(s.mean_mse_channel_iq),
        mean_ber=_none_if_nan(s.mean_ber), outage_prob=_none_if_nan(s.outage_prob),
        mean_crlb_cfo=_none_if_nan(s.mean_crlb_cfo),
    ) for s in result.summary]
    return CampaignResponse(records=records, summary=summary,
                            trial_csv=result.trial_csv, summary_csv=result.summary_csv,
                            failed_fraction=result.failed_fraction)


@app.post("/campaign/from-flat", response_model=CampaignResponse)
def campaign_from_flat(flat: dict) -> CampaignResponse:
    """Run a campaign from a flat key=value mapping (the config-file schema)."""
    try:
        cfg = build_campaign_config(flat)
    except ConfigurationError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    model = _campaign_model_from_config(cfg)
    return campaign(model)


def _campaign_model_from_config(cfg: CampaignConfig) -> CampaignModel:
    return CampaignModel(
        system=SystemModel(
            K=cfg.system.K, M=cfg.system.M, U=cfg.system.U, K_D=cfg.system.K_D,
            L=cfg.system.L, L_cp=cfg.system.L_cp, N_r=cfg.system.N_r, N_s=cfg.system.N_s,
            rolloff=cfg.system.rolloff, P_pil=cfg.system.P_pil, delta=cfg.system.delta,
            prototype=cfg.system.prototype,
        ),
        assignment=cfg.assignment,
        explicit_sets=[[list(row) for row in user] for user in cfg.explicit_sets]
        if cfg.explicit_sets else None,
        snr_db_list=list(cfg.snr_db_list), trials=cfg.trials, master_seed=cfg.master_seed,
        cfo_max=cfg.cfo_max, eps_range=cfg.eps_range, theta_range_deg=cfg.theta_range_deg,
        outage_threshold=cfg.outage_threshold, modes=list(cfg.modes), crlb=cfg.crlb,
        rms_delay=cfg.rms_delay, timing_in_csv=cfg.timing_in_csv, workers=cfg.workers,
    )


@app.post("/cost-curve", response_model=CostCurveResponse)
def cost_curve(request: CostCurveRequest) -> CostCurveResponse:
    cfg = _to_campaign_config(request.campaign)
    snrs = [float(s) for s in cfg.snr_db_list]
    if float(request.snr_db) not in snrs:
        raise HTTPException(status_code=400,
                            detail=f"snr_db {request.snr_db} is not in snr_db_list {snrs}")
    if not 1 <= request.user <= cfg.system.U:
        raise HTTPException(status_code=400, detail=f"user must lie in 1..{cfg.system.U}")
    if not 0 < request.phi_step <= 0.1:
        raise HTTPException(status_code=400, detail="phi_step must lie in (0, 0.1]")
    if not 0 <= request.trial < cfg.trials:
        raise HTTPException(status_code=400, detail=f"trial must lie in 0..{cfg.trials - 1}")
    try:
        plan = build_plan(cfg)
        layout = plan_pilots(plan)
        snr_idx = snrs.index(float(request.snr_db))
        seed = trial_seed(cfg.master_seed, snr_idx, request.trial)
        frame = synthesize_trial_frame(cfg, plan, layout, float(request.snr_db), seed)
        dec = decompose_frame(frame, plan)
        ev = CfoCostEvaluator(dec, plan, request.user - 1)
        n = int(np.ceil(1.0 / request.phi_step - 1e-12))
        phis = -0.5 + request.phi_step * np.arange(n + 1)
        eigs = ev.eigenvalues_batch(phis)
        log_det = np.sum(np.log(np.maximum(eigs, 1e-300)), axis=1)
        min_eig = eigs[:, 0]
    except GfdmLinkError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    lines = ["phi,log_det_cost,min_eig_cost"]
    for p, ld, me in zip(phis, log_det, min_eig):
        lines.append(f"{p:.17e},{ld:.17e},{me:.17e}")
    return CostCurveResponse(phi=list(map(float, phis)),
                             log_det_cost=list(map(float, log_det)),
                             min_eig_cost=list(map(float, min_eig)),
                             csv="\n".join(lines) + "\n")


@app.post("/crlb", response_model=CrlbResponse)
def crlb_endpoint(request: CampaignModel) -> CrlbResponse:
    cfg = _to_campaign_config(request)
    try:
        plan = build_plan(cfg)
        layout = plan_pilots(plan)
        rows = []
        for snr_idx, snr in enumerate(cfg.snr_db_list):
            values = []
            for trial in range(cfg.trials):
                seed = trial_seed(cfg.master_seed, snr_idx, trial)
                frame = synthesize_trial_frame(cfg, plan, layout, float(snr), seed)
                values.append(crlb_mod.crlb_cfo(frame.truth, cfg.system, plan))
            rows.append(CrlbRow(snr_db=float(snr), trials=cfg.trials,
                                mean_crlb_cfo=float(np.mean(values))))
    except (ConfigurationError, NumericalError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    lines = ["snr_db,trials,mean_crlb_cfo"]
    for row in rows:
        lines.append(f"{row.snr_db!r},{row.trials},{row.mean_crlb_cfo:.17e}")
    return CrlbResponse(rows=rows, csv="\n".join(lines) + "\n")


@app.post("/selftest", response_model=SelftestResponse)
def selftest() -> SelftestResponse:
    checks = [SelftestCheck(name=c.name, ok=bool(c.ok), detail=c.detail)
              for c in run_selftest()]
    return SelftestResponse(passed=all(c.ok for c in checks), checks=checks)
