"""Monte-Carlo campaign runner: configuration, seeding, metrics and CSV output."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import crlb as crlb_mod
from .detector import build_detection_operators, detect_frame, qpsk_demap, qpsk_map
from .errors import ConfigurationError, GfdmLinkError
from .estimator import (EstimationResult, PilotLayout, apply_pilot_layout,
                        compute_subspace_dims, estimate_frame, plan_pilots)
from .impairments import (FrameTruth, ReceivedFrame, complex_noise,
                          draw_impairments, synthesize_clean)
from .waveform import (AssignmentPlan, SystemConfig, build_assignment,
                       build_modulation_for)

TRIAL_CSV_HEADER = "snr_db,trial,mode,mse_cfo,mse_channel_iq,ber,outage_flag,crlb_cfo,seed,wall_ms"
SUMMARY_CSV_HEADER = ("snr_db,mode,trials_ok,trials_failed,mean_mse_cfo,"
                      "mean_mse_channel_iq,mean_ber,outage_prob,mean_crlb_cfo")
SNR_COMMENT = ("# snr_db definition: SNR = E_s / sigma^2 with E_s the mean received "
               "signal power per complex sample measured over the frame at sigma^2 = 0")

MODES = ("jcciqe", "genie")
ASSIGNMENT_GENERATORS = ("contiguous-block", "interleaved")


@dataclass(frozen=True)
class CampaignConfig:
    system: SystemConfig
    snr_db_list: tuple
    trials: int = 50
    master_seed: int = 1
    assignment: str = "contiguous-block"
    explicit_sets: tuple | None = None
    cfo_max: float = 0.5
    eps_range: tuple = (0.8, 1.2)
    theta_range_deg: tuple = (-15.0, 15.0)
    outage_threshold: float = 0.01
    modes: tuple = MODES
    crlb: bool = False
    rms_delay: float = 1.5
    timing_in_csv: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if len(self.snr_db_list) < 1:
            raise ConfigurationError("snr_db_list must not be empty")
        if not self.modes:
            raise ConfigurationError("at least one mode is required")
        for mode in self.modes:
            if mode not in MODES:
                raise ConfigurationError(f"unknown mode {mode!r}, expected one of {MODES}")
        for name, rng_pair in (("eps_range", self.eps_range),
                               ("theta_range_deg", self.theta_range_deg)):
            if len(rng_pair) != 2 or rng_pair[0] > rng_pair[1]:
                raise ConfigurationError(f"{name} must be an ordered pair, got {rng_pair}")
        if not 0 < self.cfo_max <= 0.5:
            raise ConfigurationError(f"cfo_max must lie in (0, 0.5], got {self.cfo_max}")
        if self.assignment not in ASSIGNMENT_GENERATORS + ("explicit",):
            raise ConfigurationError(
                f"unknown assignment {self.assignment!r}; use one of "
                f"{ASSIGNMENT_GENERATORS + ('explicit',)}"
            )
        if self.assignment == "explicit" and self.explicit_sets is None:
            raise ConfigurationError("assignment 'explicit' requires explicit_sets")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")


@dataclass
class TrialRecord:
    snr_db: float
    trial: int
    mode: str
    mse_cfo: float
    mse_channel_iq: float
    ber: float
    outage_flag: int
    crlb_cfo: float | None
    seed: int
    wall_ms: float
    ok: bool = True
    note: str = ""


@dataclass
class SummaryRow:
    snr_db: float
    mode: str
    trials_ok: int
    trials_failed: int
    mean_mse_cfo: float
    mean_mse_channel_iq: float
    mean_ber: float
    outage_prob: float
    mean_crlb_cfo: float | None


@dataclass
class CampaignResult:
    records: list
    summary: list
    trial_csv: str
    summary_csv: str
    failed_fraction: float


def default_system() -> SystemConfig:
    """Desk-scale default: 2 users, 16x4 resource grid, 4 antennas, 200-symbol frames."""
    return SystemConfig(K=16, M=4, U=2, K_D=14, L=3, L_cp=4, N_r=4, N_s=200,
                        rolloff=0.4, P_pil=1, delta=0.01)


def data_subcarriers(K: int, K_D: int) -> list:
    """The K_D 1-based data subcarriers; DC first then bins nearest Nyquist are reserved."""
    if K_D > K:
        raise ConfigurationError(f"K_D={K_D} exceeds K={K}")
    reserved = []
    if K_D < K:
        reserved.append(1)
        nyq = K // 2 + 1
        offsets = [0]
        for step in range(1, K):
            offsets.extend([-step, step])
        for off in offsets:
            if len(reserved) >= K - K_D:
                break
            cand = nyq + off
            if 1 <= cand <= K and cand not in reserved:
                reserved.append(cand)
    return [k for k in range(1, K + 1) if k not in set(reserved)]


def _balanced_sizes(K_D: int, U: int) -> list:
    base = K_D // U
    extra = K_D % U
    return [base + (1 if i < extra else 0) for i in range(U)]


def _check_equal_totals(config: SystemConfig):
    if (config.M * config.K_D) % config.U != 0:
        raise ConfigurationError(
            f"M*K_D = {config.M * config.K_D} is not divisible by U = {config.U}; "
            "per-user allocations cannot be equal"
        )
    if config.K_D % config.U != 0 and config.M % config.U != 0:
        raise ConfigurationError(
            "generator cannot equalize per-user totals: need K_D or M divisible by U"
        )


def contiguous_block_sets(config: SystemConfig) -> tuple:
    """Each user gets a contiguous band per subsymbol, bands rotated across subsymbols."""
    _check_equal_totals(config)
    data = data_subcarriers(config.K, config.K_D)
    sizes = _balanced_sizes(config.K_D, config.U)
    sets = [[None] * config.M for _ in range(config.U)]
    for m in range(config.M):
        cursor = 0
        for slot in range(config.U):
            u = (slot + m) % config.U
            size = sizes[slot]
            sets[u][m] = tuple(data[cursor:cursor + size])
            cursor += size
    return tuple(tuple(rows) for rows in sets)


def interleaved_sets(config: SystemConfig) -> tuple:
    """Round-robin assignment over the data subcarriers, offset per subsymbol."""
    _check_equal_totals(config)
    data = data_subcarriers(config.K, config.K_D)
    sets = [[None] * config.M for _ in range(config.U)]
    for m in range(config.M):
        for u in range(config.U):
            sets[u][m] = tuple(data[p] for p in range(config.K_D)
                               if (p + m) % config.U == u)
    return tuple(tuple(rows) for rows in sets)


def assignment_sets(cfg: CampaignConfig) -> tuple:
    if cfg.assignment == "contiguous-block":
        return contiguous_block_sets(cfg.system)
    if cfg.assignment == "interleaved":
        return interleaved_sets(cfg.system)
    return cfg.explicit_sets


def build_plan(cfg: CampaignConfig) -> AssignmentPlan:
    return build_assignment(cfg.system, assignment_sets(cfg), build_modulation_for(cfg.system))


def trial_seed(master_seed: int, snr_index: int, trial_index: int) -> int:
    """Stable per-trial seed; independent of execution order and worker count."""
    ss = np.random.SeedSequence([int(master_seed), int(snr_index), int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def draw_frame_data(plan: AssignmentPlan, layout: PilotLayout,
                    rng: np.random.Generator) -> np.ndarray:
    """Random QPSK payload with the pilot/null layout applied to the first symbol."""
    cfg = plan.config
    bits = rng.integers(0, 2, size=(cfg.N_s, cfg.U, plan.n_per_user, 2))
    data = qpsk_map(bits.reshape(-1)).reshape(cfg.N_s, cfg.U, plan.n_per_user)
    data[0] = apply_pilot_layout(data[0], layout)
    return data


def synthesize_trial_frame(cfg: CampaignConfig, plan: AssignmentPlan, layout: PilotLayout,
                           snr_db: float, seed: int) -> ReceivedFrame:
    """Draw impairments and payload, measure signal power, and add calibrated noise."""
    rng = np.random.default_rng(seed)
    imps = draw_impairments(cfg.system, rng, cfo_max=cfg.cfo_max, eps_range=cfg.eps_range,
                            theta_range_deg=cfg.theta_range_deg, rms=cfg.rms_delay)
    data = draw_frame_data(plan, layout, rng)
    clean = synthesize_clean(plan, imps, data)
    es = float(np.mean(np.abs(clean) ** 2))
    sigma2 = es / (10.0 ** (snr_db / 10.0))
    y = clean + complex_noise(clean.shape, sigma2, rng)
    truth = FrameTruth(impairments=imps, data=data, sigma2=sigma2)
    return ReceivedFrame(y=y, sigma2=sigma2, truth=truth)


def genie_result(truth: FrameTruth, plan: AssignmentPlan) -> EstimationResult:
    """Perfect-knowledge estimate: true CFOs and equivalent channels fed to the detector."""
    cfg = plan.config
    U = cfg.U
    n = cfg.N_r * cfg.L
    phi = np.array([imp.phi for imp in truth.impairments])
    h0 = np.empty((U, n), dtype=complex)
    a = np.empty(U, dtype=complex)
    b = np.empty(U, dtype=complex)
    for u, imp in enumerate(truth.impairments):
        norm = np.linalg.norm(imp.h)
        h0[u] = imp.h / norm
        a[u] = norm * imp.alpha
        b[u] = norm * imp.beta
    return EstimationResult(phi_hat=phi, h0_hat=h0, a_hat=a, b_hat=b,
                            hI_hat=h0 * a[:, None], hQ_hat=h0 * b[:, None])


def mse_cfo(phi_hat, phi_true) -> float:
    """Mean squared CFO error over users."""
    err = np.asarray(phi_hat, dtype=float) - np.asarray(phi_true, dtype=float)
    return float(np.mean(err ** 2))


def mse_channel_iq(result: EstimationResult, truth: FrameTruth) -> float:
    """Mean squared equivalent-CIR error over users, branches and coefficients."""
    total = 0.0
    U = len(truth.impairments)
    n = truth.impairments[0].h.shape[0]
    for u, imp in enumerate(truth.impairments):
        total += float(np.sum(np.abs(result.hI_hat[u] - imp.h * imp.alpha) ** 2))
        total += float(np.sum(np.abs(result.hQ_hat[u] - imp.h * imp.beta) ** 2))
    return total / (2.0 * U * n)


def compute_ber(d_hat: np.ndarray, data: np.ndarray, skip_first: bool = True) -> float:
    """Bit error rate of hard QPSK decisions; symbol 1 (pilot layout) excluded."""
    n_s, U, n_u = data.shape
    truth_stacked = data.reshape(n_s, U * n_u)
    start = 1 if skip_first else 0
    got = qpsk_demap(d_hat[start:].reshape(-1))
    want = qpsk_demap(truth_stacked[start:].reshape(-1))
    return float(np.mean(got != want))


def outage_probability(records, threshold: float) -> dict:
    """Per-SNR fraction of records whose BER exceeds the threshold."""
    by_snr: dict = {}
    for rec in records:
        by_snr.setdefault(rec.snr_db, []).append(rec)
    return {
        snr: float(np.mean([1.0 if (rec.ok and rec.ber > threshold) else 0.0 for rec in recs]))
        for snr, recs in by_snr.items()
    }


def _run_single_trial(cfg: CampaignConfig, plan: AssignmentPlan, layout: PilotLayout,
                      snr_db: float, snr_idx: int, trial_idx: int) -> list:
    seed = trial_seed(cfg.master_seed, snr_idx, trial_idx)
    frame = synthesize_trial_frame(cfg, plan, layout, snr_db, seed)
    crlb_value = None
    crlb_note = ""
    if cfg.crlb:
        try:
            crlb_value = crlb_mod.crlb_cfo(frame.truth, cfg.system, plan)
        except GfdmLinkError as exc:
            crlb_note = f"crlb failed: {exc}"
    records = []
    for mode in cfg.modes:
        start = time.perf_counter()
        try:
            if mode == "genie":
                result = genie_result(frame.truth, plan)
            else:
                result = estimate_frame(frame, plan, layout)
            ops = build_detection_operators(result, plan)
            d_hat = detect_frame(frame, ops)
            ber = compute_ber(d_hat, frame.truth.data)
            m_cfo = mse_cfo(result.phi_hat, [imp.phi for imp in frame.truth.impairments])
            m_ch = mse_channel_iq(result, frame.truth)
            wall_ms = (time.perf_counter() - start) * 1e3
            records.append(TrialRecord(
                snr_db=float(snr_db), trial=trial_idx, mode=mode,
                mse_cfo=m_cfo, mse_channel_iq=m_ch, ber=ber,
                outage_flag=int(ber > cfg.outage_threshold),
                crlb_cfo=crlb_value, seed=seed, wall_ms=wall_ms,
                ok=True, note=crlb_note,
            ))
        except GfdmLinkError as exc:
            wall_ms = (time.perf_counter() - start) * 1e3
            records.append(TrialRecord(
                snr_db=float(snr_db), trial=trial_idx, mode=mode,
                mse_cfo=float("nan"), mse_channel_iq=float("nan"), ber=float("nan"),
                outage_flag=1, crlb_cfo=crlb_value, seed=seed, wall_ms=wall_ms,
                ok=False, note=f"{type(exc).__name__}: {exc}",
            ))
    return records


def _trial_task(args):
    cfg, snr_db, snr_idx, trial_idx = args
    plan = build_plan(cfg)
    layout = plan_pilots(plan)
    return (snr_idx, trial_idx), _run_single_trial(cfg, plan, layout, snr_db, snr_idx, trial_idx)


def _format_float(value) -> str:
    return f"{float(value):.17e}"


def render_trial_csv(records, cfg: CampaignConfig) -> str:
    lines = [SNR_COMMENT, TRIAL_CSV_HEADER]
    for r in records:
        crlb_field = "" if r.crlb_cfo is None else _format_float(r.crlb_cfo)
        wall_field = _format_float(r.wall_ms) if cfg.timing_in_csv else _format_float(0.0)
        lines.append(",".join([
            repr(float(r.snr_db)), str(r.trial), r.mode,
            _format_float(r.mse_cfo), _format_float(r.mse_channel_iq), _format_float(r.ber),
            str(r.outage_flag), crlb_field, str(r.seed), wall_field,
        ]))
    return "\n".join(lines) + "\n"


def summarize(records, cfg: CampaignConfig) -> list:
    rows = []
    for snr_db in cfg.snr_db_list:
        for mode in cfg.modes:
            sel = [r for r in records if r.snr_db == float(snr_db) and r.mode == mode]
            ok = [r for r in sel if r.ok]
            failed = len(sel) - len(ok)
            crlbs = [r.crlb_cfo for r in sel if r.crlb_cfo is not None]
            rows.append(SummaryRow(
                snr_db=float(snr_db), mode=mode, trials_ok=len(ok), trials_failed=failed,
                mean_mse_cfo=float(np.mean([r.mse_cfo for r in ok])) if ok else float("nan"),
                mean_mse_channel_iq=float(np.mean([r.mse_channel_iq for r in ok])) if ok else float("nan"),
                mean_ber=float(np.mean([r.ber for r in ok])) if ok else float("nan"),
                outage_prob=float(np.mean([r.outage_flag for r in sel])) if sel else float("nan"),
                mean_crlb_cfo=float(np.mean(crlbs)) if crlbs else None,
            ))
    return rows


def render_summary_csv(summary) -> str:
    lines = [SUMMARY_CSV_HEADER]
    for row in summary:
        crlb_field = "" if row.mean_crlb_cfo is None else _format_float(row.mean_crlb_cfo)
        lines.append(",".join([
            repr(float(row.snr_db)), row.mode, str(row.trials_ok), str(row.trials_failed),
            _format_float(row.mean_mse_cfo), _format_float(row.mean_mse_channel_iq),
            _format_float(row.mean_ber), _format_float(row.outage_prob), crlb_field,
        ]))
    return "\n".join(lines) + "\n"


def run_campaign(cfg: CampaignConfig) -> CampaignResult:
    """Execute the full (snr x trial x mode) grid; deterministic for a fixed config."""
    plan = build_plan(cfg)  # also validates the assignment
    compute_subspace_dims(plan, iq_present=True)  # antenna-count feasibility gate
    layout = plan_pilots(plan)
    records: list = []
    if cfg.workers > 1:
        tasks = [(cfg, float(snr), si, ti)
                 for si, snr in enumerate(cfg.snr_db_list)
                 for ti in range(cfg.trials)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            keyed = list(pool.map(_trial_task, tasks))
        keyed.sort(key=lambda item: item[0])
        for _, recs in keyed:
            records.extend(recs)
    else:
        for si, snr in enumerate(cfg.snr_db_list):
            for ti in range(cfg.trials):
                records.extend(_run_single_trial(cfg, plan, layout, float(snr), si, ti))
    summary = summarize(records, cfg)
    failed = sum(1 for r in records if not r.ok)
    return CampaignResult(
        records=records,
        summary=summary,
        trial_csv=render_trial_csv(records, cfg),
        summary_csv=render_summary_csv(summary),
        failed_fraction=failed / len(records) if records else 0.0,
    )
