"""Fast invariant suite behind the `selftest` CLI command and service endpoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import build_detection_operators, detect_frame
from .errors import GfdmLinkError
from .estimator import decompose_frame, estimate_frame, plan_pilots
from .harness import (CampaignConfig, compute_ber, contiguous_block_sets,
                      draw_frame_data, genie_result, mse_channel_iq,
                      run_campaign)
from .impairments import (build_channel_matrix, draw_impairments, iq_params,
                          mixing_operators, synthesize_received)
from .waveform import (SystemConfig, build_assignment, build_modulation_matrix,
                       build_prototype_filter, rectangular_prototype)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _small_config() -> SystemConfig:
    return SystemConfig(K=8, M=2, U=2, K_D=8, L=2, L_cp=2, N_r=3, N_s=40)


def _check_prototype() -> CheckResult:
    g = build_prototype_filter(16, 4, 0.4)
    energy = float(np.sum(np.abs(g) ** 2))
    mod = build_modulation_matrix(g, 16, 4, 4)
    shift_err = 0.0
    for m in range(1, 4):
        col = mod.A[:, m * 16 + 3]
        ref = np.roll(mod.A[:, 3], m * 16)
        shift_err = max(shift_err, float(np.max(np.abs(col - ref))))
    ok = abs(energy - 1.0) < 1e-12 and shift_err < 1e-12
    return CheckResult("prototype-and-column-shift", ok,
                       f"energy-1={energy - 1.0:.2e}, shift err={shift_err:.2e}")


def _check_cp_and_exclusivity() -> CheckResult:
    cfg = _small_config()
    plan = build_assignment(cfg, contiguous_block_sets(cfg))
    rng = np.random.default_rng(0)
    d = rng.standard_normal(plan.n_per_user) + 1j * rng.standard_normal(plan.n_per_user)
    s = plan.psi[0] @ d
    cp_err = float(np.max(np.abs(s[:cfg.L_cp] - s[cfg.N:cfg.N + cfg.L_cp])))
    cross = float(np.max(np.abs(plan.gamma[0].T @ plan.gamma[1])))
    ok = cp_err == 0.0 and cross == 0.0
    return CheckResult("cp-consistency-and-assignment-exclusivity", ok,
                       f"cp err={cp_err:.2e}, gamma cross={cross:.2e}")


def _check_ofdm_reduction() -> CheckResult:
    g = rectangular_prototype(16, 1)
    mod = build_modulation_matrix(g, 16, 1, 0)
    err = float(np.max(np.abs(mod.A @ mod.A.conj().T - np.eye(16))))
    return CheckResult("single-subsymbol-dft-reduction", err < 1e-10, f"|AA^H - I|={err:.2e}")


def _check_iq_identity() -> CheckResult:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(32):
        a, b = iq_params(rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5))
        worst = max(worst, abs(a + b - 1.0))
    return CheckResult("iq-parameter-identity", worst < 1e-15, f"max |alpha+beta-1|={worst:.2e}")


def _check_toeplitz_identity() -> CheckResult:
    cfg = _small_config()
    rng = np.random.default_rng(2)
    h = rng.standard_normal(cfg.N_r * cfg.L) + 1j * rng.standard_normal(cfg.N_r * cfg.L)
    H = build_channel_matrix(h, cfg.G, cfg.L, cfg.N_r)
    gamma = rng.standard_normal(cfg.received_dim) + 1j * rng.standard_normal(cfg.received_dim)
    lhs = gamma.conj() @ H
    blocks = gamma.reshape(cfg.n_kept, cfg.N_r)
    upsilon = np.zeros((cfg.N_r * cfg.L, cfg.G), dtype=complex)
    for j in range(cfg.L):
        for r in range(cfg.n_kept):
            upsilon[j * cfg.N_r:(j + 1) * cfg.N_r, j + r] = np.conj(blocks[r])
    rhs = h @ upsilon
    err = float(np.max(np.abs(lhs - rhs)))
    return CheckResult("toeplitz-identity", err < 1e-10, f"max err={err:.2e}")


def _check_noise_free_recovery() -> CheckResult:
    cfg = _small_config()
    plan = build_assignment(cfg, contiguous_block_sets(cfg))
    layout = plan_pilots(plan)
    rng = np.random.default_rng(3)
    imps = draw_impairments(cfg, rng)
    data = draw_frame_data(plan, layout, rng)
    frame = synthesize_received(plan, imps, data, rng, 0.0)
    result = estimate_frame(frame, plan, layout)
    phi_err = max(abs(result.phi_hat[u] - imps[u].phi) for u in range(cfg.U))
    ch_err = mse_channel_iq(result, frame.truth)
    ops = build_detection_operators(result, plan)
    ber = compute_ber(detect_frame(frame, ops), frame.truth.data)
    ok = phi_err < 1e-4 and ch_err < 1e-8 and ber == 0.0
    return CheckResult("noise-free-recovery", ok,
                       f"max |phi err|={phi_err:.2e}, mse_ch={ch_err:.2e}, ber={ber}")


def _check_subspace_orthogonality() -> CheckResult:
    cfg = _small_config()
    plan = build_assignment(cfg, contiguous_block_sets(cfg))
    layout = plan_pilots(plan)
    rng = np.random.default_rng(4)
    imps = draw_impairments(cfg, rng)
    data = draw_frame_data(plan, layout, rng)
    frame = synthesize_received(plan, imps, data, rng, 0.0)
    dec = decompose_frame(frame, plan)
    worst = 0.0
    for u, imp in enumerate(imps):
        g_i, _ = mixing_operators(imp.h, imp.phi, plan, u)
        num = float(np.sum(np.abs(dec.gammas.conj().T @ g_i) ** 2))
        worst = max(worst, num / dec.Q)
    return CheckResult("subspace-orthogonality", worst < 1e-10, f"max ratio={worst:.2e}")


def _check_genie_zero_ber() -> CheckResult:
    cfg = _small_config()
    plan = build_assignment(cfg, contiguous_block_sets(cfg))
    layout = plan_pilots(plan)
    rng = np.random.default_rng(5)
    imps = draw_impairments(cfg, rng)
    data = draw_frame_data(plan, layout, rng)
    frame = synthesize_received(plan, imps, data, rng, 0.0)
    ops = build_detection_operators(genie_result(frame.truth, plan), plan)
    ber = compute_ber(detect_frame(frame, ops), frame.truth.data)
    return CheckResult("genie-noise-free-zero-ber", ber == 0.0, f"ber={ber}")


def _check_determinism() -> CheckResult:
    cfg = CampaignConfig(system=SystemConfig(K=4, M=2, U=2, K_D=4, L=2, L_cp=2, N_r=2, N_s=12),
                         snr_db_list=(20.0,), trials=2, master_seed=9)
    a = run_campaign(cfg)
    b = run_campaign(cfg)
    ok = a.trial_csv == b.trial_csv and a.summary_csv == b.summary_csv
    return CheckResult("campaign-determinism", ok, "byte-identical CSVs" if ok else "CSV mismatch")


_CHECKS = (
    _check_prototype,
    _check_cp_and_exclusivity,
    _check_ofdm_reduction,
    _check_iq_identity,
    _check_toeplitz_identity,
    _check_noise_free_recovery,
    _check_subspace_orthogonality,
    _check_genie_zero_ber,
    _check_determinism,
)


def run_selftest() -> list:
    """Run every invariant check; failures are reported, never raised."""
    results = []
    for check in _CHECKS:
        try:
            results.append(check())
        except GfdmLinkError as exc:
            results.append(CheckResult(check.__name__.lstrip("_"), False, f"raised {exc}"))
        except Exception as exc:  # surface unexpected breakage as a failed check
            results.append(CheckResult(check.__name__.lstrip("_"), False,
                                       f"unexpected {type(exc).__name__}: {exc}"))
    return results
