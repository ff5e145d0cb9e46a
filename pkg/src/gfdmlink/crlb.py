"""Approximate Fisher information and the Cramer-Rao bound on CFO estimation.

The unknown vector per symbol is [phi (U); Re/Im of the equivalent CIRs
h_I = alpha*h and h_Q = beta*h with the last tap coordinate of each assumed
known (U*(N_r*L - 1) real parameters per block); Re/Im of the data vector].

Per-symbol FIMs follow (2/sigma^2) Re(J^H J).  Accumulation over the frame
supports two nuisance models for the unknown payload: "per-symbol" (default)
marginalizes each symbol's data block via its generalized Schur complement
before summing, so every symbol carries its own unknown data; "shared" sums
the full matrices elementwise, which treats the payload as one vector common
to all symbols and yields a noticeably more optimistic bound.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, InputError, NumericalError
from .impairments import FrameTruth, build_channel_matrix, cfo_phase_ramp
from .waveform import AssignmentPlan, SystemConfig

_COND_LIMIT = 1e13
_SCHUR_RCOND = 1e-12

PER_SYMBOL = "per-symbol"
SHARED = "shared"
DATA_NUISANCE_MODES = (PER_SYMBOL, SHARED)


def common_dimension(config: SystemConfig) -> int:
    """CFOs plus the four retained real CIR blocks."""
    return config.U + 4 * config.U * (config.N_r * config.L - 1)


def theta_dimension(config: SystemConfig) -> int:
    return common_dimension(config) + 2 * config.M * config.K_D


def _tap_scatter_columns(w: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Structural-derivative columns of the banded channel matrix, one per retained tap.

    d(H h_vec)/d(h_vec[s]) applied to w places window w[j:j+n_kept] on antenna
    a's rows, where s = j*N_r + a indexes the stacked CIR; the last coordinate
    (s = N_r*L - 1) is excluded as known.
    """
    n_r, L, n_kept = config.N_r, config.L, config.n_kept
    cols = np.zeros((config.received_dim, n_r * L - 1), dtype=complex)
    for s in range(n_r * L - 1):
        j, a = divmod(s, n_r)
        cols[a::n_r, s] = w[j:j + n_kept]
    return cols


def jacobian_per_symbol(i: int, truth: FrameTruth, config: SystemConfig,
                        plan: AssignmentPlan) -> np.ndarray:
    """Complex Jacobian of the noise-free symbol-i synthesis w.r.t. the parameter vector.

    Column blocks follow the parameter layout: [j*P | Q | j*Q | S | j*S | T | j*U].
    """
    U = config.U
    dim = config.received_dim
    per_branch = config.N_r * config.L - 1
    mkd = config.M * config.K_D
    ramp_index = np.arange(config.G)

    P = np.empty((dim, U), dtype=complex)
    Qb = np.empty((dim, U * per_branch), dtype=complex)
    Sb = np.empty((dim, U * per_branch), dtype=complex)
    Tb = np.empty((dim, mkd), dtype=complex)
    Ub = np.empty((dim, mkd), dtype=complex)

    n_u = plan.n_per_user
    for u, imp in enumerate(truth.impairments):
        H_i = build_channel_matrix(imp.alpha * imp.h, config.G, config.L, config.N_r)
        H_q = build_channel_matrix(imp.beta * imp.h, config.G, config.L, config.N_r)
        ramp = cfo_phase_ramp(imp.phi, config.G, config.K)
        psi = plan.psi[u]
        WI = ramp[:, None] * psi            # E Psi
        WQ = ramp[:, None] * np.conj(psi)   # E conj(Psi)
        d = truth.data[i, u]
        wI = WI @ d
        wQ = WQ @ np.conj(d)
        P[:, u] = (2 * np.pi / config.K) * (H_i @ (ramp_index * wI) + H_q @ (ramp_index * wQ))
        Qb[:, u * per_branch:(u + 1) * per_branch] = _tap_scatter_columns(wI, config)
        Sb[:, u * per_branch:(u + 1) * per_branch] = _tap_scatter_columns(wQ, config)
        src = H_i @ WI
        img = H_q @ WQ
        Tb[:, u * n_u:(u + 1) * n_u] = src + img
        Ub[:, u * n_u:(u + 1) * n_u] = src - img
    return np.hstack([1j * P, Qb, 1j * Qb, Sb, 1j * Sb, Tb, 1j * Ub])


def fim_per_symbol(i: int, truth: FrameTruth, config: SystemConfig,
                   plan: AssignmentPlan) -> np.ndarray:
    """Per-symbol FIM (2/sigma^2) * Re(J^H J)."""
    if truth.sigma2 <= 0:
        raise InputError(f"FIM needs a positive noise variance, got {truth.sigma2}")
    J = jacobian_per_symbol(i, truth, config, plan)
    return (2.0 / truth.sigma2) * np.real(J.conj().T @ J)


def fim_frame(truth: FrameTruth, config: SystemConfig, plan: AssignmentPlan) -> np.ndarray:
    """Elementwise (shared-data) sum of the per-symbol FIMs over the whole frame."""
    total = np.zeros((theta_dimension(config), theta_dimension(config)))
    for i in range(truth.data.shape[0]):
        total += fim_per_symbol(i, truth, config, plan)
    return total


def _schur_common(fim: np.ndarray, n_common: int) -> np.ndarray:
    """Generalized Schur complement marginalizing the trailing data block."""
    A = fim[:n_common, :n_common]
    B = fim[:n_common, n_common:]
    D = fim[n_common:, n_common:]
    D = 0.5 * (D + D.T)
    try:
        eigs, vecs = np.linalg.eigh(D)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"data-block eigendecomposition failed: {exc}") from exc
    cutoff = max(eigs[-1], 0.0) * _SCHUR_RCOND
    inv_eigs = np.where(eigs > cutoff, 1.0 / np.where(eigs > 0, eigs, 1.0), 0.0)
    BV = B @ vecs
    return A - (BV * inv_eigs) @ BV.T


def _invert_common(fim_common: np.ndarray, U: int) -> float:
    fim_common = 0.5 * (fim_common + fim_common.T)
    try:
        eigs, vecs = np.linalg.eigh(fim_common)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"FIM eigendecomposition failed: {exc}") from exc
    if eigs[0] <= 0 or eigs[-1] / eigs[0] > _COND_LIMIT:
        cond = np.inf if eigs[0] <= 0 else eigs[-1] / eigs[0]
        raise NumericalError(
            f"accumulated FIM is singular or ill-conditioned (cond ~ {cond:.3e})"
        )
    cfo_rows = vecs[:U, :]
    diag = np.einsum("uk,k,uk->u", cfo_rows, 1.0 / eigs, cfo_rows)
    return float(np.mean(diag))


def crlb_cfo(truth: FrameTruth, config: SystemConfig, plan: AssignmentPlan,
             data_nuisance: str = PER_SYMBOL) -> float:
    """CFO CRLB: mean of the first U diagonal entries of the inverse accumulated FIM."""
    if data_nuisance not in DATA_NUISANCE_MODES:
        raise ConfigurationError(
            f"unknown data_nuisance {data_nuisance!r}; use one of {DATA_NUISANCE_MODES}"
        )
    n_common = common_dimension(config)
    if data_nuisance == SHARED:
        return _invert_common(fim_frame(truth, config, plan), config.U)
    total = np.zeros((n_common, n_common))
    for i in range(truth.data.shape[0]):
        total += _schur_common(fim_per_symbol(i, truth, config, plan), n_common)
    return _invert_common(total, config.U)
