"""Stacked zero-forcing detection with IQ-image diversity, plus QPSK mapping."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DetectionError, InputError, NumericalError
from .estimator import EstimationResult, estimated_mixing
from .impairments import ReceivedFrame
from .waveform import AssignmentPlan

_DETECT_RCOND = 1e-10


@dataclass
class DetectionOperators:
    """Frame-constant source/image operators D = [D_1 .. D_U], F = [F_1 .. F_U]."""

    D: np.ndarray
    F: np.ndarray

    @cached_property
    def _stacked_pinv(self):
        big = np.block([[self.D, self.F],
                        [np.conj(self.F), np.conj(self.D)]])
        try:
            u, s, vh = np.linalg.svd(big, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD of the stacked detection operator failed: {exc}") from exc
        rank = int(np.sum(s > s[0] * _DETECT_RCOND)) if s.size else 0
        deficient = rank < big.shape[1]
        inv_s = np.where(s > s[0] * _DETECT_RCOND, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        pinv = (vh.conj().T * inv_s) @ u.conj().T
        return pinv, deficient


def build_detection_operators(result: EstimationResult, plan: AssignmentPlan) -> DetectionOperators:
    """Scale each user's estimated mixing matrices by its fitted scalars and stack by user."""
    d_blocks, f_blocks = [], []
    for u in range(plan.config.U):
        g_i, g_q = estimated_mixing(result.phi_hat[u], result.h0_hat[u], plan, u)
        d_blocks.append(g_i * result.a_hat[u])
        f_blocks.append(g_q * result.b_hat[u])
    return DetectionOperators(D=np.hstack(d_blocks), F=np.hstack(f_blocks))


def detect_symbol(y_i: np.ndarray, ops: DetectionOperators) -> np.ndarray:
    """Solve the conjugate-stacked system for one symbol and diversity-combine.

    Returns (d_I + conj(d_Q)) / 2 where [d_I; d_Q] is the pseudoinverse
    solution of [[D, F], [F*, D*]] [d; d*] = [y; y*].
    """
    y_i = np.asarray(y_i)
    if y_i.ndim != 1 or y_i.shape[0] != ops.D.shape[0]:
        raise InputError(f"received vector shape {y_i.shape} does not match operators")
    pinv, deficient = ops._stacked_pinv
    if deficient:
        raise DetectionError("stacked detection operator is numerically rank deficient")
    sol = pinv @ np.concatenate([y_i, np.conj(y_i)])
    n = ops.D.shape[1]
    return 0.5 * (sol[:n] + np.conj(sol[n:]))


def detect_frame(frame: ReceivedFrame, ops: DetectionOperators) -> np.ndarray:
    """Detect every symbol of the frame; (N_s, M*K_D) user-stacked estimates."""
    pinv, deficient = ops._stacked_pinv
    if deficient:
        raise DetectionError("stacked detection operator is numerically rank deficient")
    Y = frame.y
    stacked = np.hstack([Y, np.conj(Y)])   # (N_s, 2*dim)
    sol = stacked @ pinv.T                 # (N_s, 2*MK_D)
    n = ops.D.shape[1]
    return 0.5 * (sol[:, :n] + np.conj(sol[:, n:]))


def qpsk_map(bits: np.ndarray) -> np.ndarray:
    """Gray-mapped unit-energy QPSK; bit pair (b0, b1) -> ((1-2*b0) + 1j*(1-2*b1))/sqrt(2)."""
    bits = np.asarray(bits)
    if bits.size % 2 != 0:
        raise InputError(f"bit count must be even, got {bits.size}")
    pairs = bits.reshape(-1, 2)
    return ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) / np.sqrt(2.0)


def qpsk_demap(symbols: np.ndarray) -> np.ndarray:
    """Hard decisions by the sign of the real/imaginary parts."""
    symbols = np.asarray(symbols).reshape(-1)
    bits = np.empty((symbols.shape[0], 2), dtype=np.int64)
    bits[:, 0] = (symbols.real < 0).astype(np.int64)
    bits[:, 1] = (symbols.imag < 0).astype(np.int64)
    return bits.reshape(-1)
