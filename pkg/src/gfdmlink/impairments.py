"""Ground-truth impairments and received-frame synthesis.

The received model per symbol is
    y = sum_u alpha_u H_u E(phi_u) Psi_u d_u + beta_u H_u E(phi_u) conj(Psi_u) conj(d_u) + w
with E(phi) the diagonal CFO phase ramp, H_u the banded matrix of the
CFO-included channel, and antenna-interleaved row ordering
[y^1[L], .., y^{N_r}[L], .., y^1[G], .., y^{N_r}[G]].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .waveform import AssignmentPlan, SystemConfig


@dataclass(frozen=True)
class UserImpairment:
    """Per-user ground truth: CFO, IQ mismatch and channel.

    h is the CFO-included impulse response stacked as [h(L); ...; h(1)] with
    h(l) an N_r-vector, the layout the subspace estimator recovers.
    """

    phi: float
    epsilon: float
    theta: float
    alpha: complex
    beta: complex
    hbar: np.ndarray  # (N_r, L) raw taps
    h: np.ndarray     # (N_r * L,) CFO-included, reversed-tap stacking


@dataclass(frozen=True)
class FrameTruth:
    """Everything needed to score a frame: impairments, payload and noise level."""

    impairments: tuple
    data: np.ndarray  # (N_s, U, N_u)
    sigma2: float


@dataclass(frozen=True)
class ReceivedFrame:
    y: np.ndarray  # (N_s, N_r * (G - L + 1))
    sigma2: float
    truth: FrameTruth


def iq_params(epsilon: float, theta: float) -> tuple[complex, complex]:
    """Transmit IQ imbalance pair (alpha, beta) from amplitude/phase mismatch; alpha + beta = 1."""
    rot = epsilon * np.exp(1j * theta)
    return (1.0 + rot) / 2.0, (1.0 - rot) / 2.0


def draw_channel(L: int, rms: float, N_r: int, rng: np.random.Generator) -> np.ndarray:
    """Rayleigh taps with an exponential power profile, unit total power per antenna."""
    if L < 1:
        raise InputError(f"L must be >= 1, got {L}")
    if rms <= 0:
        raise InputError(f"rms delay spread must be positive, got {rms}")
    profile = np.exp(-np.arange(L) / rms)
    profile /= profile.sum()
    scale = np.sqrt(profile / 2.0)
    taps = rng.standard_normal((N_r, L)) + 1j * rng.standard_normal((N_r, L))
    return taps * scale


def cfo_included_cir(hbar: np.ndarray, phi: float, K: int) -> np.ndarray:
    """Rotate tap l by exp(2j*pi*phi*l/K) (l = 1..L) and stack as [h(L); ...; h(1)]."""
    hbar = np.asarray(hbar)
    if hbar.ndim != 2:
        raise InputError(f"hbar must be (N_r, L), got shape {hbar.shape}")
    L = hbar.shape[1]
    rotated = hbar * np.exp(2j * np.pi * phi * np.arange(1, L + 1) / K)
    return rotated[:, ::-1].T.reshape(-1)


def make_user_impairment(phi: float, epsilon: float, theta: float,
                         hbar: np.ndarray, K: int) -> UserImpairment:
    if not -0.5 <= phi < 0.5:
        raise InputError(f"normalized CFO must lie in [-0.5, 0.5), got {phi}")
    if epsilon <= 0:
        raise InputError(f"amplitude mismatch must be positive, got {epsilon}")
    alpha, beta = iq_params(epsilon, theta)
    return UserImpairment(
        phi=float(phi), epsilon=float(epsilon), theta=float(theta),
        alpha=alpha, beta=beta,
        hbar=np.asarray(hbar, dtype=complex),
        h=cfo_included_cir(hbar, phi, K),
    )


def draw_impairments(config: SystemConfig, rng: np.random.Generator,
                     cfo_max: float = 0.5,
                     eps_range: tuple[float, float] = (0.8, 1.2),
                     theta_range_deg: tuple[float, float] = (-15.0, 15.0),
                     rms: float = 1.5) -> tuple[UserImpairment, ...]:
    """Uniform draws of CFO, IQ mismatch and channel for every user."""
    out = []
    for _ in range(config.U):
        phi = rng.uniform(-cfo_max, cfo_max)
        eps = rng.uniform(*eps_range)
        theta = np.deg2rad(rng.uniform(*theta_range_deg))
        hbar = draw_channel(config.L, rms, config.N_r, rng)
        out.append(make_user_impairment(phi, eps, theta, hbar, config.K))
    return tuple(out)


def cfo_phase_ramp(phi: float, G: int, K: int) -> np.ndarray:
    """Diagonal of E(phi): exp(2j*pi*phi*g/K) for g = 0..G-1."""
    return np.exp(2j * np.pi * phi * np.arange(G) / K)


def build_cfo_matrix(phi: float, G: int, K: int) -> np.ndarray:
    return np.diag(cfo_phase_ramp(phi, G, K))


def build_channel_matrix(h: np.ndarray, G: int, L: int, N_r: int) -> np.ndarray:
    """Banded N_r*(G-L+1) x G matrix with blocks [h(L) .. h(1)] sliding along the rows.

    h is the stacked CFO-included response [h(L); ...; h(1)].  Row block r
    (antenna-interleaved) applies taps to samples r..r+L-1, i.e. a valid
    convolution that drops the first L-1 ISI-contaminated outputs.
    """
    h = np.asarray(h)
    if h.ndim != 1 or h.shape[0] != N_r * L:
        raise InputError(f"stacked CIR length {h.shape} does not match N_r*L = {N_r * L}")
    n_kept = G - L + 1
    if n_kept < 1:
        raise InputError(f"G={G} too short for L={L}")
    blocks = h.reshape(L, N_r)  # blocks[j] = h(L - j)
    H = np.zeros((N_r * n_kept, G), dtype=complex)
    rows = np.arange(n_kept)
    for j in range(L):
        for a in range(N_r):
            H[rows * N_r + a, rows + j] = blocks[j, a]
    return H


def mixing_operators(h: np.ndarray, phi: float, plan: AssignmentPlan, u: int):
    """Source/image mixing matrices (G_I, G_Q) = H E(phi) (Psi_u, conj(Psi_u)) for user u."""
    cfg = plan.config
    H = build_channel_matrix(h, cfg.G, cfg.L, cfg.N_r)
    ramp = cfo_phase_ramp(phi, cfg.G, cfg.K)
    psi = plan.psi[u]
    g_i = H @ (ramp[:, None] * psi)
    g_q = H @ (ramp[:, None] * np.conj(psi))
    return g_i, g_q


def synthesize_clean(plan: AssignmentPlan, impairments, data: np.ndarray) -> np.ndarray:
    """Noise-free received matrix (N_s, received_dim) per the frame model."""
    cfg = plan.config
    data = np.asarray(data, dtype=complex)
    if len(impairments) != cfg.U:
        raise InputError(f"expected {cfg.U} impairment entries, got {len(impairments)}")
    if data.shape != (cfg.N_s, cfg.U, plan.n_per_user):
        raise InputError(
            f"data shape {data.shape} does not match (N_s, U, N_u) = "
            f"({cfg.N_s}, {cfg.U}, {plan.n_per_user})"
        )
    Y = np.zeros((cfg.N_s, cfg.received_dim), dtype=complex)
    for u, imp in enumerate(impairments):
        H = build_channel_matrix(imp.h, cfg.G, cfg.L, cfg.N_r)
        ramp = cfo_phase_ramp(imp.phi, cfg.G, cfg.K)
        S = data[:, u, :] @ plan.psi[u].T          # (N_s, G)
        S_iq = imp.alpha * S + imp.beta * np.conj(S)
        Y += (S_iq * ramp) @ H.T
    return Y


def complex_noise(shape, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian, variance sigma2 per complex sample."""
    scale = np.sqrt(sigma2 / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_received(plan: AssignmentPlan, impairments, data: np.ndarray,
                        rng: np.random.Generator, sigma2: float) -> ReceivedFrame:
    """Full frame synthesis with additive noise of variance sigma2 per sample."""
    if sigma2 < 0:
        raise InputError(f"sigma2 must be nonnegative, got {sigma2}")
    Y = synthesize_clean(plan, impairments, data)
    if sigma2 > 0:
        Y = Y + complex_noise(Y.shape, sigma2, rng)
    truth = FrameTruth(impairments=tuple(impairments), data=np.asarray(data, dtype=complex),
                       sigma2=float(sigma2))
    return ReceivedFrame(y=Y, sigma2=float(sigma2), truth=truth)
