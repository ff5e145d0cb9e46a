"""GFDM waveform synthesis: prototype filter, modulation matrix, user assignment.

Conventions: subcarriers and subsymbols are numbered 1..K and 1..M at the API
surface (assignment sets, intersection sets); all internal array math is
zero-based.  A GFDM symbol spans N = M*K samples; a cyclic prefix of L_cp
samples extends it to G = N + L_cp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

_PROTOTYPES = ("rrc", "rect")


@dataclass(frozen=True)
class SystemConfig:
    """Dimensioning scalars of one link configuration.

    K: subcarriers per subsymbol, M: subsymbols per symbol, U: users,
    K_D: data subcarriers (K - K_D are reserved for DC/guards), L: channel
    taps, L_cp: cyclic-prefix samples, N_r: receive antennas, N_s: symbols
    per frame, rolloff: RRC roll-off, P_pil: pilots per user, delta: coarse
    CFO search step (normalized to subcarrier spacing).
    """

    K: int
    M: int
    U: int
    K_D: int
    L: int
    L_cp: int
    N_r: int
    N_s: int
    rolloff: float = 0.4
    P_pil: int = 1
    delta: float = 0.01
    prototype: str = "rrc"

    def __post_init__(self):
        counts = {
            "K": self.K, "M": self.M, "U": self.U, "K_D": self.K_D,
            "L": self.L, "N_r": self.N_r, "N_s": self.N_s, "P_pil": self.P_pil,
        }
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if int(self.L_cp) != self.L_cp or self.L_cp < 0:
            raise ConfigurationError(f"L_cp must be a nonnegative integer, got {self.L_cp!r}")
        if self.K_D > self.K:
            raise ConfigurationError(f"K_D={self.K_D} exceeds K={self.K}")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ConfigurationError(f"rolloff must lie in [0, 1], got {self.rolloff}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.prototype not in _PROTOTYPES:
            raise ConfigurationError(f"unknown prototype {self.prototype!r}, expected one of {_PROTOTYPES}")
        if self.L > self.G:
            raise ConfigurationError(f"channel length L={self.L} exceeds symbol length G={self.G}")

    @property
    def N(self) -> int:
        return self.M * self.K

    @property
    def G(self) -> int:
        return self.N + self.L_cp

    @property
    def n_kept(self) -> int:
        """Received samples kept per antenna after discarding the L-1 ISI samples."""
        return self.G - self.L + 1

    @property
    def received_dim(self) -> int:
        return self.N_r * self.n_kept


@dataclass(frozen=True)
class ModulationMatrix:
    """Pulse-shaping matrix A (N x N), its CP extension A_cp (G x N) and the prototype taps."""

    prototype: np.ndarray
    A: np.ndarray
    A_cp: np.ndarray


@dataclass(frozen=True)
class AssignmentPlan:
    """Per-user resource allocation and the derived selection matrices.

    sets[u][m] holds the ascending 1-based subcarrier indices of user u on
    subsymbol m+1.  gamma[u] is the N x N_u column-selection matrix, psi[u]
    the corresponding G x N_u columns of A_cp.  intersections[u][m] is the
    self-image intersection set used for null placement and subspace counting.
    """

    config: SystemConfig
    sets: tuple
    gamma: tuple
    psi: tuple
    intersections: tuple

    @property
    def n_per_user(self) -> int:
        return self.gamma[0].shape[1]

    def elements(self, u: int):
        """Ordered (subsymbol, subcarrier) pairs backing user u's data vector (1-based)."""
        return tuple((m + 1, k) for m in range(self.config.M) for k in self.sets[u][m])

    def intersection_count(self, u: int, m: int) -> int:
        return len(self.intersections[u][m])


def image_subcarrier(k: int, K: int) -> int:
    """1-based index of the conjugate-image subcarrier of k."""
    return (K - k + 1) % K + 1


def _rrc_impulse(t: np.ndarray, beta: float) -> np.ndarray:
    """Closed-form root-raised-cosine impulse response at times t (symbol periods)."""
    if beta == 0.0:
        return np.sinc(t)
    out = np.empty_like(t)
    at_zero = np.abs(t) < 1e-8
    at_edge = np.abs(np.abs(4.0 * beta * t) - 1.0) < 1e-8
    regular = ~(at_zero | at_edge)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1.0 - beta)) + 4.0 * beta * tr * np.cos(np.pi * tr * (1.0 + beta))
    den = np.pi * tr * (1.0 - (4.0 * beta * tr) ** 2)
    out[regular] = num / den
    out[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    out[at_edge] = (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )
    return out


def build_prototype_filter(K: int, M: int, rolloff: float) -> np.ndarray:
    """Unit-energy RRC prototype of length N = M*K, peak tap rotated to index 0.

    Samples the continuous RRC response at t = (n - N/2)/K (symbol period of
    K samples), with the removable singularities replaced by their limits.
    """
    if K < 1 or M < 1 or K * M < 2:
        raise ConfigurationError(f"degenerate prototype dimensions K={K}, M={M}")
    if not 0.0 <= rolloff <= 1.0:
        raise ConfigurationError(f"rolloff must lie in [0, 1], got {rolloff}")
    N = K * M
    t = (np.arange(N) - N / 2.0) / K
    g = _rrc_impulse(t, float(rolloff))
    g = np.roll(g, -int(np.argmax(np.abs(g))))
    return g / np.linalg.norm(g)


def rectangular_prototype(K: int, M: int) -> np.ndarray:
    """Unit-energy rectangular prototype; with M=1 it turns A into the DFT matrix."""
    N = K * M
    if N < 2:
        raise ConfigurationError(f"degenerate prototype dimensions K={K}, M={M}")
    return np.full(N, 1.0 / np.sqrt(N))


def prototype_for(config: SystemConfig) -> np.ndarray:
    if config.prototype == "rect":
        return rectangular_prototype(config.K, config.M)
    return build_prototype_filter(config.K, config.M, config.rolloff)


def build_modulation_matrix(g: np.ndarray, K: int, M: int, L_cp: int) -> ModulationMatrix:
    """Assemble A from circular shifts and subcarrier rotations of the prototype.

    Column (k, m) is g[(n - mK) mod N] * exp(-2j*pi*k*n/K) with zero-based k, m,
    ordered subcarrier-fastest: [g_11 .. g_K1, g_12 .. g_KM].  A_cp prepends the
    last L_cp rows of A.
    """
    g = np.asarray(g)
    N = K * M
    if g.ndim != 1 or g.shape[0] != N:
        raise ConfigurationError(f"prototype length {g.shape} does not match N = {N}")
    if L_cp < 0 or L_cp > N:
        raise ConfigurationError(f"L_cp must lie in [0, N], got {L_cp}")
    n = np.arange(N)
    A = np.empty((N, N), dtype=complex)
    for m in range(M):
        shifted = np.roll(g, m * K)
        carriers = np.exp(-2j * np.pi * np.outer(n, np.arange(K)) / K)
        A[:, m * K:(m + 1) * K] = shifted[:, None] * carriers
    A_cp = np.vstack([A[N - L_cp:N, :], A]) if L_cp > 0 else A.copy()
    return ModulationMatrix(prototype=g.copy(), A=A, A_cp=A_cp)


def build_modulation_for(config: SystemConfig) -> ModulationMatrix:
    return build_modulation_matrix(prototype_for(config), config.K, config.M, config.L_cp)


def _validate_sets(config: SystemConfig, sets) -> tuple:
    if len(sets) != config.U:
        raise ConfigurationError(f"expected {config.U} user set lists, got {len(sets)}")
    normalized = []
    for u, per_user in enumerate(sets):
        if len(per_user) != config.M:
            raise ConfigurationError(f"user {u + 1} has {len(per_user)} subsymbol sets, expected {config.M}")
        rows = []
        for m, ks in enumerate(per_user):
            ks = [int(k) for k in ks]
            if any(k < 1 or k > config.K for k in ks):
                raise ConfigurationError(f"user {u + 1} subsymbol {m + 1} has out-of-range subcarriers {ks}")
            if len(set(ks)) != len(ks):
                raise ConfigurationError(f"user {u + 1} subsymbol {m + 1} repeats a subcarrier")
            rows.append(tuple(sorted(ks)))
        normalized.append(tuple(rows))
    data_set = None
    for m in range(config.M):
        union: set = set()
        total = 0
        for u in range(config.U):
            ks = set(normalized[u][m])
            if union & ks:
                raise ConfigurationError(
                    f"subsymbol {m + 1}: overlapping subcarriers {sorted(union & ks)} between users"
                )
            union |= ks
            total += len(ks)
        if total != config.K_D or len(union) != config.K_D:
            raise ConfigurationError(
                f"subsymbol {m + 1} allocates {len(union)} subcarriers, expected K_D={config.K_D}"
            )
        if data_set is None:
            data_set = union
        elif union != data_set:
            raise ConfigurationError("data subcarrier set differs between subsymbols")
    n_user = [sum(len(normalized[u][m]) for m in range(config.M)) for u in range(config.U)]
    if len(set(n_user)) != 1:
        raise ConfigurationError(f"per-user allocation sizes differ: {n_user}")
    if n_user[0] < 1:
        raise ConfigurationError("each user needs at least one resource element")
    return tuple(normalized)


def build_assignment(config: SystemConfig, sets, mod: ModulationMatrix | None = None) -> AssignmentPlan:
    """Materialize selection matrices and image-intersection sets for the given allocation."""
    normalized = _validate_sets(config, sets)
    if mod is None:
        mod = build_modulation_for(config)
    N = config.N
    eye = np.eye(N)
    gammas, psis, inters = [], [], []
    for u in range(config.U):
        cols = [m * config.K + (k - 1) for m in range(config.M) for k in normalized[u][m]]
        gammas.append(eye[:, cols].copy())
        psis.append(mod.A_cp[:, cols].copy())
        per_m = []
        for m in range(config.M):
            own = set(normalized[u][m])
            images = {image_subcarrier(k, config.K) for k in own}
            per_m.append(tuple(sorted(own & images)))
        inters.append(tuple(per_m))
    return AssignmentPlan(
        config=config,
        sets=normalized,
        gamma=tuple(gammas),
        psi=tuple(psis),
        intersections=tuple(inters),
    )


def modulate_symbol(plan: AssignmentPlan, u: int, d: np.ndarray) -> np.ndarray:
    """CP-extended transmit vector Psi_u @ d for one user's data vector."""
    d = np.asarray(d)
    if d.ndim != 1 or d.shape[0] != plan.n_per_user:
        raise InputError(f"data vector length {d.shape} does not match N_u={plan.n_per_user}")
    return plan.psi[u] @ d
