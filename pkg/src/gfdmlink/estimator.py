"""Semi-blind joint estimator of per-user CFOs, channels and IQ imbalances.

Pipeline per frame: eigendecompose the sample covariance, keep the noise
subspace, then per user scan a rank-drop cost over trial CFOs (coarse grid
plus golden-section/parabolic refinement), read the channel off the minimal
eigenvector at the located CFO, and finally fit the complex ambiguity-and-IQ
scalars of all users jointly from a handful of pilots in the first symbol.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (ConfigurationError, FeasibilityError, InputError,
                     NumericalError, SingularOperatorError)
from .impairments import ReceivedFrame, build_channel_matrix, cfo_phase_ramp
from .waveform import AssignmentPlan

_EIG_FLOOR = 1e-300
_PINV_RCOND = 1e-10
_FINE_TOL = 1e-7
_FINE_MAXITER = 50
_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))

# Scalar criteria the CFO search can minimize.  Both dip at the true CFO where
# R_P loses rank; the smallest eigenvalue tracks the rank drop directly and is
# markedly less biased by the other eigenvalues at finite SNR/snapshots, so it
# is the default.  The log-determinant form is kept as a selectable variant
# and as the cfo_cost diagnostic.
MIN_EIGENVALUE = "min-eigenvalue"
LOG_DET = "log-det"
SEARCH_CRITERIA = (MIN_EIGENVALUE, LOG_DET)

# Unit-modulus QPSK alphabet used for deterministic pilot values.
_PILOT_ALPHABET = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)


@dataclass
class SubspaceDecomposition:
    """Sample covariance plus the noise-subspace eigenvectors (columns of gammas)."""

    R_y: np.ndarray
    N_signal: int
    Q: int
    gammas: np.ndarray  # (received_dim, Q)

    @cached_property
    def noise_projector_conj(self) -> np.ndarray:
        """conj(Gamma Gamma^H); basis-invariant, shared by every user's CFO cost."""
        g = self.gammas
        return (g @ g.conj().T).conj()


@dataclass(frozen=True)
class EstimationResult:
    phi_hat: np.ndarray   # (U,)
    h0_hat: np.ndarray    # (U, N_r*L) unit-norm blind CIRs
    a_hat: np.ndarray     # (U,) ambiguity*alpha products
    b_hat: np.ndarray     # (U,) ambiguity*beta products
    hI_hat: np.ndarray    # (U, N_r*L)
    hQ_hat: np.ndarray    # (U, N_r*L)


@dataclass(frozen=True)
class PilotLayout:
    """Symbol-1 layout per user: forced nulls, pilot slots and their values.

    Positions index into the user's length-N_u data vector; pilots are the
    first non-null positions in (subsymbol, subcarrier) order, so their
    indices in the null-reduced vector are 0..P_pil-1.
    """

    null_positions: tuple
    pilot_positions: tuple
    pilot_values: tuple
    reduced_pilot_positions: tuple


def sample_covariance(frame: ReceivedFrame) -> np.ndarray:
    """Hermitian sample covariance (1/N_s) sum_i y_i y_i^H."""
    Y = np.asarray(frame.y)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise InputError(f"frame must hold at least one received symbol, got shape {Y.shape}")
    R = (Y.T @ Y.conj()) / Y.shape[0]
    return 0.5 * (R + R.conj().T)


def compute_subspace_dims(plan: AssignmentPlan, iq_present: bool = True) -> tuple[int, int]:
    """Signal/noise subspace dimensions (N_signal, Q) from the allocation counts."""
    cfg = plan.config
    mkd = cfg.M * cfg.K_D
    if iq_present:
        overlap = sum(plan.intersection_count(u, m)
                      for u in range(cfg.U) for m in range(cfg.M))
        n_signal = 2 * mkd - overlap
    else:
        n_signal = mkd
    q = cfg.received_dim - n_signal
    if q <= 0:
        raise FeasibilityError(
            f"N_r={cfg.N_r} too small: need N_r > {n_signal}/{cfg.n_kept} "
            f"= {n_signal / cfg.n_kept:.3f} receive antennas"
        )
    return n_signal, q


def noise_subspace(R_y: np.ndarray, Q: int) -> np.ndarray:
    """Orthonormal eigenvectors of the Q smallest eigenvalues, ascending order."""
    if Q < 1:
        raise InputError(f"Q must be >= 1, got {Q}")
    try:
        _, vecs = np.linalg.eigh(R_y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance eigendecomposition failed: {exc}") from exc
    return vecs[:, :Q]


def decompose_frame(frame: ReceivedFrame, plan: AssignmentPlan,
                    iq_present: bool = True) -> SubspaceDecomposition:
    n_signal, q = compute_subspace_dims(plan, iq_present)
    R = sample_covariance(frame)
    gammas = noise_subspace(R, q)
    return SubspaceDecomposition(R_y=R, N_signal=n_signal, Q=q, gammas=gammas)


class CfoCostEvaluator:
    """Determinant cost of one user over trial CFOs.

    Uses the identity sum_q P_q P_q^H = contraction of conj(Gamma Gamma^H)
    with windows of E Psi Psi^H E^H, which removes the explicit loop over the
    Q noise eigenvectors and lets whole CFO grids be evaluated in a few
    matrix products.
    """

    def __init__(self, decomposition: SubspaceDecomposition, plan: AssignmentPlan, u: int):
        cfg = plan.config
        self.G, self.K, self.L, self.N_r = cfg.G, cfg.K, cfg.L, cfg.N_r
        self.n_kept = cfg.n_kept
        C = decomposition.noise_projector_conj
        if C.shape[0] != cfg.received_dim:
            raise InputError(
                f"decomposition dimension {C.shape[0]} does not match config ({cfg.received_dim})"
            )
        C4 = C.reshape(self.n_kept, self.N_r, self.n_kept, self.N_r)
        # [(a,b), (r,s)] layout so each window contraction is one gemm.
        self._C_mat = np.ascontiguousarray(
            C4.transpose(1, 3, 0, 2).reshape(self.N_r * self.N_r, self.n_kept * self.n_kept)
        )
        psi = plan.psi[u]
        self._T = psi @ psi.conj().T  # (G, G)
        self.evaluations = 0

    def r_p_batch(self, phis: np.ndarray) -> np.ndarray:
        """Stack of R_P(phi) matrices, shape (len(phis), N_r*L, N_r*L)."""
        phis = np.atleast_1d(np.asarray(phis, dtype=float))
        B = phis.shape[0]
        ramps = np.exp(2j * np.pi * np.outer(phis, np.arange(self.G)) / self.K)
        S = ramps[:, :, None] * self._T[None, :, :] * ramps.conj()[:, None, :]
        n, w = self.N_r, self.n_kept
        R = np.empty((B, self.L, n, self.L, n), dtype=complex)
        for j in range(self.L):
            for jp in range(self.L):
                win = S[:, j:j + w, jp:jp + w].reshape(B, w * w)
                R[:, j, :, jp, :] = (win @ self._C_mat.T).reshape(B, n, n)
        self.evaluations += B
        return R.reshape(B, self.L * n, self.L * n)

    def r_p(self, phi: float) -> np.ndarray:
        return self.r_p_batch(np.array([phi]))[0]

    def eigenvalues_batch(self, phis: np.ndarray) -> np.ndarray:
        """Ascending eigenvalues of R_P(phi) for each trial CFO, shape (B, N_r*L)."""
        R = self.r_p_batch(phis)
        try:
            return np.linalg.eigvalsh(R)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"cost eigensolve failed: {exc}") from exc

    def cost_batch(self, phis: np.ndarray) -> np.ndarray:
        """Log-determinant cost samples (sum of floored log-eigenvalues)."""
        eigs = self.eigenvalues_batch(phis)
        return np.sum(np.log(np.maximum(eigs, _EIG_FLOOR)), axis=1)

    def cost(self, phi: float) -> float:
        return float(self.cost_batch(np.array([phi]))[0])

    def min_eigenvalue_batch(self, phis: np.ndarray) -> np.ndarray:
        """Smallest-eigenvalue cost samples."""
        return self.eigenvalues_batch(phis)[:, 0]

    def min_eigenvalue(self, phi: float) -> float:
        return float(self.min_eigenvalue_batch(np.array([phi]))[0])

    def criterion_batch(self, phis: np.ndarray, criterion: str) -> np.ndarray:
        if criterion == MIN_EIGENVALUE:
            return self.min_eigenvalue_batch(phis)
        if criterion == LOG_DET:
            return self.cost_batch(phis)
        raise ConfigurationError(
            f"unknown search criterion {criterion!r}; use {MIN_EIGENVALUE!r} or {LOG_DET!r}"
        )


def cfo_cost(phi_trial: float, u: int, decomposition: SubspaceDecomposition,
             plan: AssignmentPlan) -> float:
    """Log-determinant of R_P,u at one trial CFO (lower is better)."""
    return CfoCostEvaluator(decomposition, plan, u).cost(phi_trial)


def cfo_cost_curve(u: int, decomposition: SubspaceDecomposition, plan: AssignmentPlan,
                   phis: np.ndarray, criterion: str = LOG_DET, chunk: int = 2048) -> np.ndarray:
    """Vectorized cost samples for diagnostics and grid oracles."""
    ev = CfoCostEvaluator(decomposition, plan, u)
    phis = np.asarray(phis, dtype=float)
    out = np.empty(phis.shape[0])
    for start in range(0, phis.shape[0], chunk):
        out[start:start + chunk] = ev.criterion_batch(phis[start:start + chunk], criterion)
    return out


def _bounded_minimize(func, lo: float, hi: float,
                      xatol: float = _FINE_TOL, maxiter: int = _FINE_MAXITER) -> float:
    """Golden-section scalar minimizer with parabolic-interpolation acceleration.

    A parabolic step is taken only when the fitted vertex falls inside the
    current bracket and shortens the previous step; otherwise golden section.
    """
    a, b = float(lo), float(hi)
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = func(x)
    d = e = 0.0
    for _ in range(maxiter):
        mid = 0.5 * (a + b)
        tol1 = 1.48e-8 * abs(x) + xatol / 3.0
        tol2 = 2.0 * tol1
        if abs(x - mid) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            e_prev, e = e, d
            if abs(p) < abs(0.5 * q * e_prev) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol1 if x < mid else -tol1
                golden = False
        if golden:
            e = (b - x) if x < mid else (a - x)
            d = _GOLDEN * e
        u = x + (d if abs(d) >= tol1 else (tol1 if d > 0 else -tol1))
        fu = func(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x


def estimate_cfo(u: int, decomposition: SubspaceDecomposition, plan: AssignmentPlan,
                 delta: float | None = None, criterion: str = MIN_EIGENVALUE,
                 _evaluator: CfoCostEvaluator | None = None) -> float:
    """Coarse grid scan over [-0.5, 0.5] then fine search within +-delta/2."""
    if delta is None:
        delta = plan.config.delta
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta}")
    ev = _evaluator if _evaluator is not None else CfoCostEvaluator(decomposition, plan, u)
    # Both endpoints included so every CFO in [-0.5, 0.5) lands inside a fine bracket.
    n_steps = int(math.ceil(1.0 / delta - 1e-12))
    grid = -0.5 + delta * np.arange(n_steps + 1)
    costs = ev.criterion_batch(grid, criterion)
    center = float(grid[int(np.argmin(costs))])

    def scalar_cost(phi: float) -> float:
        return float(ev.criterion_batch(np.array([phi]), criterion)[0])

    return _bounded_minimize(scalar_cost, center - delta / 2.0, center + delta / 2.0)


def blind_channel(u: int, phi_hat: float, decomposition: SubspaceDecomposition,
                  plan: AssignmentPlan,
                  _evaluator: CfoCostEvaluator | None = None) -> np.ndarray:
    """Unit-norm conjugated minimal eigenvector of R_P at the estimated CFO."""
    ev = _evaluator if _evaluator is not None else CfoCostEvaluator(decomposition, plan, u)
    R = ev.r_p(phi_hat)
    try:
        _, vecs = np.linalg.eigh(R)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"blind channel eigensolve failed: {exc}") from exc
    h0 = np.conj(vecs[:, 0])
    return h0 / np.linalg.norm(h0)


def pilot_value(u: int, p: int) -> complex:
    return complex(_PILOT_ALPHABET[(u + p) % 4])


def plan_pilots(plan: AssignmentPlan, P_pil: int | None = None) -> PilotLayout:
    """Symbol-1 layout: nulls on every image-intersection element, then P_pil pilots per user."""
    cfg = plan.config
    if P_pil is None:
        P_pil = cfg.P_pil
    if P_pil < 1:
        raise ConfigurationError(f"P_pil must be >= 1, got {P_pil}")
    nulls, pilots, values, reduced = [], [], [], []
    for u in range(cfg.U):
        elems = plan.elements(u)
        null_pos = tuple(
            idx for idx, (m, k) in enumerate(elems)
            if k in plan.intersections[u][m - 1]
        )
        null_set = set(null_pos)
        remaining = [idx for idx in range(len(elems)) if idx not in null_set]
        if len(remaining) < P_pil:
            raise ConfigurationError(
                f"user {u + 1} has only {len(remaining)} non-null resource elements "
                f"in symbol 1, cannot place {P_pil} pilots"
            )
        pil = tuple(remaining[:P_pil])
        nulls.append(null_pos)
        pilots.append(pil)
        values.append(np.array([pilot_value(u, p) for p in range(P_pil)]))
        reduced.append(tuple(remaining.index(i) for i in pil))
    return PilotLayout(
        null_positions=tuple(nulls),
        pilot_positions=tuple(pilots),
        pilot_values=tuple(values),
        reduced_pilot_positions=tuple(reduced),
    )


def apply_pilot_layout(data_symbol: np.ndarray, layout: PilotLayout) -> np.ndarray:
    """Return a copy of the (U, N_u) first symbol with nulls and pilot values patched in."""
    out = np.array(data_symbol, dtype=complex, copy=True)
    for u in range(out.shape[0]):
        out[u, list(layout.null_positions[u])] = 0.0
        out[u, list(layout.pilot_positions[u])] = layout.pilot_values[u]
    return out


def estimated_mixing(phi_hat: float, h0_hat: np.ndarray, plan: AssignmentPlan, u: int):
    """(G_I, G_Q) rebuilt from the blind estimates of user u."""
    cfg = plan.config
    H = build_channel_matrix(h0_hat, cfg.G, cfg.L, cfg.N_r)
    ramp = cfo_phase_ramp(phi_hat, cfg.G, cfg.K)
    psi = plan.psi[u]
    return H @ (ramp[:, None] * psi), H @ (ramp[:, None] * np.conj(psi))


def _ambiguity_fit(y1: np.ndarray, phi_hats, h0_hats, plan: AssignmentPlan,
                   layout: PilotLayout):
    """Zero-forcing fit; returns (a_hat, b_hat, relative residual)."""
    cfg = plan.config
    y1 = np.asarray(y1)
    if y1.shape != (cfg.received_dim,):
        raise InputError(f"y1 shape {y1.shape} does not match received dimension {cfg.received_dim}")
    blocks = []
    kept_sizes = []
    for u in range(cfg.U):
        g_i, g_q = estimated_mixing(phi_hats[u], h0_hats[u], plan, u)
        null_set = set(layout.null_positions[u])
        keep = [i for i in range(plan.n_per_user) if i not in null_set]
        kept_sizes.append(len(keep))
        blocks.append(g_i[:, keep])
        blocks.append(g_q[:, keep])
    G_bar = np.hstack(blocks)
    try:
        u_svd, s, vh = np.linalg.svd(G_bar, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of the reduced mixing matrix failed: {exc}") from exc
    rank = int(np.sum(s > s[0] * _PINV_RCOND)) if s.size else 0
    if rank < G_bar.shape[1]:
        raise SingularOperatorError(
            f"reduced mixing matrix is rank deficient ({rank} < {G_bar.shape[1]}); "
            "the pilot/null plan does not separate source and image columns"
        )
    r = vh.conj().T @ ((u_svd.conj().T @ y1) / s)
    residual = float(np.linalg.norm(y1 - G_bar @ r) / max(np.linalg.norm(y1), 1e-300))
    a_hat = np.empty(cfg.U, dtype=complex)
    b_hat = np.empty(cfg.U, dtype=complex)
    offset = 0
    for u in range(cfg.U):
        n_keep = kept_sizes[u]
        r_i = r[offset:offset + n_keep]
        r_q = r[offset + n_keep:offset + 2 * n_keep]
        offset += 2 * n_keep
        vals = layout.pilot_values[u]
        red = list(layout.reduced_pilot_positions[u])
        a_hat[u] = np.mean(r_i[red] / vals)
        b_hat[u] = np.mean(r_q[red] / np.conj(vals))
    return a_hat, b_hat, residual


def estimate_ambiguity_iq(y1: np.ndarray, phi_hats, h0_hats, plan: AssignmentPlan,
                          layout: PilotLayout) -> tuple[np.ndarray, np.ndarray]:
    """Joint zero-forcing fit of the per-user (ambiguity*alpha, ambiguity*beta) scalars.

    Stacks the null-reduced estimated mixing matrices of all users, applies the
    pseudoinverse to the first received symbol, and averages the per-pilot
    ratios r(p)/d(p) over the P_pil pilots.
    """
    a_hat, b_hat, _ = _ambiguity_fit(y1, phi_hats, h0_hats, plan, layout)
    return a_hat, b_hat


def assemble_equivalent_channels(h0_hat: np.ndarray, a_hat: complex,
                                 b_hat: complex) -> tuple[np.ndarray, np.ndarray]:
    """Equivalent CIR estimates (h0*a, h0*b)."""
    h0_hat = np.asarray(h0_hat)
    return h0_hat * a_hat, h0_hat * b_hat


def _coarse_candidate_centers(ev: CfoCostEvaluator, delta: float, criterion: str,
                              count: int = 3) -> list:
    """Grid points at the lowest local minima of the coarse cost, best first."""
    n_steps = int(math.ceil(1.0 / delta - 1e-12))
    grid = -0.5 + delta * np.arange(n_steps + 1)
    vals = ev.criterion_batch(grid, criterion)
    minima = [i for i in range(len(grid))
              if (i == 0 or vals[i] <= vals[i - 1])
              and (i == len(grid) - 1 or vals[i] <= vals[i + 1])]
    minima.sort(key=lambda i: vals[i])
    return [float(grid[i]) for i in minima[:count]]


def estimate_frame(frame: ReceivedFrame, plan: AssignmentPlan, layout: PilotLayout,
                   delta: float | None = None, iq_present: bool = True,
                   criterion: str = MIN_EIGENVALUE) -> EstimationResult:
    """Run the full semi-blind pipeline on one frame.

    Per-user searches run independently.  When an assignment maps one user's
    image subcarriers onto another user's subcarriers, each user's cost also
    dips at the other user's CFO, and at high SNR the searches can collapse
    onto one dip.  Such collisions (and a rank-deficient joint fit) trigger a
    resolution pass: the lowest coarse dips of every user are refined and the
    combination is chosen that keeps the fit full rank, keeps every user's
    image branch weaker than its source branch, and minimizes the residual of
    the zero-forcing fit on the pilot symbol.
    """
    cfg = plan.config
    if delta is None:
        delta = cfg.delta
    decomposition = decompose_frame(frame, plan, iq_present)
    evaluators = [CfoCostEvaluator(decomposition, plan, u) for u in range(cfg.U)]
    centers = [_coarse_candidate_centers(evaluators[u], delta, criterion)
               for u in range(cfg.U)]

    refined: dict = {}

    def refine(u: int, center: float):
        if (u, center) not in refined:
            ev = evaluators[u]

            def scalar_cost(phi: float) -> float:
                return float(ev.criterion_batch(np.array([phi]), criterion)[0])

            phi = _bounded_minimize(scalar_cost, center - delta / 2.0, center + delta / 2.0)
            h0 = blind_channel(u, phi, decomposition, plan, _evaluator=ev)
            refined[(u, center)] = (phi, h0)
        return refined[(u, center)]

    primary = [refine(u, centers[u][0]) for u in range(cfg.U)]
    phi_hats = np.array([p for p, _ in primary])
    h0_hats = np.stack([h for _, h in primary])

    collision_tol = delta / 2.0
    collided = any(abs(phi_hats[u] - phi_hats[v]) < collision_tol
                   for u in range(cfg.U) for v in range(u + 1, cfg.U))
    if not collided:
        try:
            a_hat, b_hat, _ = _ambiguity_fit(frame.y[0], phi_hats, h0_hats, plan, layout)
            # a fully swapped assignment also fits with full rank and zero
            # residual; it betrays itself by dominant image branches
            if cfg.U == 1 or not np.any(np.abs(b_hat) >= np.abs(a_hat)):
                return EstimationResult(phi_hat=phi_hats, h0_hat=h0_hats,
                                        a_hat=a_hat, b_hat=b_hat,
                                        hI_hat=h0_hats * a_hat[:, None],
                                        hQ_hat=h0_hats * b_hat[:, None])
        except SingularOperatorError:
            pass  # fall through to the resolution pass

    best = None
    for combo in itertools.product(*centers):
        cand = [refine(u, combo[u]) for u in range(cfg.U)]
        phis = np.array([p for p, _ in cand])
        h0s = np.stack([h for _, h in cand])
        try:
            a_hat, b_hat, residual = _ambiguity_fit(frame.y[0], phis, h0s, plan, layout)
        except SingularOperatorError:
            continue
        # image branches must stay weaker than source branches (the physical
        # asymmetry the subspace cannot see); then the best data fit wins
        violations = int(np.sum(np.abs(b_hat) >= np.abs(a_hat)))
        key = (violations, residual)
        if best is None or key < best[0]:
            best = (key, phis, h0s, a_hat, b_hat)
    if best is None:
        raise SingularOperatorError(
            "no CFO candidate combination yields a full-rank joint fit; "
            "the assignment does not separate the users"
        )
    _, phis, h0s, a_hat, b_hat = best
    return EstimationResult(phi_hat=phis, h0_hat=h0s, a_hat=a_hat, b_hat=b_hat,
                            hI_hat=h0s * a_hat[:, None], hQ_hat=h0s * b_hat[:, None])
