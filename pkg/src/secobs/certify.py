"""Numerical verification of the design certificates along matrices and runs.

Builds the quadratic-form matrices that bound the Lyapunov function's flow
derivative, checks negativity of the inter-sample family on the estimation
error subspace, evaluates the Lyapunov function along simulated trajectories
(sandwich and jump conditions), and computes the explicit decay/gain
constants of the error bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .synthesis import BlockMatrices, CertificateStage1, CertificateStage2, GainDesign

__all__ = [
    "QFamily",
    "QbarReport",
    "LyapunovBounds",
    "assemble_q_family",
    "qbar_negative_on_grid",
    "flow_bound_gap",
    "flow_gap_structured",
    "lyapunov_value",
    "trajectory_lyapunov",
    "check_jump_condition",
    "check_sandwich",
    "iss_constants",
]


def _selectors(dim: int):
    H_z = np.zeros((dim, 6 * dim))
    H_e = np.zeros((dim, 6 * dim))
    H_z[:, :dim] = np.eye(dim)
    H_e[:, dim : 2 * dim] = np.eye(dim)
    return H_z, H_e


def _row_operator(bm: BlockMatrices, L: np.ndarray) -> np.ndarray:
    """M = [A, L C*, B, B, I, I]: maps the stacked quadratic-form vector to zdot."""
    dim = bm.dim
    I = np.eye(dim)
    return np.hstack([bm.bigA, L @ bm.C_star, bm.bigB, bm.bigB, I, I])


@dataclass(frozen=True)
class QFamily:
    """The seven flow-bound matrices and their inter-sample combinations.

    All matrices act on the stacked vector (ztilde, held error, two sector
    channels, disturbance channel, held packet-noise channel); R1, R2, R3
    combine them so that R1 + tau R2 + (T_bar - tau) R3 bounds the flow
    derivative of the inter-sample Lyapunov terms.
    """

    Q1: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    Q4: np.ndarray
    Q5: np.ndarray
    Q6: np.ndarray
    Q7: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    R3: np.ndarray
    T_bar: float
    nu: float  # stage-1 state decay available to absorb the inter-sample terms
    dim: int  # n_obs * n_c
    meta: dict

    def qbar(self, tau: float) -> np.ndarray:
        if not 0 <= tau <= self.T_bar:
            raise ValueError(f"tau = {tau} outside [0, {self.T_bar}]")
        return self.R1 + tau * self.R2 + (self.T_bar - tau) * self.R3

    def qbar_error_subspace(self, tau: float, with_nu: bool = True) -> np.ndarray:
        """Restriction to the (ztilde, held error) blocks, minus the nu decay.

        The raw family is positive semidefinite along the held-state
        direction, so negativity is only meaningful jointly with the stage-1
        rate; with_nu=False returns the raw restriction for inspection.
        """
        d2 = 2 * self.dim
        Q = self.qbar(tau)[:d2, :d2].copy()
        if with_nu:
            Q[: self.dim, : self.dim] -= self.nu * np.eye(self.dim)
        return Q


def _q1(bm: BlockMatrices, P1: np.ndarray, L: np.ndarray) -> np.ndarray:
    M = _row_operator(bm, L)
    H_z, _ = _selectors(bm.dim)
    return M.T @ P1 @ H_z + H_z.T @ P1 @ M


def _q2(bm: BlockMatrices, U: np.ndarray, K: np.ndarray, nu: float, mu_d: float, mu_w: float) -> np.ndarray:
    dim = bm.dim
    Ud = np.diag(U)
    UK = Ud @ K
    UKC = UK @ bm.C_star
    G = bm.C_star.T @ UK.T @ np.diag(np.diag(bm.E_bar) / U) @ UK @ bm.C_star
    Z = np.zeros((dim, dim))
    I = np.eye(dim)
    UEinv2 = 2.0 * np.diag(U / np.diag(bm.E_bar))
    return np.block(
        [
            [-nu * I, Z, -(Ud @ bm.bigC).T, -UKC.T, Z, Z],
            [Z, -G, Z, Z, Z, Z],
            [-(Ud @ bm.bigC), Z, UEinv2, Z, Z, Z],
            [-UKC, Z, Z, UEinv2, Z, Z],
            [Z, Z, Z, Z, mu_d * I, Z],
            [Z, Z, Z, Z, Z, mu_w * I],
        ]
    )


def assemble_q_family(
    bm: BlockMatrices,
    gains: GainDesign,
    c1: CertificateStage1,
    c2: CertificateStage2,
    T_bar: float | None = None,
) -> QFamily:
    """Build Q1..Q7 and R1..R3 from verified certificates."""
    T_bar = c2.T_bar if T_bar is None else T_bar
    dim = bm.dim
    L = gains.L_matrix()
    K = gains.K_matrix()
    H_z, H_e = _selectors(dim)
    D = H_z - H_e
    M = _row_operator(bm, L)

    Q1 = _q1(bm, c1.P1, L)
    Q2 = _q2(bm, c1.U, K, c1.nu, c1.mu_d, c1.mu_w)
    Q3 = M.T @ c2.P2 @ M
    N_stack = np.vstack(c2.N)  # 6*dim x dim
    Q4 = N_stack @ np.linalg.solve(c2.P2, N_stack.T)
    Q5 = N_stack @ D + D.T @ N_stack.T
    Q6 = -D.T @ c2.P3 @ D
    Q7 = D.T @ c2.P3 @ M + M.T @ c2.P3 @ D

    R1 = T_bar * Q3 + Q5 + Q6
    R2 = Q4
    R3 = Q7
    meta = {
        "R1": "T_bar * Q3 + Q5 + Q6",
        "R2": "Q4",
        "R3": "Q7",
        "Q3": "M^T P2 M",
        "Q4": "N P2^-1 N^T",
        "mu_e": c1.mu_e,
    }
    return QFamily(
        Q1=Q1, Q2=Q2, Q3=Q3, Q4=Q4, Q5=Q5, Q6=Q6, Q7=Q7,
        R1=R1, R2=R2, R3=R3, T_bar=T_bar, nu=c1.nu, dim=dim, meta=meta,
    )


@dataclass(frozen=True)
class QbarReport:
    """Grid scan of the inter-sample matrix family.

    Negativity is certified on the estimation-error subspace jointly with the
    stage-1 state decay: the two endpoints are pinned by the stage-2
    inequalities and the family is affine in tau, so the grid is a redundancy
    check. The raw (decay-free) restricted and full-space top eigenvalues are
    reported for the record; their positive parts are structural (the held
    state direction and the disturbance channels carry the Lyapunov weight P2
    positively).
    """

    taus: np.ndarray
    margins: np.ndarray  # joint error-subspace top eigenvalues per grid point
    worst_margin: float
    kappa: float  # -worst_margin when negative
    endpoint_margins: tuple[float, float]
    raw_restricted_top_eig: float
    full_top_eig: float
    all_negative: bool


def qbar_negative_on_grid(qf: QFamily, T_bar: float | None = None, n_grid: int = 101) -> QbarReport:
    if n_grid < 2:
        raise ValueError("n_grid must be >= 2")
    T_bar = qf.T_bar if T_bar is None else T_bar
    taus = np.linspace(0.0, T_bar, n_grid)
    margins = np.array([sla.eigvalsh(qf.qbar_error_subspace(t))[-1] for t in taus])
    worst = float(np.max(margins))
    raw_top = max(
        float(sla.eigvalsh(qf.qbar_error_subspace(0.0, with_nu=False))[-1]),
        float(sla.eigvalsh(qf.qbar_error_subspace(T_bar, with_nu=False))[-1]),
    )
    full_top = float(sla.eigvalsh(qf.qbar(0.0))[-1])
    return QbarReport(
        taus=taus,
        margins=margins,
        worst_margin=worst,
        kappa=-worst,
        endpoint_margins=(float(margins[0]), float(margins[-1])),
        raw_restricted_top_eig=raw_top,
        full_top_eig=full_top,
        all_negative=bool(worst < 0),
    )


def flow_bound_gap(
    bm: BlockMatrices,
    gains: GainDesign,
    P1: np.ndarray,
    U: np.ndarray,
    nu: float,
    mu_d: float,
    mu_w: float,
) -> float:
    """Top eigenvalue of Q1 - Q2 for a stage-1 certificate.

    Sits at zero for vanishing gains and grows quadratically with them; the
    solver keeps it within its configured cap.
    """
    Q1 = _q1(bm, P1, gains.L_matrix())
    Q2 = _q2(bm, U, gains.K_matrix(), nu, mu_d, mu_w)
    return float(sla.eigvalsh(Q1 - Q2)[-1])


def _structured_vector(bm: BlockMatrices, gains: GainDesign, eps: np.ndarray, rng) -> np.ndarray:
    """Random stacked vector with the sector channels tied to a diagonal E."""
    dim = bm.dim
    n_c = bm.n_c
    E = np.diag(eps)
    z = rng.standard_normal(dim)
    e = rng.standard_normal(dim)
    d = rng.standard_normal(n_c)
    w = rng.standard_normal(n_c)
    d_bar = np.tile(d, bm.n_obs)
    w_bar = np.concatenate([w[S.rows] for S in bm.subsets])
    K = gains.K_matrix()
    L = gains.L_matrix()
    x3 = E @ bm.bigC @ z
    x4 = E @ K @ bm.C_star @ e
    x5 = bm.bigB @ E @ d_bar
    x6 = (bm.bigB @ E @ K + L) @ w_bar
    return np.concatenate([z, e, x3, x4, x5, x6])


def flow_gap_structured(
    bm: BlockMatrices,
    gains: GainDesign,
    c1: CertificateStage1,
    n_draws: int = 50,
    seed: int = 0,
) -> np.ndarray:
    """Normalised quadratic form of Q1 - Q2 on sector-consistent random vectors.

    One draw per admissible diagonal E (entries uniform in [0, zeta_i]);
    returns the per-draw values x^T (Q1 - Q2) x / |x|^2.
    """
    rng = np.random.default_rng(seed)
    Q1 = _q1(bm, c1.P1, gains.L_matrix())
    Q2 = _q2(bm, c1.U, gains.K_matrix(), c1.nu, c1.mu_d, c1.mu_w)
    gap = Q1 - Q2
    zeta = np.tile(np.diag(bm.E_bar)[: bm.n_c], bm.n_obs)
    out = np.empty(n_draws)
    for i in range(n_draws):
        eps = rng.uniform(0.0, zeta)
        x = _structured_vector(bm, gains, eps, rng)
        out[i] = float(x @ gap @ x) / float(x @ x)
    return out


def _ztilde(traj) -> np.ndarray:
    """Stacked estimation errors, one row per grid point, (n, n_obs * n_c)."""
    return (traj.x[:, None, :] - traj.xhat_all).reshape(traj.t.shape[0], -1)


def _quad(P: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise quadratic form v P v^T."""
    return np.einsum("ij,jk,ik->i", V, P, V)


def trajectory_lyapunov(traj, c1: CertificateStage1, c2: CertificateStage2):
    """Lyapunov value along a run, with pre-jump values at each sample.

    Returns (U, U_pre, xi_sq, xi_sq_pre, z_sq, z_sq_pre): U holds post-sample
    values at sample nodes; the *_pre arrays are indexed by sample number
    (skipping t_0, which has no pre value). xi_sq is |(ztilde, held error)|^2
    and z_sq is |ztilde|^2 alone.
    """
    T_bar = c2.T_bar
    z = _ztilde(traj)
    zdot = traj.zdot.reshape(z.shape)
    zdot_pre = traj.zdot_pre.reshape(-1, z.shape[1])
    t = traj.t
    sample_idx = list(traj.sample_grid_idx)
    sample_number = {idx: k for k, idx in enumerate(sample_idx)}
    n = t.shape[0]

    g = _quad(c2.P2, zdot)
    g_pre = _quad(c2.P2, zdot_pre) if zdot_pre.size else np.empty(0)
    V1 = _quad(c1.P1, z)
    z_sq = np.einsum("ij,ij->i", z, z)
    U = np.empty(n)
    xi_sq = np.empty(n)
    U_pre, xi_pre, zsq_pre = [], [], []

    bounds = sample_idx + ([n - 1] if sample_idx[-1] != n - 1 else [])
    for a, b in zip(bounds[:-1], bounds[1:]):
        seg = slice(a, b + 1)
        ts = t[seg]
        gs = g[seg].copy()
        ends_at_sample = b in sample_number
        if ends_at_sample:
            # left limit of the error derivative at the arriving sample
            gs[-1] = g_pre[sample_number[b] - 1]
        e = z[a]
        dz = z[seg] - e
        dt = np.diff(ts)
        # running integrals of g and s*g from t_k by the trapezoid rule
        accA = np.concatenate(([0.0], np.cumsum(0.5 * dt * (gs[1:] + gs[:-1]))))
        sg = ts * gs
        accB = np.concatenate(([0.0], np.cumsum(0.5 * dt * (sg[1:] + sg[:-1]))))
        V2 = (T_bar - ts) * accA + accB
        V3 = (T_bar - (ts - t[a])) * _quad(c2.P3, dz)
        Useg = V1[seg] + V2 + V3
        xiseg = z_sq[seg] + float(e @ e)
        if ends_at_sample:
            U_pre.append(float(Useg[-1]))
            xi_pre.append(float(xiseg[-1]))
            zsq_pre.append(float(z_sq[b]))
        # segment start overwrites the previous end with the post-sample value
        U[seg] = Useg
        xi_sq[seg] = xiseg
    return U, np.array(U_pre), xi_sq, np.array(xi_pre), z_sq, np.array(zsq_pre)


def lyapunov_value(traj, c1: CertificateStage1, c2: CertificateStage2, t: float) -> float:
    """Lyapunov value at one grid instant (post-sample convention at samples)."""
    i = int(np.searchsorted(traj.t, t))
    if i >= traj.t.shape[0] or abs(traj.t[i] - t) > 1e-9:
        raise ValueError(f"t = {t} is not on the trajectory grid")
    U = trajectory_lyapunov(traj, c1, c2)[0]
    return float(U[i])


def check_jump_condition(traj, c1: CertificateStage1, c2: CertificateStage2, rtol: float = 1e-8):
    """Assert the Lyapunov value never increases across sample updates.

    The two inter-sample terms reset to zero at samples, so the post value is
    the quadratic term alone; violations beyond quadrature tolerance indicate
    a broken certificate or trajectory.
    """
    U, U_pre, *_ = trajectory_lyapunov(traj, c1, c2)
    post = U[traj.sample_grid_idx[1 : 1 + len(U_pre)]]
    scale = np.maximum(np.abs(U_pre), 1e-300)
    violations = np.where(post > U_pre + rtol * scale + 1e-30)[0]
    return {
        "n_samples_checked": len(U_pre),
        "n_violations": int(violations.size),
        "worst_excess": float(np.max((post - U_pre) / scale)) if len(U_pre) else 0.0,
        "ok": violations.size == 0,
    }


def check_sandwich(traj, c1: CertificateStage1, c2: CertificateStage2, rtol: float = 1e-8):
    """Check the two-sided quadratic envelope of the Lyapunov value along a run.

    Lower side, a_lower |ztilde|^2 <= U, is asserted densely: the quadratic
    term alone provides it and the other two are nonnegative. The upper side,
    U <= a_upper |xi|^2, is asserted at sample instants, where the integral
    term has just reset and it holds exactly; in between, the integral stores
    derivative history (attack energy held in the innovations) that no
    function of the current xi = (ztilde, held error) can dominate, so the
    dense ratio is reported but not asserted. The error-bound chain uses the
    upper side only at samples and the lower side only on ztilde.
    """
    U, U_pre, xi_sq, xi_pre, z_sq, zsq_pre = trajectory_lyapunov(traj, c1, c2)
    a_lo = float(sla.eigvalsh(c1.P1)[0])
    a_hi = max(
        float(sla.eigvalsh(c1.P1)[-1]),
        c2.T_bar**2 * float(sla.eigvalsh(c2.P2)[-1]),
        c2.T_bar * float(sla.eigvalsh(c2.P3)[-1]),
    )
    allU = np.concatenate([U, U_pre])
    allz = np.concatenate([z_sq, zsq_pre])
    lo_bad = allU < a_lo * allz * (1 - rtol) - 1e-30

    s_idx = np.asarray(traj.sample_grid_idx, dtype=int)
    hi_bad = U[s_idx] > a_hi * xi_sq[s_idx] * (1 + rtol) + 1e-30
    with np.errstate(divide="ignore", invalid="ignore"):
        dense_ratio = np.nanmax(np.where(xi_sq > 0, U / (a_hi * xi_sq), 0.0))
    return {
        "a_lower": a_lo,
        "a_upper": a_hi,
        "n_checked": int(allU.size + s_idx.size),
        "n_violations": int(np.sum(lo_bad) + np.sum(hi_bad)),
        "dense_upper_ratio": float(dense_ratio),
        "ok": bool(not lo_bad.any() and not hi_bad.any()),
    }


@dataclass(frozen=True)
class LyapunovBounds:
    """Explicit constants of the error bound, at both sector endpoints.

    The decay rate uses the zero-sector endpoint (conservative) and the gain
    the full-sector endpoint; mu_e is subtracted from kappa wherever the
    stage-1 slack eats into the inter-sample decay.
    """

    a_lower: float
    a_upper: float
    kappa: float
    kappa_eff: float
    Pi_at_zero: float
    Pi_at_full: float
    Theta_at_zero: float
    Theta_at_full: float
    n_obs: int

    def beta_z(self, r: float, t) -> np.ndarray:
        """Transient envelope on |ztilde| from |ztilde(0)| = r: twice the xi envelope."""
        t = np.asarray(t, dtype=float)
        return 4.0 * r * np.sqrt(self.a_upper / self.a_lower) * np.exp(
            -self.Pi_at_zero * t / (2.0 * self.a_upper)
        )

    def gamma_z(self, r: float) -> float:
        return 2.0 * self.n_obs * np.sqrt(self.Theta_at_full / self.a_lower) * r


def iss_constants(
    bm: BlockMatrices,
    gains: GainDesign,
    c1: CertificateStage1,
    c2: CertificateStage2,
    kappa: float,
) -> LyapunovBounds:
    """Decay and gain constants from verified certificates and kappa > 0.

    kappa is the joint decay of the inter-sample family and already consumes
    the stage-1 rate nu, so nu is not added again; the stage-1 held-error
    slack mu_e is subtracted. Both sector endpoints are reported and the
    callable envelopes use the conservative ones.
    """
    if kappa <= 0:
        raise ValueError(f"kappa = {kappa} is not positive: certificate failure")
    kappa_eff = kappa - c1.mu_e
    if kappa_eff <= 0:
        raise ValueError(
            f"stage-1 slack mu_e = {c1.mu_e} swallows the inter-sample decay kappa = {kappa}"
        )
    a_lo = float(sla.eigvalsh(c1.P1)[0])
    a_hi = max(
        float(sla.eigvalsh(c1.P1)[-1]),
        c2.T_bar**2 * float(sla.eigvalsh(c2.P2)[-1]),
        c2.T_bar * float(sla.eigvalsh(c2.P3)[-1]),
    )
    K = gains.K_matrix()
    L = gains.L_matrix()
    KC = K @ bm.C_star
    E_bar = bm.E_bar
    Ud = np.diag(c1.U)

    def norm2(Mat):
        return float(np.linalg.norm(Mat, 2))

    Pi_full = min(
        kappa_eff * (1.0 + norm2(E_bar @ bm.bigC) ** 2),
        kappa_eff * (1.0 + norm2(E_bar @ KC) ** 2),
    )
    Pi_zero = kappa_eff
    Theta_full = max(
        norm2(Ud @ E_bar) * norm2(KC) ** 2,
        c1.mu_d * norm2(bm.bigB @ E_bar) ** 2,
        c1.mu_w * norm2(bm.bigB @ E_bar @ K + L) ** 2,
    )
    Theta_zero = c1.mu_w * norm2(L) ** 2
    return LyapunovBounds(
        a_lower=a_lo,
        a_upper=a_hi,
        kappa=kappa,
        kappa_eff=kappa_eff,
        Pi_at_zero=Pi_zero,
        Pi_at_full=Pi_full,
        Theta_at_zero=Theta_zero,
        Theta_at_full=Theta_full,
        n_obs=bm.n_obs,
    )
