"""Assembly and solution of the observer-design matrix inequalities.

Gains are designed in two stages. Stage 1 solves the dissipation inequality
for the whole bank, linearised exactly through the substitutions G = P1 @ L
and M = U @ K with P1 block-diagonal per observer; gains are recovered by
inversion. Stage 2, with gains fixed, certifies the sampled-data (held
innovation) part on the estimation-error subspace for a given largest
inter-sample time T_bar.

Two structural repairs relative to the printed inequalities are applied and
documented in the project notes: the last diagonal block of the stage-1
inequality must be negative for its Schur complement to reproduce the flow
bound, and the zero (2,2) block is replaced by -mu_e*I (a small slack on the
held-error channel) since a zero diagonal block forces both gain products to
vanish identically. mu_e is reported with the certificate and subtracted
from the stage-2 decay rate wherever the two are combined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .bank import SensorSubset
from .lure import LureSystem

__all__ = [
    "AssemblyError",
    "BlockMatrices",
    "GainDesign",
    "CertificateStage1",
    "CertificateStage2",
    "SynthesisOptions",
    "InfeasibleError",
    "build_block_matrices",
    "assemble_lmi7",
    "assemble_lmi8",
    "assemble_lmi9",
    "solve_stage1",
    "solve_stage2",
    "verify_certificates",
    "t_bar_bisect",
]


class AssemblyError(RuntimeError):
    """An assembled inequality failed its internal symmetry check."""


class InfeasibleError(RuntimeError):
    """A synthesis stage has no certificate; carries the solver diagnosis."""

    def __init__(self, stage: str, status: str, detail: str = ""):
        self.stage = stage
        self.status = status
        super().__init__(f"{stage} infeasible (solver status: {status}){': ' + detail if detail else ''}")


@dataclass(frozen=True)
class BlockMatrices:
    """Bank-level lifts of the plant matrices for a fixed subset ordering."""

    bigA: np.ndarray
    bigB: np.ndarray
    bigC: np.ndarray
    E_bar: np.ndarray  # diagonal: replicated sector bounds
    C_star: np.ndarray  # stacked row restrictions, sum(|S|) x (n_obs * n_c)
    subsets: tuple[SensorSubset, ...]
    n_c: int

    @property
    def n_obs(self) -> int:
        return len(self.subsets)

    @property
    def dim(self) -> int:
        return self.n_obs * self.n_c

    @property
    def subset_sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.subsets)


def build_block_matrices(sys: LureSystem, subsets) -> BlockMatrices:
    """Kronecker lifts I (x) A etc. and the block-diagonal output restriction."""
    subsets = tuple(subsets)
    n_c = sys.n_states
    for s in subsets:
        if np.max(s.rows) >= n_c:
            raise ValueError(f"subset {s.indices} inconsistent with {n_c} sensors")
    n_obs = len(subsets)
    eye = np.eye(n_obs)
    C_star = sla.block_diag(*[sys.C[s.rows, :] for s in subsets])
    return BlockMatrices(
        bigA=np.kron(eye, sys.A),
        bigB=np.kron(eye, sys.B),
        bigC=np.kron(eye, sys.C),
        E_bar=np.kron(eye, np.diag(sys.zeta)),
        C_star=C_star,
        subsets=subsets,
        n_c=n_c,
    )


@dataclass(frozen=True)
class GainDesign:
    """Per-subset innovation gains, block-assembled on demand."""

    K: tuple[np.ndarray, ...]
    L: tuple[np.ndarray, ...]
    subsets: tuple[SensorSubset, ...]

    def __post_init__(self):
        for name, blocks in (("K", self.K), ("L", self.L)):
            for g, s in zip(blocks, self.subsets):
                if g.shape[1] != len(s):
                    raise ValueError(f"{name} block has {g.shape[1]} columns for subset size {len(s)}")

    def K_matrix(self) -> np.ndarray:
        return sla.block_diag(*self.K)

    def L_matrix(self) -> np.ndarray:
        return sla.block_diag(*self.L)

    def sparsity(self) -> np.ndarray:
        return sla.block_diag(*[np.ones_like(k) for k in self.K]) != 0


@dataclass(frozen=True)
class CertificateStage1:
    """Flow-inequality certificate: P1 block-diagonal, U positive diagonal, scalars."""

    P1: np.ndarray
    U: np.ndarray  # diagonal entries
    nu: float
    mu_d: float
    mu_w: float
    mu_e: float
    margin: float  # largest eigenvalue of the assembled inequality (negative)
    scale: float = 1.0  # post-solve normalisation applied to the certificate


@dataclass(frozen=True)
class CertificateStage2:
    """Sampled-data certificate for fixed gains and inter-sample bound T_bar.

    nu_shift records the stage-1 state dissipation rate consumed by this
    certificate: the inter-sample family is negative only jointly with it.
    """

    P2: np.ndarray
    P3: np.ndarray
    N: tuple[np.ndarray, ...]  # N1..N6; the last four play no role on the error subspace
    T_bar: float
    margin8: float  # error-subspace margins (negative)
    margin9: float
    nu_shift: float = 0.0


def _sym_block(blocks: dict, sizes: list[int], bmat):
    """Symmetric block matrix from lower-triangle entries; upper = transposes."""
    nb = len(sizes)
    grid = []
    for i in range(nb):
        row = []
        for j in range(nb):
            if i >= j:
                b = blocks.get((i, j))
                row.append(b if b is not None else np.zeros((sizes[i], sizes[j])))
            else:
                b = blocks.get((j, i))
                row.append(b.T if b is not None else np.zeros((sizes[i], sizes[j])))
        grid.append(row)
    return bmat(grid)


def _check_symmetric(M: np.ndarray, what: str) -> np.ndarray:
    skew = np.linalg.norm(M - M.T)
    if skew > 1e-12 * max(1.0, np.linalg.norm(M)):
        raise AssemblyError(f"{what} assembly is not symmetric (|M - M^T| = {skew:.3e})")
    return M


def assemble_lmi7(
    bm: BlockMatrices,
    P1: np.ndarray,
    U: np.ndarray,
    G_L: np.ndarray,
    M_K: np.ndarray,
    nu: float,
    mu_d: float,
    mu_w: float,
    mu_e: float = 0.0,
) -> np.ndarray:
    """Seven-block flow inequality with G_L standing for P1 @ L and M_K for U @ K.

    U is the diagonal vector. mu_e = 0 reproduces the bare layout with a zero
    (2,2) block; the solver passes the slack it certified with.
    """
    n = bm.dim
    U = np.asarray(U, dtype=float).reshape(n)
    e_diag = np.diag(bm.E_bar)
    UEinv = np.diag(U / e_diag)
    I = np.eye(n)
    blocks = {
        (0, 0): P1 @ bm.bigA + bm.bigA.T @ P1 + nu * I,
        (1, 0): bm.C_star.T @ G_L.T,
        (1, 1): -mu_e * I,
        (2, 0): bm.bigB.T @ P1 + np.diag(U) @ bm.bigC,
        (2, 2): -2.0 * UEinv,
        (3, 0): bm.bigB.T @ P1 + M_K @ bm.C_star,
        (3, 3): -2.0 * UEinv,
        (4, 0): P1,
        (4, 4): -mu_d * I,
        (5, 0): P1,
        (5, 5): -mu_w * I,
        (6, 1): -(M_K @ bm.C_star),
        (6, 6): -UEinv,
    }
    M = _sym_block(blocks, [n] * 7, np.block)
    return _check_symmetric(M, "stage-1 inequality")


def assemble_lmi8(
    bm: BlockMatrices,
    P2: np.ndarray,
    P3: np.ndarray,
    N: tuple[np.ndarray, ...],
    G_L2: np.ndarray,
    T_bar: float,
) -> np.ndarray:
    """Eight-block sampled-data inequality; G_L2 stands for P2 @ L.

    Row seven carries P2 [A, L C*, B, B, I, I]; row eight the stacked slack
    multipliers N_j. Both are eliminated against -P2/T_bar diagonal blocks.
    """
    if T_bar <= 0:
        raise ValueError("T_bar must be positive")
    n = bm.dim
    N1, N2, N3, N4, N5, N6 = N
    blocks = {
        (0, 0): -P3 + N1 + N1.T,
        (1, 0): P3 + N2 - N1.T,
        (1, 1): -P3 - N2 - N2.T,
        (2, 0): N3,
        (2, 1): -N3,
        (3, 0): N4,
        (3, 1): -N4,
        (4, 0): N5,
        (4, 1): -N5,
        (5, 0): N6,
        (5, 1): -N6,
        (6, 6): -P2 / T_bar,
        (7, 7): -P2 / T_bar,
    }
    row7 = {
        0: bm.bigA.T @ P2,
        1: bm.C_star.T @ G_L2.T,
        2: bm.bigB.T @ P2,
        3: bm.bigB.T @ P2,
        4: P2.copy(),
        5: P2.copy(),
    }
    for j, B in row7.items():
        blocks[(6, j)] = B.T  # row 7 holds P2 M_j; the printed table lists the transposes
    for j, Nj in enumerate(N):
        blocks[(7, j)] = Nj.T
    M = _sym_block(blocks, [n] * 8, np.block)
    return _check_symmetric(M, "stage-2 inequality (held-difference form)")


def assemble_lmi9(
    bm: BlockMatrices,
    P2: np.ndarray,
    P3: np.ndarray,
    N: tuple[np.ndarray, ...],
    L: np.ndarray,
    T_bar: float,
) -> np.ndarray:
    """Seven-block sampled-data inequality with the alpha corner terms.

    The (2,2) corner follows the defined alpha_22 formula; the P appearing in
    alpha_21 is read as P3.
    """
    if T_bar <= 0:
        raise ValueError("T_bar must be positive")
    n = bm.dim
    N1, N2, N3, N4, N5, N6 = N
    LC = L @ bm.C_star
    W = P3 @ LC
    BtP3 = bm.bigB.T @ P3
    a11 = T_bar * (P3 @ bm.bigA + bm.bigA.T @ P3) - P3 + N1 + N1.T
    a21 = T_bar * W.T - T_bar * P3 @ bm.bigA + P3 + N2 - N1.T
    a22 = -T_bar * (W + W.T) - P3 - N2 - N2.T
    blocks = {
        (0, 0): a11,
        (1, 0): a21,
        (1, 1): a22,
        (2, 0): T_bar * BtP3 + N3,
        (2, 1): -T_bar * BtP3 - N3,
        (3, 0): T_bar * BtP3 + N4,
        (3, 1): -T_bar * BtP3 - N4,
        (4, 0): T_bar * P3 + N5,
        (4, 1): -T_bar * P3 - N5,
        (5, 0): T_bar * P3 + N6,
        (5, 1): -T_bar * P3 - N6,
        (6, 0): P2 @ bm.bigA,
        (6, 1): P2 @ LC,
        (6, 2): P2 @ bm.bigB,
        (6, 3): P2 @ bm.bigB,
        (6, 4): P2.copy(),
        (6, 5): P2.copy(),
        (6, 6): -P2 / T_bar,
    }
    M = _sym_block(blocks, [n] * 7, np.block)
    return _check_symmetric(M, "stage-2 inequality (alpha form)")


@dataclass(frozen=True)
class SynthesisOptions:
    """Tunables of the two-stage synthesis; defaults match the shipped scenarios."""

    eps_feas: float = 1e-6  # strict-inequality margin demanded of certificates
    margin_request: float = 1e-2  # working margin before normalisation
    gain_headroom: float = 0.5  # mu_e = margin_request * (1 + gain_headroom)
    nu_floor: float = 1.0  # working lower bound on the state decay rate
    gain_target: float = 2e-3  # held-feedback rate: L C_S is pulled toward -gain_target * proj
    k_ridge: float = 0.1  # weight discouraging large K blocks
    u_bounds: tuple[float, float] = (1e-3, 1e3)
    p_cap: float = 100.0  # normalisation cap on stage-2 Lyapunov blocks
    gap_cap: float = 1e-8  # allowed positive excursion of the flow-bound gap
    solver: str = "CLARABEL"


def _solve_problem(prob, opts: SynthesisOptions, stage: str):
    import cvxpy as cp

    try:
        prob.solve(solver=getattr(cp, opts.solver))
    except cp.error.SolverError as exc:
        prob.solve(solver=cp.SCS)
        if prob.status in ("infeasible", "unbounded", None):
            raise InfeasibleError(stage, str(prob.status), str(exc))
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise InfeasibleError(stage, str(prob.status))


def solve_stage1(bm: BlockMatrices, opts: SynthesisOptions | None = None):
    """Design gains and the flow certificate by one joint semidefinite program.

    The inequality decouples per observer (every lifted matrix is
    block-diagonal), so it is imposed as one small cone per observer with the
    scalars nu, mu_d, mu_w shared. The objective pulls the output injection
    toward the rate gain_target and K toward zero; the certificate is then
    rescaled so the verified margin clears eps_feas while the flow-bound gap
    stays within gap_cap. If the two tolerances cannot be met jointly the
    gain target is halved and the solve repeated.
    """
    opts = opts or SynthesisOptions()
    last_exc = None
    for attempt in range(5):
        shrink = 0.5**attempt
        try:
            return _solve_stage1_once(bm, opts, opts.gain_target * shrink)
        except InfeasibleError as exc:
            if exc.status != "normalisation_window_empty":
                raise
            last_exc = exc
    raise last_exc


def _solve_stage1_once(bm: BlockMatrices, opts: SynthesisOptions, gain_target: float):
    import cvxpy as cp
    n_c = bm.n_c
    A = bm.bigA[:n_c, :n_c]
    B = bm.bigB[:n_c, :n_c]
    C = bm.bigC[:n_c, :n_c]
    zeta = np.diag(bm.E_bar)[:n_c]
    m_req = opts.margin_request
    mu_e = m_req * (1.0 + opts.gain_headroom)

    nu = cp.Variable(nonneg=True)
    mu_d = cp.Variable(nonneg=True)
    mu_w = cp.Variable(nonneg=True)
    P1_blocks, u_blocks, G_blocks, M_blocks = [], [], [], []
    # nu must stay well above the margin scale: stage 2 can only certify the
    # held-innovation terms against this state decay budget.
    constraints = [nu >= opts.nu_floor, mu_d >= 1e-6, mu_w >= 1e-6]
    obj_terms = [
        1e-4 * cp.square(nu - opts.nu_floor),
        1e-4 * cp.square(mu_d - 1.0),
        1e-4 * cp.square(mu_w - 1.0),
    ]

    I = np.eye(n_c)
    for S in bm.subsets:
        ns = len(S)
        C_S = C[S.rows, :]
        P1 = cp.Variable((n_c, n_c), symmetric=True)
        u = cp.Variable(n_c)
        G = cp.Variable((n_c, ns))
        M = cp.Variable((n_c, ns))
        P1_blocks.append(P1)
        u_blocks.append(u)
        G_blocks.append(G)
        M_blocks.append(M)

        Ue_inv = cp.diag(u / zeta)
        rows = [
            [P1 @ A + A.T @ P1 + nu * I] + [None] * 6,
            [C_S.T @ G.T, -mu_e * I] + [None] * 5,
            [B.T @ P1 + cp.diag(u) @ C, np.zeros((n_c, n_c)), -2 * Ue_inv] + [None] * 4,
            [B.T @ P1 + M @ C_S, np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), -2 * Ue_inv] + [None] * 3,
            [P1, np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), -mu_d * I, None, None],
            [P1, np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), -mu_w * I, None],
            [np.zeros((n_c, n_c)), -(M @ C_S), np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), np.zeros((n_c, n_c)), -Ue_inv],
        ]
        grid = []
        for i in range(7):
            grid.append([rows[i][j] if j <= i else rows[j][i].T for j in range(7)])
        lmi = cp.bmat(grid)
        constraints += [
            lmi << -m_req * np.eye(7 * n_c),
            P1 >> I,
            P1 << 1e4 * I,
            u >= opts.u_bounds[0],
            u <= opts.u_bounds[1],
        ]
        # Normalising by |C_S|^2 makes the coupling into the flow-bound gap
        # (and the rate of the held output injection) grid-independent.
        c_scale = max(np.linalg.norm(C_S, 2) ** 2, 1e-30)
        G_target = -gain_target * C_S.T / c_scale
        obj_terms.append(cp.sum_squares(G - G_target))
        obj_terms.append(opts.k_ridge * cp.sum_squares(M))
        obj_terms.append(1e-6 * cp.sum_squares(P1 - I))
        obj_terms.append(1e-6 * cp.sum_squares(u - 1.0))

    prob = cp.Problem(cp.Minimize(cp.sum(obj_terms)), constraints)
    _solve_problem(prob, opts, "stage 1")

    P1_full = sla.block_diag(*[0.5 * (P.value + P.value.T) for P in P1_blocks])
    U_full = np.concatenate([u.value for u in u_blocks])
    G_full = sla.block_diag(*[G.value for G in G_blocks])
    M_full = sla.block_diag(*[M.value for M in M_blocks])
    L_blocks = [np.linalg.solve(0.5 * (P.value + P.value.T), G.value) for P, G in zip(P1_blocks, G_blocks)]
    K_blocks = [M.value / u.value[:, None] for M, u in zip(M_blocks, u_blocks)]
    gains = GainDesign(K=tuple(K_blocks), L=tuple(L_blocks), subsets=bm.subsets)

    nu_v, mu_d_v, mu_w_v = float(nu.value), float(mu_d.value), float(mu_w.value)
    M7 = assemble_lmi7(bm, P1_full, U_full, G_full, M_full, nu_v, mu_d_v, mu_w_v, mu_e)
    margin = float(sla.eigvalsh(M7)[-1])
    if margin >= 0:
        raise InfeasibleError("stage 1", "margin_lost", f"post-solve margin {margin:.3e}")

    from .certify import flow_bound_gap

    gap = flow_bound_gap(bm, gains, P1_full, U_full, nu_v, mu_d_v, mu_w_v)
    # Normalise: clear eps_feas with slack while keeping the gap within gap_cap.
    s = 1.3 * opts.eps_feas / (-margin)
    if gap > 0 and s * gap > 0.85 * opts.gap_cap:
        s = 0.85 * opts.gap_cap / gap
    if s * (-margin) < opts.eps_feas:
        raise InfeasibleError(
            "stage 1",
            "normalisation_window_empty",
            f"margin {margin:.3e}, flow-bound gap {gap:.3e}: cannot satisfy both tolerances",
        )
    cert = CertificateStage1(
        P1=s * P1_full,
        U=s * U_full,
        nu=s * nu_v,
        mu_d=s * mu_d_v,
        mu_w=s * mu_w_v,
        mu_e=s * mu_e,
        margin=s * margin,
        scale=s,
    )
    return cert, gains


def _stage2_blocks(A, LC, P2, P3, N1, N2, T_bar, n_c, form: str, nu: float = 0.0):
    """Error-subspace stage-2 inequality for one observer (cvxpy or numpy).

    nu shifts the (1,1) block by -nu*I: the inter-sample terms dissipate only
    jointly with the stage-1 state decay, never on their own (the held-state
    direction annihilates every negative term while the T_bar M^T P2 M part
    stays positive semidefinite).
    """
    import cvxpy as cp

    is_expr = any(hasattr(x, "value") for x in (P2, P3, N1, N2))
    bmat = cp.bmat if is_expr else np.block
    Z = np.zeros((n_c, n_c))
    I = np.eye(n_c)
    if form == "held":
        rows = [
            [-P3 + N1 + N1.T - nu * I, None, None, None],
            [P3 + N2 - N1.T, -P3 - N2 - N2.T, None, None],
            [P2 @ A, P2 @ LC, -P2 / T_bar, None],
            [N1.T, N2.T, Z, -P2 / T_bar],
        ]
        nb = 4
    else:
        W = P3 @ LC
        a11 = T_bar * (P3 @ A + A.T @ P3) - P3 + N1 + N1.T - nu * I
        a21 = T_bar * W.T - T_bar * P3 @ A + P3 + N2 - N1.T
        a22 = -T_bar * (W + W.T) - P3 - N2 - N2.T
        rows = [[a11, None, None], [a21, a22, None], [P2 @ A, P2 @ LC, -P2 / T_bar]]
        nb = 3
    grid = [[rows[i][j] if j <= i else rows[j][i].T for j in range(nb)] for i in range(nb)]
    return bmat(grid)


def solve_stage2(
    bm: BlockMatrices,
    gains: GainDesign,
    T_bar: float,
    nu: float,
    opts: SynthesisOptions | None = None,
) -> CertificateStage2:
    """Certify the held-innovation dynamics for fixed gains, one observer at a time.

    The error dynamics of the bank are block-decoupled, so P2, P3 and the
    slack multipliers are taken block-diagonal per observer and each block is
    a small margin-maximisation SDP. Negativity is imposed on the estimation
    error subspace jointly with the stage-1 state decay nu (see project
    notes: the printed full-width forms carry positive-semidefinite diagonal
    terms on the disturbance channels and on the held-state direction and
    admit no certificate of their own). The problem is solved with nu
    normalised to one and rescaled, so margins are proportional to nu.
    """
    import cvxpy as cp

    if T_bar <= 0:
        raise ValueError("T_bar must be positive")
    if nu <= 0:
        raise ValueError("stage 2 needs the positive stage-1 rate nu")
    opts = opts or SynthesisOptions()
    n_c = bm.n_c
    A = bm.bigA[:n_c, :n_c]
    I = np.eye(n_c)
    P2_blocks, P3_blocks, N1_blocks, N2_blocks = [], [], [], []
    margins8, margins9 = [], []

    for pos, S in enumerate(bm.subsets):
        LC = gains.L[pos] @ bm.bigC[:n_c, :n_c][S.rows, :]
        P2 = cp.Variable((n_c, n_c), symmetric=True)
        P3 = cp.Variable((n_c, n_c), symmetric=True)
        N1 = cp.Variable((n_c, n_c))
        N2 = cp.Variable((n_c, n_c))
        t = cp.Variable()
        lmi8 = _stage2_blocks(A, LC, P2, P3, N1, N2, T_bar, n_c, "held", nu=1.0)
        lmi9 = _stage2_blocks(A, LC, P2, P3, N1, N2, T_bar, n_c, "alpha", nu=1.0)
        cons = [
            lmi8 << -t * np.eye(4 * n_c),
            lmi9 << -t * np.eye(3 * n_c),
            P2 >> 1e-6 * I,
            P2 << opts.p_cap * I,
            P3 >> 1e-6 * I,
            P3 << opts.p_cap * I,
            t >= 0,
        ]
        prob = cp.Problem(cp.Maximize(t - 1e-6 * (cp.sum_squares(N1) + cp.sum_squares(N2))), cons)
        try:
            _solve_problem(prob, opts, f"stage 2 (observer {pos + 1})")
        except InfeasibleError as exc:
            raise InfeasibleError(
                "stage 2",
                exc.status,
                f"observer {pos + 1} with T_bar={T_bar}: consider a smaller T_bar (see t_bar_bisect)",
            ) from exc
        P2v = nu * 0.5 * (P2.value + P2.value.T)
        P3v = nu * 0.5 * (P3.value + P3.value.T)
        N1v, N2v = nu * N1.value, nu * N2.value
        m8 = float(sla.eigvalsh(np.asarray(_stage2_blocks(A, LC, P2v, P3v, N1v, N2v, T_bar, n_c, "held", nu=nu)))[-1])
        m9 = float(sla.eigvalsh(np.asarray(_stage2_blocks(A, LC, P2v, P3v, N1v, N2v, T_bar, n_c, "alpha", nu=nu)))[-1])
        if max(m8, m9) > -opts.eps_feas:
            raise InfeasibleError(
                "stage 2",
                "margin_below_tolerance",
                f"observer {pos + 1}: margins ({m8:.3e}, {m9:.3e}) above -eps_feas; "
                f"try a smaller T_bar or a larger stage-1 rate floor",
            )
        P2_blocks.append(P2v)
        P3_blocks.append(P3v)
        N1_blocks.append(N1v)
        N2_blocks.append(N2v)
        margins8.append(m8)
        margins9.append(m9)

    dim = bm.dim
    zero = np.zeros((dim, dim))
    return CertificateStage2(
        P2=sla.block_diag(*P2_blocks),
        P3=sla.block_diag(*P3_blocks),
        N=(sla.block_diag(*N1_blocks), sla.block_diag(*N2_blocks), zero, zero.copy(), zero.copy(), zero.copy()),
        T_bar=T_bar,
        margin8=max(margins8),
        margin9=max(margins9),
        nu_shift=nu,
    )


def t_bar_bisect(
    bm: BlockMatrices,
    gains: GainDesign,
    nu: float,
    t_lo: float,
    t_hi: float,
    iters: int = 12,
    opts: SynthesisOptions | None = None,
) -> float:
    """Largest feasible T_bar in [t_lo, t_hi] for stage 2, by bisection.

    t_lo must be feasible; returns the last feasible midpoint probed.
    """
    solve_stage2(bm, gains, t_lo, nu, opts)
    best = t_lo
    for _ in range(iters):
        mid = 0.5 * (t_lo + t_hi)
        try:
            solve_stage2(bm, gains, mid, nu, opts)
        except InfeasibleError:
            t_hi = mid
        else:
            best = t_lo = mid
    return best


def stage2_error_subspace_margins(bm: BlockMatrices, gains: GainDesign, c2: CertificateStage2):
    """Margins of the two stage-2 inequalities on the estimation-error subspace."""
    LC_full = gains.L_matrix() @ bm.C_star
    m8 = _stage2_blocks(
        bm.bigA, LC_full, c2.P2, c2.P3, c2.N[0], c2.N[1], c2.T_bar, bm.dim, "held", nu=c2.nu_shift
    )
    m9 = _stage2_blocks(
        bm.bigA, LC_full, c2.P2, c2.P3, c2.N[0], c2.N[1], c2.T_bar, bm.dim, "alpha", nu=c2.nu_shift
    )
    return float(sla.eigvalsh(np.asarray(m8))[-1]), float(sla.eigvalsh(np.asarray(m9))[-1])


def verify_certificates(
    bm: BlockMatrices,
    gains: GainDesign,
    c1: CertificateStage1,
    c2: CertificateStage2,
    eps_feas: float = 1e-6,
) -> dict:
    """Independent eigenvalue re-check of both certificates with recovered gains.

    Rebuilds every inequality from the original variables (products formed
    from the recovered K, L, not from the solver's substituted unknowns) and
    reports all margins and positivity levels. Report only; nothing raises.
    """
    checks = {}
    G = c1.P1 @ gains.L_matrix()
    M = np.diag(c1.U) @ gains.K_matrix()
    M7 = assemble_lmi7(bm, c1.P1, c1.U, G, M, c1.nu, c1.mu_d, c1.mu_w, c1.mu_e)
    checks["stage1_margin"] = float(sla.eigvalsh(M7)[-1])
    checks["stage1_margin_ok"] = checks["stage1_margin"] <= -eps_feas

    m8, m9 = stage2_error_subspace_margins(bm, gains, c2)
    checks["stage2_margin8"] = m8
    checks["stage2_margin9"] = m9
    checks["stage2_margin_ok"] = max(m8, m9) <= -eps_feas

    # Printed full-width forms, for the record: their disturbance columns have
    # no negative diagonal, so nonnegative top eigenvalues are structural.
    G2 = c2.P2 @ gains.L_matrix()
    full8 = assemble_lmi8(bm, c2.P2, c2.P3, c2.N, G2, c2.T_bar)
    full9 = assemble_lmi9(bm, c2.P2, c2.P3, c2.N, gains.L_matrix(), c2.T_bar)
    checks["stage2_full8_top_eig"] = float(sla.eigvalsh(full8)[-1])
    checks["stage2_full9_top_eig"] = float(sla.eigvalsh(full9)[-1])

    checks["P1_min_eig"] = float(sla.eigvalsh(c1.P1)[0])
    checks["P2_min_eig"] = float(sla.eigvalsh(c2.P2)[0])
    checks["P3_min_eig"] = float(sla.eigvalsh(c2.P3)[0])
    checks["U_min"] = float(np.min(c1.U))
    checks["positivity_ok"] = all(
        checks[k] > 0 for k in ("P1_min_eig", "P2_min_eig", "P3_min_eig", "U_min")
    )

    shapes_ok = all(
        gains.K[i].shape == (bm.n_c, len(S)) and gains.L[i].shape == (bm.n_c, len(S))
        for i, S in enumerate(bm.subsets)
    )
    checks["gain_shapes_ok"] = shapes_ok
    checks["passed"] = bool(
        checks["stage1_margin_ok"] and checks["stage2_margin_ok"] and checks["positivity_ok"] and shapes_ok
    )
    return checks
