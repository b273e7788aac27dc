import numpy as np
import pytest
import scipy.linalg as sla

from secobs.bank import enumerate_subsets
from secobs.lure import LureSystem
from secobs.nonlinearity import Affine
from secobs.synthesis import (
    AssemblyError,
    InfeasibleError,
    SynthesisOptions,
    assemble_lmi7,
    assemble_lmi8,
    assemble_lmi9,
    build_block_matrices,
    solve_stage1,
    solve_stage2,
    stage2_error_subspace_margins,
    t_bar_bisect,
    verify_certificates,
)


def scalar_system(a=-1.0, b=1.0, c=1.0):
    return LureSystem(
        A=np.array([[a]]), B=np.array([[b]]), C=np.array([[c]]),
        zeta=np.array([1.0]), phi=Affine(slope=(1.0,), offset=(0.0,)),
    )


def scalar_bm(a=-1.0, b=1.0, c=1.0):
    sys = scalar_system(a, b, c)
    supers, subs, _ = enumerate_subsets(1, 0)
    return build_block_matrices(sys, supers + subs)


def test_block_matrices_single_observer_is_plain_system():
    sys = scalar_system()
    supers, _, _ = enumerate_subsets(1, 0)
    bm = build_block_matrices(sys, supers)  # one observer only
    assert np.array_equal(bm.bigA, sys.A)
    assert np.array_equal(bm.C_star, sys.C)


def test_block_matrices_3_1_bank_dimensions(reduced):
    bm = reduced.bm
    assert bm.bigA.shape == (18, 18)
    assert np.array_equal(bm.bigA[3:6, 3:6], reduced.bundle.system.A)
    assert np.count_nonzero(bm.bigA[:3, 3:]) == 0


def test_c_star_dimensions_5_2(full_bank):
    bm = full_bank.bm
    assert bm.C_star.shape == (10 * 3 + 5 * 1, 75)
    assert sum(bm.subset_sizes) == 35


def test_lmi7_zero_case():
    bm = scalar_bm()
    n = bm.dim
    M = assemble_lmi7(bm, np.zeros((n, n)), np.zeros(n), np.zeros((n, 2)), np.zeros((n, 2)), 1.0, 0.0, 0.0)
    expected = np.zeros((7 * n, 7 * n))
    expected[:n, :n] = np.eye(n)
    assert np.array_equal(M, expected)


def test_lmi7_scalar_hand_layout():
    # N_c = 1, N_a = 0: two observers, every lifted block is 2x2 diagonal.
    bm = scalar_bm(a=-1.0, b=1.0, c=1.0)
    n = bm.dim  # 2
    I = np.eye(n)
    Z = np.zeros((n, n))
    P1 = 1.5 * I
    U = np.full(n, 0.8)
    Ud = np.diag(U)
    Cs = bm.C_star  # identity for this bank
    L = 0.3 * I
    K = 0.2 * I
    G = P1 @ L
    Mk = Ud @ K
    nu, mu_d, mu_w, mu_e = 0.7, 1.1, 1.3, 0.05
    M = assemble_lmi7(bm, P1, U, G, Mk, nu, mu_d, mu_w, mu_e)

    A, B, C = -I, I, I
    b21 = Cs.T @ L.T @ P1
    b31 = B.T @ P1 + Ud @ C
    b41 = B.T @ P1 + Mk @ Cs
    b72 = -(Mk @ Cs)
    UEinv = Ud  # zeta = 1
    expected = np.block([
        [P1 @ A + A.T @ P1 + nu * I, b21.T, b31.T, b41.T, P1, P1, Z],
        [b21, -mu_e * I, Z, Z, Z, Z, b72.T],
        [b31, Z, -2 * UEinv, Z, Z, Z, Z],
        [b41, Z, Z, -2 * UEinv, Z, Z, Z],
        [P1, Z, Z, Z, -mu_d * I, Z, Z],
        [P1, Z, Z, Z, Z, -mu_w * I, Z],
        [Z, b72, Z, Z, Z, Z, -UEinv],
    ])
    assert np.allclose(M, expected)


def test_lmi7_symmetry(reduced):
    bm = reduced.bm
    rng = np.random.default_rng(5)
    n = bm.dim
    P1 = np.eye(n) + 0.1 * (lambda R: R + R.T)(rng.normal(size=(n, n)))
    U = rng.uniform(0.5, 2.0, n)
    G = rng.normal(size=(n, sum(bm.subset_sizes)))
    Mk = rng.normal(size=G.shape)
    M = assemble_lmi7(bm, P1, U, G, Mk, 0.3, 1.0, 1.0, 0.01)
    assert np.linalg.norm(M - M.T) <= 1e-12 * np.linalg.norm(M)


def test_lmi8_zero_case(reduced):
    bm = reduced.bm
    n = bm.dim
    N = tuple(np.zeros((n, n)) for _ in range(6))
    M = assemble_lmi8(bm, np.eye(n), np.eye(n), N, np.zeros((n, sum(bm.subset_sizes))), 1.0)
    assert np.allclose(M[:n, :n], -np.eye(n))
    assert np.linalg.norm(M - M.T) <= 1e-12 * np.linalg.norm(M)


def test_lmi8_scalar_hand_layout():
    bm = scalar_bm()
    n = bm.dim
    I = np.eye(n)
    Z = np.zeros((n, n))
    P2 = 2.0 * I
    P3 = 3.0 * I
    N = tuple((0.1 * (j + 1)) * I for j in range(6))
    L = 0.4 * I
    G2 = P2 @ L
    T = 0.8
    M = assemble_lmi8(bm, P2, P3, N, G2, T)
    A, B = -I, I
    LC = L  # C* = I here
    row7 = [P2 @ A, P2 @ LC, P2 @ B, P2 @ B, P2, P2]
    expected = np.block([
        [-P3 + 2 * N[0], (P3 + N[1] - N[0].T).T, N[2].T, N[3].T, N[4].T, N[5].T, row7[0].T, N[0]],
        [P3 + N[1] - N[0].T, -P3 - 2 * N[1], -N[2].T, -N[3].T, -N[4].T, -N[5].T, row7[1].T, N[1]],
        [N[2], -N[2], Z, Z, Z, Z, row7[2].T, N[2]],
        [N[3], -N[3], Z, Z, Z, Z, row7[3].T, N[3]],
        [N[4], -N[4], Z, Z, Z, Z, row7[4].T, N[4]],
        [N[5], -N[5], Z, Z, Z, Z, row7[5].T, N[5]],
        [row7[0], row7[1], row7[2], row7[3], row7[4], row7[5], -P2 / T, Z],
        [N[0].T, N[1].T, N[2].T, N[3].T, N[4].T, N[5].T, Z, -P2 / T],
    ])
    assert np.allclose(M, expected)


def test_lmi9_alpha_blocks_and_t_to_zero_limit(reduced):
    bm = reduced.bm
    n = bm.dim
    rng = np.random.default_rng(9)
    P2 = np.eye(n)
    P3 = np.eye(n) + 0.05 * (lambda R: R + R.T)(rng.normal(size=(n, n)))
    N = tuple(rng.normal(size=(n, n)) * 0.1 for _ in range(6))
    L = rng.normal(size=(n, sum(bm.subset_sizes))) * 0.01
    M9 = assemble_lmi9(bm, P2, P3, N, L, 1e-9)
    # alpha_11 collapses to the first diagonal block of the held-difference form
    assert np.allclose(M9[:n, :n], -P3 + N[0] + N[0].T, atol=1e-6)
    M9b = assemble_lmi9(bm, P2, P3, N, L, 0.7)
    assert np.linalg.norm(M9b - M9b.T) <= 1e-12 * np.linalg.norm(M9b)


def test_lmi9_scalar_hand_layout():
    bm = scalar_bm()
    n = bm.dim
    I = np.eye(n)
    P2, P3 = 2.0 * I, 3.0 * I
    N = tuple((0.1 * (j + 1)) * I for j in range(6))
    L = 0.4 * I
    T = 0.8
    M = assemble_lmi9(bm, P2, P3, N, L, T)
    A, B = -I, I
    W = P3 @ L
    a11 = T * (P3 @ A + A.T @ P3) - P3 + 2 * N[0]
    a21 = T * W.T - T * P3 @ A + P3 + N[1] - N[0].T
    a22 = -T * (W + W.T) - P3 - 2 * N[1]
    assert np.allclose(M[:n, :n], a11)
    assert np.allclose(M[n : 2 * n, :n], a21)
    assert np.allclose(M[n : 2 * n, n : 2 * n], a22)
    assert np.allclose(M[6 * n :, :n], P2 @ A)
    assert np.allclose(M[6 * n :, 6 * n :], -P2 / T)


def test_stage1_scalar_stable_system_feasible():
    # open-loop stable plant with no input path: zero gains admissible
    sys = LureSystem(
        A=np.array([[-1.0]]), B=np.array([[0.0]]), C=np.array([[1.0]]),
        zeta=np.array([1.0]), phi=Affine(slope=(1.0,), offset=(0.0,)),
    )
    supers, subs, _ = enumerate_subsets(1, 0)
    bm = build_block_matrices(sys, supers + subs)
    c1, gains = solve_stage1(bm)
    assert c1.margin <= -1e-6
    M = assemble_lmi7(bm, c1.P1, c1.U, c1.P1 @ gains.L_matrix(), np.diag(c1.U) @ gains.K_matrix(), c1.nu, c1.mu_d, c1.mu_w, c1.mu_e)
    assert sla.eigvalsh(M)[-1] <= -1e-6


def test_stage1_reduced_grid(reduced):
    assert reduced.c1.margin <= -1e-6
    assert np.min(reduced.c1.U) > 0
    assert sla.eigvalsh(reduced.c1.P1)[0] > 0
    for g, S in zip(reduced.gains.K, reduced.bm.subsets):
        assert g.shape == (3, len(S))


def test_stage1_substitution_soundness(reduced):
    c1, gains, bm = reduced.c1, reduced.gains, reduced.bm
    G = c1.P1 @ gains.L_matrix()
    Mk = np.diag(c1.U) @ gains.K_matrix()
    M_a = assemble_lmi7(bm, c1.P1, c1.U, G, Mk, c1.nu, c1.mu_d, c1.mu_w, c1.mu_e)
    # block-diagonal P1 recovery: products match the per-block solves exactly
    G2 = sla.block_diag(*[P @ L for P, L in zip(_p1_blocks(c1.P1, bm), gains.L)])
    M_b = assemble_lmi7(bm, c1.P1, c1.U, G2, Mk, c1.nu, c1.mu_d, c1.mu_w, c1.mu_e)
    assert np.allclose(M_a, M_b, atol=1e-12 * max(1.0, np.abs(M_a).max()))


def _p1_blocks(P1, bm):
    n = bm.n_c
    return [P1[i * n : (i + 1) * n, i * n : (i + 1) * n] for i in range(bm.n_obs)]


def test_stage1_unobservable_unstable_infeasible():
    sys = LureSystem(
        A=np.array([[1.0]]), B=np.array([[1.0]]), C=np.array([[0.0]]),
        zeta=np.array([1.0]), phi=Affine(slope=(1.0,), offset=(0.0,)),
    )
    supers, subs, _ = enumerate_subsets(1, 0)
    bm = build_block_matrices(sys, supers + subs)
    with pytest.raises(InfeasibleError):
        solve_stage1(bm)


def test_stage2_reduced_grid_margins(reduced):
    assert reduced.c2.margin8 <= -1e-6
    assert reduced.c2.margin9 <= -1e-6
    m8, m9 = stage2_error_subspace_margins(reduced.bm, reduced.gains, reduced.c2)
    assert m8 <= -1e-6 and m9 <= -1e-6


def test_stage2_infeasible_for_huge_t_bar(reduced):
    with pytest.raises(InfeasibleError):
        solve_stage2(reduced.bm, reduced.gains, 1e3, reduced.c1.nu, reduced.bundle.synthesis)


def test_stage2_monotone_in_t_bar(reduced):
    c2_half = solve_stage2(reduced.bm, reduced.gains, 0.5, reduced.c1.nu, reduced.bundle.synthesis)
    assert c2_half.margin8 <= -1e-6 and c2_half.margin9 <= -1e-6


def test_t_bar_bisect(reduced):
    best = t_bar_bisect(reduced.bm, reduced.gains, reduced.c1.nu, 0.5, 64.0, iters=5)
    assert best >= 0.5


def test_verify_certificates_pass(reduced):
    rep = verify_certificates(reduced.bm, reduced.gains, reduced.c1, reduced.c2)
    assert rep["passed"]
    assert rep["stage1_margin"] <= -1e-6 / 2
    assert rep["P1_min_eig"] > 0 and rep["U_min"] > 0


def test_verify_detects_tampered_p1(reduced):
    c1 = reduced.c1
    rng = np.random.default_rng(2)
    R = rng.normal(size=c1.P1.shape)
    bad_p1 = c1.P1 + 1e-2 * (R + R.T) * np.abs(c1.P1).max() * 100
    from secobs.synthesis import CertificateStage1

    bad = CertificateStage1(
        P1=bad_p1, U=c1.U, nu=c1.nu, mu_d=c1.mu_d, mu_w=c1.mu_w, mu_e=c1.mu_e, margin=c1.margin
    )
    rep = verify_certificates(reduced.bm, reduced.gains, bad, reduced.c2)
    assert not rep["passed"]


def test_verify_zeroed_gains_report_only(reduced):
    from secobs.synthesis import GainDesign

    zero = GainDesign(
        K=tuple(np.zeros_like(k) for k in reduced.gains.K),
        L=tuple(np.zeros_like(l) for l in reduced.gains.L),
        subsets=reduced.bm.subsets,
    )
    rep = verify_certificates(reduced.bm, zero, reduced.c1, reduced.c2)
    # the flow inequality may still hold; the report records the margins either way
    assert "stage1_margin" in rep and isinstance(rep["passed"], bool)


def test_assembly_symmetry_guard():
    # sanity: the internal check trips on a deliberately broken block
    from secobs.synthesis import _check_symmetric

    with pytest.raises(AssemblyError):
        _check_symmetric(np.array([[0.0, 1.0], [0.0, 0.0]]), "probe")
