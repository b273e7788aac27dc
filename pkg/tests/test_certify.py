import numpy as np
import pytest
import scipy.linalg as sla

from secobs.certify import (
    QFamily,
    assemble_q_family,
    check_jump_condition,
    check_sandwich,
    flow_bound_gap,
    flow_gap_structured,
    iss_constants,
    lyapunov_value,
    qbar_negative_on_grid,
    trajectory_lyapunov,
)
from secobs.sim import Trajectory, integrate
from secobs.synthesis import CertificateStage1, CertificateStage2, GainDesign


@pytest.fixture(scope="module")
def qf(reduced):
    return assemble_q_family(reduced.bm, reduced.gains, reduced.c1, reduced.c2)


@pytest.fixture(scope="module")
def attacked_run(reduced):
    return integrate(reduced.bundle.scenario_config(), reduced.bank)


def test_q1_zero_gain_pattern(reduced):
    bm = reduced.bm
    dim = bm.dim
    zero = GainDesign(
        K=tuple(np.zeros_like(k) for k in reduced.gains.K),
        L=tuple(np.zeros_like(l) for l in reduced.gains.L),
        subsets=bm.subsets,
    )
    c1 = CertificateStage1(
        P1=np.eye(dim), U=np.ones(dim), nu=0.0, mu_d=0.0, mu_w=0.0, mu_e=0.0, margin=0.0
    )
    fam = assemble_q_family(bm, zero, c1, reduced.c2)
    Q1 = fam.Q1
    assert np.allclose(Q1[:dim, :dim], bm.bigA + bm.bigA.T)
    # with L = 0 the (ztilde, held) coupling vanishes; remaining row carries P1 M
    assert np.allclose(Q1[:dim, dim : 2 * dim], 0.0)
    assert np.allclose(Q1[:dim, 2 * dim : 3 * dim], bm.bigB)
    assert np.allclose(Q1[:dim, 4 * dim : 5 * dim], np.eye(dim))
    assert np.allclose(Q1[dim:, dim:], 0.0)


def test_q6_structure(reduced, qf):
    dim = reduced.bm.dim
    c2 = reduced.c2
    sub = qf.Q6[: 2 * dim, : 2 * dim]
    assert np.allclose(sub[:dim, :dim], -c2.P3)
    assert np.allclose(sub[:dim, dim:], c2.P3)
    # with P3 = identity the (ztilde, held) sub-block has eigenvalues {0, -2}
    D = np.block([[-np.eye(dim), np.eye(dim)], [np.eye(dim), -np.eye(dim)]])
    eigs = np.unique(np.round(sla.eigvalsh(D), 9))
    assert set(eigs) == {-2.0, 0.0}
    assert np.allclose(qf.Q6[2 * dim :, :], 0.0)


def test_r_identities_exact(qf):
    assert np.array_equal(qf.R1, qf.T_bar * qf.Q3 + qf.Q5 + qf.Q6)
    assert np.array_equal(qf.R2, qf.Q4)
    assert np.array_equal(qf.R3, qf.Q7)


def test_qbar_affine_in_tau(qf):
    rng = np.random.default_rng(4)
    for tau in rng.uniform(0, qf.T_bar, 5):
        lhs = qf.qbar(tau)
        rhs = qf.qbar(0.0) + (tau / qf.T_bar) * (qf.qbar(qf.T_bar) - qf.qbar(0.0))
        assert np.allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(lhs).max()))


def test_qbar_negative_on_grid(qf):
    rep = qbar_negative_on_grid(qf, n_grid=101)
    assert rep.all_negative
    assert rep.worst_margin < 0
    assert rep.kappa > 0
    # endpoints negative implies the midpoint is (affine family)
    mid = sla.eigvalsh(qf.qbar_error_subspace(qf.T_bar / 2))[-1]
    assert mid <= max(rep.endpoint_margins) + 1e-12
    # the raw (decay-free) family is structurally nonnegative
    assert rep.raw_restricted_top_eig >= 0
    assert rep.full_top_eig > 0


def test_qbar_falsification_scaled_p3(reduced, qf):
    c2 = reduced.c2
    bad = CertificateStage2(
        P2=c2.P2, P3=c2.P3 * 1e6, N=c2.N, T_bar=c2.T_bar,
        margin8=c2.margin8, margin9=c2.margin9, nu_shift=c2.nu_shift,
    )
    fam = assemble_q_family(reduced.bm, reduced.gains, reduced.c1, bad)
    rep = qbar_negative_on_grid(fam, n_grid=21)
    assert not rep.all_negative


def test_flow_bound_gap_small(reduced):
    gap = flow_bound_gap(
        reduced.bm, reduced.gains, reduced.c1.P1, reduced.c1.U,
        reduced.c1.nu, reduced.c1.mu_d, reduced.c1.mu_w,
    )
    assert gap <= 1e-8


def test_flow_gap_structured_draws(reduced):
    vals = flow_gap_structured(reduced.bm, reduced.gains, reduced.c1, n_draws=50, seed=0)
    assert vals.shape == (50,)
    assert np.all(vals <= 1e-8)


def test_lyapunov_zero_on_clean_exact_init_run(reduced):
    cfg = reduced.bundle.scenario_config(attack_scale=0.0)
    cfg.x0 = np.zeros(3)
    cfg.xhat0 = 0.0
    traj = integrate(cfg, reduced.bank)
    U, U_pre, xi_sq, *_ = trajectory_lyapunov(traj, reduced.c1, reduced.c2)
    # identical flows agree to BLAS summation-order noise (~1 ulp per step)
    assert np.max(np.abs(U)) < 1e-25
    assert np.max(np.abs(xi_sq)) < 1e-25


def test_lyapunov_post_sample_is_quadratic_term(reduced, attacked_run):
    traj = attacked_run
    U, *_ = trajectory_lyapunov(traj, reduced.c1, reduced.c2)
    z = (traj.x[:, None, :] - traj.xhat_all).reshape(len(traj.t), -1)
    V1 = np.einsum("ij,jk,ik->i", z, reduced.c1.P1, z)
    for k in traj.sample_grid_idx:
        assert U[k] == pytest.approx(V1[k], rel=1e-12, abs=1e-30)
    assert lyapunov_value(traj, reduced.c1, reduced.c2, traj.t[traj.sample_grid_idx[3]]) == pytest.approx(
        V1[traj.sample_grid_idx[3]]
    )


def test_jump_condition_on_run(reduced, attacked_run):
    rep = check_jump_condition(attacked_run, reduced.c1, reduced.c2)
    assert rep["ok"]
    assert rep["n_samples_checked"] >= 20


def test_jump_closed_form_constant_segment(reduced):
    """With ztilde frozen between samples, U drops by exactly the pre-jump V3."""
    c1, c2 = reduced.c1, reduced.c2
    dim = reduced.bm.dim
    n_obs, n_c = reduced.bank.n_obs, 3
    t = np.linspace(0.0, 1.0, 11)
    z_obs = np.zeros((len(t), n_obs, n_c))
    z_obs[:, 0, 0] = 2.0  # constant nonzero error, first observer
    x = np.zeros((len(t), n_c))
    traj = Trajectory(
        t=t,
        x=x,
        xhat_all=-z_obs,  # ztilde = x - xhat = z_obs
        pi=np.zeros((len(t), 3)),
        sigma=np.ones(len(t), dtype=int),
        xhat=x.copy(),
        zdot=np.zeros((len(t), n_obs, n_c)),
        zdot_pre=np.zeros((1, n_obs, n_c)),
        sample_flag=np.zeros(len(t), dtype=bool),
        sample_grid_idx=[0, 10],
        sample_times=np.array([0.0, 1.0]),
        attack_at_samples=np.zeros((2, n_c)),
        v=x.copy(),
        vhat=x.copy(),
        regime_violations=0,
        meta={},
    )
    U, U_pre, *_ = trajectory_lyapunov(traj, c1, c2)
    z_flat = z_obs[0].reshape(dim)
    e = z_flat  # held at t_0
    # constant segment: V2 = 0; V3 = (T_bar - tau) (z - e) P3 (z - e) = 0 too
    assert U_pre[0] == pytest.approx(float(z_flat @ c1.P1 @ z_flat))
    # now a segment where ztilde moves linearly: the drop equals pre-jump V3
    z_obs2 = z_obs.copy()
    z_obs2[:, 0, 0] = 2.0 + np.linspace(0, 1, 11)
    traj2 = Trajectory(
        **{**traj.__dict__, "xhat_all": -z_obs2, "zdot": np.zeros_like(traj.zdot)}
    )
    U2, U2_pre, *_ = trajectory_lyapunov(traj2, c1, c2)
    zb = z_obs2[10].reshape(dim)
    dz = zb - z_obs2[0].reshape(dim)
    V3_pre = (c2.T_bar - 1.0) * float(dz @ c2.P3 @ dz)
    V1_b = float(zb @ c1.P1 @ zb)
    assert U2_pre[0] == pytest.approx(V1_b + V3_pre, rel=1e-9)
    assert U2[10] == pytest.approx(V1_b, rel=1e-12)


def test_sandwich_on_run(reduced, attacked_run):
    rep = check_sandwich(attacked_run, reduced.c1, reduced.c2)
    assert rep["ok"]
    assert rep["n_violations"] == 0
    assert rep["a_lower"] > 0 and rep["a_upper"] >= rep["a_lower"]


def test_iss_constants(reduced, qf):
    rep = qbar_negative_on_grid(qf)
    b = iss_constants(reduced.bm, reduced.gains, reduced.c1, reduced.c2, rep.kappa)
    assert b.kappa_eff > 0
    assert b.Pi_at_zero > 0 and b.Pi_at_full >= b.Pi_at_zero
    assert b.Theta_at_full >= b.Theta_at_zero >= 0
    # gain is linear in its argument
    assert b.gamma_z(2.0) == pytest.approx(2 * b.gamma_z(1.0))
    with pytest.raises(ValueError):
        iss_constants(reduced.bm, reduced.gains, reduced.c1, reduced.c2, -1.0)


def test_envelope_bounds_clean_run(reduced):
    """Disturbance-free run with initial mismatch stays under the transient envelope."""
    qf_local = assemble_q_family(reduced.bm, reduced.gains, reduced.c1, reduced.c2)
    rep = qbar_negative_on_grid(qf_local)
    bounds = iss_constants(reduced.bm, reduced.gains, reduced.c1, reduced.c2, rep.kappa)
    cfg = reduced.bundle.scenario_config(attack_scale=0.0)
    cfg.horizon = 8.0
    traj = integrate(cfg, reduced.bank)
    z = (traj.x[:, None, :] - traj.xhat_all).reshape(len(traj.t), -1)
    z_norm = np.linalg.norm(z, axis=1)
    env = bounds.beta_z(z_norm[0], traj.t)
    assert np.all(z_norm <= env + 1e-12)
