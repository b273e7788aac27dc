import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secobs.bank import (
    ObserverBank,
    ObserverRuntime,
    SensorSubset,
    consistency_measures,
    enumerate_subsets,
    observer_derivative,
    on_packet,
    restrict_rows,
    restrict_vec,
    select_estimate,
)
from secobs.channel import MeasurementPacket
from secobs.lure import LureSystem
from secobs.nonlinearity import Affine


def affine_system(n, slope=0.5):
    return LureSystem(
        A=-np.eye(n),
        B=np.eye(n),
        C=np.eye(n),
        zeta=np.ones(n),
        phi=Affine(slope=(slope,) * n, offset=(0.0,) * n),
    )


def test_enumerate_5_2():
    supers, subs, sub_of = enumerate_subsets(5, 2)
    assert len(supers) == 10 and all(len(s) == 3 for s in supers)
    assert len(subs) == 5 and all(len(s) == 1 for s in subs)
    assert all(len(v) == 3 for v in sub_of.values())
    assert supers[0].indices == (1, 2, 3)  # lexicographic


def test_enumerate_3_1():
    supers, subs, _ = enumerate_subsets(3, 1)
    assert len(supers) == 3 and all(len(s) == 2 for s in supers)
    assert len(subs) == 3 and all(len(s) == 1 for s in subs)


def test_enumerate_degenerate_no_attack():
    supers, subs, sub_of = enumerate_subsets(5, 0)
    assert len(supers) == 1 and len(supers[0]) == 5
    assert len(subs) == 1 and len(subs[0]) == 5
    assert sub_of == {1: [1]}


def test_enumerate_rejects_majority_violation():
    with pytest.raises(ValueError):
        enumerate_subsets(5, 3)


def test_restrict_full_set_is_identity():
    M = np.arange(25.0).reshape(5, 5)
    S = SensorSubset((1, 2, 3, 4, 5), "super")
    assert np.array_equal(restrict_rows(M, S), M)


def test_restrict_selected_components():
    v = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
    S = SensorSubset((1, 3, 4), "super")
    assert np.array_equal(restrict_vec(v, S), [10.0, 30.0, 40.0])


def test_restrict_commutes_with_matrix_action():
    rng = np.random.default_rng(0)
    C = rng.normal(size=(5, 5))
    x = rng.normal(size=5)
    S = SensorSubset((2, 5), "sub")
    assert np.allclose(restrict_rows(C, S) @ x, restrict_vec(C @ x, S))


def test_restrict_out_of_range():
    with pytest.raises(IndexError):
        restrict_vec(np.zeros(3), SensorSubset((4,), "sub"))


def test_observer_derivative_zero_gains_is_open_loop():
    sys = affine_system(3)
    S = SensorSubset((1, 2), "super")
    x_hat = np.array([1.0, -2.0, 0.5])
    u = np.array([0.2, 0.1, -0.4])
    K = np.zeros((3, 2))
    L = np.zeros((3, 2))
    inn = np.array([5.0, -3.0])
    out = observer_derivative(sys, S, K, L, x_hat, inn, u)
    expected = sys.A @ x_hat + sys.B @ sys.phi(sys.C @ x_hat + u)
    assert np.allclose(out, expected)


def test_observer_derivative_zero_innovation_matches_plant_copy():
    sys = affine_system(3)
    S = SensorSubset((1, 3), "super")
    rng = np.random.default_rng(1)
    K, L = rng.normal(size=(2, 3, 2))
    x_hat = rng.normal(size=3)
    u = rng.normal(size=3)
    out = observer_derivative(sys, S, K, L, x_hat, np.zeros(2), u)
    expected = sys.A @ x_hat + sys.B @ sys.phi(sys.C @ x_hat + u)
    assert np.allclose(out, expected)


def test_observer_derivative_scalar_hand_case():
    # n = 1, affine slope e: xhat' = a xh + e(c xh + u + k*inn) + l*inn
    sys = LureSystem(
        A=np.array([[-2.0]]), B=np.array([[1.0]]), C=np.array([[3.0]]),
        zeta=np.array([1.0]), phi=Affine(slope=(0.5,), offset=(0.0,)),
    )
    S = SensorSubset((1,), "super")
    out = observer_derivative(
        sys, S, np.array([[0.7]]), np.array([[-1.1]]), np.array([2.0]), np.array([4.0]), np.array([0.3])
    )
    expected = -2.0 * 2.0 + 0.5 * (3.0 * 2.0 + 0.3 + 0.7 * 4.0) - 1.1 * 4.0
    assert out[0] == pytest.approx(expected)


def _runtime(n_c=5, n_a=2):
    bank = ObserverBank.zero_gains(n_c, n_a)
    return bank, ObserverRuntime(bank, np.zeros(n_c))


def test_on_packet_idempotent_for_identical_data():
    bank, rt = _runtime()
    C = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
    y = np.arange(5.0)
    u = np.ones(5)
    on_packet(rt, MeasurementPacket(0.0, y, 0), u, C)
    first = [inn.copy() for inn in rt.innovation]
    on_packet(rt, MeasurementPacket(1.0, y, 1), u, C)
    for a, b in zip(first, rt.innovation):
        assert np.array_equal(a, b)


def test_on_packet_row_restriction_excludes_attacked():
    bank, rt = _runtime()
    C = np.eye(5)
    u = np.zeros(5)
    y_clean = np.zeros(5)
    y_attacked = y_clean.copy()
    y_attacked[1] += 7.0  # sensor 2
    y_attacked[4] -= 3.0  # sensor 5
    on_packet(rt, MeasurementPacket(0.0, y_clean, 0), u, C)
    clean = [inn.copy() for inn in rt.innovation]
    on_packet(rt, MeasurementPacket(1.0, y_attacked, 1), u, C)
    for pos, S in enumerate(bank.subsets):
        diff = rt.innovation[pos] - clean[pos]
        expected = -(y_attacked - y_clean)[S.rows]
        assert np.allclose(diff, expected)
        if set(S.indices).isdisjoint({2, 5}):
            assert np.allclose(diff, 0.0)


def test_on_packet_rejects_out_of_order():
    bank, rt = _runtime()
    on_packet(rt, MeasurementPacket(1.0, np.zeros(5), 1), np.zeros(5), np.eye(5))
    with pytest.raises(ValueError):
        on_packet(rt, MeasurementPacket(0.5, np.zeros(5), 0), np.zeros(5), np.eye(5))


def test_consistency_all_equal_is_zero():
    _, _, sub_of = enumerate_subsets(5, 2)
    est = np.tile(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), (15, 1))
    pi = consistency_measures(est, sub_of, 10)
    assert np.array_equal(pi, np.zeros(10))


def test_consistency_brute_force_example():
    supers, subs, sub_of = enumerate_subsets(5, 2)
    est = np.zeros((15, 5))
    e1 = np.zeros(5)
    e1[0] = 1.0
    est[0] = e1  # super 1 = {1,2,3}
    # its subs are {1}, {2}, {3} at positions 10, 11, 12
    est[10] = 0.0
    est[11] = 2 * e1
    est[12] = e1
    pi = consistency_measures(est, sub_of, 10)
    assert pi[0] == pytest.approx(1.0)  # max of {1, 1, 0}


def test_consistency_degenerate_bank():
    _, _, sub_of = enumerate_subsets(5, 0)
    est = np.stack([np.ones(5), np.zeros(5)])
    pi = consistency_measures(est, sub_of, 1)
    assert pi[0] == pytest.approx(math.sqrt(5.0))


def test_select_minimum_and_tie_break():
    est = np.arange(9.0).reshape(3, 3)
    xh, sigma = select_estimate(np.array([3.0, 1.0, 2.0]), est)
    assert sigma == 2 and np.array_equal(xh, est[1])
    xh, sigma = select_estimate(np.array([1.0, 1.0, 5.0]), est)
    assert sigma == 1 and np.array_equal(xh, est[0])


@given(scale=st.floats(1e-6, 1e6))
@settings(max_examples=30, deadline=None)
def test_select_invariant_under_positive_scaling(scale):
    pi = np.array([0.4, 0.1, 0.7, 0.1])
    est = np.arange(12.0).reshape(4, 3)
    _, s1 = select_estimate(pi, est)
    _, s2 = select_estimate(pi * scale, est)
    assert s1 == s2


def test_permutation_equivariance():
    n_c, n_a = 5, 2
    supers, subs, sub_of = enumerate_subsets(n_c, n_a)
    all_subsets = supers + subs
    rng = np.random.default_rng(21)
    est = rng.normal(size=(15, n_c))
    pi = consistency_measures(est, sub_of, len(supers))
    sel, sigma = select_estimate(pi, est[: len(supers)])

    perm = np.array([3, 1, 5, 2, 4])  # sensor i -> perm[i-1]
    inv = np.argsort(perm)
    supers_p, subs_p, sub_of_p = enumerate_subsets(n_c, n_a)
    # observer with subset S in the original bank corresponds to sorted(perm[S])
    relabeled = [tuple(sorted(perm[np.array(S.indices) - 1])) for S in all_subsets]
    est_p = np.empty_like(est)
    for pos_new, S_new in enumerate(supers_p + subs_p):
        pos_old = relabeled.index(S_new.indices)
        est_p[pos_new] = est[pos_old][inv]  # state components relabel with sensors here
    pi_p = consistency_measures(est_p, sub_of_p, len(supers_p))
    assert sorted(np.round(pi, 12)) == sorted(np.round(pi_p, 12))
    sel_p, sigma_p = select_estimate(pi_p, est_p[: len(supers_p)])
    assert np.allclose(np.sort(sel), np.sort(sel_p))


def test_bank_validates_gain_shapes():
    with pytest.raises(ValueError):
        ObserverBank.with_gains(3, 1, [np.zeros((3, 3))] * 6, [np.zeros((3, 2))] * 6)
