import dataclasses
import warnings

import numpy as np
import pytest

from trajrisk import (CapacityError, GammaOperator, LossSpec, PenaltySpec, Schedule, SingularityError, WeightSet,
                      dense_weights, gamma_apply, hutchinson_weights, run_trajectory, sample_batches, solve_wtilde,
                      solve_wtilde_sub, weights_auto)
from trajrisk.oracle import kronecker_weights, whitened_run, whitened_weights
from trajrisk.weights import SmallDiagonalWarning

from conftest import make_data, make_run


def test_gamma_apply_single_step():
    data = make_data(n=30, p=10)
    traj, *_ = make_run(data, T=2, eta=0.6, frac=1.0)
    v = np.linspace(-1, 2, 10)
    out = gamma_apply(0, v, GammaOperator(traj, data))
    assert len(out) == 1
    assert np.allclose(out[0], 0.6 / 30 * v, rtol=0, atol=1e-16)


def test_gamma_apply_zero_step_and_bounds():
    data = make_data(n=30, p=10)
    sched = Schedule(T=5, etas=np.array([0.0, 0.5, 0.5, 0.5, 0.5]))
    traj = run_trajectory(data, LossSpec(), PenaltySpec(), sched, sample_batches(30, sched, 0))
    gamma = GammaOperator(traj, data)
    assert all(np.all(g == 0) for g in gamma_apply(0, np.ones(10), gamma))
    assert len(gamma_apply(1, np.ones(10), gamma)) == 3
    with pytest.raises(IndexError):
        gamma_apply(4, np.ones(10), gamma)


def test_dense_W_two_steps_identity_cov():
    data = make_data(n=30, p=10)
    traj, *_ = make_run(data, T=2, eta=0.6, frac=1.0)
    ws = dense_weights(traj, data)
    assert ws.W[1, 0] == pytest.approx(0.6 * 10 / 30, rel=1e-14)


@pytest.mark.parametrize("pen", [("none", 0.0), ("l1", 0.05)])
def test_structure_and_exact_diagonal(pen):
    data = make_data(dense=True)
    traj, *_ = make_run(data, T=6, loss=("huber", 1.0), pen=pen)
    ws = dense_weights(traj, data)
    for name in ("W", "Ahat", "Atil"):
        assert np.all(np.triu(getattr(ws, name)) == 0)
    for name in ("Khat", "Ktil"):
        assert np.all(np.triu(getattr(ws, name), 1) == 0)
    assert np.array_equal(np.diag(ws.Khat), traj.Ddiag.sum(axis=0))
    hs = hutchinson_weights(traj, data, m=3, probe_seed=1)
    assert np.array_equal(np.diag(hs.Khat), traj.Ddiag.sum(axis=0))
    for name in ("W", "Ahat", "Atil"):
        assert np.all(np.triu(getattr(hs, name)) == 0)


def test_w31_closed_form():
    # Sigma = I, eta/|I| = 1/n; the sign follows the chain rule of the update
    data = make_data(n=40, p=20, seed=4)
    traj, *_ = make_run(data, T=3, eta=1.0, frac=1.0, loss=("huber", 1.0), pen=("l1", 0.05))
    ws = dense_weights(traj, data)
    n, X = 40, data.X
    D1, D0 = np.diag(traj.Dtil_diag[:, 1]), np.diag(traj.Dtil_diag[:, 0])
    SD = np.diag(traj.Ddiag[:, 1])
    expected = np.trace(D1 @ (np.eye(20) - X.T @ SD @ X / n) @ D0 / n)
    assert ws.W[2, 0] == pytest.approx(expected, rel=1e-12)
    assert ws.W[1, 0] == pytest.approx(np.trace(D0) / n, rel=1e-12)
    assert ws.W[2, 1] == pytest.approx(np.trace(D1) / n, rel=1e-12)


@pytest.mark.parametrize("loss,pen,frac,dense", [
    (("pseudo_huber", 1.0), ("none", 0.0), 0.5, True),
    (("huber", 1.0), ("l1", 0.05), 0.5, True),
    (("huber", 0.5), ("l1", 0.02), 1.0, False),
    (("square", 1.0), ("none", 0.0), 0.25, True),
])
def test_dense_matches_kronecker(loss, pen, frac, dense):
    data = make_data(n=24, p=12, dense=dense, seed=5)
    traj, *_ = make_run(data, T=5, loss=loss, pen=pen, frac=frac)
    ws = dense_weights(traj, data)
    ref = kronecker_weights(traj, data)
    for name, M in ref.items():
        assert np.max(np.abs(getattr(ws, name) - M)) <= 1e-10, name


def test_hutchinson_W21_large_m():
    data = make_data(n=30, p=10)
    traj, *_ = make_run(data, T=2, eta=0.6, frac=1.0)
    hs = hutchinson_weights(traj, data, m=10**4, probe_seed=3, include_sub=False)
    target = 0.6 * 10 / 30
    se = hs.stderr["W"][1, 0]
    assert abs(hs.W[1, 0] - target) <= 4 * se + 1e-15


def test_hutchinson_zero_steps():
    data = make_data(n=30, p=10)
    traj, *_ = make_run(data, T=4, eta=0.0, frac=0.5)
    hs = hutchinson_weights(traj, data, m=5, probe_seed=0)
    for name in ("W", "Ahat", "Atil"):
        assert np.all(getattr(hs, name) == 0)
    assert np.array_equal(hs.Khat, np.diag(traj.Ddiag.sum(axis=0)))


def test_single_probe_exact_in_one_dimension():
    data = make_data(n=1, p=1, sparsity_fraction=1.0, seed=2)
    traj, *_ = make_run(data, T=4, eta=0.4, frac=1.0)
    ws = dense_weights(traj, data)
    hs = hutchinson_weights(traj, data, m=1, probe_seed=9)
    for name in ("W", "Ahat", "Khat", "Atil", "Ktil"):
        assert np.allclose(getattr(hs, name), getattr(ws, name), rtol=1e-14, atol=1e-16), name


def test_hutchinson_unbiased_over_seeds():
    data = make_data(n=16, p=8, dense=True, seed=6)
    traj, *_ = make_run(data, T=4, loss=("huber", 1.0), frac=0.5)
    ws = dense_weights(traj, data)
    names = ("W", "Ahat", "Khat", "Atil", "Ktil")
    draws = {k: [] for k in names}
    for seed in range(200):
        hs = hutchinson_weights(traj, data, m=50, probe_seed=seed)
        for k in names:
            draws[k].append(getattr(hs, k))
    for k in names:
        A = np.array(draws[k])
        mean = A.mean(axis=0)
        se = A.std(axis=0, ddof=1) / np.sqrt(200)
        assert np.all(np.abs(mean - getattr(ws, k)) <= 5 * se + 1e-12), k


def test_hutchinson_deterministic_and_chunk_invariant():
    data = make_data(dense=True)
    traj, *_ = make_run(data)
    a = hutchinson_weights(traj, data, m=30, probe_seed=4)
    b = hutchinson_weights(traj, data, m=30, probe_seed=4)
    assert np.array_equal(a.Ahat, b.Ahat) and np.array_equal(a.W, b.W)
    assert a.method == "hutchinson" and a.probes == 30


def test_hutchinson_optional_sweeps():
    data = make_data()
    traj, *_ = make_run(data)
    hs = hutchinson_weights(traj, data, m=4, include_W=False, include_sub=False)
    assert np.all(np.isnan(hs.W)) and hs.Ktil is None
    hs = hutchinson_weights(traj, data, m=4, include_A=False)
    assert np.all(np.isnan(hs.Ahat)) and np.all(np.isfinite(hs.W))


def test_dense_cap_and_auto():
    data = make_data(n=20, p=400, sparsity_fraction=0.05)
    traj10, *_ = make_run(data, T=10, eta=0.1)
    traj11, *_ = make_run(data, T=11, eta=0.1)
    assert weights_auto(traj10, data, m=2).method == "dense"
    assert weights_auto(traj11, data, m=2).method == "hutchinson"
    with pytest.raises(CapacityError):
        dense_weights(traj11, data)


def _ws(A, K, n=10):
    T = A.shape[0]
    return WeightSet(W=np.zeros((T, T)), Ahat=A, Khat=K, n=n, method="dense", Atil=A, Ktil=K)


def test_solve_wtilde_cases():
    T = 4
    rng = np.random.default_rng(0)
    A = np.tril(rng.standard_normal((T, T)), -1)
    K = np.tril(rng.standard_normal((T, T)), -1) + np.diag([5.0, 6, 7, 8])
    assert np.all(solve_wtilde(_ws(np.zeros((T, T)), K)).Wtilde == 0)
    assert np.array_equal(solve_wtilde(_ws(np.zeros((1, 1)), np.eye(1) * 3)).Wtilde, np.zeros((1, 1)))
    out = solve_wtilde(_ws(A, 10 * np.eye(T))).Wtilde
    assert np.allclose(out, A / 10, rtol=0, atol=1e-15)
    W = solve_wtilde(_ws(A, K)).Wtilde
    assert np.allclose(np.tril(K @ W, -1), A, atol=1e-12)


def test_solve_wtilde_singular():
    K = np.diag([4.0, 1e-12, 3.0])
    with pytest.raises(SingularityError) as info:
        solve_wtilde(_ws(np.zeros((3, 3)), K))
    assert info.value.t == 1


def test_sub_full_batch_square_loss_equals_wtilde():
    # Atil = Ahat needs D_t constant in t, which the square loss gives
    data = make_data(dense=True)
    traj, *_ = make_run(data, frac=1.0, loss=("square", 1.0))
    ws = solve_wtilde(dense_weights(traj, data))
    assert np.array_equal(ws.Ktil, ws.Khat)
    assert np.allclose(ws.Atil, ws.Ahat, rtol=0, atol=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallDiagonalWarning)
        sub = solve_wtilde_sub(ws)
    assert np.allclose(sub.W, ws.Wtilde, rtol=0, atol=1e-12)


def test_full_batch_ktil_equals_khat_for_any_loss():
    data = make_data(dense=True)
    traj, *_ = make_run(data, frac=1.0, loss=("huber", 1.0))
    ws = dense_weights(traj, data)
    assert np.array_equal(ws.Ktil, ws.Khat)


def test_sub_flags_dead_batch():
    A = np.tril(np.ones((3, 3)), -1)
    K = np.diag([5.0, 0.0, 4.0])
    with pytest.warns(SmallDiagonalWarning):
        sub = solve_wtilde_sub(_ws(A, K))
    assert sub.singular == (1,) and sub.W is None


def test_sub_flags_dead_batch_from_trajectory():
    # the Huber derivative vanishes on the whole batch when every residual is large
    data = make_data(n=20, p=4, sparsity_fraction=0.5, signal_strength=1e6, seed=1)
    traj, *_ = make_run(data, T=3, eta=0.0, frac=0.25, loss=("huber", 1e-3))
    assert np.all(traj.Ddiag == 0)
    with pytest.warns(SmallDiagonalWarning):
        sub = solve_wtilde_sub(dense_weights(traj, data))
    assert sub.singular == (0, 1, 2)


def test_sub_zero_atil_and_small_rows():
    K = np.array([[3.0, 0, 0], [10.0, 2.0, 0], [0.5, 0.5, 4.0]])
    with pytest.warns(SmallDiagonalWarning):
        sub = solve_wtilde_sub(_ws(np.zeros((3, 3)), K))
    assert sub.small == (1,) and sub.singular == ()
    assert np.all(sub.W == 0)


def test_change_of_variables_whitened():
    data = make_data(dense=True, seed=8)
    traj, loss, pen, sched, plan = make_run(data, T=6, frac=0.5)
    ws = dense_weights(traj, data)
    run = whitened_run(data, loss, pen, sched, plan)
    other = whitened_weights(run, plan, sched)
    assert np.max(np.abs(run.F - traj.F)) <= 1e-10
    assert np.max(np.abs(other["Ahat"] - ws.Ahat)) <= 1e-10
    assert np.max(np.abs(other["Khat"] - ws.Khat)) <= 1e-10


def test_plain_rerun_on_whitened_design_is_not_invariant():
    # documents why the check above uses the transformed iteration
    data = make_data(dense=True, seed=8)
    traj, loss, pen, sched, plan = make_run(data, T=6, frac=0.5)
    G = np.linalg.solve(data.sigma_half, data.X.T).T
    plain = run_trajectory(dataclasses.replace(data, X=G), loss, pen, sched, plan)
    assert np.max(np.abs(plain.F - traj.F)) > 1e-3
