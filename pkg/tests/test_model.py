import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajrisk import ConfigError, LossSpec, PenaltySpec, ProblemConfig, generate_dataset, prox, prox_jacobian_diag, psi, psi_prime
from trajrisk.model import rho

from conftest import dense_sigma

HUBER = LossSpec("huber", 1.0)
PSEUDO = LossSpec("pseudo_huber", 1.0)


def test_same_seed_bitwise_identical():
    cfg = ProblemConfig(n=30, p=10, covariance="dense", cov_values=dense_sigma(10), seed=7)
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    for name in ("X", "y", "b_star", "eps", "sigma_half"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_sparse_signal_values():
    data = generate_dataset(ProblemConfig(n=2, p=5000, sparsity_fraction=1 / 20, signal_strength=10))
    nz = np.flatnonzero(data.b_star)
    assert nz.size == 250
    assert np.array_equal(nz, np.arange(250))
    assert np.allclose(data.b_star[nz], 0.2, rtol=0, atol=1e-15)


def test_zero_signal():
    data = generate_dataset(ProblemConfig(n=20, p=8, signal_strength=0, sparsity_fraction=0.5))
    assert np.all(data.b_star == 0)
    assert np.array_equal(data.y, data.eps)


@pytest.mark.parametrize("cov", ["identity", "diagonal", "dense"])
def test_dataset_identities(cov):
    p = 12
    vals = {"identity": None, "diagonal": np.linspace(0.5, 2, p), "dense": dense_sigma(p)}[cov]
    data = generate_dataset(ProblemConfig(n=25, p=p, covariance=cov, cov_values=vals,
                                          signal_strength=3.0, sparsity_fraction=0.25, seed=3))
    assert abs(data.b_star @ data.b_star - 3.0) <= 1e-10 * 3.0
    # zero up to the rounding of re-associating the sum
    assert np.max(np.abs(data.y - data.X @ data.b_star - data.eps)) <= 1e-12
    assert np.allclose(data.sigma, ProblemConfig(n=1, p=p, covariance=cov, cov_values=vals).covariance_matrix())


def test_arrays_read_only():
    data = generate_dataset(ProblemConfig(n=5, p=4, sparsity_fraction=0.5))
    with pytest.raises(ValueError):
        data.X[0, 0] = 1.0


def test_gaussian_noise_scale():
    data = generate_dataset(ProblemConfig(n=20000, p=1, noise="gaussian", noise_param=3.0,
                                          sparsity_fraction=1.0))
    assert abs(data.eps.std() - 3.0) < 0.1


def test_not_positive_definite_is_config_error():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ConfigError):
        ProblemConfig(n=5, p=2, covariance="dense", cov_values=bad, sparsity_fraction=1).sigma_half()


@pytest.mark.parametrize("kw", [dict(n=0, p=3), dict(n=3, p=3, noise="laplace"),
                                dict(n=3, p=3, noise_param=0), dict(n=3, p=3, sparsity_fraction=0),
                                dict(n=3, p=3, covariance="toeplitz"), dict(n=3, p=3, seed=-1),
                                dict(n=3, p=3, sparsity_fraction=0.05)])
def test_problem_validation(kw):
    with pytest.raises(ConfigError):
        ProblemConfig(**kw)


def test_diagnostics_are_read_only_numbers():
    cfg = ProblemConfig(n=100, p=50, covariance="diagonal", cov_values=np.linspace(1, 4, 50))
    assert cfg.gamma == 0.5
    assert cfg.kappa == pytest.approx(4.0)


def test_psi_examples():
    assert psi(0.0, HUBER) == 0
    assert psi(3.0, HUBER) == 1
    assert psi(1.0, PSEUDO) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert psi_prime(0.0, PSEUDO) == 1
    assert psi_prime(3.0, HUBER) == 0
    assert psi_prime(1.0, PSEUDO) == pytest.approx(2 ** -1.5, abs=1e-15)
    assert psi_prime(1.0, HUBER) == 1 and psi_prime(-1.0, HUBER) == 1


def test_square_loss():
    sq = LossSpec("square", 1.0)
    r = np.array([-2.0, 0.5, 4.0])
    assert np.array_equal(psi(r, sq), r)
    assert np.array_equal(psi_prime(r, sq), np.ones(3))
    assert np.allclose(rho(r, sq), r**2 / 2)


@pytest.mark.parametrize("loss", [HUBER, PSEUDO, LossSpec("huber", 0.3), LossSpec("pseudo_huber", 2.5),
                                  LossSpec("square", 1.0)])
def test_psi_lipschitz_and_bounded(loss):
    rng = np.random.default_rng(0)
    a = rng.standard_normal(10**5) * 5
    b = rng.standard_normal(10**5) * 5
    assert np.all(np.abs(psi(a, loss) - psi(b, loss)) <= np.abs(a - b) + 1e-12)
    if loss.kind != "square":
        assert np.all(np.abs(psi(a * 100, loss)) <= loss.delta)


@pytest.mark.parametrize("loss", [HUBER, PSEUDO, LossSpec("huber", 0.4)])
def test_psi_prime_matches_finite_difference(loss):
    rng = np.random.default_rng(1)
    r = rng.uniform(-4, 4, 1000)
    r = r[np.abs(np.abs(r) - loss.delta) > 1e-3]
    h = 1e-6
    fd = (psi(r + h, loss) - psi(r - h, loss)) / (2 * h)
    assert np.max(np.abs(fd - psi_prime(r, loss))) <= 1e-6


def test_rho_derivative_is_psi():
    r = np.linspace(-3, 3, 101)
    h = 1e-6
    for loss in (HUBER, PSEUDO):
        fd = (rho(r + h, loss) - rho(r - h, loss)) / (2 * h)
        assert np.max(np.abs(fd - psi(r, loss))) < 1e-6


def test_prox_examples():
    l1 = PenaltySpec("l1", 1.0)
    assert prox(np.array([2.5]), 1.0, l1)[0] == 1.5
    assert prox(np.array([-0.5]), 1.0, l1)[0] == 0
    v = np.array([3.0, -1.0, 0.2])
    assert np.array_equal(prox(v, 0.7, PenaltySpec()), v)
    assert np.array_equal(prox_jacobian_diag(v, PenaltySpec()), np.ones(3))
    assert np.array_equal(prox_jacobian_diag(np.array([0.0, 1.5, -0.2]), l1), [0, 1, 1])
    assert np.array_equal(prox_jacobian_diag(np.zeros(4), l1), np.zeros(4))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.floats(0, 5), st.floats(0, 3))
def test_prox_nonexpansive(a, b, lam, eta):
    k = min(len(a), len(b))
    a, b = np.array(a[:k]), np.array(b[:k])
    pen = PenaltySpec("l1", lam)
    assert np.linalg.norm(prox(a, eta, pen) - prox(b, eta, pen)) <= np.linalg.norm(a - b) + 1e-12
    assert np.all(prox(np.zeros(k), eta, pen) == 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0.01, 10))
def test_psi_lipschitz_property(x, y, delta):
    for kind in ("huber", "pseudo_huber"):
        loss = LossSpec(kind, delta)
        assert abs(psi(x, loss) - psi(y, loss)) <= abs(x - y) + 1e-12
        assert abs(psi(x, loss)) <= delta


@pytest.mark.parametrize("bad", [dict(kind="cauchy", delta=1.0), dict(kind="huber", delta=0.0)])
def test_loss_validation(bad):
    with pytest.raises(ConfigError):
        LossSpec(**bad)


def test_penalty_validation():
    with pytest.raises(ConfigError):
        PenaltySpec("l2", 1.0)
    with pytest.raises(ConfigError):
        PenaltySpec("l1", -1.0)
