import numpy as np
import pytest

from eivbias.errors import DegenerateData, SingularInformation
from eivbias.estimator import LOGLIK_NOISE, FitConfig, fit, initial_theta, invert_information, standard_errors
from eivbias.likelihood import log_likelihood
from eivbias.model import Dataset, Theta, is_pd, pack_theta
from eivbias.montecarlo import Scenario, generate_taus, simulate_dataset
from eivbias.oracle import random_instance


def _zero_tau(z, v=1, m=1):
    n = z.shape[0]
    return Dataset(z, np.zeros((n, v, v)), np.zeros((n, m, m)))


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(max_iter=0)
    with pytest.raises(ValueError):
        FitConfig(rel_tol=0.0)


def test_initial_slope_is_ols_without_errors(rng):
    x = rng.normal(size=30)
    y = 1.0 + 2.0 * x + rng.normal(scale=0.3, size=30)
    t0 = initial_theta(_zero_tau(np.column_stack([y, x])))
    ols = np.polyfit(x, y, 1)[0]
    assert t0.beta1[0, 0] == pytest.approx(ols, rel=1e-12)


def test_initial_needs_more_rows_than_dimensions():
    with pytest.raises(DegenerateData):
        initial_theta(_zero_tau(np.ones((2, 2))))


def test_initial_collinear_covariates(rng):
    x = rng.normal(size=40)
    z = np.column_stack([rng.normal(size=40), x, 2 * x])
    with pytest.raises(DegenerateData):
        initial_theta(_zero_tau(z, 1, 2))


def test_initial_nearly_collinear_is_floored(rng):
    x = rng.normal(size=40)
    z = np.column_stack([rng.normal(size=40), x, 2 * x + 1e-2 * rng.normal(size=40)])
    n = z.shape[0]
    # measurement error larger than the residual spread forces the floor
    data = Dataset(z, np.zeros((n, 1, 1)), np.tile(0.5 * np.eye(2), (n, 1, 1)))
    t0 = initial_theta(data)
    assert t0.beta1.shape == (1, 2) and t0.sigma_x.shape == (2, 2)
    assert np.linalg.eigvalsh(t0.sigma_x).min() >= 1e-6 * (1 - 1e-9)
    assert is_pd(t0.sigma_q)


@pytest.mark.xfail(
    strict=True,
    reason="the moment start is the attenuated slope; even the MLE has sqrt(MSE) 0.15 here",
)
def test_initial_slope_near_truth_at_n200():
    scn = Scenario("uniform", n=200, seed=5)
    taus = generate_taus(scn)
    hits = [abs(initial_theta(simulate_dataset(scn, taus, k)).beta1[0, 0] - 0.5) < 0.2 for k in range(400)]
    assert np.mean(hits) >= 0.95


@pytest.fixture(scope="module")
def fitted():
    scn = Scenario("uniform", n=40, seed=3)
    data = simulate_dataset(scn, generate_taus(scn), 0)
    return data, fit(data)


def test_fit_converges_to_stationary_point(fitted):
    data, res = fitted
    assert res.converged
    assert np.linalg.norm(res.score) < 1e-6 * data.n
    assert res.iterations < 50


def test_trace_is_monotone(fitted):
    _, res = fitted
    noise = LOGLIK_NOISE * max(1.0, abs(res.loglik))
    assert np.all(np.diff(res.trace) >= -noise)
    assert res.trace[-1] > res.trace[0]
    assert res.trace[-1] == res.loglik


def test_refit_from_solution(fitted):
    data, res = fitted
    again = fit(data, theta0=res.theta_hat)
    assert again.converged and again.iterations <= 2
    np.testing.assert_allclose(pack_theta(again.theta_hat), pack_theta(res.theta_hat), rtol=1e-8)


def test_standard_errors(fitted):
    _, res = fitted
    assert np.all(res.se > 0)
    np.testing.assert_allclose(standard_errors(res), res.se, rtol=1e-12)
    assert np.allclose(res.cov_theta, res.cov_theta.T)
    assert np.linalg.eigvalsh(res.cov_theta).min() > 0


def test_local_maximum(fitted):
    data, res = fitted
    x = pack_theta(res.theta_hat)
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = rng.normal(size=x.size) * 1e-3 * res.se
        t = Theta.univariate(*(x + d))
        assert log_likelihood(t, data) <= res.loglik + 1e-12


def test_shift_equivariance(fitted):
    data, res = fitted
    c = 3.7
    z = data.z.copy()
    z[:, 1] += c
    shifted = fit(Dataset(z, data.tau_y, data.tau_x))
    a, b = res.theta_hat, shifted.theta_hat
    assert b.mu_x[0] == pytest.approx(a.mu_x[0] + c, abs=1e-8)
    assert b.beta0[0] == pytest.approx(a.beta0[0] - a.beta1[0, 0] * c, abs=1e-8)
    for name in ("beta1", "sigma_x", "sigma_q"):
        np.testing.assert_allclose(getattr(b, name), getattr(a, name), atol=1e-8)


def test_noiseless_line_recovered(rng):
    x = rng.normal(-2.0, 2.0, 50)
    res = fit(_zero_tau(np.column_stack([-2.0 + 0.5 * x, x])))
    assert res.theta_hat.beta0[0] == pytest.approx(-2.0, abs=1e-6)
    assert res.theta_hat.beta1[0, 0] == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("vm", [(1, 2), (2, 1), (2, 2)])
def test_multivariate_fit(vm):
    v, m = vm
    rng = np.random.default_rng(7 + v + m)
    t, data = random_instance(rng, v, m, 300)
    res = fit(data)
    assert res.converged
    assert np.linalg.norm(res.score) < 1e-6 * data.n
    z = (pack_theta(res.theta_hat) - pack_theta(t)) / res.se
    assert np.all(np.abs(z) < 4.5)


def test_se_shrinks_like_root_n():
    med = []
    for n in (100, 200):
        scn = Scenario("uniform", n=n, seed=9)
        taus = generate_taus(scn)
        med.append(np.median([fit(simulate_dataset(scn, taus, k)).se[1] for k in range(60)]))
    assert med[1] / med[0] == pytest.approx(2**-0.5, abs=0.1)


def test_invert_information_guards():
    with pytest.raises(SingularInformation):
        invert_information(np.diag([1.0, 0.0]))
    with pytest.raises(SingularInformation):
        invert_information(np.diag([1.0, 1e-13]))
    K = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(invert_information(K) @ K, np.eye(2), atol=1e-14)


def test_max_iter_reports_non_convergence(sim_dataset):
    res = fit(sim_dataset, FitConfig(max_iter=1))
    assert not res.converged and res.iterations == 1
