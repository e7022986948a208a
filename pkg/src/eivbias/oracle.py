"""Reference computations used only for validation.

The dense path materializes the stacked mean ``(n q1,)``, the block-diagonal
``Sigma (n q1, n q1)``, ``F = (D; V)`` with ``V`` built from the full
``vec(C_r)`` and the weight ``H = diag(Sigma, 2 Sigma (x) Sigma)^{-1}``
literally, and evaluates score, information, one scoring step and the bias
vector as matrix products on those objects.  Memory grows like ``(n q1)^4``,
hence the size guard.

Finite differences are central with componentwise step ``h * max(1, |x_r|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .bias import bias_vector
from .errors import SizeGuard
from .likelihood import evaluate, log_likelihood
from .model import (
    Dataset,
    Observation,
    Theta,
    mean_and_cov,
    moment_structure,
    pack_theta,
    unpack_theta,
)

__all__ = [
    "MAX_DENSE_N",
    "DenseBundle",
    "dense_bundle",
    "dense_log_likelihood",
    "dense_score_info_bias",
    "dense_scoring_step",
    "finite_diff_gradient",
    "finite_diff_jacobian",
    "finite_diff_hessian",
    "rel_err",
    "random_instance",
    "CheckResult",
    "run_checks",
]

MAX_DENSE_N = 12


def rel_err(a, b) -> float:
    """``max|a - b| / max(1, max|b|)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def _vec(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, order="F")


@dataclass(frozen=True, eq=False)
class DenseBundle:
    mu: np.ndarray
    Sigma: np.ndarray
    u: np.ndarray
    D_tilde: np.ndarray
    C_full: np.ndarray
    F_tilde: np.ndarray
    H_tilde: np.ndarray
    u_tilde: np.ndarray


def dense_bundle(t: Theta, data: Dataset) -> DenseBundle:
    n = data.n
    if n > MAX_DENSE_N:
        raise SizeGuard(f"dense oracle limited to n <= {MAX_DENSE_N}, got {n}")
    st = moment_structure(t)
    p = st.dims.p
    blocks = [mean_and_cov(t, ob)[1] for ob in data]
    mu = np.concatenate([mean_and_cov(t, ob)[0] for ob in data])
    Sigma = scipy.linalg.block_diag(*blocks)
    u = data.z.reshape(-1) - mu
    ones = np.ones((n, 1))
    D_tilde = np.kron(ones, st.D)
    C_full = np.stack([np.kron(np.eye(n), st.C[r]) for r in range(p)])
    V_tilde = np.column_stack([_vec(C_full[r]) for r in range(p)])
    F = np.vstack([D_tilde, V_tilde])
    H = np.linalg.inv(scipy.linalg.block_diag(Sigma, 2.0 * np.kron(Sigma, Sigma)))
    u_tilde = np.concatenate([u, -_vec(Sigma - np.outer(u, u))])
    return DenseBundle(mu, Sigma, u, D_tilde, C_full, F, H, u_tilde)


def dense_log_likelihood(t: Theta, data: Dataset) -> float:
    b = dense_bundle(t, data)
    sign, logdet = np.linalg.slogdet(b.Sigma)
    return float(-0.5 * logdet - 0.5 * np.trace(np.linalg.solve(b.Sigma, np.outer(b.u, b.u))))


def dense_score_info_bias(t: Theta, data: Dataset):
    """Score, Fisher information and bias vector from the stacked forms."""
    b = dense_bundle(t, data)
    st = moment_structure(t)
    n, p = data.n, st.dims.p
    nq = b.mu.size
    FtH = b.F_tilde.T @ b.H_tilde
    U = FtH @ b.u_tilde
    K = FtH @ b.F_tilde
    Kinv = np.linalg.inv(K)
    ones = np.ones(n)
    eye_n = np.eye(n)
    phis = []
    for r in range(p):
        G = np.column_stack([
            np.concatenate([np.kron(ones, st.A2[s, r]), _vec(np.kron(eye_n, st.C2[s, r]))])
            for s in range(p)
        ])
        a_r = b.D_tilde[:, r][:, None]
        J = np.vstack([np.zeros((nq, p)), 2.0 * np.kron(np.eye(nq), a_r) @ b.D_tilde])
        phis.append(-0.5 * (G + J))
    xi = np.hstack(phis) @ _vec(Kinv)
    B = Kinv @ FtH @ xi
    return U, K, B


def dense_scoring_step(t: Theta, data: Dataset) -> np.ndarray:
    """One iteration of the reweighted least-squares form of Fisher scoring."""
    b = dense_bundle(t, data)
    FtH = b.F_tilde.T @ b.H_tilde
    u_star = b.F_tilde @ pack_theta(t) + b.u_tilde
    return np.linalg.solve(FtH @ b.F_tilde, FtH @ u_star)


def _steps(x, h):
    return h * np.maximum(1.0, np.abs(x))


def finite_diff_gradient(f: Callable, x, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    steps = _steps(x, h)
    g = np.empty(x.size)
    for r in range(x.size):
        e = np.zeros_like(x)
        e[r] = steps[r]
        g[r] = (f(x + e) - f(x - e)) / (2.0 * steps[r])
    return g


def finite_diff_jacobian(f: Callable, x, h: float = 1e-5) -> np.ndarray:
    """Derivative of an array-valued ``f``; result has a trailing axis of size ``p``."""
    x = np.asarray(x, dtype=float)
    steps = _steps(x, h)
    cols = []
    for r in range(x.size):
        e = np.zeros_like(x)
        e[r] = steps[r]
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * steps[r]))
    return np.stack(cols, axis=-1)


def finite_diff_hessian(f: Callable, x, h: float = 1e-3) -> np.ndarray:
    """Second derivatives of an array-valued ``f``; trailing axes ``(p, p)``.

    Four-point mixed central differences: exact (up to rounding) for
    polynomials of degree three, which covers the moment functions.
    """
    x = np.asarray(x, dtype=float)
    p = x.size
    steps = _steps(x, h)
    f0 = np.asarray(f(x))
    out = np.zeros(f0.shape + (p, p))
    for r in range(p):
        for s in range(r, p):
            er = np.zeros(p)
            es = np.zeros(p)
            er[r] = steps[r]
            es[s] = steps[s]
            val = (
                np.asarray(f(x + er + es)) - np.asarray(f(x + er - es))
                - np.asarray(f(x - er + es)) + np.asarray(f(x - er - es))
            ) / (4.0 * steps[r] * steps[s])
            out[..., r, s] = val
            out[..., s, r] = val
    return out


def _random_spd(rng, k, lo=0.5, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return (Q * rng.uniform(lo, hi, k)) @ Q.T


def random_instance(rng: np.random.Generator, v: int, m: int, n: int, theta: Theta | None = None):
    """A random valid parameter point and a dataset drawn from the model at it."""
    if theta is None:
        theta = Theta(
            rng.normal(0, 2, v), rng.normal(0, 1, (v, m)), rng.normal(0, 2, m),
            _random_spd(rng, m), _random_spd(rng, v),
        )
    ty = np.stack([_random_spd(rng, v, 0.1, 1.5) for _ in range(n)])
    tx = np.stack([_random_spd(rng, m, 0.1, 1.0) for _ in range(n)])
    obs = []
    for i in range(n):
        blank = Observation(np.zeros(v + m), ty[i], tx[i])
        mu, sig = mean_and_cov(theta, blank)
        obs.append(Observation(rng.multivariate_normal(mu, sig), ty[i], tx[i]))
    return theta, Dataset.from_observations(obs)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tol)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: max error {self.value:.3e} (tol {self.tol:.0e}, {self.seconds:.2f}s)"


def _moment_errors(t: Theta, obs: Observation):
    from .model import moment_derivatives

    dims = t.dims
    der = moment_derivatives(t, obs)

    def mom(x):
        mu, sig = mean_and_cov(unpack_theta(x, dims), obs)
        return np.concatenate([mu, sig.ravel()])

    x = pack_theta(t)
    q1 = dims.q1
    jac = finite_diff_jacobian(mom, x)
    hes = finite_diff_hessian(mom, x)
    first = max(rel_err(der.D_i, jac[:q1]), rel_err(der.C_i, jac[q1:].reshape(q1, q1, -1).transpose(2, 0, 1)))
    st = moment_structure(t)
    second = max(
        rel_err(st.A2, hes[:q1].transpose(1, 2, 0)),
        rel_err(st.C2, hes[q1:].reshape(q1, q1, dims.p, dims.p).transpose(2, 3, 0, 1)),
    )
    return first, second


def run_checks(seed: int = 20240101, instances: int = 20, perturb: float = 0.0) -> list[CheckResult]:
    """Analytic paths against finite differences and the dense stacked forms.

    ``perturb`` adds a constant to the analytic score before comparison; it
    exists to show that the checks are sensitive.
    """
    rng = np.random.default_rng(seed)
    out = []

    t0 = time.perf_counter()
    e1 = e2 = 0.0
    for k in range(instances):
        v, m = rng.integers(1, 3, size=2)
        t, data = random_instance(rng, int(v), int(m), 3)
        a, b = _moment_errors(t, next(iter(data)))
        e1, e2 = max(e1, a), max(e2, b)
    out.append(CheckResult("moment first derivatives vs finite differences", e1, 1e-6, time.perf_counter() - t0))
    out.append(CheckResult("moment second derivatives vs finite differences", e2, 1e-6, 0.0))

    t0 = time.perf_counter()
    err = 0.0
    for k in range(instances):
        v, m = rng.integers(1, 3, size=2)
        t, data = random_instance(rng, int(v), int(m), 25)
        dims = t.dims
        U = evaluate(t, data).score + perturb
        U_fd = finite_diff_gradient(lambda x: log_likelihood(unpack_theta(x, dims), data), pack_theta(t))
        err = max(err, rel_err(U, U_fd))
    out.append(CheckResult("score vs finite-difference gradient of log-likelihood", err, 1e-6, time.perf_counter() - t0))

    t0 = time.perf_counter()
    eu = ek = eb = el = es = 0.0
    for k in range(instances):
        v, m = rng.integers(1, 3, size=2)
        n = int(rng.integers(3, 11))
        t, data = random_instance(rng, int(v), int(m), n)
        U, K, B = dense_score_info_bias(t, data)
        bun = evaluate(t, data)
        eu = max(eu, rel_err(bun.score + perturb, U))
        ek = max(ek, rel_err(bun.fisher, K))
        eb = max(eb, rel_err(bias_vector(t, data), B))
        el = max(el, rel_err(bun.loglik, dense_log_likelihood(t, data)))
        step = pack_theta(t) + np.linalg.solve(bun.fisher, bun.score)
        es = max(es, rel_err(step, dense_scoring_step(t, data)))
    dt = time.perf_counter() - t0
    out.append(CheckResult("log-likelihood: blockwise vs dense", el, 1e-10, dt))
    out.append(CheckResult("score: blockwise vs dense", eu, 1e-10, 0.0))
    out.append(CheckResult("Fisher information: blockwise vs dense", ek, 1e-10, 0.0))
    out.append(CheckResult("bias vector: blockwise vs dense", eb, 1e-10, 0.0))
    out.append(CheckResult("scoring step: theta + K^-1 U vs reweighted least squares", es, 1e-10, 0.0))
    return out
