"""Maximum likelihood by safeguarded Fisher scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateData, NonPDCovariance, SingularInformation
from .likelihood import sufficient_sums
from .model import Dataset, Theta, is_pd, pack_theta, unpack_theta

__all__ = [
    "FitConfig",
    "FitResult",
    "initial_theta",
    "fit",
    "standard_errors",
    "invert_information",
]

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-6
MAX_CONDITION = 1e12
# relative log-likelihood change treated as rounding noise by the ascent check
LOGLIK_NOISE = 1e-12


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 200
    rel_tol: float = 1e-10
    step_halving_max: int = 30

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.step_halving_max < 0:
            raise ValueError("step_halving_max must be >= 0")


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: Theta
    se: np.ndarray
    cov_theta: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    score: np.ndarray | None = None
    fisher: np.ndarray | None = None


def invert_information(K: np.ndarray) -> np.ndarray:
    """Inverse of a Fisher information matrix via Cholesky.

    Raises
    ------
    SingularInformation
        If ``K`` is not positive definite or its condition number exceeds 1e12.
    """
    K = 0.5 * (K + K.T)
    ev = np.linalg.eigvalsh(K)
    if not ev[0] > 0 or ev[-1] / ev[0] > MAX_CONDITION:
        raise SingularInformation(f"information eigenvalues in [{ev[0]:.3g}, {ev[-1]:.3g}]")
    cf = scipy.linalg.cho_factor(K, lower=True)
    Kinv = scipy.linalg.cho_solve(cf, np.eye(K.shape[0]))
    return 0.5 * (Kinv + Kinv.T)


def _floor_eig(a: np.ndarray, eps: float = EIG_FLOOR) -> np.ndarray:
    a = 0.5 * (a + a.T)
    w, U = np.linalg.eigh(a)
    return (U * np.maximum(w, eps)) @ U.T


def initial_theta(data: Dataset) -> Theta:
    """Moment-based starting point.

    ``Sigma_x`` and ``Sigma_q`` subtract the average error covariances and are
    eigen-floored; the slope divides by ``Sigma_x + mean(tau_x)``, i.e. by the
    raw sample covariance of ``X``, so it is the attenuated least-squares
    slope.  Fisher scoring removes the attenuation.
    """
    dims = data.dims
    v, n = dims.v, data.n
    if n <= dims.q1:
        raise DegenerateData(f"need n > v + m = {dims.q1} observations, got {n}")
    Y, X = data.z[:, :v], data.z[:, v:]
    S = np.atleast_2d(np.cov(data.z, rowvar=False))
    Syy, Syx, Sxx = S[:v, :v], S[:v, v:], S[v:, v:]
    tx_bar = data.tau_x.mean(axis=0)
    ty_bar = data.tau_y.mean(axis=0)

    if np.linalg.eigvalsh(0.5 * (Sxx + Sxx.T))[0] <= EIG_FLOOR * max(1.0, np.abs(Sxx).max()):
        raise DegenerateData("sample covariance of X is singular")
    mu_x = X.mean(axis=0)
    sigma_x = _floor_eig(Sxx - tx_bar)
    try:
        beta1 = np.linalg.solve((sigma_x + tx_bar).T, Syx.T).T
    except np.linalg.LinAlgError:
        raise DegenerateData("sample covariance of X is singular after flooring") from None
    beta0 = Y.mean(axis=0) - beta1 @ mu_x
    sigma_q = _floor_eig(Syy - beta1 @ sigma_x @ beta1.T - ty_bar)
    return Theta(beta0, beta1, mu_x, sigma_x, sigma_q)


def _valid_blocks(t: Theta) -> bool:
    return is_pd(t.sigma_x) and is_pd(t.sigma_q)


def fit(data: Dataset, cfg: FitConfig | None = None, theta0: Theta | None = None) -> FitResult:
    """Fisher scoring ``theta <- theta + K^{-1} U`` with step halving.

    A candidate step is halved while it leaves the positive-definite cone
    (``Sigma_x``, ``Sigma_q`` or any ``Sigma_i``) or lowers the
    log-likelihood by more than rounding noise (``LOGLIK_NOISE``, relative).  Convergence requires both the relative parameter change
    and the relative log-likelihood change to fall below ``cfg.rel_tol``.
    A non-converged fit is returned with ``converged=False`` rather than
    raised; callers decide what to do with it.
    """
    cfg = cfg or FitConfig()
    dims = data.dims
    theta = initial_theta(data) if theta0 is None else theta0
    x = pack_theta(theta)
    try:
        ss = sufficient_sums(theta, data)
    except NonPDCovariance:
        raise DegenerateData("starting point has a non positive definite Sigma_i") from None
    ll = ss.loglik
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        U = ss.score()
        try:
            Kinv = invert_information(ss.fisher())
        except SingularInformation:
            # typically a variance block collapsing towards zero
            log.debug("information became singular at iteration %d", it)
            break
        step = Kinv @ U
        alpha = 1.0
        accepted = None
        for _ in range(cfg.step_halving_max + 1):
            x_new = x + alpha * step
            t_new = unpack_theta(x_new, dims)
            if _valid_blocks(t_new):
                try:
                    ss_new = sufficient_sums(t_new, data)
                except NonPDCovariance:
                    ss_new = None
                if ss_new is not None and ss_new.loglik >= ll - LOGLIK_NOISE * max(1.0, abs(ll)):
                    accepted = (x_new, t_new, ss_new)
                    break
            alpha *= 0.5
        dx = np.max(np.abs(alpha * step)) / max(1.0, np.max(np.abs(x)))
        if accepted is None:
            # no ascent possible along the scoring direction: stationary if
            # the full step is already negligible
            converged = np.max(np.abs(step)) / max(1.0, np.max(np.abs(x))) < cfg.rel_tol
            break
        x, theta, ss = accepted
        dll = abs(ss.loglik - ll) / max(1.0, abs(ll))
        ll = ss.loglik
        trace.append(ll)
        if dx < cfg.rel_tol and dll < cfg.rel_tol:
            converged = True
            break
    if not converged:
        log.debug("Fisher scoring stopped after %d iterations without converging", it)

    K = ss.fisher()
    try:
        cov = invert_information(K)
        se = np.sqrt(np.diag(cov))
    except SingularInformation:
        if converged:
            raise
        cov = np.full_like(K, np.nan)
        se = np.full(dims.p, np.nan)
    return FitResult(theta, se, cov, ll, it, converged, trace, ss.score(), K)


def standard_errors(result: FitResult) -> np.ndarray:
    """Square roots of the diagonal of the inverse information at the fit."""
    return np.sqrt(np.diag(invert_information(result.fisher)))
