"""Second-order bias of the MLE and bias-corrected estimates.

The bias vector is the weighted least-squares projection

    B = K^{-1} F' H xi

of the auxiliary vector ``xi = sum_r Phi_r K^{-1}[:, r]`` on the columns of
``F = (D; V)`` with weights ``H = diag(Sigma^{-1}, (2 Sigma (x) Sigma)^{-1})``
and ``Phi_r = -(G_r + J_r) / 2``.  Column ``s`` of ``G_r`` stacks the second
derivatives ``a_sr`` and ``vec(C_sr)``; column ``s`` of ``J_r`` is
``(0; 2 vec(a_r a_s'))``.

Since ``H`` is block diagonal over observations only the diagonal blocks of
``xi`` matter, and those are identical for every observation:

    xi_mean = -1/2 sum_rs Kinv[s, r] a_sr
    xi_cov  = -1/2 sum_rs Kinv[s, r] (C_sr + 2 a_r a_s')

so ``F' H xi = D' (sum W_i) xi_mean + 1/2 [sum_i tr(W_i C_r W_i xi_cov)]_r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimator import FitResult, invert_information
from .likelihood import SufficientSums, _trace_pairs, sufficient_sums
from .model import (
    Dataset,
    Theta,
    is_pd,
    moment_structure,
    pack_theta,
    unpack_theta,
    vech_pairs,
)

__all__ = [
    "BiasReport",
    "PerObsBias",
    "bias_vector",
    "bias_from_sums",
    "correct",
    "bias_mu_i",
    "var_mu_i",
    "bias_sigma_i",
    "bias_psi",
]


def bias_from_sums(ss: SufficientSums, Kinv: np.ndarray | None = None) -> np.ndarray:
    st = ss.structure
    if Kinv is None:
        Kinv = invert_information(ss.fisher())
    p, q1 = st.dims.p, st.dims.q1
    kv = Kinv.reshape(-1)  # symmetric, so [s, r] and [r, s] orderings agree
    xi_mean = -0.5 * (kv @ st.A2.reshape(p * p, q1))
    xi_cov = -0.5 * ((kv @ st.C2.reshape(p * p, q1 * q1)).reshape(q1, q1) + 2.0 * st.D @ Kinv @ st.D.T)
    proj = st.D.T @ (ss.S1 @ xi_mean) + 0.5 * _trace_pairs(ss.Q, st.C, xi_cov[None])[:, 0]
    return Kinv @ proj


def bias_vector(t: Theta, data: Dataset) -> np.ndarray:
    """O(1/n) bias of the MLE, evaluated at ``t``."""
    return bias_from_sums(sufficient_sums(t, data))


@dataclass(frozen=True, eq=False)
class PerObsBias:
    bias_mu: np.ndarray
    bias_sigma: np.ndarray
    var_mu: np.ndarray


@dataclass(frozen=True, eq=False)
class BiasReport:
    """Bias vector and the corrected parameters.

    ``pd_lost`` names the covariance blocks (``"sigma_x"``, ``"sigma_q"``)
    that are no longer positive definite after correction; the raw corrected
    values are kept in ``theta_tilde`` and the uncorrected blocks remain
    available through ``theta_hat``.
    """

    theta_hat: Theta
    bias_theta: np.ndarray
    theta_tilde: Theta
    cov_theta: np.ndarray
    pd_lost: tuple = ()
    per_obs: list | None = None

    @property
    def packed_tilde(self) -> np.ndarray:
        return pack_theta(self.theta_hat) - self.bias_theta


def correct(fit: FitResult, data: Dataset, per_obs: bool = False) -> BiasReport:
    """Bias-correct a fit; the bias is evaluated at the MLE."""
    theta = fit.theta_hat
    ss = sufficient_sums(theta, data)
    Kinv = invert_information(ss.fisher())
    B = bias_from_sums(ss, Kinv)
    tilde = unpack_theta(pack_theta(theta) - B, theta.dims)
    lost = tuple(name for name in ("sigma_x", "sigma_q") if not is_pd(getattr(tilde, name)))
    rows = None
    if per_obs:
        # derivatives of the moments do not depend on i; tau only shifts Sigma_i
        L, M = _mu_derivs(theta)
        b_mu = _functional_bias(L, M, B, Kinv)
        b_sig = _functional_bias(*_sigma_derivs(theta), B, Kinv)
        v_mu = L @ Kinv @ L.T
        rows = [PerObsBias(b_mu.copy(), b_sig.copy(), v_mu.copy()) for _ in range(data.n)]
    return BiasReport(theta, B, tilde, Kinv, lost, rows)


def _functional_bias(jac: np.ndarray, hess: np.ndarray, B: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """``jac @ B + 1/2 tr*(hess @ cov)`` for ``hess`` of shape ``(h, p, p)``."""
    return jac @ B + 0.5 * np.einsum("lrs,sr->l", hess, cov)


def _mu_derivs(t: Theta):
    st = moment_structure(t)
    return st.D, st.A2.transpose(2, 0, 1)


def _sigma_derivs(t: Theta):
    st = moment_structure(t)
    pairs = vech_pairs(st.dims.q1)
    rows = [i for i, _ in pairs]
    cols = [j for _, j in pairs]
    jac = st.C[:, rows, cols].T
    hess = st.C2[:, :, rows, cols].transpose(2, 0, 1)
    return jac, hess


def _check_index(data: Dataset, i: int):
    if not 0 <= i < data.n:
        raise IndexError(f"observation index {i} out of range for n={data.n}")


def bias_mu_i(t: Theta, data: Dataset, i: int) -> np.ndarray:
    """Bias of the fitted mean of observation ``i``."""
    _check_index(data, i)
    ss = sufficient_sums(t, data)
    Kinv = invert_information(ss.fisher())
    return _functional_bias(*_mu_derivs(t), bias_from_sums(ss, Kinv), Kinv)


def var_mu_i(t: Theta, data: Dataset, i: int) -> np.ndarray:
    _check_index(data, i)
    L = moment_structure(t).D
    return L @ invert_information(sufficient_sums(t, data).fisher()) @ L.T


def bias_sigma_i(t: Theta, data: Dataset, i: int) -> np.ndarray:
    """Bias of ``vech(Sigma_i)`` at the fit (lower triangle, column-major)."""
    _check_index(data, i)
    ss = sufficient_sums(t, data)
    Kinv = invert_information(ss.fisher())
    return _functional_bias(*_sigma_derivs(t), bias_from_sums(ss, Kinv), Kinv)


def _fd_jacobian(psi, x, h):
    cols = []
    for r in range(x.size):
        step = h * max(1.0, abs(x[r]))
        e = np.zeros_like(x)
        e[r] = step
        cols.append((np.atleast_1d(psi(x + e)) - np.atleast_1d(psi(x - e))) / (2 * step))
    return np.column_stack(cols)


def _fd_hessian(psi, x, h):
    p = x.size
    f0 = np.atleast_1d(psi(x))
    H = np.zeros((f0.size, p, p))
    steps = h * np.maximum(1.0, np.abs(x))
    for r in range(p):
        for s in range(r, p):
            er = np.zeros(p)
            es = np.zeros(p)
            er[r] = steps[r]
            es[s] = steps[s]
            val = (
                np.atleast_1d(psi(x + er + es)) - np.atleast_1d(psi(x + er - es))
                - np.atleast_1d(psi(x - er + es)) + np.atleast_1d(psi(x - er - es))
            ) / (4 * steps[r] * steps[s])
            H[:, r, s] = H[:, s, r] = val
    return H


def bias_psi(
    t: Theta,
    data: Dataset,
    psi: Callable[[np.ndarray], np.ndarray],
    jac: Callable[[np.ndarray], np.ndarray] | None = None,
    hess: Callable[[np.ndarray], np.ndarray] | None = None,
    h1: float = 1e-5,
    h2: float = 1e-4,
) -> np.ndarray:
    """Bias of a smooth functional ``psi`` of the packed parameter vector.

    ``jac`` returns the ``(h, p)`` Jacobian and ``hess`` the ``(h, p, p)``
    stack of Hessians; either may be omitted, in which case central finite
    differences with steps ``h1`` / ``h2`` (scaled by ``max(1, |theta_r|)``)
    are used.
    """
    x = pack_theta(t)
    ss = sufficient_sums(t, data)
    Kinv = invert_information(ss.fisher())
    B = bias_from_sums(ss, Kinv)
    J = np.atleast_2d(jac(x)) if jac is not None else _fd_jacobian(psi, x, h1)
    H = np.asarray(hess(x)) if hess is not None else _fd_hessian(psi, x, h2)
    if H.ndim == 2:
        H = H[None]
    return _functional_bias(J, H, B, Kinv)
