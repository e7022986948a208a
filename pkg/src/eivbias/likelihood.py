"""Log-likelihood, score and expected Fisher information.

All three are accumulated observation by observation.  Because the moment
derivatives are shared across observations, the per-observation work reduces
to inverting ``Sigma_i`` and adding a handful of sufficient sums (see
:func:`eivbias._kernels_py.accumulate`); the ``p``-dimensional algebra is
then done once.  The stacked ``nq1 x nq1`` objects are never built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import NonPDCovariance
from .model import Dataset, MomentStructure, Theta, moment_structure

__all__ = [
    "LikelihoodBundle",
    "SufficientSums",
    "sufficient_sums",
    "log_likelihood",
    "score",
    "fisher_information",
    "evaluate",
]


@dataclass(frozen=True, eq=False)
class SufficientSums:
    structure: MomentStructure
    logdet: float
    quad: float
    S1: np.ndarray
    s3: np.ndarray
    S4: np.ndarray
    Q: np.ndarray | None

    @property
    def loglik(self) -> float:
        return -0.5 * (self.logdet + self.quad)

    def score(self) -> np.ndarray:
        st = self.structure
        p = st.dims.p
        return st.D.T @ self.s3 - 0.5 * st.C.reshape(p, -1) @ (self.S1 - self.S4).T.reshape(-1)

    def fisher(self) -> np.ndarray:
        st = self.structure
        K = st.D.T @ self.S1 @ st.D + 0.5 * _trace_pairs(self.Q, st.C, st.C)
        return 0.5 * (K + K.T)


def _trace_pairs(Q: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """``out[r, s] = sum_i tr(W_i left[r] W_i right[s])`` from ``Q = sum_i W_i (x) W_i``."""
    q = Q.shape[0]
    Qt = Q.transpose(1, 2, 3, 0).reshape(q * q, q * q)
    return left.reshape(left.shape[0], -1) @ Qt @ right.reshape(right.shape[0], -1).T


def sufficient_sums(t: Theta, data: Dataset, want_q: bool = True, structure=None) -> SufficientSums:
    st = moment_structure(t) if structure is None else structure
    resid = np.ascontiguousarray(data.z - st.mu)
    logdet, quad, S1, s3, S4, Q, bad = _backend.accumulate(
        np.ascontiguousarray(st.sigma0), data.tau_blocks, resid, want_q
    )
    if bad >= 0:
        raise NonPDCovariance(int(bad))
    return SufficientSums(st, logdet, quad, S1, s3, S4, Q)


@dataclass(frozen=True, eq=False)
class LikelihoodBundle:
    loglik: float
    score: np.ndarray
    fisher: np.ndarray


def log_likelihood(t: Theta, data: Dataset) -> float:
    """Gaussian log-likelihood with additive constants dropped."""
    return sufficient_sums(t, data, want_q=False).loglik


def score(t: Theta, data: Dataset) -> np.ndarray:
    return sufficient_sums(t, data, want_q=False).score()


def fisher_information(t: Theta, data: Dataset) -> np.ndarray:
    return sufficient_sums(t, data).fisher()


def evaluate(t: Theta, data: Dataset) -> LikelihoodBundle:
    """Log-likelihood, score and Fisher information from a single pass."""
    ss = sufficient_sums(t, data)
    return LikelihoodBundle(ss.loglik, ss.score(), ss.fisher())
