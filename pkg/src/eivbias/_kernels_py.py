"""Pure-NumPy fallback for the per-observation accumulation kernel.

Same contract as the compiled ``_kernels.accumulate``; see :mod:`._backend`.
"""

import numpy as np


def accumulate(sigma0, tau, resid, want_q=True):
    """Accumulate sufficient sums over observations.

    For ``Sigma_i = sigma0 + tau[i]`` with inverse ``W_i`` and ``w_i = W_i r_i``
    returns ``(logdet, quad, S1, s3, S4, Q, bad)`` where ``logdet`` and
    ``quad`` are the summed ``log|Sigma_i|`` and ``r_i' W_i r_i``,
    ``S1 = sum W_i``, ``s3 = sum w_i``, ``S4 = sum w_i w_i'`` and
    ``Q[a, b, c, d] = sum W_i[a, b] W_i[c, d]``.  ``bad`` is the first index
    whose matrix is not positive definite, or -1; when ``bad >= 0`` the other
    outputs are undefined.
    """
    q = sigma0.shape[0]
    sig = sigma0[None, :, :] + tau
    try:
        L = np.linalg.cholesky(sig)
    except np.linalg.LinAlgError:
        for i in range(sig.shape[0]):
            try:
                np.linalg.cholesky(sig[i])
            except np.linalg.LinAlgError:
                return 0.0, 0.0, None, None, None, None, i
        raise
    eye = np.broadcast_to(np.eye(q), sig.shape)
    Linv = np.linalg.solve(L, eye)
    W = np.einsum("nka,nkb->nab", Linv, Linv)
    w = np.einsum("nab,nb->na", W, resid)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
    quad = float(np.einsum("na,na->", resid, w))
    S1 = W.sum(axis=0)
    s3 = w.sum(axis=0)
    S4 = w.T @ w
    Q = np.einsum("nab,ncd->abcd", W, W) if want_q else None
    return float(logdet), quad, S1, s3, S4, Q, -1
