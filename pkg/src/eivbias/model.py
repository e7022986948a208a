"""Parameter space, moment functions and their analytic derivatives.

The observed vector for record ``i`` is ``z_i = (Y_i, X_i)`` with

    mu(theta)      = (beta0 + beta1 @ mu_x, mu_x)
    Sigma_i(theta) = [[beta1 Sx beta1' + Sq + tau_y_i, beta1 Sx],
                      [Sx beta1',                      Sx + tau_x_i]]

Parameters are packed as ``(beta0, vec(beta1), mu_x, vech(Sx), vech(Sq))``
where ``vec`` stacks columns and ``vech`` stacks the columns of the lower
triangle (diagonal included).  Every place that indexes a covariance
parameter goes through :func:`vech_pairs`, so the convention lives here only.

Neither the mean nor the derivatives of the moments depend on ``i``; the
known error covariances enter ``Sigma_i`` additively.  Derivative arrays are
therefore computed once per ``theta`` and shared by all observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, NonPDCovariance

__all__ = [
    "ModelDims",
    "Theta",
    "Observation",
    "Dataset",
    "PerObsDerivatives",
    "MomentStructure",
    "vech",
    "unvech",
    "vech_pairs",
    "pack_theta",
    "unpack_theta",
    "mean_and_cov",
    "moment_structure",
    "moment_derivatives",
    "is_pd",
]

SYM_TOL = 1e-10


def vech_pairs(k: int) -> list[tuple[int, int]]:
    """Index pairs ``(row, col)`` of the lower triangle, column-major."""
    return [(i, j) for j in range(k) for i in range(j, k)]


def vech(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.array([a[i, j] for i, j in vech_pairs(a.shape[0])])


def unvech(x: Sequence[float], k: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if k is None:
        k = int(round((np.sqrt(8 * x.size + 1) - 1) / 2))
    if k * (k + 1) // 2 != x.size:
        raise DimensionError(f"length {x.size} is not a triangular number for k={k}")
    out = np.zeros((k, k))
    for val, (i, j) in zip(x, vech_pairs(k)):
        out[i, j] = out[j, i] = val
    return out


def is_pd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class ModelDims:
    """Dimension bookkeeping: ``v`` responses, ``m`` covariates, ``n`` rows."""

    v: int
    m: int
    n: int | None = None

    def __post_init__(self):
        if self.v < 1 or self.m < 1:
            raise DimensionError(f"need v >= 1 and m >= 1, got v={self.v}, m={self.m}")
        if self.n is not None and self.n < 1:
            raise DimensionError(f"need n >= 1, got {self.n}")

    @property
    def q1(self) -> int:
        return self.v + self.m

    @property
    def q2(self) -> int:
        return self.q1 * (self.q1 + 1) // 2

    @property
    def p(self) -> int:
        v, m = self.v, self.m
        return v * (m + 1) + m + m * (m + 1) // 2 + v * (v + 1) // 2

    # index ranges of the packed vector
    @property
    def sl_beta0(self) -> slice:
        return slice(0, self.v)

    @property
    def sl_beta1(self) -> slice:
        return slice(self.v, self.v * (self.m + 1))

    @property
    def sl_mu_x(self) -> slice:
        s = self.v * (self.m + 1)
        return slice(s, s + self.m)

    @property
    def sl_sigma_x(self) -> slice:
        s = self.v * (self.m + 1) + self.m
        return slice(s, s + self.m * (self.m + 1) // 2)

    @property
    def sl_sigma_q(self) -> slice:
        return slice(self.sl_sigma_x.stop, self.p)

    def with_n(self, n: int) -> "ModelDims":
        return ModelDims(self.v, self.m, n)

    def param_names(self) -> list[str]:
        """Human-readable labels in packing order.

        For ``v = m = 1`` these are the familiar ``beta0, beta1, mu_x,
        sigma_x2, sigma2``.
        """
        v, m = self.v, self.m
        if v == 1 and m == 1:
            return ["beta0", "beta1", "mu_x", "sigma_x2", "sigma2"]
        names = [f"beta0_{i + 1}" for i in range(v)]
        names += [f"beta1_{i + 1}_{j + 1}" for j in range(m) for i in range(v)]
        names += [f"mu_x_{k + 1}" for k in range(m)]
        names += [f"Sigma_x_{i + 1}_{j + 1}" for i, j in vech_pairs(m)]
        names += [f"Sigma_q_{i + 1}_{j + 1}" for i, j in vech_pairs(v)]
        return names


@dataclass(frozen=True, eq=False)
class Theta:
    """Structured model parameters."""

    beta0: np.ndarray
    beta1: np.ndarray
    mu_x: np.ndarray
    sigma_x: np.ndarray
    sigma_q: np.ndarray

    def __post_init__(self):
        b0 = np.array(self.beta0, dtype=float).ravel()
        v = b0.size
        b1 = np.array(self.beta1, dtype=float).reshape(v, -1)
        m = b1.shape[1]
        mux = np.array(self.mu_x, dtype=float).ravel()
        sx = np.array(self.sigma_x, dtype=float).reshape(m, m) if np.size(self.sigma_x) == m * m else None
        sq = np.array(self.sigma_q, dtype=float).reshape(v, v) if np.size(self.sigma_q) == v * v else None
        if mux.size != m or sx is None or sq is None:
            raise DimensionError("inconsistent Theta component shapes")
        for name, val in (("beta0", b0), ("beta1", b1), ("mu_x", mux), ("sigma_x", sx), ("sigma_q", sq)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @classmethod
    def univariate(cls, beta0, beta1, mu_x, sigma_x2, sigma2) -> "Theta":
        """Scalar ``v = m = 1`` constructor."""
        return cls(
            np.array([beta0]), np.array([[beta1]]), np.array([mu_x]),
            np.array([[sigma_x2]]), np.array([[sigma2]]),
        )

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.beta0.size, self.mu_x.size)

    def pack(self) -> np.ndarray:
        return pack_theta(self)

    def is_valid(self) -> bool:
        """Both covariance blocks symmetric positive definite."""
        return all(
            np.allclose(s, s.T, rtol=0, atol=SYM_TOL * max(1.0, np.abs(s).max())) and is_pd(s)
            for s in (self.sigma_x, self.sigma_q)
        )

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.pack(), other.pack())

    def __repr__(self):
        vals = ", ".join(f"{x:.6g}" for x in self.pack())
        return f"Theta(v={self.dims.v}, m={self.dims.m}, packed=[{vals}])"


def pack_theta(t: Theta) -> np.ndarray:
    return np.concatenate([
        t.beta0,
        t.beta1.ravel(order="F"),
        t.mu_x,
        vech(t.sigma_x),
        vech(t.sigma_q),
    ])


def unpack_theta(x, dims: ModelDims) -> Theta:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != dims.p:
        raise DimensionError(f"packed vector has length {x.size}, expected p={dims.p}")
    return Theta(
        x[dims.sl_beta0].copy(),
        x[dims.sl_beta1].reshape(dims.v, dims.m, order="F"),
        x[dims.sl_mu_x].copy(),
        unvech(x[dims.sl_sigma_x], dims.m),
        unvech(x[dims.sl_sigma_q], dims.v),
    )


def _check_psd(a: np.ndarray, what: str):
    a = np.asarray(a, dtype=float)
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    if not np.allclose(a, np.swapaxes(a, -1, -2), rtol=0, atol=SYM_TOL * scale):
        raise DimensionError(f"{what} is not symmetric")
    if a.size and np.linalg.eigvalsh(a).min() < -SYM_TOL * scale:
        raise DimensionError(f"{what} is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class Observation:
    """One record ``z = (Y, X)`` with its known error covariances."""

    z: np.ndarray
    tau_y: np.ndarray
    tau_x: np.ndarray

    def __post_init__(self):
        ty = np.atleast_2d(np.asarray(self.tau_y, dtype=float))
        tx = np.atleast_2d(np.asarray(self.tau_x, dtype=float))
        z = np.asarray(self.z, dtype=float).ravel()
        if z.size != ty.shape[0] + tx.shape[0]:
            raise DimensionError("z length must equal v + m")
        _check_psd(ty, "tau_y")
        _check_psd(tx, "tau_x")
        ty = 0.5 * (ty + ty.T)
        tx = 0.5 * (tx + tx.T)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "tau_y", ty)
        object.__setattr__(self, "tau_x", tx)

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.tau_y.shape[0], self.tau_x.shape[0], 1)


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` observations stored as stacked arrays.

    ``z`` is ``(n, v+m)``; ``tau_y`` is ``(n, v, v)``; ``tau_x`` is ``(n, m, m)``.
    """

    z: np.ndarray
    tau_y: np.ndarray
    tau_x: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        n = z.shape[0]
        ty = np.asarray(self.tau_y, dtype=float).reshape(n, -1)
        tx = np.asarray(self.tau_x, dtype=float).reshape(n, -1)
        v = int(round(np.sqrt(ty.shape[1])))
        m = int(round(np.sqrt(tx.shape[1])))
        if v * v != ty.shape[1] or m * m != tx.shape[1] or z.shape[1] != v + m:
            raise DimensionError("z, tau_y and tau_x shapes are inconsistent")
        ty = ty.reshape(n, v, v)
        tx = tx.reshape(n, m, m)
        if self.validate:
            _check_psd(ty, "tau_y")
            _check_psd(tx, "tau_x")
        ty = 0.5 * (ty + ty.transpose(0, 2, 1))
        tx = 0.5 * (tx + tx.transpose(0, 2, 1))
        for name, val in (("z", z), ("tau_y", ty), ("tau_x", tx)):
            val = np.array(val, order="C")
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Dataset":
        if not observations:
            raise DimensionError("empty observation list")
        d0 = observations[0].dims
        for k, ob in enumerate(observations):
            if ob.dims != d0:
                raise DimensionError(f"observation {k} has dims {ob.dims}, expected {d0}")
        return cls(
            np.stack([o.z for o in observations]),
            np.stack([o.tau_y for o in observations]),
            np.stack([o.tau_x for o in observations]),
            validate=False,
        )

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.tau_y.shape[1], self.tau_x.shape[1], self.n)

    @property
    def observations(self) -> list[Observation]:
        return list(self)

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(self.z[i], self.tau_y[i], self.tau_x[i])

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.atleast_1d(idx)
        return Dataset(self.z[idx], self.tau_y[idx], self.tau_x[idx], validate=False)

    @cached_property
    def tau_blocks(self) -> np.ndarray:
        """``(n, q1, q1)`` block-diagonal error covariances."""
        v, m = self.dims.v, self.dims.m
        out = np.zeros((self.n, v + m, v + m))
        out[:, :v, :v] = self.tau_y
        out[:, v:, v:] = self.tau_x
        return out


def _base_moments(t: Theta) -> tuple[np.ndarray, np.ndarray]:
    """Mean and the error-free part of the covariance."""
    b1, sx = t.beta1, t.sigma_x
    mu = np.concatenate([t.beta0 + b1 @ t.mu_x, t.mu_x])
    v = b1.shape[0]
    b1sx = b1 @ sx
    sigma = np.empty((v + sx.shape[0],) * 2)
    sigma[:v, :v] = b1sx @ b1.T + t.sigma_q
    sigma[:v, v:] = b1sx
    sigma[v:, :v] = b1sx.T
    sigma[v:, v:] = sx
    return mu, 0.5 * (sigma + sigma.T)


def mean_and_cov(t: Theta, obs: Observation) -> tuple[np.ndarray, np.ndarray]:
    """``mu_i(theta)`` and ``Sigma_i(theta)`` for one observation."""
    if t.dims != ModelDims(obs.dims.v, obs.dims.m):
        raise DimensionError(f"theta has dims {t.dims}, observation has {obs.dims}")
    mu, sigma = _base_moments(t)
    v = t.dims.v
    sigma = sigma.copy()
    sigma[:v, :v] += obs.tau_y
    sigma[v:, v:] += obs.tau_x
    return mu, sigma


class MomentStructure:
    """Derivatives of the moments with respect to the packed parameters.

    Shared by every observation.  ``D`` is ``(q1, p)``; ``C`` is
    ``(p, q1, q1)`` with ``C[r] = dSigma/dtheta_r``; ``A2`` is ``(p, p, q1)``
    and ``C2`` is ``(p, p, q1, q1)`` holding all second derivatives (mostly
    zero, but dense is cheap at these sizes).  Derivative arrays are built on
    first access.
    """

    def __init__(self, t: Theta):
        self.theta = t
        self.dims = t.dims
        self.mu, self.sigma0 = _base_moments(t)

    @cached_property
    def _dirs(self):
        v, m = self.dims.v, self.dims.m
        b1 = [_unit((v, m), (i, j)) for j in range(m) for i in range(v)]
        sx = [_unit((m, m), (i, j), (j, i)) for i, j in vech_pairs(m)]
        sq = [_unit((v, v), (i, j), (j, i)) for i, j in vech_pairs(v)]
        return b1, sx, sq

    def _range(self, sl: slice) -> range:
        return range(sl.start, sl.stop)

    @cached_property
    def D(self) -> np.ndarray:
        dims, t = self.dims, self.theta
        v = dims.v
        D = np.zeros((dims.q1, dims.p))
        D[:v, :v] = np.eye(v)
        for r, E in zip(self._range(dims.sl_beta1), self._dirs[0]):
            D[:v, r] = E @ t.mu_x
        for k, r in enumerate(self._range(dims.sl_mu_x)):
            D[:v, r] = t.beta1[:, k]
            D[v + k, r] = 1.0
        D.flags.writeable = False
        return D

    @cached_property
    def C(self) -> np.ndarray:
        dims, t = self.dims, self.theta
        v = dims.v
        b1, sx = t.beta1, t.sigma_x
        b1_dirs, sx_dirs, sq_dirs = self._dirs
        C = np.zeros((dims.p, dims.q1, dims.q1))
        for r, E in zip(self._range(dims.sl_beta1), b1_dirs):
            Esx = E @ sx
            C[r, :v, :v] = Esx @ b1.T + b1 @ Esx.T
            C[r, :v, v:] = Esx
            C[r, v:, :v] = Esx.T
        for r, F in zip(self._range(dims.sl_sigma_x), sx_dirs):
            b1F = b1 @ F
            C[r, :v, :v] = b1F @ b1.T
            C[r, :v, v:] = b1F
            C[r, v:, :v] = b1F.T
            C[r, v:, v:] = F
        for r, F in zip(self._range(dims.sl_sigma_q), sq_dirs):
            C[r, :v, :v] = F
        C.flags.writeable = False
        return C

    @cached_property
    def A2(self) -> np.ndarray:
        dims = self.dims
        A2 = np.zeros((dims.p, dims.p, dims.q1))
        for r, E in zip(self._range(dims.sl_beta1), self._dirs[0]):
            for k, s in enumerate(self._range(dims.sl_mu_x)):
                A2[r, s, :dims.v] = A2[s, r, :dims.v] = E[:, k]
        A2.flags.writeable = False
        return A2

    @cached_property
    def C2(self) -> np.ndarray:
        dims, t = self.dims, self.theta
        v, q1 = dims.v, dims.q1
        b1, sx = t.beta1, t.sigma_x
        b1_dirs, sx_dirs, _ = self._dirs
        C2 = np.zeros((dims.p, dims.p, q1, q1))
        for r, E in zip(self._range(dims.sl_beta1), b1_dirs):
            for s, E2 in zip(self._range(dims.sl_beta1), b1_dirs):
                C2[r, s, :v, :v] = E @ sx @ E2.T + E2 @ sx @ E.T
            for s, F in zip(self._range(dims.sl_sigma_x), sx_dirs):
                EF = E @ F
                blk = np.zeros((q1, q1))
                blk[:v, :v] = EF @ b1.T + b1 @ EF.T
                blk[:v, v:] = EF
                blk[v:, :v] = EF.T
                C2[r, s] = C2[s, r] = blk
        C2.flags.writeable = False
        return C2

    @property
    def V(self) -> np.ndarray:
        """``(q1^2, p)`` with column ``r`` equal to ``vec(C_r)``."""
        q1 = self.dims.q1
        return self.C.transpose(0, 2, 1).reshape(self.dims.p, q1 * q1).T


def _unit(shape, *idx) -> np.ndarray:
    e = np.zeros(shape)
    for i in idx:
        e[i] = 1.0
    return e


def moment_structure(t: Theta) -> MomentStructure:
    return MomentStructure(t)


@dataclass(frozen=True, eq=False)
class PerObsDerivatives:
    """Moments and their derivatives for a single observation.

    ``ddmu`` and ``ddSigma`` are sparse maps ``(r, s) -> array`` holding only
    the structurally nonzero second derivatives (both orderings present).
    """

    mu_i: np.ndarray
    Sigma_i: np.ndarray
    D_i: np.ndarray
    V_i: np.ndarray
    ddmu: dict
    ddSigma: dict

    @property
    def C_i(self) -> np.ndarray:
        q1 = self.Sigma_i.shape[0]
        return self.V_i.T.reshape(-1, q1, q1).transpose(0, 2, 1)


def moment_derivatives(t: Theta, obs: Observation) -> PerObsDerivatives:
    st = moment_structure(t)
    mu, sigma = mean_and_cov(t, obs)
    dims = st.dims
    b1 = range(dims.sl_beta1.start, dims.sl_beta1.stop)
    mx = range(dims.sl_mu_x.start, dims.sl_mu_x.stop)
    sx = range(dims.sl_sigma_x.start, dims.sl_sigma_x.stop)
    # structural sparsity pattern, independent of the numeric values
    ddmu = {}
    ddsig = {}
    for r in b1:
        for s in mx:
            ddmu[(r, s)] = ddmu[(s, r)] = st.A2[r, s]
        for s in list(b1) + list(sx):
            ddsig[(r, s)] = st.C2[r, s]
            ddsig[(s, r)] = st.C2[s, r]
    return PerObsDerivatives(mu, sigma, st.D, st.V, ddmu, ddsig)


def cholesky_or_raise(a: np.ndarray, index=None, what="Sigma_i") -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NonPDCovariance(index, what) from None
