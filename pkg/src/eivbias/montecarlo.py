"""Monte Carlo harness: simulated designs, replication loop, summary tables.

Random streams
--------------
Every draw comes from NumPy's PCG64 bit generator seeded through
``SeedSequence(seed, spawn_key=...)``: key ``(0,)`` feeds the one-off error
variance draw of a scenario and key ``(1, rep)`` feeds replication ``rep``.
Each replication is therefore reproducible on its own and results do not
depend on how replications are distributed over workers.  Normal variates use
NumPy's ziggurat sampler (``Generator.standard_normal``).

Within a replication the draw order is: latent covariates ``x`` (n x m),
equation errors (n x v), response measurement errors (n x v), covariate
measurement errors (n x m).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bias import correct
from .errors import DegenerateData, EIVError, SingularInformation, TooManyFailures
from .estimator import FitConfig, fit
from .model import Dataset, Theta, pack_theta

__all__ = [
    "UNIFORM",
    "COVARIATE",
    "CUSTOM",
    "REFERENCE_THETA",
    "Scenario",
    "SimSummary",
    "generate_taus",
    "simulate_dataset",
    "run_study",
    "format_table",
    "format_records",
]

UNIFORM = "uniform"
COVARIATE = "covariate"
CUSTOM = "custom"

REFERENCE_THETA = Theta.univariate(-2.0, 0.5, -2.0, 4.0, 10.0)

MAX_DISCARD_FRACTION = 0.01


@dataclass(frozen=True, eq=False)
class Scenario:
    """A simulation design.

    ``kind``
        ``"uniform"``: sqrt(tau_x) ~ U(0.5, 1.5), sqrt(tau_y) ~ U(0.5, 4),
        drawn once.  ``"covariate"``: sqrt(tau_x) = 0.1|x|,
        sqrt(tau_y) = 0.1|beta0 + slope * x|.  ``"custom"``: the caller
        supplies ``taus = (tau_y, tau_x)`` of shapes ``(n, v, v)`` and
        ``(n, m, m)``; any ``v, m`` are allowed.
    ``tau_mode``
        Only used by ``"covariate"``.  ``"latent"`` (default) evaluates the
        variance functions at the latent covariates of each replication;
        ``"fixed"`` evaluates them once at a separate latent draw and keeps
        them for every replication.
    ``tau_slope``
        Slope inside the response variance function; defaults to the true
        ``beta1``.
    """

    kind: str = UNIFORM
    theta_true: Theta = REFERENCE_THETA
    n: int = 40
    seed: int = 1
    tau_mode: str = "latent"
    tau_slope: float | None = None
    taus: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (UNIFORM, COVARIATE, CUSTOM):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.tau_mode not in ("latent", "fixed"):
            raise ValueError(f"unknown tau_mode {self.tau_mode!r}")
        if self.n < 10:
            raise ValueError("scenario needs n >= 10")
        if not self.theta_true.is_valid():
            raise ValueError("theta_true has a non positive definite covariance block")
        d = self.theta_true.dims
        if self.kind in (UNIFORM, COVARIATE) and (d.v, d.m) != (1, 1):
            raise ValueError(f"{self.kind!r} scenario is defined for v = m = 1; use kind='custom'")
        if self.kind == CUSTOM:
            if self.taus is None:
                raise ValueError("custom scenario needs taus=(tau_y, tau_x)")
            ty, tx = (np.asarray(a, dtype=float) for a in self.taus)
            if ty.shape != (self.n, d.v, d.v) or tx.shape != (self.n, d.m, d.m):
                raise ValueError("taus shapes do not match (n, v, v) and (n, m, m)")

    @property
    def latent_taus(self) -> bool:
        return self.kind == COVARIATE and self.tau_mode == "latent"

    @property
    def slope(self) -> float:
        return float(self.theta_true.beta1[0, 0]) if self.tau_slope is None else self.tau_slope


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _covariate_taus(scn: Scenario, x: np.ndarray):
    b0 = float(scn.theta_true.beta0[0])
    tx = (0.1 * np.abs(x)) ** 2
    ty = (0.1 * np.abs(b0 + scn.slope * x)) ** 2
    return ty.reshape(-1, 1, 1), tx.reshape(-1, 1, 1)


def generate_taus(scn: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Error covariances ``(tau_y, tau_x)`` of the scenario, fixed by its seed.

    For ``tau_mode="latent"`` covariate scenarios this is only the variance
    pattern at a reference latent draw; the replications recompute it.
    """
    t = scn.theta_true
    if scn.kind == CUSTOM:
        ty, tx = (np.array(a, dtype=float) for a in scn.taus)
        return ty, tx
    rng = _rng(scn.seed, 0)
    n = scn.n
    if scn.kind == UNIFORM:
        sx = rng.uniform(0.5, 1.5, n)
        sy = rng.uniform(0.5, 4.0, n)
        return (sy**2).reshape(n, 1, 1), (sx**2).reshape(n, 1, 1)
    x0 = t.mu_x[0] + math.sqrt(t.sigma_x[0, 0]) * rng.standard_normal(n)
    return _covariate_taus(scn, x0)


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Batched symmetric square roots (valid for singular PSD matrices)."""
    w, U = np.linalg.eigh(a)
    return np.einsum("nij,nj,nkj->nik", U, np.sqrt(np.clip(w, 0.0, None)), U)


def simulate_dataset(scn: Scenario, taus, rep_index: int) -> Dataset:
    """One replication drawn from the stream ``(scn.seed, rep_index)``."""
    t = scn.theta_true
    v, m, n = t.dims.v, t.dims.m, scn.n
    rng = _rng(scn.seed, 1, rep_index)
    x = t.mu_x + rng.standard_normal((n, m)) @ np.linalg.cholesky(t.sigma_x).T
    y = t.beta0 + x @ t.beta1.T + rng.standard_normal((n, v)) @ np.linalg.cholesky(t.sigma_q).T
    if scn.latent_taus:
        ty, tx = _covariate_taus(scn, x[:, 0])
    else:
        ty, tx = taus
    ey = rng.standard_normal((n, v))
    ex = rng.standard_normal((n, m))
    if v == 1 and m == 1:
        Y = y + ey * np.sqrt(ty[:, :, 0])
        X = x + ex * np.sqrt(tx[:, :, 0])
    else:
        Y = y + np.einsum("nij,nj->ni", _sqrt_psd(ty), ey)
        X = x + np.einsum("nij,nj->ni", _sqrt_psd(tx), ex)
    return Dataset(np.column_stack([Y, X]), ty, tx, validate=False)


@dataclass(frozen=True, eq=False)
class SimSummary:
    """Relative bias and root mean squared error of the MLE and the BCE.

    Relative bias is ``(mean(est) - truth) / truth``; for a zero true value
    the absolute bias is reported instead.  ``mle`` and ``bce`` keep the
    per-replication estimates of the retained replications, in replication
    order.
    """

    scenario: Scenario
    names: list
    theta_true: np.ndarray
    mle: np.ndarray
    bce: np.ndarray
    requested: int
    converged: int
    discarded: int
    discarded_reps: list = field(default_factory=list)

    @staticmethod
    def _rel(est, truth):
        bias = est.mean(axis=0) - truth
        return np.where(truth != 0, bias / np.where(truth != 0, truth, 1.0), bias)

    @property
    def rel_bias_mle(self) -> np.ndarray:
        return self._rel(self.mle, self.theta_true)

    @property
    def rel_bias_bce(self) -> np.ndarray:
        return self._rel(self.bce, self.theta_true)

    @property
    def rmse_mle(self) -> np.ndarray:
        return np.sqrt(np.mean((self.mle - self.theta_true) ** 2, axis=0))

    @property
    def rmse_bce(self) -> np.ndarray:
        return np.sqrt(np.mean((self.bce - self.theta_true) ** 2, axis=0))

    def mc_se(self, which: str = "mle") -> np.ndarray:
        """Monte Carlo standard error of the mean estimate."""
        est = self.mle if which == "mle" else self.bce
        return est.std(axis=0, ddof=1) / math.sqrt(est.shape[0])


def _one_rep(scn: Scenario, taus, cfg: FitConfig, rep: int):
    data = simulate_dataset(scn, taus, rep)
    try:
        res = fit(data, cfg)
        if not res.converged:
            return None
        report = correct(res, data)
    except (DegenerateData, SingularInformation, EIVError):
        return None
    return pack_theta(res.theta_hat), report.packed_tilde


def _run_chunk(args):
    scn, taus, cfg, reps = args
    return [(rep, _one_rep(scn, taus, cfg, rep)) for rep in reps]


def run_study(
    scn: Scenario,
    reps: int,
    cfg: FitConfig | None = None,
    workers: int = 1,
    check_failures: bool = True,
) -> SimSummary:
    """Fit and bias-correct ``reps`` simulated datasets.

    Replications whose fit does not converge (or whose information matrix is
    singular) are discarded and counted; more than 1% discarded raises
    :class:`TooManyFailures` unless ``check_failures`` is false.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    cfg = cfg or FitConfig()
    taus = generate_taus(scn)
    p = scn.theta_true.dims.p
    if workers <= 1:
        results = _run_chunk((scn, taus, cfg, range(reps)))
    else:
        chunks = [list(range(k, reps, workers * 4)) for k in range(workers * 4)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_run_chunk, [(scn, taus, cfg, c) for c in chunks]) for r in part]
        results.sort(key=lambda item: item[0])
    kept = [r for _, r in results if r is not None]
    dropped = [rep for rep, r in results if r is None]
    mle = np.array([k[0] for k in kept]).reshape(-1, p)
    bce = np.array([k[1] for k in kept]).reshape(-1, p)
    summary = SimSummary(
        scn, scn.theta_true.dims.param_names(), pack_theta(scn.theta_true),
        mle, bce, reps, len(kept), len(dropped), dropped,
    )
    if check_failures and len(dropped) > MAX_DISCARD_FRACTION * reps:
        err = TooManyFailures(f"{len(dropped)} of {reps} replications discarded")
        err.summary = summary
        raise err
    return summary


_DISPLAY = {"beta0": "beta0", "beta1": "beta1", "mu_x": "mu_x", "sigma_x2": "sigma_x^2", "sigma2": "sigma^2"}


def format_table(s: SimSummary) -> str:
    """Aligned plain-text table: relative bias and sqrt(MSE) for MLE and BCE."""
    names = [_DISPLAY.get(nm, nm) for nm in s.names]
    w = max(9, max(len(nm) for nm in names))
    head = f"{'n':>5}  {'theta':<{w}}  {'MLE rel.bias':>12} {'MLE sqrt(MSE)':>13}   {'BCE rel.bias':>12} {'BCE sqrt(MSE)':>13}"
    lines = [
        f"scenario: {s.scenario.kind}  n={s.scenario.n}  seed={s.scenario.seed}  "
        f"replications: {s.requested} requested, {s.converged} converged, {s.discarded} discarded",
        head,
        "-" * len(head),
    ]
    rb_m, rm_m, rb_b, rm_b = s.rel_bias_mle, s.rmse_mle, s.rel_bias_bce, s.rmse_bce
    for k, nm in enumerate(names):
        n_col = str(s.scenario.n) if k == 0 else ""
        lines.append(
            f"{n_col:>5}  {nm:<{w}}  {rb_m[k]:>12.4f} {rm_m[k]:>13.2f}   {rb_b[k]:>12.4f} {rm_b[k]:>13.2f}"
        )
    return "\n".join(lines) + "\n"


def format_records(s: SimSummary, header: bool = True) -> str:
    """Machine-readable ``scenario,n,param,est,rel_bias,rmse`` lines."""
    out = ["scenario,n,param,est,rel_bias,rmse"] if header else []
    for est, rb, rm in (("MLE", s.rel_bias_mle, s.rmse_mle), ("BCE", s.rel_bias_bce, s.rmse_bce)):
        for k, nm in enumerate(s.names):
            out.append(f"{s.scenario.kind},{s.scenario.n},{nm},{est},{float(rb[k])!r},{float(rm[k])!r}")
    return "\n".join(out) + "\n"
