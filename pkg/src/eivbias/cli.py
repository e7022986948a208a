"""Command-line interface: ``eivbias fit | simulate | verify``.

CSV layout for ``fit`` (UTF-8, comma separated, header row required)::

    Y1..Yv, X1..Xm, TY_j_k (1 <= j <= k <= v), TX_j_k (1 <= j <= k <= m)

Columns are matched by name.  Exit codes are listed in ``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass

import numpy as np

from .bias import correct
from .errors import (
    DegenerateData,
    NonConvergence,
    NonPDCovariance,
    ParseError,
    SingularInformation,
    TooManyFailures,
)
from .estimator import FitConfig, fit
from .model import Dataset, ModelDims, Theta, pack_theta
from .montecarlo import COVARIATE, UNIFORM, Scenario, format_records, format_table, run_study

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_NONCONVERGENCE = 4
EXIT_DEGENERATE = 5
EXIT_VERIFY = 6
EXIT_FAILURES = 7
EXIT_SINGULAR = 8
EXIT_NONPD = 9

EXIT_CODES = {
    "ok": EXIT_OK,
    "parse error": EXIT_PARSE,
    "non-convergence": EXIT_NONCONVERGENCE,
    "degenerate data": EXIT_DEGENERATE,
    "verification failure": EXIT_VERIFY,
    "too many discarded replications": EXIT_FAILURES,
    "singular information": EXIT_SINGULAR,
    "non positive definite covariance": EXIT_NONPD,
}


def csv_columns(dims: ModelDims) -> list[str]:
    cols = [f"Y{j + 1}" for j in range(dims.v)] + [f"X{j + 1}" for j in range(dims.m)]
    cols += [f"TY_{j + 1}_{k + 1}" for j in range(dims.v) for k in range(j, dims.v)]
    cols += [f"TX_{j + 1}_{k + 1}" for j in range(dims.m) for k in range(j, dims.m)]
    return cols


def _sym_from_upper(vals: dict, prefix: str, k: int) -> np.ndarray:
    out = np.zeros((k, k))
    for j in range(k):
        for l in range(j, k):
            out[j, l] = out[l, j] = vals[f"{prefix}_{j + 1}_{l + 1}"]
    return out


def read_csv(source, v: int, m: int) -> Dataset:
    """Parse a dataset; ``source`` is a path or an open text stream.

    Row numbers in errors count data rows from 1 (the header is row 0).
    """
    dims = ModelDims(v, m)
    expected = csv_columns(dims)
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_csv(fh, v, m)
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty file", row=0) from None
    missing = [c for c in expected if c not in header]
    extra = [c for c in header if c not in expected]
    if missing or extra or len(header) != len(expected):
        raise ParseError(
            f"header does not match v={v}, m={m}: missing {missing}, unexpected {extra}", row=0
        )
    pos = {name: header.index(name) for name in expected}
    zs, tys, txs = [], [], []
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=rownum)
        vals = {}
        for name in expected:
            raw = row[pos[name]].strip()
            try:
                val = float(raw)
            except ValueError:
                raise ParseError(f"cannot parse {raw!r} as a number", row=rownum, column=name) from None
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {raw!r}", row=rownum, column=name)
            vals[name] = val
        ty = _sym_from_upper(vals, "TY", v)
        tx = _sym_from_upper(vals, "TX", m)
        for label, mat in (("TY", ty), ("TX", tx)):
            if np.linalg.eigvalsh(mat).min() < -1e-10 * max(1.0, np.abs(mat).max()):
                raise ParseError(f"{label} matrix is not positive semidefinite", row=rownum, column=f"{label}_1_1")
        zs.append([vals[f"Y{j + 1}"] for j in range(v)] + [vals[f"X{j + 1}"] for j in range(m)])
        tys.append(ty)
        txs.append(tx)
    if not zs:
        raise ParseError("no data rows", row=1)
    return Dataset(np.array(zs), np.array(tys), np.array(txs), validate=False)


def write_csv(data: Dataset, stream) -> None:
    dims = data.dims
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(csv_columns(dims))
    for ob in data:
        ty = [ob.tau_y[j, k] for j in range(dims.v) for k in range(j, dims.v)]
        tx = [ob.tau_x[j, k] for j in range(dims.m) for k in range(j, dims.m)]
        w.writerow([repr(float(x)) for x in list(ob.z) + ty + tx])


def _fixed4(x: float) -> str:
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


@dataclass
class ReportRow:
    name: str
    mle: float
    se: float
    bias: float | None = None

    @property
    def bce(self) -> float | None:
        return None if self.bias is None else self.mle - self.bias


@dataclass
class Report:
    rows: list
    loglik: float
    n: int
    iterations: int
    converged: bool
    warnings: list
    per_obs: list | None = None

    def render(self) -> str:
        corrected = self.rows[0].bias is not None
        w = max(9, max(len(r.name) for r in self.rows))
        cols = ["MLE", "S.E."] + (["Bias", "BCE"] if corrected else [])
        out = [f"{'Parameter':<{w}}" + "".join(f"{c:>11}" for c in cols)]
        out.append("-" * len(out[0]))
        for r in self.rows:
            vals = [r.mle, r.se] + ([r.bias, r.bce] if corrected else [])
            out.append(f"{r.name:<{w}}" + "".join(f"{_fixed4(x):>11}" for x in vals))
        out.append("")
        out.append(f"log-likelihood: {self.loglik:.6f}   n: {self.n}   iterations: {self.iterations}   "
                   f"converged: {'yes' if self.converged else 'no'}")
        for msg in self.warnings:
            out.append(f"warning: {msg}")
        if self.per_obs:
            out.append("")
            out.append("per-observation biases (mean vector, then vech of covariance) and Var(mu_i) diagonal")
            for i, ob in enumerate(self.per_obs):
                bm = " ".join(_fixed4(x) for x in ob.bias_mu)
                bs = " ".join(_fixed4(x) for x in ob.bias_sigma)
                vm = " ".join(_fixed4(x) for x in np.diag(ob.var_mu))
                out.append(f"{i + 1:>4}  B(mu): {bm}   B(Sigma*): {bs}   Var(mu): {vm}")
        return "\n".join(out) + "\n"

    def key_values(self) -> str:
        out = []
        for r in self.rows:
            out.append(f"{r.name}.mle={r.mle!r}")
            out.append(f"{r.name}.se={r.se!r}")
            if r.bias is not None:
                out.append(f"{r.name}.bias={r.bias!r}")
                out.append(f"{r.name}.bce={r.bce!r}")
        out.append(f"loglik={self.loglik!r}")
        out.append(f"n={self.n}")
        out.append(f"iterations={self.iterations}")
        out.append(f"converged={str(self.converged).lower()}")
        out.append(f"warnings={';'.join(self.warnings)}")
        if self.per_obs:
            for i, ob in enumerate(self.per_obs):
                out.append(f"obs{i + 1}.bias_mu={','.join(repr(float(x)) for x in ob.bias_mu)}")
                out.append(f"obs{i + 1}.bias_sigma={','.join(repr(float(x)) for x in ob.bias_sigma)}")
                out.append(f"obs{i + 1}.var_mu={','.join(repr(float(x)) for x in ob.var_mu.ravel())}")
        return "\n".join(out) + "\n"


def build_report(data: Dataset, do_correct: bool = True, per_obs: bool = False, cfg: FitConfig | None = None) -> Report:
    res = fit(data, cfg)
    if not res.converged:
        err = NonConvergence(f"Fisher scoring did not converge in {res.iterations} iterations")
        err.result = res
        raise err
    names = data.dims.param_names()
    est = pack_theta(res.theta_hat)
    warnings = []
    biases = [None] * len(names)
    rows_per_obs = None
    if do_correct:
        rep = correct(res, data, per_obs=per_obs)
        biases = list(rep.bias_theta)
        rows_per_obs = rep.per_obs
        for block in rep.pd_lost:
            warnings.append(f"corrected {block} is not positive definite; uncorrected values kept in the MLE column")
    rows = [ReportRow(nm, float(est[k]), float(res.se[k]), None if biases[k] is None else float(biases[k]))
            for k, nm in enumerate(names)]
    return Report(rows, float(res.loglik), data.n, res.iterations, res.converged, warnings, rows_per_obs)


def _emit(text: str, out_path: str | None):
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_fit(args) -> int:
    data = read_csv(args.data, args.v, args.m)
    cfg = FitConfig(max_iter=args.max_iter, rel_tol=args.tol)
    report = build_report(data, not args.no_correct, args.per_obs, cfg)
    _emit(report.render() + "\n" + report.key_values(), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    theta = Theta.univariate(args.beta0, args.beta1, args.mux, args.sigx2, args.sig2)
    scn = Scenario(args.scenario, theta, args.n, args.seed, tau_mode=args.tau_mode, tau_slope=args.tau_slope)
    try:
        summary = run_study(scn, args.reps, workers=args.workers)
        code = EXIT_OK
    except TooManyFailures as exc:
        summary = exc.summary
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_FAILURES
    records = format_records(summary)
    sys.stdout.write(format_table(summary))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(records)
    else:
        sys.stdout.write("\n" + records)
    return code


def cmd_verify(args) -> int:
    from .oracle import run_checks

    results = run_checks(perturb=args.perturb)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eivbias",
        description="Bias-corrected maximum likelihood for heteroskedastic errors-in-variables regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a CSV dataset and report MLE, S.E., bias and BCE")
    p.add_argument("--data", required=True, help="CSV file (see module docstring for columns)")
    p.add_argument("--v", type=int, default=1, help="response dimension")
    p.add_argument("--m", type=int, default=1, help="covariate dimension")
    p.add_argument("--no-correct", action="store_true", help="skip the bias correction")
    p.add_argument("--per-obs", action="store_true", help="append per-observation biases of mu_i and Sigma_i")
    p.add_argument("--out", help="also write the report to this file")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="Monte Carlo study of MLE and BCE")
    p.add_argument("--scenario", choices=[UNIFORM, COVARIATE], default=UNIFORM)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="write the comma-separated records here instead of stdout")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--beta0", type=float, default=-2.0)
    p.add_argument("--beta1", type=float, default=0.5)
    p.add_argument("--mux", type=float, default=-2.0)
    p.add_argument("--sigx2", type=float, default=4.0)
    p.add_argument("--sig2", type=float, default=10.0)
    p.add_argument("--tau-mode", choices=["latent", "fixed"], default="latent",
                   help="covariate scenario: variances from each replication's latent x, or from one fixed draw")
    p.add_argument("--tau-slope", type=float, default=None,
                   help="slope in the covariate scenario's response variance (default: beta1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check analytic derivatives and blockwise formulas against oracles")
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DegenerateData as exc:
        print(f"error: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except SingularInformation as exc:
        print(f"error: singular information: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except NonPDCovariance as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONPD


if __name__ == "__main__":
    sys.exit(main())
