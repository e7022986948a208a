import io
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from eivbias import cli
from eivbias.errors import ParseError
from eivbias.model import ModelDims
from eivbias.montecarlo import Scenario, generate_taus, simulate_dataset

FIXTURE = str(resources.files("eivbias") / "data" / "men_synthetic.csv")


def _kv(text):
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def test_column_names():
    assert cli.csv_columns(ModelDims(1, 1)) == ["Y1", "X1", "TY_1_1", "TX_1_1"]
    assert cli.csv_columns(ModelDims(2, 2)) == [
        "Y1", "Y2", "X1", "X2", "TY_1_1", "TY_1_2", "TY_2_2", "TX_1_1", "TX_1_2", "TX_2_2",
    ]


def test_csv_round_trip(instance):
    _, data = instance
    buf = io.StringIO()
    cli.write_csv(data, buf)
    buf.seek(0)
    back = cli.read_csv(buf, data.dims.v, data.dims.m)
    np.testing.assert_array_equal(back.z, data.z)
    np.testing.assert_allclose(back.tau_x, data.tau_x, rtol=0, atol=1e-15)


def test_fixture_report(capsys):
    assert cli.main(["fit", "--data", FIXTURE]) == cli.EXIT_OK
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[0].split() == ["Parameter", "MLE", "S.E.", "Bias", "BCE"]
    rows = lines[2:7]
    assert [r.split()[0] for r in rows] == ["beta0", "beta1", "mu_x", "sigma_x2", "sigma2"]
    assert all(len(r.split()) == 5 for r in rows)
    assert rows[2].split()[3] == "0.0000"
    kv = _kv(out)
    assert kv["n"] == "38" and kv["converged"] == "true"
    for name in ("beta0", "beta1", "mu_x", "sigma_x2", "sigma2"):
        assert float(kv[f"{name}.bce"]) == float(kv[f"{name}.mle"]) - float(kv[f"{name}.bias"])
        assert float(kv[f"{name}.se"]) > 0


def test_display_rows_are_consistent(capsys):
    cli.main(["fit", "--data", FIXTURE])
    kv = _kv(capsys.readouterr().out)
    for name in ("beta0", "beta1", "sigma_x2", "sigma2"):
        mle, bias = float(kv[f"{name}.mle"]), float(kv[f"{name}.bias"])
        assert round(mle - bias, 4) == pytest.approx(round(float(kv[f"{name}.bce"]), 4), abs=1e-12)


def test_report_arithmetic_fixtures():
    # reference report rows: mle, bias -> bce
    for mle, bias, bce in [(-2.0799, 0.0044, -2.0843), (0.4690, 0.0040, 0.4650),
                           (4.8883, -0.4501, 5.3384), (11.0809, -1.1289, 12.2098)]:
        row = cli.ReportRow("x", mle, 0.1, bias)
        assert f"{row.bce:.4f}" == f"{bce:.4f}"


def test_no_correct_and_per_obs(tmp_path, capsys):
    out_file = tmp_path / "r.txt"
    assert cli.main(["fit", "--data", FIXTURE, "--no-correct", "--out", str(out_file)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["Parameter", "MLE", "S.E."]
    assert out_file.read_text() == text
    assert cli.main(["fit", "--data", FIXTURE, "--per-obs"]) == 0
    text = capsys.readouterr().out
    assert "obs38.bias_mu=" in text and "obs39.bias_mu" not in text


def _fixture_lines():
    with open(FIXTURE, encoding="utf-8") as fh:
        return fh.read().splitlines()


def test_malformed_row_located(tmp_path, capsys):
    lines = _fixture_lines()
    fields = lines[7].split(",")
    fields[1] = "abc"
    lines[7] = ",".join(fields)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as exc:
        cli.read_csv(str(bad), 1, 1)
    assert exc.value.row == 7 and exc.value.column == "X1"
    assert "row 7" in str(exc.value) and "X1" in str(exc.value)
    assert cli.main(["fit", "--data", str(bad)]) == cli.EXIT_PARSE
    assert "row 7" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, column", [
    (lambda f: f[:3], None),
    (lambda f: f[:3] + ["-1"], "TX_1_1"),
    (lambda f: f[:2] + ["nan"] + f[3:], "TY_1_1"),
])
def test_other_parse_errors(tmp_path, mutate, column):
    lines = _fixture_lines()
    lines[4] = ",".join(mutate(lines[4].split(",")))
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as exc:
        cli.read_csv(str(bad), 1, 1)
    assert exc.value.row == 4 and exc.value.column == column


def test_header_mismatch(tmp_path):
    with pytest.raises(ParseError):
        cli.read_csv(FIXTURE, 2, 1)


def test_non_convergence_exit_code(capsys):
    assert cli.main(["fit", "--data", FIXTURE, "--max-iter", "1"]) == cli.EXIT_NONCONVERGENCE


def test_degenerate_exit_code(tmp_path):
    f = tmp_path / "deg.csv"
    f.write_text("Y1,X1,TY_1_1,TX_1_1\n1,2,0.1,0.1\n2,2,0.1,0.1\n3,2,0.1,0.1\n")
    assert cli.main(["fit", "--data", str(f)]) == cli.EXIT_DEGENERATE


def test_exit_codes_distinct():
    codes = [cli.EXIT_OK, cli.EXIT_PARSE, cli.EXIT_NONCONVERGENCE, cli.EXIT_VERIFY, cli.EXIT_DEGENERATE]
    assert len(set(codes)) == len(codes)


def test_simulate_smoke_and_determinism(tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"rec{k}.csv"
        assert cli.main(["simulate", "--n", "40", "--reps", "100", "--seed", "3", "--out", str(path)]) == 0
        outs.append((capsys.readouterr().out, path.read_bytes()))
    assert outs[0] == outs[1]
    table, records = outs[0]
    assert "replications: 100 requested" in table
    assert len(table.splitlines()) == 8
    assert records.decode().splitlines()[0] == "scenario,n,param,est,rel_bias,rmse"
    assert len(records.decode().splitlines()) == 11


def test_simulate_overrides(capsys):
    assert cli.main(["simulate", "--scenario", "covariate", "--n", "30", "--reps", "100",
                     "--sig2", "5", "--beta1", "1.0"]) == 0
    out = capsys.readouterr().out
    assert "scenario: covariate  n=30" in out
    assert out.splitlines()[-1].startswith("covariate,30,sigma2,BCE,")


def test_verify_subprocess():
    ok = subprocess.run([sys.executable, "-m", "eivbias", "verify"], capture_output=True, text=True, timeout=120)
    assert ok.returncode == 0, ok.stdout + ok.stderr
    assert "8/8 checks passed" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "eivbias", "verify", "--perturb", "1e-3"],
                         capture_output=True, text=True, timeout=120)
    assert bad.returncode == cli.EXIT_VERIFY
    assert "[FAIL]" in bad.stdout


def test_round_trip_large_n(tmp_path, capsys):
    scn = Scenario("uniform", n=5000, seed=17)
    data = simulate_dataset(scn, generate_taus(scn), 0)
    path = tmp_path / "big.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        cli.write_csv(data, fh)
    assert cli.main(["fit", "--data", str(path)]) == 0
    kv = _kv(capsys.readouterr().out)
    truth = dict(zip(["beta0", "beta1", "mu_x", "sigma_x2", "sigma2"], [-2.0, 0.5, -2.0, 4.0, 10.0]))
    for name, val in truth.items():
        assert abs(float(kv[f"{name}.mle"]) - val) < 3 * float(kv[f"{name}.se"]), name
