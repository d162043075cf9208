import json

import numpy as np
import pandas as pd
import pytest

from ipwcate.bandwidth import plan_bandwidths
from ipwcate.cli import default_grid, load_dataset, main, parse_bandwidth, resolve_bandwidth
from ipwcate.estimators import fit_curve
from ipwcate.simulate import DgpSpec, generate, true_cate


@pytest.fixture(scope="module")
def m1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "m1.csv"
    assert main(["inspect", "dgp", "--model", "M1", "--n", "1000", "--seed", "3",
                 "--output", str(path)]) == 0
    return path


def run_estimate(inp, out, *extra):
    return main(["estimate", "-i", str(inp), "-o", str(out), "--z", "Z", "--treatment", "D",
                 "--outcome", "Y", *extra])


class TestBandwidthSyntax:
    def test_absolute(self):
        assert parse_bandwidth("0.3") == ("abs", 0.3)

    def test_scale_form(self):
        kind, c, e = parse_bandwidth("0.85*sd*n^-1/9")
        assert kind == "scale" and c == 0.85 and e == pytest.approx(-1 / 9)
        assert parse_bandwidth("1.15 * sd * n^(-1/3)")[2] == pytest.approx(-1 / 3)

    def test_resolution(self, rng):
        x = rng.normal(size=400)
        np.testing.assert_allclose(resolve_bandwidth(("scale", 0.85, -1 / 9), x, 400),
                                   0.85 * x.std(ddof=1) * 400 ** (-1 / 9))

    @pytest.mark.parametrize("bad", ["-1", "abc", "2*sd", "0"])
    def test_rejects(self, bad):
        from ipwcate.cli import UsageError
        with pytest.raises(UsageError):
            parse_bandwidth(bad)


class TestSimulate:
    def test_writes_report(self, tmp_path):
        out = tmp_path / "rep.csv"
        code = main(["simulate", "--model", "M2", "--n", "150", "--reps", "3", "--seed", "7",
                     "--workers", "1", "--estimators", "O,P", "-o", str(out)])
        assert code == 0
        frame = pd.read_csv(out)
        assert set(frame.estimator) == {"IPW-O", "IPW-P"} and len(frame) == 10
        assert (tmp_path / "rep_releff.csv").exists()
        meta = json.loads((tmp_path / "rep.json").read_text())
        assert meta["spec"]["seed"] == 7 and "versions" in meta

    def test_high_dim_has_no_nonparametric_rows(self, tmp_path):
        out = tmp_path / "m5.csv"
        assert main(["simulate", "--model", "M5", "--n", "120", "--reps", "2", "--workers", "1",
                     "-o", str(out)]) == 0
        assert "IPW-N" not in set(pd.read_csv(out).estimator)

    def test_invalid_model_leaves_nothing(self, tmp_path, capsys):
        out = tmp_path / "bad.csv"
        assert main(["simulate", "--model", "M9", "-o", str(out)]) == 2
        assert "--model" in capsys.readouterr().err
        assert list(tmp_path.iterdir()) == []

    def test_invalid_estimator_combination(self, tmp_path):
        out = tmp_path / "bad.csv"
        assert main(["simulate", "--model", "M6", "--estimators", "N", "--reps", "2",
                     "-o", str(out)]) == 2
        assert list(tmp_path.iterdir()) == []


class TestEstimate:
    def test_round_trip_matches_in_memory(self, m1_csv, tmp_path):
        out = tmp_path / "curve.csv"
        assert run_estimate(m1_csv, out, "--estimator", "S", "--r", "1", "--covariates", "U1",
                            "--alpha", "0.1") == 0
        curve = pd.read_csv(out)
        assert list(curve.columns) == ["z", "tau_hat", "sigma_sq", "avar", "ci_lo", "ci_hi",
                                       "variance_form", "affiliation_t", "unstable"]
        assert len(curve) == 50
        data, _ = load_dataset(m1_csv, ["Z"], "D", "Y", ["U1"])
        plan = plan_bandwidths(data.n, r=1, mode="formula")
        ref = fit_curve(data, "S", plan, default_grid(data.Z), alpha=0.1).curve
        for col, vals in (("tau_hat", ref.tau_hat), ("sigma_sq", ref.sigma_hat_sq),
                          ("ci_lo", ref.ci_lo), ("ci_hi", ref.ci_hi)):
            np.testing.assert_allclose(curve[col], vals, rtol=1e-12, atol=0)
        meta = json.loads(out.with_suffix(".json").read_text())
        assert meta["plan"]["r"] == 1 and meta["affiliation"]["t"] == 0

    def test_alpha_uses_1645(self, m1_csv, tmp_path):
        out = tmp_path / "c.csv"
        assert run_estimate(m1_csv, out, "--estimator", "P", "--covariates", "U1", "--alpha",
                            "0.1", "--grid", "0.0,0.1") == 0
        c = pd.read_csv(out)
        meta = json.loads(out.with_suffix(".json").read_text())
        rate = meta["n"] * meta["plan"]["h"]
        np.testing.assert_allclose((c.ci_hi - c.tau_hat) / np.sqrt(c.avar / rate), 1.645, atol=5e-4)

    def test_zero_outcome(self, tmp_path):
        d = generate(DgpSpec(model="M1", n=300, seed=1))
        frame = pd.DataFrame({"Z": d.X[:, 0], "U1": d.X[:, 1], "D": d.D.astype(int), "Y": 0.0})
        inp, out = tmp_path / "z.csv", tmp_path / "o.csv"
        frame.to_csv(inp, index=False)
        assert run_estimate(inp, out, "--estimator", "N") == 0
        c = pd.read_csv(out)
        np.testing.assert_allclose(c.tau_hat, 0.0, atol=0)
        assert (c.ci_lo <= 0).all() and (c.ci_hi >= 0).all()

    def test_scale_bandwidths_and_orders(self, m1_csv, tmp_path):
        out = tmp_path / "c.csv"
        assert run_estimate(m1_csv, out, "--estimator", "S", "--covariates", "U1",
                            "--h", "0.85*sd*n^-1/9", "--h2", "1.15*sd*n^-1/3",
                            "--order", "2") == 0
        plan = json.loads(out.with_suffix(".json").read_text())["plan"]
        z = pd.read_csv(m1_csv).Z
        np.testing.assert_allclose(plan["h"], 0.85 * z.std() * 1000 ** (-1 / 9), rtol=1e-12)
        assert plan["s"] == 2

    def test_oracle_column(self, m1_csv, tmp_path):
        out = tmp_path / "c.csv"
        assert run_estimate(m1_csv, out, "--estimator", "O", "--covariates", "U1",
                            "--propensity-column", "p_true") == 0
        assert run_estimate(m1_csv, out, "--estimator", "O", "--covariates", "U1") == 2

    def test_non_binary_treatment(self, m1_csv, tmp_path):
        out = tmp_path / "c.csv"
        code = main(["estimate", "-i", str(m1_csv), "-o", str(out), "--z", "Z",
                     "--treatment", "U1", "--outcome", "Y"])
        assert code == 3 and not out.exists()

    def test_missing_values_listed(self, tmp_path, capsys):
        frame = pd.DataFrame({"Z": [0.1, np.nan, 0.3, 0.2], "D": [1, 0, 1, 0],
                              "Y": [1.0, 2.0, np.nan, 0.5]})
        inp, out = tmp_path / "m.csv", tmp_path / "o.csv"
        frame.to_csv(inp, index=False)
        assert run_estimate(inp, out) == 3
        err = capsys.readouterr().err
        assert "2, 3" in err and not out.exists()

    def test_missing_column(self, m1_csv, tmp_path):
        assert run_estimate(m1_csv, tmp_path / "o.csv", "--covariates", "nope") == 2

    def test_duplicate_columns(self, m1_csv, tmp_path):
        code = main(["estimate", "-i", str(m1_csv), "-o", str(tmp_path / "o.csv"), "--z", "Z",
                     "--treatment", "D", "--outcome", "D"])
        assert code == 2

    def test_missing_file(self, tmp_path):
        assert run_estimate(tmp_path / "none.csv", tmp_path / "o.csv") == 3

    @pytest.mark.xfail(reason="smoothing bias at the planned bandwidth exceeds the interval "
                              "half-width for this design", strict=False)
    def test_simulated_round_trip_covers_truth(self, m1_csv, tmp_path):
        out = tmp_path / "c.csv"
        assert run_estimate(m1_csv, out, "--estimator", "S", "--r", "1", "--covariates", "U1") == 0
        c = pd.read_csv(out)
        interior = c[c.z.abs() <= 0.25]
        truth = np.array([true_cate("M1", "I", z) for z in interior.z])
        assert ((interior.ci_lo <= truth) & (truth <= interior.ci_hi)).all()


class TestInspect:
    def test_kernel(self, capsys):
        assert main(["inspect", "kernel", "--order", "4"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["l2_norm_sq"] == pytest.approx(0.4760349, abs=1e-7)

    def test_bandwidth(self, capsys):
        assert main(["inspect", "bandwidth", "--n", "500", "--r", "1", "--k-tilde", "2"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["plan"]["h"] == pytest.approx(0.27573, abs=5e-6)
        assert payload["rate_conditions"]["nh_l_diverges"]

    def test_bad_bandwidth_request(self):
        assert main(["inspect", "bandwidth", "--k-tilde", "3"]) == 2
