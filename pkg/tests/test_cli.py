import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from nof1causal import cli, gformula


def run(*argv):
    return cli.main([str(a) for a in argv])


def data_rows(path):
    return [l for l in Path(path).read_text().splitlines()[2:] if l]


def digest(d: Path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo")
    assert run("simulate", "--out", d) == 0
    assert run("fit", "--config", d / "run.json") == 0
    return d


def write_config(d, **kw):
    cfg = {"input": "series.csv", "schema": "schema.json", "out": ".", **kw}
    p = d / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def test_simulate_default_600_rows(demo):
    lines = (demo / "series.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "t,A,Y,C"
    assert len(data_rows(demo / "series.csv")) == 600


def test_simulate_same_seed_same_bytes(tmp_path):
    assert run("simulate", "--out", tmp_path / "a", "--seed", 5) == 0
    assert run("simulate", "--out", tmp_path / "b", "--seed", 5) == 0
    assert run("simulate", "--out", tmp_path / "c", "--seed", 6) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert digest(tmp_path / "a")["series.csv"] != digest(tmp_path / "c")["series.csv"]


def test_every_output_embeds_hash(demo):
    for p in demo.iterdir():
        if p.name == "run.json":
            continue
        text = p.read_text()
        if p.suffix == ".json":
            assert "config_hash" in json.loads(text), p.name
        else:
            assert text.startswith("# config_hash="), p.name


def test_fit_static_table_has_no_segments(demo):
    text = (demo / "coefficients.txt").read_text()
    assert "(1)" not in text and "beta1" in text and "static" in text
    fit = json.loads((demo / "fit_Y.json").read_text())
    assert fit["change_points"] == {}


BLS_LIKE = {
    "T": 500, "seed": 3, "V": 0.25, "exposures": ["calls", "texts"], "outcome": "mood", "covariates": ["pm"],
    "outcome_coefficients": {"beta0": 0.5, "rho": 0.5, "beta11": -0.2, "beta12": -0.1,
                             "beta21": {"piecewise": {"values": [-0.1, -1.2], "change_points": [250]}},
                             "beta22": -0.3, "beta_pm": 0.1},
    "covariate_coefficients": {"pm": {"rho_pm": 0.4, "mu2": 0.3, "mu3": -0.1}},
    "exposure_model": {"calls": {"calls": 0.5}, "texts": {"texts": 0.5, "mood": 0.3}},
}


def test_bls_like_round_trip_with_segments(tmp_path):
    spec = tmp_path / "truth.json"
    spec.write_text(json.dumps(BLS_LIKE))
    assert run("simulate", "--config", spec, "--out", tmp_path) == 0
    cfg = write_config(tmp_path, model={"regimes": {"mood": {"beta21": "periodic"}}, "max_points": 1},
                       estimands=[{"name": "CE", "exposure": "texts", "times": [480]}])
    assert run("fit", "--config", cfg) == 0
    text = (tmp_path / "coefficients.txt").read_text()
    assert "beta21 (1)" in text and "beta21 (2)" in text
    fit = json.loads((tmp_path / "fit_mood.json").read_text())
    (cp,) = fit["change_points"]["beta21"]
    assert abs(cp - 250) <= 21
    assert run("estimate", "--config", cfg) == 0
    rows = data_rows(tmp_path / "estimand_CE.csv")
    assert len(rows) == 1 and float(rows[0].split(",")[3]) < -0.8


def test_missing_outcomes_logged(tmp_path, caplog):
    spec = tmp_path / "truth.json"
    spec.write_text(json.dumps({"T": 300, "missing_rate": 0.1}))
    assert run("simulate", "--config", spec, "--out", tmp_path) == 0
    assert "NA" in (tmp_path / "series.csv").read_text()
    cfg = write_config(tmp_path)
    with caplog.at_level("INFO", logger="nof1causal"):
        assert run("fit", "--config", cfg) == 0
    assert any("prediction-only" in r.getMessage() for r in caplog.records)


def test_estimate_full_range_one_row_per_t(demo):
    assert run("estimate", "--config", demo / "run.json") == 0
    rows = data_rows(demo / "estimand_CE.csv")
    frame = json.loads((demo / "frame.json").read_text())
    assert len(rows) == 600 - frame["start"] + 1
    assert [int(r.split(",")[0]) for r in rows] == list(range(frame["start"], 601))
    assert len(data_rows(demo / "estimand_TE2.csv")) == len(rows) - 2


def test_estimate_ge_single_row_and_mc(demo):
    cfg = write_config(demo, estimands=[{"name": "GE", "strategy": [0, 1, 0, 1], "times": [600]}],
                       mc={"K": 200, "B": 50})
    assert run("estimate", "--config", cfg) == 0
    assert len(data_rows(demo / "estimand_GE_0101.csv")) == 1
    assert run("estimate", "--config", cfg, "--mc") == 0
    out = json.loads((demo / "estimand_GE_0101.json").read_text())
    assert out["mode"] == "mc" and out["mc_config"]["K"] == 200
    row = out["rows"][0]
    assert row["estimate"] == row["mc_estimate"] and "closed_form" in row


def test_verify_gate_passes_on_linear_synthetic(demo):
    cfg = write_config(demo, estimands=[{"name": "CE", "times": [300, 450]}, {"name": "LE", "q": 2, "times": [500]},
                                        {"name": "cumOE", "horizon": 10, "times": [400]}],
                       mc={"K": 300, "B": 50})
    assert run("estimate", "--config", cfg, "--verify") == 0
    assert json.loads((demo / "estimates.json").read_text())["verify"]["ok"] is True


def test_verify_gate_failure_exit_code(demo, monkeypatch):
    real = gformula.mc_request

    def biased(*a, **k):
        m = real(*a, **k)
        m.estimate += 1.0
        return m

    monkeypatch.setattr(gformula, "mc_request", biased)
    cfg = write_config(demo, estimands=[{"name": "CE", "times": [300]}], mc={"K": 100, "B": 20})
    assert run("estimate", "--config", cfg, "--verify") == cli.EXIT_VERIFY


def test_diagnose_outputs(demo):
    cfg = write_config(demo, diagnose={"max_q": 10, "max_duration": 10})
    assert run("diagnose", "--config", cfg) == 0
    pos = data_rows(demo / "positivity.csv")
    assert [int(r.split(",")[0]) for r in pos] == list(range(1, 11))
    imp = data_rows(demo / "impulse.csv")
    assert [int(r.split(",")[3]) for r in imp] == list(range(11))
    step = (demo / "step.csv").read_text()
    assert "# lag_80pct=" in step and "# lag_95pct=" in step
    gen = data_rows(demo / "general.csv")
    assert {r.split(",")[1] for r in gen} == {"1110000", "0101010", "1001001"}


def test_recommend_sorted_and_bounded(demo):
    cfg = write_config(demo, recommend={"q": 6, "k": 3}, mc={"K": 100, "B": 20})
    assert run("recommend", "--config", cfg) == 0
    out = json.loads((demo / "recommend.json").read_text())
    ranked = out["ranked"]
    assert out["candidates"] == 64
    assert sum(1 for r in ranked if r["n_active"] == 3) <= 35
    assert all(ranked[0]["estimate"] <= r["estimate"] for r in ranked)
    assert all(r["observed"] for r in ranked)


def test_recommend_zero_effect_truth_picks_empty_strategy(tmp_path):
    spec = tmp_path / "truth.json"
    spec.write_text(json.dumps({"T": 200, "outcome_coefficients": {"rho": 0.5, "beta0": 0.2},
                                "covariate_coefficients": {"C": {"rho_C": 0.3}}}))
    assert run("simulate", "--config", spec, "--out", tmp_path) == 0
    truth = json.loads((tmp_path / "truth.json").read_text())
    fit_dir = tmp_path / "truthfit"
    fit_dir.mkdir()
    (fit_dir / "frame.json").write_text(json.dumps(truth["frame"]))
    cfg = write_config(tmp_path, fit_dir="truthfit", recommend={"q": 3, "k": 2, "t": 150}, mc={"K": 20, "B": 10})
    assert run("recommend", "--config", cfg) == 0
    ranked = json.loads((tmp_path / "recommend.json").read_text())["ranked"]
    assert ranked[0]["strategy"] == "0000"
    assert all(r["estimate"] == 0.0 for r in ranked)


def test_exit_codes(tmp_path, demo):
    assert run("fit") == cli.EXIT_VALIDATION
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("fit", "--config", bad) == cli.EXIT_VALIDATION
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(demo / "series.csv"), "schema": str(demo / "schema.json"),
                               "estimands": [{"name": "CE", "exposure": "ZZ"}]}))
    assert run("estimate", "--config", cfg) == cli.EXIT_VALIDATION
    cfg.write_text(json.dumps({"input": str(demo / "series.csv"), "schema": str(demo / "schema.json"),
                               "out": str(tmp_path / "nofit"), "estimands": [{"name": "CE"}]}))
    assert run("estimate", "--config", cfg) == cli.EXIT_VALIDATION
    cfg.write_text(json.dumps({"input": str(demo / "series.csv"), "schema": str(demo / "schema.json"),
                               "fit_dir": str(demo), "out": str(tmp_path / "o"),
                               "estimands": [{"name": "CE", "times": [9999]}]}))
    assert run("estimate", "--config", cfg) == cli.EXIT_VALIDATION
    assert run("simulate", "--seed", -1, "--out", tmp_path) == cli.EXIT_VALIDATION


def test_numerical_failure_exit_code(tmp_path):
    (tmp_path / "schema.json").write_text(json.dumps({"exposures": ["A"], "outcome": "Y", "covariates": ["C"]}))
    lines = ["t,A,Y,C"] + [f"{t},{t % 2},1.0,{t * 0.1}" for t in range(1, 101)]
    (tmp_path / "series.csv").write_text("\n".join(lines) + "\n")
    cfg = write_config(tmp_path)
    assert run("fit", "--config", cfg) == cli.EXIT_NUMERICAL


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "nof1causal", "simulate", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "series.csv").exists()
