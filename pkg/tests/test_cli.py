import csv
import json
import math

import numpy as np
import pytest

from sparsegmpe import cli
from sparsegmpe import library as L
from sparsegmpe import stridge as S
from sparsegmpe.flatfile import parse_flatfile
from sparsegmpe.gmpe import builtin_model


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run("synth", "--out", out, "--seed", 0) == 0
    return out / "synthetic.csv"


@pytest.fixture(scope="module")
def noiseless_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("clean")
    assert run("synth", "--out", out, "--phi", 0, "--n-events", 200) == 0
    return out / "synthetic.csv"


def test_synth_header_comment(synth_csv):
    first = synth_csv.read_text().splitlines()[0]
    assert first.startswith("# sparsegmpe 0.1.0 config=")
    assert len(read_csv(synth_csv)) == 5000


def test_ingest_removes_underpopulated_event(tmp_path, synth_csv):
    lines = synth_csv.read_text().splitlines()
    header, rows = lines[1], lines[2:]
    # keep E0000 whole, only 3 records of E0001
    keep = [r for r in rows if r.startswith("E0000,")] + [r for r in rows if r.startswith("E0001,")][:3]
    src = tmp_path / "in.csv"
    src.write_text("\n".join([header] + keep) + "\n")
    assert run("ingest", src, "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "ingest_report.json").read_text())["report"]
    assert rep["n_records"] == 10 and rep["n_events"] == 1
    assert rep["rows_dropped_by_rule"] == {"min_records_per_event": 3}


def test_ingest_empty_input(tmp_path, synth_csv):
    src = tmp_path / "empty.csv"
    src.write_text(synth_csv.read_text().splitlines()[1] + "\n")
    assert run("ingest", src, "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "ingest_report.json").read_text())["report"]
    assert rep["n_records"] == 0
    assert read_csv(tmp_path / "o" / "dataset.csv") == []


def test_ingest_errors(tmp_path):
    assert run("ingest", tmp_path / "missing.csv", "--out", tmp_path) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("ingest", bad, "--out", tmp_path) == 2
    cfg = tmp_path / "c.ini"
    cfg.write_text("[nope]\n")
    assert run("ingest", bad, "--out", tmp_path, "--config", cfg) == 2


def test_ingest_round_trip_is_lossless(tmp_path, synth_csv):
    assert run("ingest", synth_csv, "--out", tmp_path) == 0
    with open(synth_csv, "rb") as a, open(tmp_path / "dataset.csv", "rb") as b:
        assert parse_flatfile(a)[0] == parse_flatfile(b)[0]


def test_fit_noiseless_prints_builtin(tmp_path, noiseless_csv, capsys):
    assert run("fit", "--data", noiseless_csv, "--out", tmp_path) == 0
    text = (tmp_path / "equation_pga.txt").read_text().strip()
    assert text == builtin_model("pga").equation_text()
    model = json.loads((tmp_path / "model_pga.json").read_text())
    for term, c in builtin_model("pga").to_dict()["coefficients"].items():
        assert model["physical"]["coefficients"][term] == pytest.approx(c, abs=1e-4)
    assert model["knee_selected"]


def test_fit_matches_in_process(tmp_path, synth_csv):
    assert run("fit", "--data", synth_csv, "--out", tmp_path) == 0
    got = json.loads((tmp_path / "model_pga.json").read_text())
    with open(synth_csv, "rb") as fh:
        recs = parse_flatfile(fh)[0]
    found = S.discover(L.build_design_matrix(recs, L.default_library(), "pga"))
    assert got["delta"] == found.delta
    assert got["xi_normalized"] == [float(x) for x in found.model.xi_normalized]
    assert got["physical"]["constant"] == found.model.physical.constant


def test_fit_delta_override_and_pgv(tmp_path, synth_csv):
    assert run("fit", "--data", synth_csv, "--out", tmp_path, "--delta", 0.05, "--im", "pgv") == 0
    m = json.loads((tmp_path / "model_pgv.json").read_text())
    assert m["delta"] == 0.05 and not m["knee_selected"] and m["im"] == "pgv"
    assert "v^2" in m["support_terms"]


def test_fit_no_knee_exit_1(tmp_path, synth_csv, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[solver]\ndelta_grid = 0, 1e-9, 2e-9\n")
    assert run("fit", "--data", synth_csv, "--out", tmp_path, "--config", cfg) == 1
    assert "--delta" in capsys.readouterr().err


def test_fit_empty_model_exit_1(tmp_path, synth_csv):
    assert run("fit", "--data", synth_csv, "--out", tmp_path, "--delta", 1e6) == 1


def test_sweep_outputs(tmp_path, synth_csv):
    assert run("sweep", "--data", synth_csv, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "sweep_pga.csv")
    assert len(rows) == 50
    assert sum(int(r["selected"]) for r in rows) == 1
    sel = next(r for r in rows if r["selected"] == "1")
    assert int(sel["n_terms"]) == 7
    js = json.loads((tmp_path / "sweep_pga.json").read_text())
    assert js["selected_delta"] == float(sel["delta"])


def test_sweep_empty_grid_usage_error(tmp_path, synth_csv):
    assert run("sweep", "--data", synth_csv, "--out", tmp_path, "--grid", "") == 2
    assert run("sweep", "--data", synth_csv, "--out", tmp_path, "--grid", "0.1, 0.05") == 2


def test_residuals_tau_zero(tmp_path, synth_csv):
    assert run("residuals", "--data", synth_csv, "--out", tmp_path) == 0
    v = json.loads((tmp_path / "variance_pga.json").read_text())
    assert v["tau"] < 0.02 and abs(v["phi"] - 0.1) < 0.01
    eta = read_csv(tmp_path / "eta_pga.csv")
    assert len(eta) == 500 and max(abs(float(r["eta"])) for r in eta) < 0.05
    eps = read_csv(tmp_path / "epsilon_pga.csv")
    for r in eps[:200]:
        e = next(x for x in eta if x["event_id"] == r["event_id"])
        assert float(r["residual"]) == pytest.approx(float(e["eta"]) + float(r["epsilon"]), abs=1e-12)
    bins = [b for b in read_csv(tmp_path / "binned_epsilon_vs_r_jb_pga.csv") if int(b["count"]) > 1]
    means = [float(b["mean"]) for b in bins]
    assert min(means) < 0 < max(means)
    # Bonferroni-style bound over the 10 bins
    for b in bins:
        assert abs(float(b["mean"])) <= 3.5 * float(b["sd"]) / math.sqrt(int(b["count"]))


def test_residuals_sigma_model(tmp_path):
    # Residuals with the published PGA sigmas around the builtin PGA equation.
    from sparsegmpe import mixedfx as M
    from sparsegmpe.flatfile import GroundMotionRecord, write_dataset
    from sparsegmpe.gmpe import predict
    rng = np.random.default_rng(1)
    eq = builtin_model("pga")
    recs = []
    for i in range(1500):
        m = float(rng.uniform(3.0, 7.5))
        tau, phi = M.sigma_at_magnitude(M.TABLE_SIGMA["pga"], m)
        eta = rng.normal(0, tau)
        for j in range(30):
            r, v = float(rng.uniform(1, 300)), float(rng.uniform(150, 1400))
            y = math.exp(predict(eq, m, r, v) + eta + rng.normal(0, phi))
            recs.append(GroundMotionRecord(f"E{i}", f"S{j}", m, r, v, 1, 100.0, 10.0, y, y))
    with open(tmp_path / "d.csv", "w") as fh:
        write_dataset(recs, fh)
    assert run("residuals", "--data", tmp_path / "d.csv", "--out", tmp_path) == 0
    sigma = json.loads((tmp_path / "variance_pga.json").read_text())["sigma_model"]
    truth = M.TABLE_SIGMA["pga"]
    for k in ("tau1", "tau2", "phi1", "phi2"):
        assert abs(sigma[k] - getattr(truth, k)) <= 0.05, k


def test_curves_builtin_scenarios(tmp_path):
    assert run("curves", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "curves_pga.csv")
    assert {float(r["m_w"]) for r in rows} == {4.0, 5.0, 6.0, 7.0}
    assert {float(r["v_s30"]) for r in rows} == {200.0, 560.0, 760.0}
    assert len(rows) == 4 * 3 * 60
    r = rows[0]
    assert float(r["y"]) == pytest.approx(math.exp(float(r["ln_y"])))


def test_curves_single_point_and_compare(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[curves]\nm_w = 6\nv_s30 = 760\nr_jb = 10\n")
    cmp_ok = tmp_path / "ok.csv"
    cmp_ok.write_text("model,m_w,v_s30,r_jb,y\nBSSA14,6,760,10,120.5\n")
    assert run("curves", "--out", tmp_path, "--config", cfg, "--compare", cmp_ok) == 0
    rows = read_csv(tmp_path / "curves_pga.csv")
    assert [r["model"] for r in rows] == ["builtin", "BSSA14"]
    assert float(rows[0]["ln_y"]) == pytest.approx(5.2601061440471, abs=1e-12)


def test_curves_malformed_compare(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("m_w,r_jb,ln_y\n6,10,5\n")
    assert run("curves", "--out", tmp_path, "--compare", bad) == 2
    assert "v_s30" in capsys.readouterr().err


def test_extrapolate(tmp_path, synth_csv):
    assert run("extrapolate", "--data", synth_csv, "--out", tmp_path) == 0
    slopes = json.loads((tmp_path / "slopes_pga.json").read_text())
    assert slopes["n_far"] < slopes["n_full"]
    assert all(s["within_bound"] for s in slopes["slopes"])
    rows = read_csv(tmp_path / "nearfield_pga.csv")
    assert {r["model"] for r in rows} == {"full", "far"}
    assert all(0 < float(r["r_jb"]) < 30 for r in rows)


def test_extrapolate_far_only_data(tmp_path, synth_csv):
    # No near-field records: the curves are still produced.
    lines = synth_csv.read_text().splitlines()
    far = [ln for ln in lines[2:] if float(ln.split(",")[3]) >= 30]
    src = tmp_path / "far.csv"
    src.write_text("\n".join(lines[1:2] + far) + "\n")
    assert run("extrapolate", "--data", src, "--out", tmp_path, "--delta", 0.05) == 0
    assert read_csv(tmp_path / "nearfield_pga.csv")


def test_extrapolate_empty_far(tmp_path, synth_csv):
    assert run("extrapolate", "--data", synth_csv, "--out", tmp_path, "--split", 1e6) == 1


@pytest.mark.parametrize("argv", [
    ("synth", "--n-events", 30, "--tau", 0.3),
    ("sweep", "--data", "{data}", "--grid", "logspace(1e-3, 10, 8)"),
    ("residuals", "--data", "{data}"),
    ("curves",),
])
def test_byte_identical_reruns(tmp_path, synth_csv, argv):
    argv = [str(a).replace("{data}", str(synth_csv)) for a in argv]
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert run(*argv, "--out", d) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
