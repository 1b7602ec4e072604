import json

import pytest

from sdde_lyap.cli import apply_override, load_config, main


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = main(args + ["--out-dir", str(out)])
    return code, out


def body(path):
    doc = json.loads(path.read_text())
    assert doc["schema_version"] == 1 and "timestamp" in doc["header"]
    return doc


def test_lyapunov_m0(tmp_path):
    code, out = run(["lyapunov", "presets/m0.json"], tmp_path)
    assert code == 0
    res = body(out / "lyapunov.json")["result"]
    assert abs(res["lambda_C"] + 1.0) < 5e-3 and abs(res["lambda_W"] + 1.0) < 5e-3
    header = (out / "windows.csv").read_text().splitlines()[0]
    assert header == "point_id,dir_id,window_idx,log_growth"


def test_certify_m2(tmp_path):
    code, out = run(["certify", "presets/m2.json"], tmp_path)
    assert code == 0
    assert body(out / "certificate.json")["result"]["verdict"] == "stable-consistent"


def test_reports_are_deterministic(tmp_path):
    docs = []
    for name in ("a", "b"):
        code, out = run(["lyapunov", "presets/m3.json", "--set", "lyapunov.T=10",
                         "--set", "lyapunov.n_points=2", "--seed", "5"], tmp_path, name)
        assert code == 0
        doc = body(out / "lyapunov.json")
        doc.pop("header")
        docs.append((json.dumps(doc, sort_keys=True), (out / "windows.csv").read_bytes()))
    assert docs[0] == docs[1]


def test_simulate_and_expr_initial(tmp_path):
    code, out = run(["simulate", "presets/m3.json", "--set", "simulate.T=3",
                     "--set", "simulate.stride=1"], tmp_path)
    assert code == 0
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,y_1,tau_realized" and len(rows) == 1 + 3 * 64 + 1
    # initial segment 0.2*cos(3*s): y(0) = 0.2
    assert float(rows[1].split(",")[1]) == pytest.approx(0.2)


def test_nodes_initial(tmp_path):
    spec = json.dumps({"kind": "nodes", "mesh": [-1, -0.5, 0], "values": [[0], [1], [0.5]]})
    code, out = run(["simulate", "presets/m2.json", "--set", f"initial={spec}",
                     "--set", "simulate.T=1"], tmp_path)
    assert code == 0


def test_cover_and_basin(tmp_path):
    code, out = run(["cover", "presets/m4.json"], tmp_path, "c")
    assert code == 0 and body(out / "cover.json")["result"]["k"] == 2
    code, out = run(["basin", "presets/m0.json"], tmp_path, "b")
    assert code == 0
    lines = (out / "basin.csv").read_text().splitlines()
    assert lines[0] == "probe_id,attracted,t_entry,rate,final_distance,blown_up"
    assert lines[1].split(",")[1] == "1"


def test_dsl_model(tmp_path):
    cfg = {"seed": 0, "model": {"F": ["-2*y1_1 + 0.1*sin(th1)"], "tau": "0.5", "r": 1.0,
                                "freq": [1.0]},
           "initial": {"kind": "constant", "value": 1.0}, "simulate": {"T": 2.0}}
    p = tmp_path / "dsl.json"
    p.write_text(json.dumps(cfg))
    code, _ = run(["simulate", str(p)], tmp_path)
    assert code == 0


@pytest.mark.parametrize("override,key", [
    ("model.preset=m9", "model.preset"),
    ("model.params.zz=1", "model.params.zz"),
    ("lyapunov.T=-1", "lyapunov.T"),
    ("lyapunov.T=2.5", "lyapunov.T"),
    ("seed=null", "seed"),
    ("initial.kind=spline", "initial.kind"),
    ("step.h=0.3", "step.h"),
    ("theta0=[0.1, 0.2]", "theta0"),
])
def test_malformed_config(tmp_path, capsys, override, key):
    code, _ = run(["lyapunov", "presets/m0.json", "--set", override], tmp_path)
    assert code == 2
    assert key in capsys.readouterr().err


def test_bad_json_and_missing_file(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(["simulate", str(p)], tmp_path)[0] == 2
    assert run(["simulate", str(tmp_path / "none.json")], tmp_path)[0] == 2
    assert "config" in capsys.readouterr().err


def test_bad_expression(tmp_path, capsys):
    code, _ = run(["simulate", "presets/m0.json", "--set",
                   'model={"F": ["-y1_1 +"], "tau": 1, "freq": [1]}'], tmp_path)
    assert code == 2 and "model" in capsys.readouterr().err


def test_blow_up_exit_code(tmp_path):
    code, out = run(["simulate", "presets/m1.json", "--set", "model.params.b=2",
                     "--set", "initial.value=1", "--set", "simulate.T=200"], tmp_path)
    assert code == 3
    err = body(out / "error.json")["result"]
    assert err["error"] == "BlowUpError" and 50 < err["t_blowup"] < 200
    assert (out / "trajectory.csv").exists()


def test_overrides():
    cfg = {"a": {"b": 1}}
    apply_override(cfg, "a.b=2.5")
    apply_override(cfg, "a.c.d=[1, 2]")
    apply_override(cfg, "name=hello")
    assert cfg == {"a": {"b": 2.5, "c": {"d": [1, 2]}}, "name": "hello"}


def test_preset_lookup_falls_back_to_package_data():
    cfg = load_config("presets/m2.json", seed=11)
    assert cfg["model"]["preset"] == "m2" and cfg["seed"] == 11
