import csv
import json

import pytest

from ringabo.analysis import ObservableTrace
from ringabo.bands import read_band_table
from ringabo.cli import main
from ringabo.config import ConfigError, parse_config, resolve_time, run_id, sweep_points


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def _run(tmp_path, command, doc, out="out", *extra):
    cfg = _write(tmp_path, doc, f"{out}.json")
    outdir = tmp_path / out
    code = main([command, "--config", cfg, "--out", str(outdir), *extra])
    return code, outdir


def test_minimal_config_resolves_bloch_time():
    cfg = parse_config({"l": 2, "V": 0.5, "s": 0.002, "t_f": "3 t_B"})
    assert cfg["schedule"]["t_f"] == pytest.approx(6000.0)
    assert cfg["derived"]["t_B"] == pytest.approx(2000.0)
    assert cfg["model"]["I"] == 2.0 and cfg["derived"]["E_r"] == 1.0
    assert cfg["numerics"]["grid_N"] == 256


def test_aliases_and_sections_agree():
    a = parse_config({"azimuthal_l": 2, "V": 0.5, "ramp_rate_s": 0.002, "rotation_time_tf": 100})
    b = parse_config({"model": {"l": 2, "V": 0.5}, "schedule": {"s": 0.002, "t_f": 100}})
    assert run_id(a) == run_id(b)


def test_time_expressions():
    assert resolve_time("3 t_B", 400.0, "x") == 1200.0
    assert resolve_time("0.5*tB", 400.0, "x") == 200.0
    assert resolve_time("t_B", 400.0, "x") == 400.0
    assert resolve_time("12.5", None, "x") == 12.5
    with pytest.raises(ConfigError):
        resolve_time("3 t_B", None, "x")
    with pytest.raises(ConfigError):
        resolve_time("three periods", 400.0, "x")


@pytest.mark.parametrize("doc,msg", [
    ({"l": 0}, "azimuthal_l must be >= 1"),
    ({"s": 0.002, "B": 0.004}, "mutually exclusive"),
    ({"V": -1.0}, "model.V"),
    ({"grid_N": 30}, "multiple of 2 l"),
    ({"dt": 0.05}, "guard"),
    ({"preparation": "hot"}, "preparation"),
])
def test_validation_errors(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(doc)


def test_parse_error_has_position(tmp_path):
    path = _write(tmp_path, '{\n  "V": 0.5,,\n}')
    with pytest.raises(ConfigError, match="line 2, column"):
        parse_config(path)


def test_unknown_keys(tmp_path, caplog):
    parse_config({"V": 0.5, "colour": "red"})
    assert "colour" in caplog.text
    with pytest.raises(ConfigError, match="colour"):
        parse_config({"V": 0.5, "colour": "red"}, strict=True)


def test_sweep_points_cartesian():
    cfg = parse_config({"V": 0.5, "s": 0.002, "sweep": {"V": [0.5, 1.0], "s": [0.001, 0.002, 0.004]}})
    pts = sweep_points(cfg)
    assert len(pts) == 6
    idx, over, pc = pts[4]
    assert over == {"V": 1.0, "s": 0.002} and pc["model"]["V"] == 1.0
    assert pc["derived"]["t_B"] == pytest.approx(2000.0)


def test_bands_command(tmp_path):
    code, out = _run(tmp_path, "bands", {"V": 1.0, "l": 2})
    assert code == 0
    with open(out / "bands.csv") as fh:
        rows = read_band_table(fh)
    assert len(rows) == 161 * 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["command"] == "bands"
    for f in manifest["outputs"]:
        assert (out / f).exists()
    assert manifest["config_echo"]["model"]["V"] == 1.0
    assert manifest["versions"]["artifact"]


def test_outputs_are_deterministic(tmp_path):
    doc = {"V": 1.0, "n_q": 21}
    _, a = _run(tmp_path, "bands", doc, "a")
    _, b = _run(tmp_path, "bands", doc, "b")
    for name in ("bands.csv", "levels.csv", "shallow_bands.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["run_id"] == mb["run_id"]


def test_invalid_config_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "bands", {"l": 0})
    assert code == 1
    assert "azimuthal_l" in capsys.readouterr().err
    code, _ = _run(tmp_path, "bands", '{"V": ', "bad")
    assert code == 1


def test_detection_failure_exit_code(tmp_path):
    doc = {"V": 0.5, "s": 0.01, "t_f": "0.3 t_B", "preparation": "ground", "grid_N": 64, "dt": 0.01}
    code, out = _run(tmp_path, "deriv", doc)
    assert code == 3
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "failed" and "DetectionError" in m["messages"][0]


def test_trace_round_trip_through_deriv(tmp_path):
    doc = {"V": 1.0, "s": 0.01, "t_f": "2.5 t_B", "preparation": "ground", "grid_N": 64, "dt": 0.01,
           "sample_dt": 1.0}
    code, out = _run(tmp_path, "experiment", doc)
    assert code == 0
    sig = json.loads((out / "signature.json").read_text())
    assert sig["t_B"] == pytest.approx(400.0, rel=0.01)
    with open(out / "trace.csv") as fh:
        tr = ObservableTrace.from_csv(fh)
    assert tr.times[-1] == pytest.approx(1000.0)
    cfg = _write(tmp_path, {"V": 0.5})
    code = main(["deriv", "--config", cfg, "--trace", str(out / "trace.csv"), "--out", str(tmp_path / "d")])
    assert code == 0
    sig2 = json.loads((tmp_path / "d" / "signature.json").read_text())
    assert sig2["t_B"] == sig["t_B"]


def test_lz_command(tmp_path):
    code, out = _run(tmp_path, "lz", {"V": 0.5, "s": 0.002})
    assert code == 0
    rep = json.loads((out / "lz.json").read_text())
    assert rep["gamma"] == pytest.approx(3.90625)
    assert rep["T_two_level"] is None


def test_sweep_failure_sets_exit_code(tmp_path):
    code, out = _run(tmp_path, "lz", {"V": 0.5, "s": 0.002, "sweep": {"s": [0.002, 0.0]}})
    assert code == 2
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["status"] for r in rows] == ["ok", "error"]
    assert "s must be > 0" in rows[1]["message"]


def test_sweep_independent_of_workers(tmp_path):
    doc = {"V": 2.0, "grid_N": 64, "load_dt": 0.002, "n_bands": 3, "sweep": {"t_L": [0.3, 0.6, 1.2]}}
    c1, a = _run(tmp_path, "load-check", doc, "w1")
    c2, b = _run(tmp_path, "load-check", doc, "w2", "--workers", "2")
    assert c1 == c2 == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert (a / "point_0002" / "loading.csv").read_bytes() == (b / "point_0002" / "loading.csv").read_bytes()


def test_calibrate_and_sense_measured(tmp_path):
    code, out = _run(tmp_path, "calibrate", {"l": 2, "B": 0.004, "t_B_measured": 2000.0, "A_measured": 0.032}, "c")
    assert code == 0
    rec = json.loads((out / "calibration.json").read_text())
    assert rec["result"]["I_est"] == pytest.approx(2.0) and rec["result"]["V_est"] == pytest.approx(0.5)
    p_tB = lambda B: 8.0 / (B - 4 * 5e-4)
    doc = {"l": 2, "B1": 0.006, "B2": 0.010, "tB1": p_tB(0.006), "tB2": p_tB(0.010), "omega_dot": 5e-4,
           "chirps": [0.006, 0.008, 0.010]}
    code, out = _run(tmp_path, "sense", doc, "s")
    assert code == 0
    rec = json.loads((out / "sensing.json").read_text())
    assert rec["result"]["omega_dot_est"] == pytest.approx(5e-4, rel=1e-12)
    fit = json.loads((out / "sensing_fit.json").read_text())
    assert fit["omega_dot_est"] == pytest.approx(5e-4, rel=1e-9)


def test_workers_must_be_positive(tmp_path):
    assert main(["bands", "--workers", "0", "--out", str(tmp_path / "x")]) == 1
