import json

import pytest

from fermi_mushroom import cli, reference_rectangle, reference_sinusoid
from fermi_mushroom import ensemble as ens
from fermi_mushroom.protocol import SinusoidalCycle

from test_geometry import MC_VOLUMES_TAN23


def write_protocol(tmp_path, protocol, name="protocol.json"):
    path = tmp_path / name
    path.write_text(json.dumps(protocol.to_dict()))
    return str(path)


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_volumes_hole_spanning_cap(capsys):
    code, out, _ = run(["volumes", "--r", 1, "--w", 1, "--h", 1, "--tan-theta", 0], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["v_ell"] == 0.0
    assert set(doc) == {"v_cap", "v_stem", "v_ell", "v_cha", "delta", "area"}


def test_volumes_match_monte_carlo(capsys):
    code, out, _ = run(["volumes", "--r", 1, "--w", 0.3, "--h", 2, "--tan-theta", 0.040158], capsys)
    doc = json.loads(out)
    for key, (est, _) in MC_VOLUMES_TAN23.items():
        assert abs(doc[key] / est - 1) < 1e-3, key


def test_volumes_invalid_shape(capsys):
    code, _, err = run(["volumes", "--r", 1, "--w", 2, "--h", 1], capsys)
    assert code == 2
    assert "w ≤ r violated" in err


def test_theory_sinusoid(tmp_path, capsys):
    proto = write_protocol(tmp_path, reference_sinusoid())
    code, _, _ = run(["theory", proto, "--out", tmp_path / "out"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "out" / "prediction.json").read_text())
    assert abs(doc["m1"] - 0.122768) < 1e-5
    assert doc["seed"] == 0 and doc["config"]["protocol"]["kind"] == "sinusoidal"
    for name in ("p_cha.csv", "g.csv", "e1_of_tin.csv", "predicted_density.csv"):
        assert (tmp_path / "out" / name).exists()


def test_theory_clockwise_rectangle(tmp_path, capsys):
    proto = write_protocol(tmp_path, reference_rectangle("clockwise"))
    code, out, _ = run(["theory", proto, "--out", tmp_path], capsys)
    assert code == 0
    assert json.loads(out)["ln_e_nc"] == pytest.approx(-0.161205, abs=5e-6)


def test_theory_single_parameter(tmp_path, capsys):
    proto = write_protocol(tmp_path, SinusoidalCycle(a=0.0, b=0.5, c=0.0))
    code, out, _ = run(["theory", proto, "--out", tmp_path], capsys)
    doc = json.loads(out)
    assert code == 0
    assert abs(doc["loop_area"]) < 1e-12 and abs(doc["m1"]) < 1e-10


def test_theory_two_capture_intervals(tmp_path, capsys):
    proto = write_protocol(tmp_path, SinusoidalCycle(c=0.8, tan_theta=0.0, nu_frequency=1.0))
    code, out, err = run(["theory", proto, "--out", tmp_path], capsys)
    assert code == 3
    assert "capture intervals" in err
    assert json.loads(out)["m1"] >= 0


def test_schema_violation(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"kind": "sinusoidal", "r0": 1}))
    code, _, err = run(["theory", path, "--out", tmp_path], capsys)
    assert code == 2 and "missing fields" in err


def test_unreadable_protocol(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert run(["theory", path], capsys)[0] == 2
    assert run(["theory", tmp_path / "absent.json"], capsys)[0] == 2
    assert run(["theory"], capsys)[0] == 2


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"protocol": reference_sinusoid().to_dict(), "n_particles": 7,
                               "e0": 1e4, "seed": 3, "out": str(tmp_path / "a")}))
    code, _, _ = run(["simulate", "--config", cfg, "--seed", 5], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["seed"] == 5
    assert summary["config"]["n_particles"] == 7


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"protocol": reference_sinusoid().to_dict(), "particles": 7}))
    code, _, err = run(["simulate", "--config", cfg], capsys)
    assert code == 2 and "unknown config keys" in err


def test_output_directory_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    proto = write_protocol(tmp_path, reference_sinusoid())
    assert run(["theory", proto], capsys)[0] == 0
    assert (tmp_path / "env" / "prediction.json").exists()


def test_simulate_is_reproducible(tmp_path, capsys):
    proto = write_protocol(tmp_path, reference_sinusoid())
    argv = ["simulate", proto, "-N", 30, "--e0", 1e4, "--seed", 9, "--cycles", 10, "--out", tmp_path / "a"]
    assert run(argv, capsys)[0] == 0
    first = (tmp_path / "a" / "summary.json").read_bytes()
    assert run(argv, capsys)[0] == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == first
    assert (tmp_path / "a" / "normalized_cycles_10.csv").exists()
    assert (tmp_path / "a" / "capture_times.csv").exists()


def test_simulate_quality_gate(tmp_path, capsys, monkeypatch):
    # any aborted trajectory trips a negative threshold
    monkeypatch.setattr(ens, "MAX_ABORTED_FRACTION", -1.0)
    proto = write_protocol(tmp_path, reference_sinusoid())
    code, _, err = run(["simulate", proto, "-N", 3, "--e0", 1e4, "--out", tmp_path], capsys)
    assert code == 4 and "aborted fraction" in err


def test_compare_with_few_particles_is_inconclusive(tmp_path, capsys):
    proto = write_protocol(tmp_path, reference_sinusoid())
    code, out, _ = run(["compare", proto, "-N", 10, "--e0", 1e4, "--out", tmp_path], capsys)
    assert code == 0
    report = json.loads(out)
    assert {report[k]["verdict"] for k in ("m1", "p_nc", "capture_times")} == {"INCONCLUSIVE"}
    assert json.loads((tmp_path / "compare.json").read_text()) == report


def test_compare_ergodic_control(tmp_path, capsys):
    proto = write_protocol(tmp_path, reference_sinusoid(c=0.0))
    code, out, _ = run(["compare", proto, "-N", 40, "--e0", 1e5, "--out", tmp_path], capsys)
    report = json.loads(out)
    assert code == 0
    assert abs(report["m1"]["theory"]) < 1e-10
    assert report["m1"]["verdict"] == "PASS" and report["p_nc"]["verdict"] == "PASS"
    assert report["capture_times"]["verdict"] == "NOT APPLICABLE"


def test_compare_rejects_two_capture_intervals(tmp_path, capsys):
    proto = write_protocol(tmp_path, SinusoidalCycle(c=0.8, tan_theta=0.0, nu_frequency=1.0))
    assert run(["compare", proto, "--out", tmp_path], capsys)[0] == 3


def test_help_exits_cleanly(capsys):
    assert cli.main(["--help"]) == 0
    assert cli.main(["bogus"]) == 2
