import json
import math
import os
from importlib import resources

import numpy as np
import pytest
import yaml

from fastmonopole import cli, io
from fastmonopole import special_fns as sf
from fastmonopole.foldy_lax import t_coeff

K = 2 * math.pi


def bundled(name):
    return str(resources.files("fastmonopole") / "scenarios" / name)


def write_scenario(tmp_path, data, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def one_rod(amplitude=1.0, **extra):
    data = {
        "name": "one_rod",
        "wavelength": 1.0,
        "incident": {"direction": [0.0, -1.0], "amplitude": amplitude},
        "clusters": [{
            "domain": {"mean_radius": 0.5, "lobes": 1, "M": 64},
            "enclosure_ratio": 1.0,
            "rods": [{"position": [0.1, 0.0], "radius": 0.05}],
            "P": 8,
        }],
        "output": {"observation_radius": 3.0, "observation_points": 36, "points_per_wavelength": 3},
    }
    data.update(extra)
    return data


def small_lattice(**fit):
    return {
        "name": "small_lattice",
        "wavelength": 1.0,
        "clusters": [{
            "domain": {"mean_radius": 1.0, "lobe_amplitude": 0.2, "M": 128},
            "lattice": {"pitch": 0.3, "radius": 0.03, "hole_fraction": 0.1, "seed": 2},
            **fit,
        }],
        "output": {"observation_radius": 4.0, "observation_points": 90, "field_map": False},
    }


def error_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def recomputed(approx, ref):
    diff = np.abs(approx - ref)
    return {"max_rel": diff.max() / np.abs(ref).max(), "mean_rel": diff.mean() / np.abs(ref).max(),
            "l2_rel": np.linalg.norm(approx - ref) / np.linalg.norm(ref)}


def assert_metrics(report, approx, ref):
    for key, value in recomputed(approx, ref).items():
        assert report[key] == pytest.approx(value, rel=1e-12, abs=1e-300)


def test_validate_prints_summary(capsys):
    assert cli.main(["validate", "--scenario", bundled("trefoil_five.yaml")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mode"] == "validate" and len(out["runs"]) == 3
    assert len(out["runs"][0]["clusters"]) == 5


def test_config_errors_exit_2(tmp_path, capsys):
    path = write_scenario(tmp_path, one_rod(colour="red"))
    assert cli.main(["direct", "--scenario", path, "--out", str(tmp_path / "o")]) == 2
    err = error_json(capsys)
    assert err["exit_code"] == 2 and err["error"] == "ConfigError" and "colour" in err["message"]
    path = write_scenario(tmp_path, one_rod(clusters=[]))
    assert cli.main(["direct", "--scenario", path, "--out", str(tmp_path / "o")]) == 2
    assert "degenerate scenario" in error_json(capsys)["message"]
    assert cli.main(["direct", "--scenario", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 2
    assert cli.main(["direct", "--scenario", write_scenario(tmp_path, one_rod())]) == 2
    assert cli.main(["direct", "--scenario", path, "--workers", "0"]) == 2


def test_non_convergence_exits_3_after_writing(tmp_path, capsys):
    data = yaml.safe_load(open(bundled("two_rods_oracle.yaml")))
    data["coupling"] = {"max_iterations": 1}
    out = tmp_path / "o"
    assert cli.main(["fmm", "--scenario", write_scenario(tmp_path, data), "--out", str(out)]) == 3
    err = error_json(capsys)
    assert err["exit_code"] == 3 and err["error"] == "NumericalFailure"
    report = json.loads((out / "report.json").read_text())
    assert report["runs"][0]["converged"] is False
    assert (out / "amplitudes_fmm.csv").exists()


def test_divergence_exits_3_with_history(tmp_path, capsys, monkeypatch):
    from fastmonopole import fast_monopole as fm
    original = fm._Coupling.matrix
    monkeypatch.setattr(fm._Coupling, "matrix", lambda self, j, l: 1e6 * original(self, j, l))
    path = bundled("two_rods_oracle.yaml")
    assert cli.main(["fmm", "--scenario", path, "--out", str(tmp_path)]) == 3
    err = error_json(capsys)
    assert err["error"] == "DivergenceError" and len(err["history"]) >= 4


def test_one_rod_field_map(tmp_path):
    path = write_scenario(tmp_path, one_rod())
    report = cli.run("direct", path, str(tmp_path))
    _, cols = io.read_csv(tmp_path / "field_direct.csv")
    pts = np.stack([cols["x1"], cols["x2"]], axis=1)
    inc = np.exp(-1j * K * pts[:, 1])
    s = t_coeff(K, 0.05, 12.0) * np.exp(-1j * K * 0.0)
    r = np.hypot(pts[:, 0] - 0.1, pts[:, 1])
    expected = inc + s * sf.hankel1_0(K * r)
    u = cols["re_u"] + 1j * cols["im_u"]
    np.testing.assert_allclose(u, expected, rtol=1e-12)
    peak = report["runs"][0]["field_map_peak"]
    np.testing.assert_allclose(cols["abs_u_normalized"], np.abs(u) / peak, rtol=1e-12)
    assert cols["abs_u_normalized"].max() == pytest.approx(1.0)
    inside = np.hypot(pts[:, 0], pts[:, 1]) < 0.5 - 1e-9
    np.testing.assert_array_equal(cols["inside_flag"][inside], 1)


def test_fit_metrics_recompute_from_csv(tmp_path):
    report = cli.run("fit", bundled("trefoil_single.yaml"), str(tmp_path))
    run = report["runs"][0]
    assert run["N"] == 481
    _, tr = io.read_csv(tmp_path / "trace_homothety.csv")
    assert_metrics(run["homothety_error"], tr["re_u_layer"] + 1j * tr["im_u_layer"],
                   tr["re_u_direct"] + 1j * tr["im_u_direct"])
    assert run["homothety_error"]["max_rel"] < 0.015
    _, circ = io.read_csv(tmp_path / "circle_fit.csv")
    assert_metrics(run["circle_error"], circ["re_us_layer"] + 1j * circ["im_us_layer"],
                   circ["re_us_direct"] + 1j * circ["im_us_direct"])
    assert len(circ["angle"]) == 360
    np.testing.assert_allclose(np.hypot(circ["x1"], circ["x2"]), run["observation_radius"], rtol=1e-14)
    label = sorted(f for f in os.listdir(tmp_path) if f.startswith("layer_"))[0][len("layer_"):-4]
    _, layer = io.read_csv(tmp_path / ("layer_%s.csv" % label))
    assert len(layer["y1"]) == run["P"][0]
    with open(tmp_path / ("layer_%s.csv" % label)) as fh:
        assert fh.readline().startswith("# k=")
    _, spec = io.read_csv(tmp_path / ("dft_%s.csv" % label))
    sigma = layer["re_sigma"] + 1j * layer["im_sigma"]
    np.testing.assert_allclose(spec["abs_dft"], np.abs(np.fft.fft(sigma)), rtol=1e-10, atol=1e-14)


def test_compare_metrics_recompute_from_csv(tmp_path):
    report = cli.run("compare", bundled("two_rods_oracle.yaml"), str(tmp_path))
    run = report["runs"][0]
    _, c = io.read_csv(tmp_path / "circle_compare.csv")
    direct = c["re_us_direct"] + 1j * c["im_us_direct"]
    fmm = c["re_us_fmm"] + 1j * c["im_us_fmm"]
    assert_metrics(run["error_scattered"], fmm, direct)
    assert_metrics(run["error_total"], c["re_u_fmm"] + 1j * c["im_u_fmm"], c["re_u_direct"] + 1j * c["im_u_direct"])
    assert run["error_scattered"]["max_rel"] < 1e-6
    _, a = io.read_csv(tmp_path / "amplitudes_direct.csv")
    _, b = io.read_csv(tmp_path / "amplitudes_fmm.csv")
    np.testing.assert_allclose(b["re"] + 1j * b["im"], a["re"] + 1j * a["im"], rtol=1e-6)
    t = run["timings"]
    assert run["timing_ratio"] == pytest.approx(run["direct"]["timings"]["total"] / t["fmm"])


def test_compare_single_cluster_error_is_fit_error(tmp_path):
    path = write_scenario(tmp_path, small_lattice(P=30))
    run = cli.run("compare", path, str(tmp_path))["runs"][0]
    assert run["iterations"] == 1
    assert run["error_scattered"]["max_rel"] < 10 * run["fmm"]["fit_reports"][0]["relative_residual"]


def test_zero_incident_gives_zero_layers(tmp_path):
    path = write_scenario(tmp_path, one_rod(amplitude=0.0))
    run = cli.run("fit", path, str(tmp_path))["runs"][0]
    _, layer = io.read_csv(tmp_path / "layer_cluster0.csv")
    assert not np.any(layer["re_sigma"]) and not np.any(layer["im_sigma"])
    assert run["fit_reports"][0]["residual_norm"] == 0


def test_auto_P_matches_fixed_P(tmp_path):
    auto = cli.run("fit", write_scenario(tmp_path, small_lattice()), str(tmp_path / "auto"))["runs"][0]
    P = auto["P"][0]
    fixed = cli.run("fit", write_scenario(tmp_path, small_lattice(P=P)), str(tmp_path / "fixed"))["runs"][0]
    assert fixed["P"] == [P] and fixed["M"] == auto["M"]
    a = (tmp_path / "auto" / "layer_cluster0.csv").read_text()
    b = (tmp_path / "fixed" / "layer_cluster0.csv").read_text()
    assert a == b


def strip_timings(obj):
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items() if k not in ("timings", "timing_ratio")}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj


def test_runs_are_deterministic(tmp_path):
    path = write_scenario(tmp_path, small_lattice(P=20))
    reports = [cli.run("compare", path, str(tmp_path / d), workers=w) for d, w in (("a", 1), ("b", 2))]
    assert strip_timings(reports[0]) == strip_timings(reports[1])
    for name in sorted(os.listdir(tmp_path / "a")):
        if name.endswith(".csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override(tmp_path):
    path = write_scenario(tmp_path, small_lattice(P=20))
    base = cli.run("validate", path)
    same = cli.run("validate", path, seed=2)
    other = cli.run("validate", path, seed=3)
    assert same["scenario_hash"] == base["scenario_hash"] != other["scenario_hash"]


def test_wavelength_list_uses_subdirectories(tmp_path, capsys):
    data = one_rod(wavelength=[1.0, 2.0])
    out = tmp_path / "o"
    assert cli.main(["fmm", "--scenario", write_scenario(tmp_path, data), "--out", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [json.loads(line)["wavelength"] for line in lines] == [1.0, 2.0]
    report = json.loads((out / "report.json").read_text())
    assert [r["directory"] for r in report["runs"]] == ["lambda_1", "lambda_2"]
    assert (out / "lambda_2" / "circle_fmm.csv").exists()
    assert report["tool_version"] and len(report["scenario_hash"]) == 64


def test_bench_mode_runs(tmp_path):
    run = cli.run("fmm", bundled("two_rods_oracle.yaml"), str(tmp_path), bench=True)["runs"][0]
    assert run["converged"] and run["timings"]["total"] > 0
