import json

import pytest

from semiscat import cli
from semiscat.convergence import Grids, RunConfig
from semiscat.potential import Potential


def _write(tmp_path, cfg: dict, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _cfg(pot, **over):
    d = RunConfig.reference(potential=pot, k_ladder=(5.0, 10.0),
                            grids=Grids(y_radial=32, y_azimuth=16, seed_grid=24)).to_dict()
    d.update(over)
    return d


def test_quantum_subcommand(tmp_path):
    cfg = _write(tmp_path, _cfg(Potential.radial_bump(0.5)))
    out = tmp_path / "o"
    assert cli.main(["quantum", "--config", cfg, "--out", str(out), "--k", "5"]) == 0
    assert (out / "phase_shifts_k5.csv").exists() and (out / "amplitudes_k5.csv").exists()
    res = json.loads((out / "quantum.json").read_text())
    assert res[0]["sigma_optical"] == pytest.approx(res[0]["sigma_angular"], rel=1e-10)


def test_malformed_delta_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, _cfg(Potential.radial_bump(0.5), delta_list=[1.2]))
    assert cli.main(["verify", "--config", cfg]) == 2
    assert "pi/4" in capsys.readouterr().err


def test_unknown_criterion_exit_2(tmp_path):
    cfg = _write(tmp_path, _cfg(Potential.radial_bump(0.5)))
    assert cli.main(["verify", "--config", cfg, "--only", "A42"]) == 2


def test_bad_potential_exit_2(tmp_path):
    d = _cfg(Potential.radial_bump(0.5))
    d["potential"]["parts"][0]["amplitude"] = -3.0
    assert cli.main(["rays", "--config", _write(tmp_path, d)]) == 2


def test_trapped_rays_exit_2(tmp_path):
    d = _cfg(Potential.radial_bump(0.5))
    d["integrator"]["max_time"] = 0.5
    assert cli.main(["rays", "--config", _write(tmp_path, d), "--out", str(tmp_path)]) == 2


def test_verify_free_config_exit_0(tmp_path, capsys):
    cfg = _write(tmp_path, _cfg(Potential.free()))
    out = tmp_path / "v"
    assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines] == [f"A{i}" for i in range(1, 10)]
    assert not any(" FAIL " in l for l in lines)
    assert json.loads((out / "acceptance.json").read_text())


def test_verify_single_criterion(tmp_path, capsys):
    cfg = _write(tmp_path, _cfg(Potential.radial_bump(0.5)))
    assert cli.main(["verify", "--config", cfg, "--only", "A6"]) == 0
    assert capsys.readouterr().out.startswith("A6 PASS")


def test_rays_and_classical(tmp_path):
    cfg = _write(tmp_path, _cfg(Potential.radial_bump(1.0)))
    out = tmp_path / "r"
    assert cli.main(["rays", "--config", cfg, "--out", str(out), "--y", "0.4,0"]) == 0
    info = json.loads((out / "rays.json").read_text())
    assert info["rays"][0]["maslov"] == 2
    assert cli.main(["classical", "--config", cfg, "--out", str(out), "--theta-deg", "40"]) == 0
    assert (out / "branches_theta40_phi0.csv").exists() and (out / "deflection.csv").exists()


def test_semiclassical_grid(tmp_path):
    cfg = _write(tmp_path, _cfg(Potential.radial_bump(1.0)))
    out = tmp_path / "s"
    assert cli.main(["semiclassical", "--config", cfg, "--out", str(out), "--theta-deg", "40",
                     "--k", "10,20"]) == 0
    assert len((out / "semiclassical.csv").read_text().splitlines()) == 3


def test_report(tmp_path):
    cfg = _write(tmp_path, _cfg(Potential.radial_bump(1.0)))
    out = tmp_path / "rep"
    assert cli.main(["report", "--config", cfg, "--out", str(out), "--branch-theta-deg", "40"]) == 0
    assert (out / "summary.txt").exists() and (out / "branches_theta40_phi0.csv").exists()
