import json

import pytest

from kickecho import cli
from kickecho.serialize import read_csv

SMALL = ["--set", "N=64", "--set", "T=60"]


def _run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path)])


def _manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_echo_smoke(tmp_path, capsys):
    assert _run(tmp_path, "echo", "--set", "N=1024", "--set", "map.K=7", "--set", "sigmas=[0.3]",
                "--set", "T=2000") == 0
    header, cols = read_csv(tmp_path / "echo.csv")
    assert header == ["sigma", "t", "M"]
    assert cols["t"].size == 2001 and cols["M"][0] == 1.0
    assert (cols["M"] <= 1 + 1e-12).all() and (cols["M"] >= 0).all()
    man = _manifest(tmp_path)
    assert sorted(man["outputs"]) == ["echo.csv", "echo_summary.json"]
    assert man["runs"][0]["config"]["map"]["K"] == 7.0
    assert "sigma" in capsys.readouterr().out


def test_echo_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert _run(d, "echo", *SMALL, "--set", "sigmas=[0.1,0.5]") == 0
    assert (a / "echo.csv").read_bytes() == (b / "echo.csv").read_bytes()


def test_semiclassical_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert _run(d, "semiclassical", *SMALL, "--set", "ensemble.n=200", "--seed", "9") == 0
    assert (a / "semiclassical.csv").read_bytes() == (b / "semiclassical.csv").read_bytes()


@pytest.mark.parametrize("cmd,outputs", [
    ("classical", {"orbit.csv", "diffusion.csv", "classical.json"}),
    ("lyapunov", {"lyapunov.json"}),
    ("stick", {"stick.json"}),
    ("levy-fit", {"levy.csv", "levy.json"}),
])
def test_subcommands_write_outputs(tmp_path, cmd, outputs):
    extra = ["--set", "T=200", "--set", "ensemble.n=2000", "--set", "stick.max_steps=1000",
             "--set", "levy.times=[1,5,10,20,40]", "--set", "sigmas=[0.1]"]
    assert _run(tmp_path, cmd, *extra) == 0
    assert set(_manifest(tmp_path)["outputs"]) == outputs


def test_decay_fit_from_echo_csv(tmp_path):
    src = tmp_path / "src"
    assert _run(src, "echo", *SMALL, "--set", "sigmas=[0.01,0.02,0.03,0.1]") == 0
    out = tmp_path / "fit"
    assert _run(out, "decay-fit", *SMALL, "--set", f"input={src / 'echo.csv'}") == 0
    header, cols = read_csv(out / "decayfit.csv")
    assert header == cli.DECAY_HEADER
    assert cols["sigma"].tolist() == [0.01, 0.02, 0.03, 0.1]
    thresholds = json.loads((out / "decayfit_thresholds.json").read_text())
    assert thresholds["gap"] == 0.05


def test_config_errors_exit_2(tmp_path, capsys):
    assert _run(tmp_path, "echo", "--set", "sigmas=[]") == 2
    assert "sigmas" in capsys.readouterr().err
    assert _run(tmp_path, "echo", "--set", "bogus=1") == 2
    assert _run(tmp_path, "echo", "--config", str(tmp_path / "missing.yaml")) == 2
    assert _run(tmp_path, "lyapunov", "--set", "T=10") == 2


def test_validate_config_round_trip(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("map:\n  K: 7.0\nsigmas: [0.1, 0.3]\n")
    assert cli.main(["validate-config", "--config", str(cfg)]) == 0
    dumped = capsys.readouterr().out
    again = tmp_path / "d.yaml"
    again.write_text(dumped)
    assert cli.main(["validate-config", "--config", str(again)]) == 0
    assert capsys.readouterr().out == dumped


SWEEP = ["--set", "N=64", "--set", "T=60", "--set", "sweep.K=[3.0,7.0]",
         "--set", "sweep.p_center=[1.85,3.0]", "--set", "sweep.sigma=[0.1,0.3]"]


def test_sweep_rows_and_standalone_cells(tmp_path):
    assert _run(tmp_path / "all", "sweep", *SWEEP) == 0
    _, cols = read_csv(tmp_path / "all" / "sweep.csv")
    assert cols["cell"].tolist() == list(range(8))
    # cell 5 is (K=7, p=1.85, sigma=0.3); rerun it alone
    one = ["--set", "N=64", "--set", "T=60", "--set", "sweep.K=[7.0]", "--set", "sweep.p_center=[1.85]",
           "--set", "sweep.sigma=[0.3]"]
    assert _run(tmp_path / "one", "sweep", *one) == 0
    _, single = read_csv(tmp_path / "one" / "sweep.csv")
    for name, col in single.items():
        if name not in ("cell", "seed"):
            assert col[0] == cols[name][5] or (col[0] != col[0] and cols[name][5] != cols[name][5])


def test_sweep_resume_skips_done_cells(tmp_path):
    assert _run(tmp_path, "sweep", *SWEEP) == 0
    before = (tmp_path / "sweep.csv").read_bytes()
    (tmp_path / "cells" / "cell_00003.csv").unlink()
    assert _run(tmp_path, "sweep", *SWEEP) == 0
    man = _manifest(tmp_path)
    assert [t["cell"] for t in man["runs"][-1]["tasks"]] == [3]
    assert (tmp_path / "sweep.csv").read_bytes() == before
    assert _run(tmp_path, "sweep", *SWEEP) == 0
    assert _manifest(tmp_path)["runs"][-1]["tasks"] == []
    assert len(_manifest(tmp_path)["runs"]) == 3


def test_sweep_threads_match_serial(tmp_path):
    assert _run(tmp_path / "s", "sweep", *SWEEP) == 0
    assert _run(tmp_path / "p", "sweep", *SWEEP, "--threads", "3") == 0
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()


def test_sweep_cap(tmp_path, capsys):
    assert _run(tmp_path, "sweep", *SWEEP, "--set", "sweep.cap=4") == 2
    assert "8 cells exceed the cap of 4" in capsys.readouterr().err


def test_failed_cell_marks_partial(tmp_path, monkeypatch):
    real = cli._run_cell

    def flaky(cfg_dict, index, *rest):
        if index == 2:
            raise FloatingPointError("synthetic failure")
        return real(cfg_dict, index, *rest)

    monkeypatch.setattr(cli, "_run_cell", flaky)
    assert _run(tmp_path, "sweep", *SWEEP) == 1
    tasks = _manifest(tmp_path)["runs"][-1]["tasks"]
    failed = [t for t in tasks if t["status"] == "failed"]
    assert [t["cell"] for t in failed] == [2] and "synthetic failure" in failed[0]["error"]
    _, cols = read_csv(tmp_path / "sweep.csv")
    assert 2 not in cols["cell"].tolist() and len(cols["cell"]) == 7


def test_cell_seed_depends_only_on_master_and_index():
    assert cli.cell_seed(7, 3) == cli.cell_seed(7, 3)
    assert len({cli.cell_seed(7, i) for i in range(100)}) == 100
    assert cli.cell_seed(7, 3) != cli.cell_seed(8, 3)
