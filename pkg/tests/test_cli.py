import csv
import shutil
import subprocess
import sys

import numpy as np
import pytest

from nnsurf import pointcloud
from nnsurf.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main


def test_gen_writes_xyz(tmp_path):
    out = tmp_path / "t.xyz"
    assert main(["gen", "--shape", "torus", "--out", str(out)]) == EXIT_OK
    cloud = pointcloud.load_xyz(out)
    assert cloud.shape == (100, 3)


def test_gen_noise_is_seeded(tmp_path):
    args = ["gen", "--shape", "cone", "--noise", "0.1", "--out"]
    main(args + [str(tmp_path / "a.xyz"), "--seed", "3"])
    main(args + [str(tmp_path / "b.xyz"), "--seed", "3"])
    main(args + [str(tmp_path / "c.xyz"), "--seed", "4"])
    a, b, c = (pointcloud.load_xyz(tmp_path / f"{n}.xyz") for n in "abc")
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_gen_negative_noise_is_config_error(tmp_path, capsys):
    assert main(["gen", "--shape", "torus", "--noise", "-1", "--out",
                 str(tmp_path / "x.xyz")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_run_with_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('out = "ignored"\n[dataset]\nshape = "torus"\n')
    out = tmp_path / "out"
    emb = tmp_path / "emb.csv"
    code = main(["run", "--config", str(cfg), "--out", str(out), "--seed", "2",
                 "--dump-embedding", str(emb)])
    assert code == EXIT_OK
    assert (out / "mesh.obj").is_file() and not (tmp_path / "ignored").exists()
    lines = emb.read_text().splitlines()
    assert lines[0] == "u,v" and len(lines) == 101
    assert "mse=" in capsys.readouterr().out


def test_run_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[dataset]\nshape = 'sphere'\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_run_stage_failure_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'out = "{tmp_path / "o"}"\n[dataset]\nshape = "xyz"\npath = "none.xyz"\n')
    assert main(["run", "--config", str(cfg)]) == EXIT_STAGE
    err = capsys.readouterr().err
    assert "stage 'load'" in err and "Hint" in err


def test_bench_csv_and_exit_codes(tmp_path):
    suite = tmp_path / "s.toml"
    suite.write_text('[[run]]\n[run.dataset]\nshape = "torus"\n'
                     '[[run]]\n[run.dataset]\nshape = "torus"\nname = "bad"\n'
                     '[run.dataset.params]\nn_theta = 1\n')
    out = tmp_path / "r.csv"
    assert main(["bench", "--suite", str(suite), "--csv", str(out)]) == EXIT_OK
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["dataset", "method", "points", "mse", "layers", "neurons", "epochs",
                       "seconds"]
    assert [r[0] for r in rows[1:]] == ["torus", "bad"] and rows[2][3] == "nan"

    suite.write_text('[[run]]\n[run.dataset]\nshape = "torus"\n[run.dataset.params]\n'
                     'n_theta = 1\n')
    assert main(["bench", "--suite", str(suite), "--csv", str(out)]) == EXIT_STAGE


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


@pytest.mark.skipif(shutil.which("reconstruct") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["reconstruct", "gen", "--shape", "scurve", "--out",
                          str(tmp_path / "s.xyz")], capture_output=True, text=True)
    assert res.returncode == 0
    assert len((tmp_path / "s.xyz").read_text().splitlines()) == 400


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "nnsurf.cli", "gen", "--shape", "torus",
                          "--out", str(tmp_path / "t.xyz")], capture_output=True, text=True)
    assert res.returncode == 0
