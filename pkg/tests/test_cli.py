import json
import math

import numpy as np
import pytest

from bonerecon.cli import main
from bonerecon.geom import load_mesh, save_mesh
from bonerecon.pipeline import save_pipeline_config
from bonerecon.primitives import icosphere

from tiny_pipeline import tiny_config


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_pipeline_config(tiny_config(), d / "tiny.cfg")
    assert main(["build-dataset", "--config", str(d / "tiny.cfg"), "--n", "2", "--seed", "1",
                 "--out", str(d / "ds")]) == 0
    return d


def run(d, *argv):
    return main([argv[0], "--config", str(d / "tiny.cfg"), *map(str, argv[1:])])


def test_usage_errors_exit_2(capsys):
    for argv in (["eval", "--bogus"], ["nosuch"], [], ["train", "--manifest", "m"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    capsys.readouterr()


def test_missing_file_exits_1(tmp_path, capsys):
    assert main(["eval", "--pred", str(tmp_path / "no.off"), "--gt", str(tmp_path / "no.off")]) == 1
    assert "error [io]" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("[train]\nsteps = -3\n")
    s = icosphere(2, 0.3)
    save_mesh(s, tmp_path / "s.off")
    assert main(["eval", "--config", str(tmp_path / "bad.cfg"), "--pred", str(tmp_path / "s.off"),
                 "--gt", str(tmp_path / "s.off")]) == 1
    assert "configuration" in capsys.readouterr().err


def test_eval_self_comparison(tmp_path, capsys):
    s = icosphere(3, 0.3)
    save_mesh(s, tmp_path / "s.off")
    assert main(["eval", "--pred", str(tmp_path / "s.off"), "--gt", str(tmp_path / "s.off"),
                 "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["iou"] == 1.0 and rep["chamfer_l1"] == 0.0
    assert json.loads(capsys.readouterr().out) == rep


def test_phantom_and_render(tmp_path, workdir):
    assert run(workdir, "phantom", "--seed", 2, "--volume", tmp_path / "v.raw", "--mesh", tmp_path / "m.off") == 0
    assert load_mesh(tmp_path / "m.off").n_faces > 0
    assert run(workdir, "render-drr", "--volume", tmp_path / "v.raw", "--angle", 90,
               "--raw", tmp_path / "raw.npy", "--out", tmp_path / "d.png") == 0
    raw = np.load(tmp_path / "raw.npy")
    assert raw.shape == (32, 32) and raw.max() > 0


def test_untrained_infer_writes_empty_mesh(workdir, tmp_path, capsys):
    assert run(workdir, "train", "--manifest", workdir / "ds" / "manifest.json", "--steps", 0,
               "--out", tmp_path / "ck") == 0
    img = workdir / "ds" / "sample_000" / "drr_000.png"
    assert run(workdir, "infer", "--checkpoint", tmp_path / "ck", "--image", img, "--out", tmp_path / "e.off") == 0
    assert "empty mesh" in capsys.readouterr().err
    assert load_mesh(tmp_path / "e.off").n_faces == 0


def test_smoke_train_infer_register_eval(workdir, tmp_path):
    ds = workdir / "ds"
    assert run(workdir, "train", "--manifest", ds / "manifest.json", "--steps", 500, "--out", tmp_path / "ck",
               "--losses", tmp_path / "loss.csv") == 0
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == 501
    assert run(workdir, "infer", "--checkpoint", tmp_path / "ck", "--image", ds / "sample_000" / "drr_000.png",
               "--out", tmp_path / "coarse.off") == 0
    assert load_mesh(tmp_path / "coarse.off").n_faces > 0
    assert run(workdir, "register", "--templates", ds / "templates", "--regions", ds / "templates" / "regions.txt",
               "--target", tmp_path / "coarse.off", "--out", tmp_path / "final.off") == 0
    for pred in ("coarse", "final"):
        out = tmp_path / ("%s.json" % pred)
        assert run(workdir, "eval", "--pred", tmp_path / ("%s.off" % pred), "--gt", ds / "sample_000" / "mesh.off",
                   "--out", out) == 0
        rep = json.loads(out.read_text())
        assert all(math.isfinite(rep[k]) for k in ("iou", "chamfer_l1", "f_score", "nc", "maxe", "maye", "maze"))
