import json

import numpy as np
import pytest

from glintlab import cli, imageio
from glintlab.scene import default_scene_dict


@pytest.fixture
def scene_file(tmp_path):
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(default_scene_dict(width=24, height=16)))
    return p


def test_render_command(scene_file, tmp_path, capsys):
    out = tmp_path / "g.pfm"
    png = tmp_path / "g.ppm"
    assert cli.main(["render", "--scene", str(scene_file), "--out", str(out), "--png-out", str(png), "--seed", "3"]) == 0
    img = imageio.read_pfm(out)
    assert img.shape == (16, 24, 3)
    assert imageio.read_ppm(png).shape == (16, 24, 3)
    assert "rendered 24x16 (glint)" in capsys.readouterr().out


def test_render_is_deterministic_across_threads(scene_file, tmp_path):
    a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
    cli.main(["render", "--scene", str(scene_file), "--out", str(a), "--threads", "1"])
    cli.main(["render", "--scene", str(scene_file), "--out", str(b), "--threads", "4"])
    assert a.read_bytes() == b.read_bytes()


def test_render_modes(scene_file, tmp_path):
    out = tmp_path / "o.pfm"
    assert cli.main(["render", "--scene", str(scene_file), "--out", str(out), "--mode", "oracle", "--spp", "16"]) == 0
    assert cli.main(["render", "--scene", str(scene_file), "--out", str(out), "--mode", "glint_baseline",
                     "--R", "0.01"]) == 0
    # baseline without R is a reported error
    assert cli.main(["render", "--scene", str(scene_file), "--out", str(out), "--mode", "glint_baseline"]) == 1


def test_render_errors(tmp_path, capsys):
    assert cli.main(["render", "--scene", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x.pfm")]) == 1
    bad = tmp_path / "bad.json"
    d = default_scene_dict()
    d["camera"]["fov"] = -3
    bad.write_text(json.dumps(d))
    assert cli.main(["render", "--scene", str(bad), "--out", str(tmp_path / "x.pfm")]) == 1
    assert "camera.fov" in capsys.readouterr().err


def test_bake_command(tmp_path, capsys):
    out = tmp_path / "t.gltb"
    log = tmp_path / "bake.log"
    assert cli.main(["bake", "--res", "3", "--out", str(out), "--log", str(log)]) == 0
    assert out.read_bytes()[:4] == b"GLTB"
    assert "baked 3x3" in log.read_text()
    # the freshly baked table can drive a render
    scene = tmp_path / "s.json"
    scene.write_text(json.dumps(default_scene_dict(width=8, height=8)))
    assert cli.main(["render", "--scene", str(scene), "--table", str(out), "--out", str(tmp_path / "r.pfm")]) == 0


@pytest.mark.parametrize("args", [
    ["match-r"],
    ["convergence", "--levels", "2", "--width", "16", "--height", "16"],
    ["subdivision", "--splits", "4", "--seeds", "3", "--width", "12", "--height", "12"],
    ["subdivision", "--splits", "4", "--seeds", "2", "--variant", "mc", "--width", "8", "--height", "8"],
    ["ablation", "--width", "8", "--height", "8", "--spp", "64"],
])
def test_experiment_commands(tmp_path, args):
    csv = tmp_path / "e.csv"
    out = tmp_path / "e.pfm"
    extra = ["--out", str(out)] if args[0] != "match-r" else []
    assert cli.main(["experiment", *args, "--csv", str(csv), *extra]) == 0
    assert len(csv.read_text().splitlines()) >= 2
    if extra:
        assert np.all(np.isfinite(imageio.read_pfm(out)))


def test_bad_subdivision_count(tmp_path, capsys):
    assert cli.main(["experiment", "subdivision", "--splits", "5", "--csv", str(tmp_path / "e.csv")]) == 1
    assert "square" in capsys.readouterr().err
