"""Command-line workflow, exercised in-process through cli.main."""

import os

import numpy as np
import pytest

from bevss import cli, fileio
from bevss.grid import BevGridSpec


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A scene written by `synth`, labeled, and optimized briefly."""
    root = tmp_path_factory.mktemp("cli")
    scene = str(root / "scene")
    pred = str(root / "pred")
    assert cli.main(["synth", "--preset", "one-box", "--seed", "0", "--out", scene]) == 0
    assert cli.main(["labels", "--scene", scene]) == 0
    assert cli.main(["optimize", "--scene", scene, "--out", pred, "--iters", "40"]) == 0
    return {"root": root, "scene": scene, "pred": pred}


def test_synth_writes_manifest(workspace, capsys):
    assert os.path.exists(os.path.join(workspace["scene"], "manifest"))
    bundle = fileio.load_scene(workspace["scene"])
    assert set(bundle.clouds) == {-1, 0, 1, 2}


def test_labels_stores_masks_and_pieces(workspace):
    bundle = fileio.load_scene(workspace["scene"])
    assert set(bundle.pseudo_masks) == {-1, 0, 1, 2}
    assert bundle.pieces is not None and bundle.pieces.piece_count > 0


def test_labels_prints_summary(workspace, capsys):
    assert cli.main(["labels", "--scene", workspace["scene"]]) == 0
    out = capsys.readouterr().out
    assert "frame 0:" in out
    assert "pieces:" in out


def test_optimize_writes_fields_and_report(workspace):
    for name in ("field_m1.bev", "field_1.bev", "field_2.bev", "report.txt"):
        assert os.path.exists(os.path.join(workspace["pred"], name))
    report = open(os.path.join(workspace["pred"], "report.txt")).read()
    assert "iterations=" in report
    assert "loss_total=" in report
    field = fileio.load_field(os.path.join(workspace["pred"], "field_1.bev"), BevGridSpec())
    assert field.time_offset == 1
    assert float(np.abs(field.values).max()) > 0.0


def test_loss_prints_all_components(workspace, capsys):
    rc = cli.main(["loss", "--scene", workspace["scene"], "--pred", workspace["pred"]])
    assert rc == 0
    out = capsys.readouterr().out
    for key in ("mc:", "pr:", "tc:", "total:"):
        assert key in out


def test_eval_prints_buckets_and_kv(workspace, capsys):
    rc = cli.main(["eval", "--scene", workspace["scene"], "--pred", workspace["pred"], "--kv"])
    assert rc == 0
    out = capsys.readouterr().out
    for t in (-1, 1, 2):
        assert f"offset {t}:" in out
    for bucket in ("static", "slow", "fast"):
        assert f"  {bucket}: mean " in out
        assert f"eval.1.{bucket}.mean=" in out


def _read_ppm_header(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        w, h = fh.readline().split()
        depth = fh.readline().strip()
        body = fh.read()
    return magic, int(w), int(h), depth, body


@pytest.mark.parametrize("what", ["field", "mask", "pieces", "seg2d"])
def test_render_outputs_valid_ppm(workspace, what, capsys):
    out = str(workspace["root"] / f"render_{what}.ppm")
    rc = cli.main(["render", "--scene", workspace["scene"], "--what", what, "--out", out])
    assert rc == 0
    magic, w, h, depth, body = _read_ppm_header(out)
    assert magic == b"P6"
    assert depth == b"255"
    assert len(body) == w * h * 3
    if what == "seg2d":
        assert (w, h) == (480, 240)
    else:
        assert (w, h) == (256, 256)


def test_gradcheck_subcommand(capsys):
    assert cli.main(["gradcheck", "--instances", "1"]) == 0
    out = capsys.readouterr().out
    assert "max:" in out
    worst = float(out.strip().splitlines()[-1].split()[-1])
    assert worst < 1e-3


def test_synth_frame_override(tmp_path):
    scene = str(tmp_path / "s")
    assert cli.main(["synth", "--preset", "static", "--frames", "1,2", "--out", scene]) == 0
    bundle = fileio.load_scene(scene)
    assert bundle.frame_set.offsets == (1, 2)


def test_errors_exit_with_code_1(capsys):
    assert cli.main(["labels", "--scene", "/nonexistent"]) == 1
    assert "error:" in capsys.readouterr().err


def test_usage_errors_exit_with_code_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["no-such-command"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2
