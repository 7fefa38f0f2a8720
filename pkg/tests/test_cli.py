import json
from pathlib import Path

import numpy as np
import pytest

from mslstm import cam
from mslstm import model as M
from mslstm.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(*argv):
    return main([str(a) for a in argv])


def usage_exit(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        run(*argv)
    return exc.value.code, capsys.readouterr().err


@pytest.fixture
def smoke(tmp_path, capsys):
    d, m = tmp_path / "d.fsd", tmp_path / "m.msl"
    assert run("gen-data", "--config", CONFIGS / "smoke_data.cfg", "--out", d) == 0
    assert run("train", "--config", CONFIGS / "smoke_train.cfg", "--data", d, "--out", m) == 0
    out = capsys.readouterr().out
    return d, m, out


def test_gen_data_default_and_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.fsd", tmp_path / "b.fsd"
    assert run("gen-data", "--samples", 16, "--out", a) == 0
    assert run("gen-data", "--samples", 16, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "S=16 N=8 K=20" in capsys.readouterr().out


@pytest.mark.parametrize("flag,value", [("--noise-sigma", "-1"), ("--classes", "0"),
                                        ("--ctx-reliability", "2"), ("--frames", "x")])
def test_gen_data_bad_flag_exit_2(tmp_path, capsys, flag, value):
    code, err = usage_exit(capsys, "gen-data", flag, value, "--out", tmp_path / "x.fsd")
    assert code == 2 and flag in err


def test_ambiguity_horizon_beyond_frames_is_usage_error(tmp_path, capsys):
    code, err = usage_exit(capsys, "gen-data", "--frames", 4, "--out", tmp_path / "x.fsd")
    assert code == 2 and "--ambiguity-horizon" in err


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("classes = 3\nwibble = 1\n")
    code, err = usage_exit(capsys, "gen-data", "--config", cfg, "--out", tmp_path / "x.fsd")
    assert code == 2 and "wibble" in err


def test_flags_override_config(tmp_path, capsys):
    out = tmp_path / "d.fsd"
    assert run("gen-data", "--config", CONFIGS / "smoke_data.cfg", "--samples", 6, "--out", out) == 0
    assert "S=6 N=2 K=5" in capsys.readouterr().out


def test_train_smoke_and_checkpoint_consistency(smoke, tmp_path, capsys):
    d, m, out = smoke
    lines = [l for l in out.splitlines() if l.startswith("epoch")]
    assert len(lines) == 5
    model = M.load_checkpoint(m)
    assert model.loss.value == "plgl" and model.dims.hidden == 8
    final = float(lines[-1].split()[-1])
    assert run("eval", "--model", m, "--data", d, "--out", tmp_path / "rep") == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert rep["accuracy_avgpool"] == model.meta["final_train_acc"]
    assert abs(rep["accuracy_avgpool"] - final) < 5e-5


def test_train_default_loss_is_plgl(tmp_path, capsys):
    d, m = tmp_path / "d.fsd", tmp_path / "m.msl"
    run("gen-data", "--config", CONFIGS / "smoke_data.cfg", "--out", d)
    assert run("train", "--data", d, "--hidden", 3, "--epochs", 0, "--out", m) == 0
    assert M.load_checkpoint(m).loss.value == "plgl"


def test_train_missing_data_exit_1(tmp_path, capsys):
    assert run("train", "--data", tmp_path / "nope.fsd", "--out", tmp_path / "m.msl") == 1
    assert "not found" in capsys.readouterr().err


def test_eval_dims_mismatch_exit_1(smoke, tmp_path, capsys):
    _, m, _ = smoke
    other = tmp_path / "o.fsd"
    run("gen-data", "--classes", 3, "--samples", 6, "--frames", 5, "--d-ctx", 4, "--d-act", 4,
        "--ambiguity-horizon", 2, "--out", other)
    assert run("eval", "--model", m, "--data", other, "--out", tmp_path / "r") == 1
    err = capsys.readouterr().err
    assert "(4, 4, 0, 3)" in err and "(4, 4, 0, 2)" in err


def test_anticipate_rows(smoke, tmp_path, capsys):
    d, m, _ = smoke
    assert run("anticipate", "--model", m, "--data", d) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,accuracy" and len(lines) == 5 + 1
    csv = tmp_path / "a.csv"
    assert run("anticipate", "--model", m, "--data", d, "--out", csv) == 0
    assert csv.read_text().splitlines() == lines


def test_inspect_formats_and_truncation(smoke, tmp_path, capsys):
    d, m, _ = smoke
    assert run("inspect", d) == 0 and run("inspect", m) == 0
    out = capsys.readouterr().out
    assert '"format": "fsd"' in out and '"format": "msl"' in out
    cut = tmp_path / "cut.msl"
    cut.write_bytes(m.read_bytes()[:-5])
    assert run("inspect", cut) == 1
    assert f"offset {cut.stat().st_size}" in capsys.readouterr().err


def test_cam_outputs(tmp_path, capsys):
    rng = np.random.default_rng(0)
    fm, cw = cam.FeatureMap(rng.normal(size=(3, 4, 5)).astype(np.float32)), cam.CamWeights(rng.normal(size=(2, 3)).astype(np.float32))
    cam.save_fmp(tmp_path / "f.fmp", fm, cw)
    out = tmp_path / "o"
    assert run("cam", "--input", tmp_path / "f.fmp", "--class", 1, "--action-dim", 4, "--out", out) == 0
    cmap = np.loadtxt(out / "cam.csv", delimiter=",")
    np.testing.assert_array_equal(cmap, cam.cam_map(fm, cw, 1))
    np.testing.assert_array_equal(np.load(out / "gated.npy"), cam.gated_features(fm, cmap))
    assert np.load(out / "action_features.npy").shape == (4,)
    scores = [float(l.split(",")[1]) for l in (out / "scores.csv").read_text().splitlines()[1:]]
    np.testing.assert_array_equal(scores, cam.class_scores(fm, cw))
    assert run("cam", "--input", tmp_path / "f.fmp", "--class", 5, "--out", out) == 1


def test_gradcheck_passes(capsys):
    assert run("gradcheck", "--arch", "concat") == 0
    last = capsys.readouterr().out.splitlines()[-1]
    assert float(last.split()[3]) <= 1e-4


def test_gradcheck_failure_exit_1(capsys):
    assert run("gradcheck", "--arch", "concat", "--tolerance", "1e-30") == 1


def test_ablate_smoke(smoke, tmp_path, capsys):
    d, _, _ = smoke
    out = tmp_path / "abl.csv"
    assert run("ablate", "--data", d, "--hidden", 3, "--epochs", 1, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 17
    assert "ordering by mean AvgPool accuracy" in capsys.readouterr().out
