import csv

import numpy as np
import pytest
from PIL import Image

from csfnet import checkpoint as ckpt
from csfnet.cli import main
from csfnet.data import load_label, save_label
from csfnet.network import build
from csfnet.runconfig import ConfigError, RunConfig

SMALL = "num_classes = 4\nwidth = 64\nheight = 64\nmodality = depth\n"


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


@pytest.fixture
def images(tmp_path):
    rng = np.random.default_rng(0)
    rgb = tmp_path / "rgb.png"
    x = tmp_path / "x.png"
    Image.fromarray(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)).save(rgb)
    Image.fromarray(rng.integers(0, 256, (64, 64), dtype=np.uint8)).save(x)
    return rgb, x


# run configuration files


def test_config_parses_types_and_comments(tmp_path):
    (tmp_path / "data").mkdir()
    run = RunConfig.parse("width = 64 # px\n\nheight=32\nfull_x_backbone = no\ndata_dir = data\n",
                          base=tmp_path)
    assert run.get("width") == 64 and run.get("full_x_backbone") is False
    assert run.get("data_dir") == tmp_path / "data"
    assert run.model().height == 32 and run.policy().crop == (64, 32)


@pytest.mark.parametrize(
    "text,match",
    [
        ("colour = red\n", "unknown key 'colour'"),
        ("width = 64\nwidth = 96\n", ":2: duplicate key 'width'"),
        ("width\n", "expected 'key = value'"),
        ("width = wide\n", "bad value for width"),
        ("full_x_backbone = maybe\n", "not a boolean"),
        ("width = 100\n", "ModelConfig.width"),
        ("data_dir = /nonexistent/dir\n", "does not exist"),
        ("modality = sonar\n", "modality must be"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.parse(text)


def test_config_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "none.cfg")


def test_toy_preset():
    run = RunConfig.toy()
    assert run.modality == "depth"
    assert run.train().max_iters == 200 and run.model().num_classes == 4


# commands


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bench", "--help"])
    assert e.value.code == 0
    assert "(default: 50)" in capsys.readouterr().out


def test_build_and_save(tmp_path, conf, capsys):
    out = tmp_path / "m.csfc"
    assert main(["build", "--config", str(conf), "--save", str(out)]) == 0
    assert "parameters" in capsys.readouterr().out
    assert "head.bias" in ckpt.load_checkpoint(out)


def test_infer_is_deterministic(tmp_path, conf, images, capsys):
    rgb, x = images
    outs = []
    for i in range(2):
        png, pgm = tmp_path / f"p{i}.png", tmp_path / f"p{i}.pgm"
        assert main(["infer", "--config", str(conf), "--rgb", str(rgb), "--x", str(x),
                     "--out-png", str(png), "--out-pgm", str(pgm)]) == 0
        outs.append((png.read_bytes(), pgm.read_bytes()))
    assert outs[0] == outs[1]
    assert load_label(tmp_path / "p0.pgm").shape == (64, 64)
    assert capsys.readouterr().out.count("class") == 8


def test_infer_reports_wrong_checkpoint(tmp_path, conf, images, capsys):
    rgb, x = images
    _, store = build(RunConfig.parse("num_classes = 5\nwidth = 64\nheight = 64\n").model(), 0)
    bad = tmp_path / "five.csfc"
    ckpt.save_checkpoint(store, bad)
    rc = main(["infer", "--config", str(conf), "--rgb", str(rgb), "--x", str(x), "--checkpoint", str(bad),
               "--out-png", str(tmp_path / "a.png"), "--out-pgm", str(tmp_path / "a.pgm")])
    assert rc == 1
    assert "head.bias" in capsys.readouterr().err


def test_infer_rejects_size_mismatch(tmp_path, conf, images, capsys):
    rgb, _ = images
    x = tmp_path / "small.png"
    Image.fromarray(np.zeros((32, 32), np.uint8)).save(x)
    assert main(["infer", "--config", str(conf), "--rgb", str(rgb), "--x", str(x)]) == 1
    assert "--x is 32x32" in capsys.readouterr().err


def test_train_rejects_zero_iters(capsys):
    assert main(["train", "--synthetic", "--iters", "0"]) == 1
    assert "at least 1" in capsys.readouterr().err


def test_train_writes_history(tmp_path, conf):
    save = tmp_path / "t.csfc"
    assert main(["train", "--config", str(conf), "--synthetic", "--iters", "3", "--save", str(save)]) == 0
    with open(tmp_path / "t.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["iter"] for r in rows] == ["0", "1", "2"]
    assert save.exists()


def test_eval_from_prediction_folder(tmp_path, conf, capsys):
    labels, preds = tmp_path / "data" / "labels", tmp_path / "preds"
    labels.mkdir(parents=True)
    preds.mkdir()
    rng = np.random.default_rng(2)
    for i in range(2):
        lab = rng.integers(0, 4, (8, 8)).astype(np.uint8)
        save_label(lab, labels / f"s{i}.png")
        save_label(lab, preds / f"s{i}.png")
    assert main(["eval", "--config", str(conf), "--data-dir", str(tmp_path / "data"),
                 "--pred-dir", str(preds)]) == 0
    assert "mIoU  1.0000" in capsys.readouterr().out


def test_describe_and_bench_errors(conf, capsys):
    assert main(["describe", "--config", str(conf)]) == 0
    assert "total" in capsys.readouterr().out
    assert main(["bench", "--config", str(conf), "--width", "100"]) == 1
    assert "multiple of 32" in capsys.readouterr().err


def test_gradcheck_csafm_passes(capsys):
    assert main(["gradcheck", "--module", "csafm"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_aolp_zero_angle_is_mid_gray(tmp_path):
    # I0 == I90 and I45 > I135: S1 = 0, S2 > 0
    paths = []
    for n, v in (("0", 100), ("45", 150), ("90", 100), ("135", 50)):
        p = tmp_path / f"i{n}.png"
        Image.fromarray(np.full((4, 4), v, np.uint8)).save(p)
        paths += [f"--i{n}", str(p)]
    out = tmp_path / "aolp.png"
    assert main(["aolp", *paths, "--out", str(out)]) == 0
    assert (np.asarray(Image.open(out)) == 128).all()


def test_bad_thread_setting(monkeypatch, capsys):
    monkeypatch.setenv("CSFNET_THREADS", "many")
    assert main(["describe"]) == 2
