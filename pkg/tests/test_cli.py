import json

import numpy as np
import pytest

from divcolor import cli
from divcolor.checkpoint import load_checkpoint
from divcolor.colorspace import lab_to_rgb, rgb_to_lab
from divcolor.errors import NumericalError
from divcolor.imageio import read_rgb, resize, resize_float
from divcolor.pipeline import diverse_fields, load_mdn, load_vae
from divcolor.synthetic import smooth_fields, write_corpus

FAST_VAE = ["--d", "4", "--epochs", "2", "--widths", "4,4,8,8", "--pca-k", "4", "--batch-size", "4"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "images"
    data.mkdir()
    L, ab = smooth_fields(10, 24, np.random.default_rng(0))
    write_corpus(data, L, ab)
    manifest = data / "manifest.json"
    assert cli.main(["ingest", "--dir", str(data), "--size", "8", "--test-frac", "0.2"]) == 0
    vae = root / "vae.ckpt"
    assert cli.main(["train-vae", "--corpus", str(manifest), *FAST_VAE, "--out", str(vae)]) == 0
    mdn = root / "mdn.ckpt"
    assert cli.main(["train-mdn", "--corpus", str(manifest), "--vae", str(vae), "--components", "3",
                     "--epochs", "2", "--hidden", "8", "--out", str(mdn)]) == 0
    return {"root": root, "data": data, "manifest": manifest, "vae": vae, "mdn": mdn}


def test_ingest_reports_counts(trained, capsys):
    assert cli.main(["ingest", "--dir", str(trained["data"]), "--size", "8", "--test-frac", "0.2"]) == 0
    out = capsys.readouterr().out
    assert "train=8 test=2" in out and "decoded=0 cached=10" in out


def test_colorize_k1_writes_the_top_mode(trained, tmp_path):
    image = trained["data"] / "img004.png"
    code = cli.main(["colorize", "--vae", str(trained["vae"]), "--mdn", str(trained["mdn"]),
                     "--input", str(image), "--k", "1", "--out", str(tmp_path)])
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["img004_1.png", "img004_grid.png"]

    model, _, _ = load_vae(load_checkpoint(trained["vae"]))
    net = load_mdn(load_checkpoint(trained["mdn"]))
    rgb = read_rgb(image)
    full_l, _ = rgb_to_lab(rgb)
    lightness, _ = rgb_to_lab(resize(rgb, 8))
    (field,) = diverse_fields(model, net, lightness, 1, 0)
    ab = np.stack([resize_float(field[..., c], 24) for c in range(2)], axis=-1)
    np.testing.assert_array_equal(read_rgb(tmp_path / "img004_1.png"), lab_to_rgb(full_l, ab))
    grid = read_rgb(tmp_path / "img004_grid.png")
    assert grid.shape == (24, 24 * 3, 3)  # grey, one prediction, ground truth


def test_colorize_count_matches_k(trained, tmp_path):
    assert cli.main(["colorize", "--vae", str(trained["vae"]), "--mdn", str(trained["mdn"]),
                     "--input", str(trained["data"] / "img000.png"), "--k", "3", "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("img000_[0-9].png"))) == 3


def test_colorize_k_above_components_is_usage_error(trained, tmp_path, capsys):
    code = cli.main(["colorize", "--vae", str(trained["vae"]), "--mdn", str(trained["mdn"]),
                     "--input", str(trained["data"] / "img000.png"), "--k", "4", "--out", str(tmp_path)])
    assert code == 2
    assert "exceeds" in capsys.readouterr().err
    assert not list(tmp_path.iterdir())


def test_eval_on_two_test_images(trained, tmp_path, capsys):
    out = tmp_path / "report.csv"
    assert cli.main(["eval", "--vae", str(trained["vae"]), "--mdn", str(trained["mdn"]),
                     "--corpus", str(trained["manifest"]), "--k", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "image,mae_all,mae_grid,wae_all,wae_grid,eob,variance"
    assert len(lines) == 3
    for row in lines[1:]:
        values = [float(v) for v in row.split(",")[1:]]
        assert all(np.isfinite(values)) and values[4] <= values[0] + 1.0
    assert "n_images=2" in capsys.readouterr().out
    assert out.with_suffix(".txt").exists()


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["train-vae", "--out", "x.ckpt"])
    assert info.value.code == 2


def test_negative_value_is_usage_error(trained, tmp_path):
    assert cli.main(["train-vae", "--corpus", str(trained["manifest"]), "--epochs", "0",
                     "--out", str(tmp_path / "v.ckpt")]) == 2


def test_missing_corpus_is_data_error(tmp_path):
    assert cli.main(["train-vae", "--corpus", str(tmp_path / "none.json"), "--out", str(tmp_path / "v.ckpt")]) == 3


def test_empty_directory_is_data_error(tmp_path):
    assert cli.main(["ingest", "--dir", str(tmp_path)]) == 3


def test_corrupt_checkpoint_is_data_error(trained, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(trained["vae"].read_bytes()[:100])
    assert cli.main(["eval", "--vae", str(bad), "--mdn", str(trained["mdn"]),
                     "--corpus", str(trained["manifest"]), "--out", str(tmp_path / "r.csv")]) == 3


def test_numerical_failure_exits_4(trained, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericalError("non-finite loss")

    monkeypatch.setattr(cli, "train_vae", explode)
    assert cli.main(["train-vae", "--corpus", str(trained["manifest"]), "--out", str(tmp_path / "v.ckpt")]) == 4


def test_mdn_required_for_plain_vae(trained, tmp_path):
    assert cli.main(["colorize", "--vae", str(trained["vae"]), "--input", str(trained["data"] / "img000.png"),
                     "--out", str(tmp_path)]) == 2


def test_gradcheck_small_module(capsys):
    assert cli.main(["gradcheck", "--module", "mdn", "--trials", "2"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "suites passed" in out


def test_config_precedence(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"epochs": 7, "lambda-mah": 0.5, "seed": 3}))
    args = cli._parser().parse_args(["train-vae", "--corpus", "m", "--out", "o", "--config", str(config),
                                     "--seed", "9"])
    opts = cli.resolve(args, cli.DEFAULTS["train"], cli._read_config(args.config))
    assert opts["seed"] == 9  # flag beats file
    assert opts["epochs"] == 7 and opts["lambda_mah"] == 0.5  # file beats default
    assert opts["kl_weight"] == 1e-2  # default


def test_unreadable_config_is_usage_error(trained, tmp_path):
    config = tmp_path / "c.json"
    config.write_text("{not json")
    assert cli.main(["eval", "--vae", str(trained["vae"]), "--corpus", str(trained["manifest"]),
                     "--out", str(tmp_path / "r.csv"), "--config", str(config)]) == 2


def test_cvae_pipeline_needs_no_mdn(trained, tmp_path):
    ckpt = tmp_path / "cvae.ckpt"
    assert cli.main(["train-cvae", "--corpus", str(trained["manifest"]), *FAST_VAE, "--out", str(ckpt)]) == 0
    assert cli.main(["colorize", "--vae", str(ckpt), "--input", str(trained["data"] / "img001.png"),
                     "--k", "2", "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o").glob("img001_[0-9].png"))) == 2
    assert cli.main(["train-mdn", "--corpus", str(trained["manifest"]), "--vae", str(ckpt),
                     "--out", str(tmp_path / "m.ckpt")]) == 2
