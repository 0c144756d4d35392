import json

import pytest

from blindloss import cli
from blindloss.harness import TrainConfig

TINY = {"image_size": 16, "train_scenes": 8, "eval_scenes": 4, "total_iters": 2, "batch_size": 2, "embed_dim": 8,
        "encoder_widths": [4, 4], "decoder_widths": [4, 4], "negatives_per_class": 5, "negatives_per_anchor": 5,
        "separation_samples": 8}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY, indent=2))
    return path


def test_empty_config_gives_defaults():
    assert cli.parse_config("{}") == TrainConfig()


def test_config_roundtrip():
    cfg = cli.parse_config(json.dumps({"omega1": 1, "head_mode": "sg"}))
    assert cfg.omega1 == 1.0 and isinstance(cfg.omega1, float)
    assert cli.parse_config(cli.dump_config(cfg)) == cfg


@pytest.mark.parametrize("text, needle", [
    ('{\n  "omega1": -0.5\n}', "omega1"),
    ('{\n  "tau": 0.1,\n  "omegaX": 1\n}', "$.omegaX (line 3)"),
    ('{\n  "batch_size": "eight"\n}', "$.batch_size"),
    ('{"tau": }', "line 1"),
])
def test_bad_configs_name_the_location(text, needle):
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config(text)
    assert needle in str(err.value)


def test_bad_config_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "omegaX": 1\n}')
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "omegaX" in capsys.readouterr().err
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate"])
    assert err.value.code == 2


def test_train_twice_is_identical_and_rerun_checks(tiny_config, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.main(["train", "--config", str(tiny_config), "--seed", "3", "--out", str(out), "--no-plots"]) == 0
    for name in ("metrics.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert set(manifest["outputs"]) >= {"metrics.csv", "summary.json", "checkpoint.bin", "config.json"}
    assert cli.main(["rerun", str(outs[0]), "--out", str(tmp_path / "c"), "--check"]) == 0
    assert cli.main(["eval", "--config", str(tiny_config), "--checkpoint", str(outs[0] / "checkpoint.bin"),
                     "--out", str(tmp_path / "e"), "--no-plots"]) == 0
    assert "shifted_miou" in json.loads((tmp_path / "e" / "summary.json").read_text())


def test_table4_ablation_has_seven_rows(tiny_config, tmp_path):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", str(tiny_config), "--iters", "1", "--out", str(out), "--no-plots"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["rows"]) == 7
    assert len((out / "table.txt").read_text().strip().splitlines()) >= 7


def test_gen_data_exports_scenes(tmp_path):
    assert cli.main(["gen-data", "--out", str(tmp_path), "--export-scenes", "--count", "2"]) == 0
    assert (tmp_path / "corpus_train.txt").exists()
    assert len(list(tmp_path.rglob("*.ppm"))) == 2 * 5
