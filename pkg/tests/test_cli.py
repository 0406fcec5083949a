import json

import numpy as np
import pytest
from PIL import Image

from wcamnet.checkpoint import load_checkpoint
from wcamnet.cli import ABLATIONS, build_config, build_parser, main
from wcamnet.config import TrainConfig, read_config_file, write_config_file
from wcamnet.data import load_dataset
from wcamnet.train import train

TINY = ["--c0", "4", "--n-res", "1", "--batch-size", "2", "--crop-size", "32",
        "--lr-schedule", "constant", "--base-lr", "1e-3"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--count", "4", "--size", "32", "--seed", "1", "--out", str(out)]) == 0
    return out


def records(path):
    return [line.split("\t") for line in path.read_text().splitlines() if not line.startswith("#")]


class TestGenData:
    def test_reproducible(self, dataset, tmp_path):
        again = tmp_path / "again"
        assert main(["gen-data", "--count", "4", "--size", "32", "--seed", "1", "--out", str(again)]) == 0
        for sub in ("clean", "rain"):
            names = sorted(p.name for p in (dataset / sub).iterdir())
            assert len(names) == 4
            for n in names:
                assert (dataset / sub / n).read_bytes() == (again / sub / n).read_bytes()
        assert len((dataset / "manifest.tsv").read_text().splitlines()) == 4

    def test_identity_preset(self, tmp_path):
        assert main(["gen-data", "--count", "3", "--size", "16", "--preset", "identity",
                     "--out", str(tmp_path)]) == 0
        for p in (tmp_path / "clean").iterdir():
            assert p.read_bytes() == (tmp_path / "rain" / p.name).read_bytes()

    def test_bad_size_is_usage_error(self, tmp_path):
        assert main(["gen-data", "--size", "20", "--out", str(tmp_path)]) == 1


class TestEval:
    def test_clean_against_itself(self, tmp_path):
        assert main(["gen-data", "--count", "3", "--size", "16", "--preset", "identity",
                     "--out", str(tmp_path / "d")]) == 0
        assert main(["eval", "--dataset", str(tmp_path / "d"), "--out", str(tmp_path / "e")]) == 0
        rows = records(tmp_path / "e" / "eval.tsv")
        assert len(rows) == 3
        for r in rows:
            assert float(r[1]) == 99.0 and abs(float(r[2]) - 1.0) < 1e-9
        assert (tmp_path / "e" / "eval_psnr.png").stat().st_size > 0

    def test_record_format_and_provenance(self, dataset, tmp_path):
        assert main(["eval", "--dataset", str(dataset), "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "eval.tsv").read_text().splitlines()
        assert lines[0].startswith("# config ")
        assert json.loads(lines[0][len("# config "):])["method"] == "passthrough"
        assert lines[1] == "# name\tpsnr\tssim\trainy_psnr\trainy_ssim"
        assert len(records(tmp_path / "eval.tsv")) == 4
        assert "mean" in (tmp_path / "eval.txt").read_text()

    def test_missing_dataset_is_data_error(self, tmp_path):
        assert main(["eval", "--dataset", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("ckpt") / "m.wcam"
    code = main(["train", *TINY, "--epochs", "2", "--dataset", str(dataset), "--checkpoint", str(ckpt)])
    assert code == 0
    return ckpt


class TestTrainInfer:
    def test_artifacts(self, checkpoint):
        _, _, state, extra = load_checkpoint(checkpoint)
        assert state.t == 4 and extra["epoch"] == 2
        assert extra["train_config"]["c0"] == 4
        log = checkpoint.with_name("m.log.tsv").read_text().splitlines()
        assert log[0].startswith("# config ") and len(log) == 2 + 4
        assert checkpoint.with_name("m.loss.png").exists()

    def test_infer_keeps_size(self, checkpoint, tmp_path):
        src = tmp_path / "in.png"
        Image.fromarray(np.random.default_rng(0).integers(0, 256, (75, 100, 3), dtype=np.uint8)).save(src)
        assert main(["infer", str(src), "--checkpoint", str(checkpoint), "--out", str(tmp_path / "o"),
                     "--confidence-maps"]) == 0
        assert Image.open(tmp_path / "o" / "in.png").size == (100, 75)
        maps = sorted(p.name for p in (tmp_path / "o" / "in_conf").iterdir())
        assert len(maps) == 12 and "R_LL.png" in maps

    def test_identity_flag_returns_input(self, tmp_path):
        arr = np.random.default_rng(1).integers(0, 256, (40, 30, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "a.png")
        assert main(["infer", str(tmp_path / "a.png"), "--identity", "--out", str(tmp_path / "o")]) == 0
        out = np.asarray(Image.open(tmp_path / "o" / "a.png")).astype(int)
        assert np.abs(out - arr).max() <= 1

    def test_batch_order_independent(self, checkpoint, tmp_path):
        rng = np.random.default_rng(2)
        for name in ("a", "b"):
            Image.fromarray(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)).save(tmp_path / f"{name}.png")
        main(["infer", str(tmp_path / "a.png"), str(tmp_path / "b.png"), "--checkpoint", str(checkpoint),
              "--out", str(tmp_path / "x")])
        main(["infer", str(tmp_path / "b.png"), str(tmp_path / "a.png"), "--checkpoint", str(checkpoint),
              "--out", str(tmp_path / "y")])
        for name in ("a.png", "b.png"):
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()

    def test_eval_with_checkpoint(self, checkpoint, dataset, tmp_path):
        assert main(["eval", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
                     "--out", str(tmp_path)]) == 0
        header = json.loads((tmp_path / "eval.tsv").read_text().splitlines()[0][9:])
        assert header["net"]["c0"] == 4

    def test_corrupt_checkpoint_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.wcam"
        bad.write_bytes(b"garbage")
        Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(tmp_path / "a.png")
        assert main(["infer", str(tmp_path / "a.png"), "--checkpoint", str(bad), "--out", str(tmp_path)]) == 2

    def test_infer_without_checkpoint_is_usage_error(self, tmp_path):
        assert main(["infer", "x.png", "--out", str(tmp_path)]) == 1


def test_resume_reproduces_trajectory(dataset, tmp_path):
    base = dict(c0=4, n_res=1, batch_size=2, crop_size=32, lr_schedule="constant", base_lr=1e-3,
                dataset=str(dataset))
    full = train(TrainConfig(**base, epochs=3, checkpoint=str(tmp_path / "full")))
    train(TrainConfig(**base, epochs=1, checkpoint=str(tmp_path / "part")))
    rest = train(TrainConfig(**base, epochs=3, checkpoint=str(tmp_path / "part")), resume=True)
    assert [r["loss"] for r in full.history[2:]] == [r["loss"] for r in rest.history]
    _, p_full, s_full, _ = load_checkpoint(tmp_path / "full")
    _, p_part, s_part, _ = load_checkpoint(tmp_path / "part")
    for name in p_full:
        assert p_full[name].data.tobytes() == p_part[name].data.tobytes()
        assert s_full.v[name].tobytes() == s_part.v[name].tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_is_numeric_error(dataset, tmp_path):
    code = main(["train", *TINY, "--epochs", "1", "--base-lr", "1e300", "--dataset", str(dataset),
                 "--checkpoint", str(tmp_path / "m")])
    assert code == 3


def test_config_file_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nc0 = 12\nepochs = 7  # inline\nfusion-enabled = false\n")
    args = build_parser().parse_args(["train", "--desk", "--config", str(cfg_file), "--epochs", "9"])
    cfg = build_config(args)
    assert (cfg.c0, cfg.epochs, cfg.fusion_enabled, cfg.crop_size) == (12, 9, False, 32)


def test_config_file_roundtrip(tmp_path):
    cfg = TrainConfig(c0=8, attention_enabled=False, base_lr=3e-4)
    write_config_file(tmp_path / "c", cfg)
    assert TrainConfig.from_dict(read_config_file(tmp_path / "c")) == cfg


@pytest.mark.parametrize("argv", [["train", "--crop-size", "20"], ["train", "--crop-size", "16"], ["train", "--bogus", "1"], []])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        if argv and "--bogus" not in argv:
            raise SystemExit(main(argv))
        main(argv)
    assert exc.value.code == 1


def test_ablation_flag_sets_variant():
    args = build_parser().parse_args(["train", "--ablation", "w/o-attention"])
    assert args.ablation == "w/o-attention"
    labels = [label for label, _ in ABLATIONS]
    assert labels == ["Ours, w/o attention, w/o fusion", "Ours, w/o fusion", "Ours, w/o attention", "Ours"]


def test_ablate_table(dataset, tmp_path):
    code = main(["ablate", *TINY, "--epochs", "1", "--dataset", str(dataset), "--out", str(tmp_path),
                 "--max-steps", "1"])
    assert code == 0
    rows = records(tmp_path / "ablation.tsv")
    assert [r[0] for r in rows] == [label for label, _ in ABLATIONS]
    params = {r[0]: int(r[3]) for r in rows}
    assert params["Ours, w/o attention"] < params["Ours"]
    assert (tmp_path / "ablation.png").exists()
    assert "Ours, w/o fusion" in (tmp_path / "ablation.txt").read_text()


def test_log_level_env(dataset, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("WCAMNET_LOG", "WARNING")
    assert main(["eval", "--dataset", str(dataset), "--out", str(tmp_path)]) == 0
    assert len(load_dataset(dataset)) == 4
