import json

import pytest

from paragen.cli import main
from paragen.config import TrainConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Synthetic dataset + reduced config + trained phase-1 checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth-data", "--out", str(data), "--n-images", "16",
                 "--n-val", "2", "--n-test", "2", "--seed", "3"]) == 0
    config = root / "config.json"
    config.write_text(json.dumps(TrainConfig.reduced().to_dict()))
    assert main(["build-vocab", "--data", str(data),
                 "--config", str(config)]) == 0
    ckpt = root / "model.ckpt"
    assert main(["train", "--data", str(data), "--config", str(config),
                 "--phase", "1", "--max-steps", "5", "--epochs", "3",
                 "--out", str(ckpt)]) == 0
    return {"root": root, "data": data, "config": config, "ckpt": ckpt}


class TestSynthData:
    def test_writes_all_files(self, workdir):
        data = workdir["data"]
        for name in ("dataset.jsonl", "features.bin", "split.json",
                     "objects.txt"):
            assert (data / name).exists(), name

    def test_split_sizes(self, workdir):
        split = json.loads((workdir["data"] / "split.json").read_text())
        assert len(split["train"]) == 12
        assert len(split["val"]) == 2
        assert len(split["test"]) == 2


class TestBuildVocab:
    def test_vocab_written(self, workdir):
        vocab = json.loads((workdir["data"] / "vocab.json").read_text())
        assert "the" in vocab["tokens"]


class TestTrain:
    def test_checkpoint_written_with_magic(self, workdir):
        blob = workdir["ckpt"].read_bytes()
        assert blob[:4] == b"PGCK"

    def test_deterministic_across_runs(self, workdir, tmp_path):
        out_a = tmp_path / "a.ckpt"
        out_b = tmp_path / "b.ckpt"
        for out in (out_a, out_b):
            assert main(["train", "--data", str(workdir["data"]),
                         "--config", str(workdir["config"]), "--phase", "1",
                         "--max-steps", "3", "--out", str(out)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_phase2_requires_checkpoint(self, workdir, tmp_path):
        with pytest.raises(SystemExit):
            main(["train", "--data", str(workdir["data"]),
                  "--config", str(workdir["config"]), "--phase", "2",
                  "--out", str(tmp_path / "x.ckpt")])

    def test_phase2_from_phase1_checkpoint(self, workdir, tmp_path):
        out = tmp_path / "p2.ckpt"
        assert main(["train", "--data", str(workdir["data"]),
                     "--config", str(workdir["config"]), "--phase", "2",
                     "--resume", str(workdir["ckpt"]), "--updates", "3",
                     "--out", str(out)]) == 0
        assert out.exists()


class TestGenerate:
    def test_one_record_per_image(self, workdir, tmp_path):
        out = tmp_path / "gen.jsonl"
        assert main(["generate", "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]),
                     "--ids", "img0000", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert set(record) == {"image_id", "sentences", "token_ids",
                               "stop_probs"}
        assert record["image_id"] == "img0000"
        assert len(record["sentences"]) == len(record["token_ids"])

    def test_split_decoding(self, workdir, tmp_path):
        out = tmp_path / "test.jsonl"
        assert main(["generate", "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]),
                     "--split", "test", "--out", str(out)]) == 0
        assert len(out.read_text().strip().splitlines()) == 2

    def test_sample_mode(self, workdir, tmp_path):
        out = tmp_path / "sample.jsonl"
        assert main(["generate", "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]), "--sample",
                     "--ids", "img0001", "--seed", "9",
                     "--out", str(out)]) == 0
        assert json.loads(out.read_text())["image_id"] == "img0001"


class TestEvaluate:
    def test_report_file(self, workdir, tmp_path):
        report_path = tmp_path / "report.json"
        assert main(["evaluate", "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]),
                     "--split", "val", "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["split"] == "val"
        assert report["n_images"] == 2
        for key in ("CIDEr", "BLEU4", "coverage_mean",
                    "sentence_count_histogram"):
            assert key in report

    def test_missing_checkpoint_returns_error(self, workdir, capsys):
        assert main(["evaluate", "--data", str(workdir["data"]),
                     "--checkpoint", "/nonexistent.ckpt"]) == 1
        assert "error:" in capsys.readouterr().err


class TestInspectTopics:
    def test_dump_shape(self, workdir, capsys):
        assert main(["inspect-topics", "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]),
                     "--image-id", "img0002"]) == 0
        dump = json.loads(capsys.readouterr().out)
        cfg = TrainConfig.reduced()
        assert dump["image_id"] == "img0002"
        assert len(dump["topics"]) == cfg.max_sentences
        assert len(dump["topics"][0]) == cfg.d_topic
        assert len(dump["stop_probs"]) == cfg.max_sentences
        assert len(dump["attention"]) == len(dump["sentences"])
        for sent in dump["attention"]:
            for alpha in sent:
                assert len(alpha) == cfg.m_regions
                assert sum(alpha) == pytest.approx(1.0, abs=1e-9)


class TestArgs:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--bogus-flag"])
        assert exc.value.code == 2

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_env_var_data_dir(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv("PARAGEN_DATA_DIR", str(workdir["data"]))
        out = tmp_path / "env.jsonl"
        assert main(["generate", "--checkpoint", str(workdir["ckpt"]),
                     "--ids", "img0003", "--out", str(out)]) == 0
        assert out.exists()

    def test_missing_data_dir(self, workdir, monkeypatch):
        monkeypatch.delenv("PARAGEN_DATA_DIR", raising=False)
        with pytest.raises(SystemExit):
            main(["build-vocab"])

    def test_set_overrides(self, workdir, tmp_path):
        out = tmp_path / "override.ckpt"
        assert main(["train", "--data", str(workdir["data"]),
                     "--config", str(workdir["config"]), "--phase", "1",
                     "--max-steps", "1", "--set", "batch_size=2",
                     "--out", str(out)]) == 0
        from paragen.checkpoint import Checkpoint
        assert Checkpoint.load(out).config.batch_size == 2
