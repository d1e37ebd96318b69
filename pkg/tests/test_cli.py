"""
命令列：子命令分派與結束碼
"""

import json

import pytest

from conftest import TINY_CORPUS
from main import MicleCLI


@pytest.fixture
def cli():
    return MicleCLI()


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(TINY_CORPUS), encoding="utf-8")
    return path


class TestUsage:
    def test_unknown_subcommand(self, cli):
        with pytest.raises(SystemExit) as info:
            cli.run(["train"])
        assert info.value.code == 1

    def test_missing_required_argument(self, cli):
        with pytest.raises(SystemExit) as info:
            cli.run(["eval", "--manifest", "m.jsonl"])
        assert info.value.code == 1

    def test_fraction_out_of_range(self, cli):
        assert cli.run(["finetune", "--fraction", "1.5"]) == 1

    def test_missing_manifest(self, cli, tmp_path):
        assert cli.run(["pretrain", "--out", str(tmp_path / "run")]) == 1


class TestCommands:
    def test_gencorpus(self, cli, spec_file, tmp_path):
        out = tmp_path / "corpus"
        assert cli.run(["gencorpus", "--spec", str(spec_file), "--out", str(out), "--check"]) == 0
        assert (out / "manifest.jsonl").is_file()
        assert (out / "corpus_spec.json").is_file()

    def test_bad_config_is_validation_error(self, cli, tiny_corpus, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"optim": {"learning_rate": 1.0}}), encoding="utf-8")
        code = cli.run(["pretrain", "--config", str(config), "--manifest",
                        str(tiny_corpus.source_path)])
        assert code == 2

    def test_pretrain_then_finetune(self, cli, tiny_corpus, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({
            "model": {"widths": [4, 8], "blocks_per_stage": [1, 1], "projection_dim": 8},
            "stage": {"steps": 2, "batch_size": 4, "log_every": 0},
            "eval": {"bootstrap": 10},
        }), encoding="utf-8")
        manifest = str(tiny_corpus.source_path)
        assert cli.run(["pretrain", "--config", str(config), "--manifest", manifest,
                        "--out", str(tmp_path / "s")]) == 0
        assert (tmp_path / "s" / "config.resolved.json").is_file()
        assert (tmp_path / "s" / "train_loss.png").is_file()
        assert cli.run(["finetune", "--config", str(config), "--manifest", manifest,
                        "--init", str(tmp_path / "s" / "simclr.mck"),
                        "--out", str(tmp_path / "f")]) == 0
        metrics = json.loads((tmp_path / "f" / "metrics.json").read_text(encoding="utf-8"))
        assert metrics["notes"]["init"] == "simclr"
        out = tmp_path / "eval.json"
        assert cli.run(["eval", "--ckpt", str(tmp_path / "f" / "finetune.mck"), "--manifest",
                        manifest, "--bootstrap", "10", "--out", str(out)]) == 0
        assert out.is_file()

    def test_micle_without_init(self, cli, tiny_corpus, tmp_path):
        code = cli.run(["micle", "--manifest", str(tiny_corpus.source_path),
                        "--out", str(tmp_path / "m")])
        assert code == 2

    @pytest.mark.slow
    def test_verify_quick(self, cli):
        assert cli.run(["verify", "--quick"]) == 0
