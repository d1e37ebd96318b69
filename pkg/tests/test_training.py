"""
訓練：設定解析、訓練紀錄、三個階段、確定性與標籤效率掃描
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from errors import CheckpointError, ConfigError, ContractError, DivergenceError
from evaluation import check_fractions, curve_trend, label_efficiency_sweep, parse_inits, spearman
from models import build_pretrain_network, load_checkpoint
from optim import ScheduleKind, SweepGrid
from run_config import RunConfig, apply_cli_overrides, load_run_config
from training import (
    Stage,
    TrainLog,
    finetune,
    pretrain_micle,
    pretrain_simclr,
    read_train_log,
    resolve_stage,
)


def resolve(run, stage, manifest):
    return resolve_stage(run, stage, manifest.task_kind, manifest.image_size)


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.seed == 42
        assert config.eval.bootstrap == 1000
        assert config.stage.temperature == 0.1

    def test_unknown_key_reports_dotted_path(self):
        with pytest.raises(ConfigError, match="optim.learning_rate"):
            RunConfig.from_dict({"optim": {"learning_rate": 0.1}})

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 3, "stage": {"steps": 7}}), encoding="utf-8")
        config = load_run_config(path)
        assert config.seed == 3 and config.stage.steps == 7

    def test_bad_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{seed: 3", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_cli_overrides_win(self):
        config = apply_cli_overrides(RunConfig(), seed=9, label_fraction=0.25, sweep=True)
        assert (config.seed, config.data.label_fraction, config.stage.sweep) == (9, 0.25, True)

    def test_write_resolved(self, tmp_path):
        path = RunConfig(out_dir=str(tmp_path)).write_resolved(extra={"stage": {"steps": 1}})
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["run"]["seed"] == 42
        assert payload["stage"] == {"steps": 1}


class TestResolveStage:
    def test_stage_defaults(self, run_config_factory, tiny_corpus):
        run = run_config_factory()
        simclr = resolve(run, Stage.SIMCLR, tiny_corpus)
        assert simclr.optimizer == "lars"
        assert simclr.schedule == ScheduleKind.WARMUP_COSINE
        assert simclr.preset == "derm_pretrain"
        tuned = resolve(run, Stage.FINETUNE, tiny_corpus)
        assert tuned.optimizer == "sgd"
        assert tuned.schedule == ScheduleKind.CONSTANT
        assert tuned.fraction_seed == run.seed

    def test_micle_needs_init(self, run_config_factory, tiny_corpus):
        with pytest.raises(ConfigError):
            resolve(run_config_factory(), Stage.MICLE, tiny_corpus)
        cfg = resolve(run_config_factory(from_scratch=True), Stage.MICLE, tiny_corpus)
        assert cfg.from_scratch

    @pytest.mark.parametrize("stage", [{"batch_size": 1}, {"temperature": 0.0}, {"steps": -1}])
    def test_invalid_values(self, run_config_factory, tiny_corpus, stage):
        with pytest.raises(ConfigError):
            resolve(run_config_factory(**stage), Stage.SIMCLR, tiny_corpus)

    def test_stage_mismatch(self, run_config_factory, tiny_corpus):
        with pytest.raises(ConfigError):
            resolve(run_config_factory(stage="finetune"), Stage.SIMCLR, tiny_corpus)

    def test_snapshot_has_no_paths(self, run_config_factory, tiny_corpus):
        snapshot = resolve(run_config_factory(), Stage.SIMCLR, tiny_corpus).checkpoint_snapshot()
        assert "out_dir" not in snapshot and "manifest_path" not in snapshot


class TestTrainLog:
    def test_steps_strictly_increase(self):
        log = TrainLog()
        log.append(1, 0.1, 2.0)
        with pytest.raises(ContractError):
            log.append(1, 0.1, 2.0)

    def test_save_and_read(self, tmp_path):
        log = TrainLog(record_walltime=False)
        for step in range(1, 4):
            log.append(step, 0.1 * step, 1.0 / step)
        log.append_eval(3, {"top1": 0.5})
        frame = read_train_log(log.save(tmp_path))
        assert frame["step"].tolist() == [1, 2, 3]
        assert frame["walltime_ms"].eq(0).all()
        assert (tmp_path / "eval_log.jsonl").is_file()


class TestPretraining:
    def test_zero_steps_equals_initialization(self, run_config_factory, tiny_corpus):
        cfg = resolve(run_config_factory(steps=0), Stage.SIMCLR, tiny_corpus)
        result = pretrain_simclr(cfg, tiny_corpus)
        init = build_pretrain_network(cfg.encoder, cfg.init_seed, cfg.projection_dim)
        for name, param in init.parameters().items():
            np.testing.assert_array_equal(result.checkpoint.params[name], param.data)

    def test_simclr_run_writes_outputs(self, run_config_factory, tiny_corpus):
        cfg = resolve(run_config_factory(), Stage.SIMCLR, tiny_corpus)
        result = pretrain_simclr(cfg, tiny_corpus)
        assert result.checkpoint_path.is_file()
        assert result.checkpoint.stage == "simclr" and result.checkpoint.step == 3
        frame = read_train_log(result.checkpoint_path.parent / "train_log.csv")
        assert len(frame) == 3 and frame["loss"].map(math.isfinite).all()

    def test_bitwise_deterministic(self, run_config_factory, tiny_corpus):
        first = pretrain_simclr(resolve(run_config_factory("a"), Stage.SIMCLR, tiny_corpus),
                                tiny_corpus)
        second = pretrain_simclr(resolve(run_config_factory("b"), Stage.SIMCLR, tiny_corpus),
                                 tiny_corpus)
        assert first.checkpoint_path.read_bytes() == second.checkpoint_path.read_bytes()
        assert (first.checkpoint_path.parent / "train_log.csv").read_bytes() == \
            (second.checkpoint_path.parent / "train_log.csv").read_bytes()

    def test_divergence_writes_snapshot(self, run_config_factory, tiny_corpus):
        cfg = resolve(run_config_factory(divergence_threshold=1e-9), Stage.SIMCLR, tiny_corpus)
        with pytest.raises(DivergenceError) as info:
            pretrain_simclr(cfg, tiny_corpus)
        assert info.value.step == 1
        assert load_checkpoint(info.value.snapshot_path).stage == "simclr"

    def test_micle_from_simclr(self, run_config_factory, tiny_corpus):
        simclr = pretrain_simclr(resolve(run_config_factory("s"), Stage.SIMCLR, tiny_corpus),
                                 tiny_corpus)
        run = run_config_factory("m", init_checkpoint=str(simclr.checkpoint_path))
        result = pretrain_micle(resolve(run, Stage.MICLE, tiny_corpus), tiny_corpus)
        assert result.checkpoint.stage == "micle"
        assert "final_alignment" in result.extra
        assert result.checkpoint.step == 3

    def test_micle_rejects_finetune_checkpoint(self, run_config_factory, tiny_corpus):
        run = run_config_factory("f")
        tuned = finetune(resolve(run, Stage.FINETUNE, tiny_corpus), tiny_corpus, run.eval)
        run = run_config_factory("m", init_checkpoint=str(tuned.checkpoint_path))
        with pytest.raises(CheckpointError):
            pretrain_micle(resolve(run, Stage.MICLE, tiny_corpus), tiny_corpus)


class TestFinetune:
    def test_random_init_reports_test_metrics(self, run_config_factory, tiny_corpus):
        run = run_config_factory()
        result = finetune(resolve(run, Stage.FINETUNE, tiny_corpus), tiny_corpus, run.eval)
        report = result.report
        assert report.split == "test" and report.num_examples == 6
        assert set(report.metrics) >= {"top1", "top3", "auc"}
        entry = report.metrics["top1"]
        assert entry.ci_low <= entry.point <= entry.ci_high and entry.replicates == 20
        assert report.notes["init"] == "random"
        saved = json.loads((result.checkpoint_path.parent / "metrics.json").read_text("utf-8"))
        assert saved["metrics"]["top1"]["point"] == entry.point

    def test_from_simclr_checkpoint(self, run_config_factory, tiny_corpus):
        simclr = pretrain_simclr(resolve(run_config_factory("s"), Stage.SIMCLR, tiny_corpus),
                                 tiny_corpus)
        run = run_config_factory("f", init_checkpoint=str(simclr.checkpoint_path))
        result = finetune(resolve(run, Stage.FINETUNE, tiny_corpus), tiny_corpus, run.eval)
        assert result.report.notes["init"] == "simclr"
        assert result.checkpoint.stage == "finetune"
        encoder_name = next(n for n in simclr.checkpoint.params if n.startswith("encoder."))
        assert encoder_name in result.checkpoint.params
        assert "projection.layer1.weight" not in result.checkpoint.params

    def test_label_fraction_recorded(self, run_config_factory, tiny_corpus):
        run = run_config_factory()
        run.data.label_fraction = 0.5
        result = finetune(resolve(run, Stage.FINETUNE, tiny_corpus), tiny_corpus, run.eval)
        assert result.report.notes["label_fraction"] == 0.5

    def test_sweep_selects_best_validation_point(self, run_config_factory, tiny_corpus):
        run = run_config_factory(sweep=True, steps=2)
        cfg = resolve(run, Stage.FINETUNE, tiny_corpus)
        result = finetune(cfg, tiny_corpus, run.eval, grid=SweepGrid((0.05, 0.001), (0.0,)))
        frame = pd.read_csv(result.checkpoint_path.parent / "sweep_results.csv")
        assert len(frame) == 2 and frame["selected"].sum() == 1
        winner = frame.loc[frame["selected"], "name"].item()
        assert result.report.notes["sweep_winner"] == winner
        assert frame["validation_score"].max() == pytest.approx(result.validation_score)

    def test_multilabel(self, tiny_multilabel_corpus, tmp_path):
        from conftest import tiny_run_config

        run = tiny_run_config(tiny_multilabel_corpus.source_path, tmp_path / "ml")
        cfg = resolve(run, Stage.FINETUNE, tiny_multilabel_corpus)
        assert cfg.preset == "xray_finetune"
        result = finetune(cfg, tiny_multilabel_corpus, run.eval)
        assert "mean_auc" in result.report.metrics
        assert result.extra["selection_metric"] == "mean_auc"


class TestLabelEfficiency:
    def test_parse_inits(self):
        assert parse_inits("random,simclr=a.mck") == {"random": None, "simclr": "a.mck"}
        with pytest.raises(ConfigError):
            parse_inits("micle")

    def test_fraction_range(self):
        with pytest.raises(ConfigError):
            check_fractions([0.5, 1.5])

    def test_spearman(self):
        assert spearman([0.1, 0.2, 0.3], [0.5, 0.6, 0.9]) == pytest.approx(1.0)
        assert spearman([0.1, 0.2, 0.3], [0.9, 0.6, 0.5]) == pytest.approx(-1.0)
        assert spearman([0.1, 0.2, 0.3], [0.5, 0.5, 0.5]) is None

    def test_spearman_ties_use_average_ranks(self):
        assert spearman([0.1, 0.2, 0.3, 0.4], [1.0, 2.0, 2.0, 3.0]) == pytest.approx(0.9 ** 0.5)

    def test_curve_trend_averages_seeds(self):
        curve = pd.DataFrame({
            "init": ["random"] * 4, "fraction": [0.5, 0.5, 1.0, 1.0], "seed": [0, 1, 0, 1],
            "metric": ["top1"] * 4, "value": [0.4, 0.6, 0.7, 0.9],
        })
        assert curve_trend(curve, "top1") == {"random": pytest.approx(1.0)}

    def test_sweep_rows(self, run_config_factory, tiny_corpus, tmp_path):
        run = run_config_factory(steps=1)
        result = label_efficiency_sweep({"random": None}, [0.5, 1.0], [0], run, tiny_corpus,
                                        tmp_path / "curve", plot=False)
        assert result.csv_path.is_file()
        top1 = result.curve[result.curve["metric"] == "top1"]
        assert sorted(top1["fraction"].tolist()) == [0.5, 1.0]
        assert result.metric == "top1"
        assert (tmp_path / "curve" / "random" / "f0.50_s0" / "metrics.json").is_file()
