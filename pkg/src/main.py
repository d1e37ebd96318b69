#!/usr/bin/env python3
"""
MICLe CLI - 對比式表徵學習的命令行工具
SimCLR 預訓練、多實例對比學習（MICLe）、監督式微調與完整評估流程
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# 添加 src 目錄到 Python 路徑，這樣可以正確導入同級模組
src_dir = Path(__file__).parent
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from corpus import SyntheticCorpusSpec, generate_synthetic_corpus, load_manifest, nearest_centroid_accuracy
from errors import MicleError, UsageError
from evaluation import (
    DEFAULT_FRACTIONS,
    MetricsReport,
    check_fractions,
    evaluate_checkpoint,
    get_metric,
    label_efficiency_sweep,
    paired_significance,
    parse_inits,
    predictions_for_checkpoint,
)
from run_config import DEFAULT_SEED, RunConfig, apply_cli_overrides, load_run_config
from tools.batch_processor import default_batch_processor
from tools.file_tools import read_json, write_json
from tools.verification import render_results, run_verification
from training import Stage, StageResult, finetune, pretrain_micle, pretrain_simclr, resolve_stage

logger = logging.getLogger("micle")


class CLIArgumentParser(argparse.ArgumentParser):
    """參數錯誤時以 UsageError 的結束碼（1）離開"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"  ✗ {message}", file=sys.stderr)
        sys.exit(UsageError.exit_code)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    """根記錄器只設定一次；所有診斷輸出到 stderr"""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=verbose)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(level)


def _parse_list(text: str, cast, name: str) -> list:
    try:
        return [cast(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"{name} 格式錯誤: {text}")


def build_parser() -> argparse.ArgumentParser:
    parser = CLIArgumentParser(prog="micle", description="MICLe CLI - 對比式表徵學習與評估")
    parser.add_argument('--verbose', '-v', action='store_true', help='顯示除錯訊息')
    parser.add_argument('--quiet', '-q', action='store_true', help='只顯示警告與錯誤')
    sub = parser.add_subparsers(dest='command', metavar='<command>')
    sub.required = True

    gencorpus = sub.add_parser('gencorpus', help='產生合成多視角資料集')
    gencorpus.add_argument('--spec', help='資料集規格 JSON（省略時使用預設值）')
    gencorpus.add_argument('--out', required=True, help='輸出目錄')
    gencorpus.add_argument('--seed', type=int, help='覆寫規格中的種子')
    gencorpus.add_argument('--check', action='store_true', help='計算原始像素最近質心準確率')

    def stage_parser(name: str, help_text: str) -> argparse.ArgumentParser:
        stage = sub.add_parser(name, help=help_text)
        stage.add_argument('--config', help='執行設定 JSON')
        stage.add_argument('--manifest', help='覆寫 data.manifest')
        stage.add_argument('--out', help='覆寫 out_dir')
        stage.add_argument('--seed', type=int, help=f'覆寫種子（預設 {DEFAULT_SEED}）')
        return stage

    stage_parser('pretrain', '第一階段：SimCLR 預訓練')
    micle = stage_parser('micle', '第二階段：MICLe 預訓練')
    micle.add_argument('--init', help='simclr 檢查點')
    micle.add_argument('--from-scratch', action='store_true', help='不使用初始化檢查點')
    tune = stage_parser('finetune', '第三階段：監督式微調')
    tune.add_argument('--init', help='初始化檢查點（simclr / micle / finetune），或 random')
    tune.add_argument('--fraction', type=float, help='訓練標籤比例 (0, 1]')
    tune.add_argument('--sweep', action='store_true', help='執行 28 點學習率 × 權重衰減網格')

    evaluate = sub.add_parser('eval', help='評估 finetune 檢查點')
    evaluate.add_argument('--ckpt', required=True, help='finetune 檢查點')
    evaluate.add_argument('--manifest', required=True, help='清單（可為替代資料集）')
    evaluate.add_argument('--split', default='test', choices=['train', 'validation', 'test'])
    evaluate.add_argument('--group-by', help='子群欄位（group）')
    evaluate.add_argument('--bootstrap', type=int, default=1000, help='bootstrap 重抽次數')
    evaluate.add_argument('--repeats', type=int, default=1, help='重複推論次數')
    evaluate.add_argument('--metrics', help='逗號分隔的指標名稱')
    evaluate.add_argument('--seed', type=int, help='bootstrap 種子')
    evaluate.add_argument('--out', help='輸出 JSON 路徑')

    compare = sub.add_parser('compare', help='成對 bootstrap 顯著性檢定')
    compare.add_argument('--ckpt-a', required=True)
    compare.add_argument('--ckpt-b', required=True)
    compare.add_argument('--manifest', required=True)
    compare.add_argument('--metric', required=True, help='例如 top1、mean_auc、auc[class_0]')
    compare.add_argument('--split', default='test', choices=['train', 'validation', 'test'])
    compare.add_argument('--bootstrap', type=int, default=1000)
    compare.add_argument('--seed', type=int)
    compare.add_argument('--out', help='輸出 JSON 路徑')

    labels = sub.add_parser('sweep-labels', help='標籤效率曲線')
    labels.add_argument('--config', help='微調設定 JSON')
    labels.add_argument('--manifest', help='覆寫 data.manifest')
    labels.add_argument('--inits', required=True, help='例如 random,simclr=a.mck,micle=b.mck')
    labels.add_argument('--fractions', help='逗號分隔的比例（預設 0.1..1.0）')
    labels.add_argument('--seeds', default='0', help='逗號分隔的種子')
    labels.add_argument('--out', help='覆寫 out_dir')
    labels.add_argument('--no-plot', action='store_true', help='不輸出圖表')

    verify = sub.add_parser('verify', help='執行自我驗證套件')
    verify.add_argument('--quick', action='store_true', help='縮小規模')
    return parser


class MicleCLI:
    """命令列介面"""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()
        self.handlers = {
            'gencorpus': self.handle_gencorpus_command,
            'pretrain': self.handle_pretrain_command,
            'micle': self.handle_micle_command,
            'finetune': self.handle_finetune_command,
            'eval': self.handle_eval_command,
            'compare': self.handle_compare_command,
            'sweep-labels': self.handle_sweep_labels_command,
            'verify': self.handle_verify_command,
        }

    def run(self, argv: Optional[List[str]] = None) -> int:
        """解析參數並執行子命令，回傳結束碼"""
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose, args.quiet)
        try:
            return self.handlers[args.command](args) or 0
        except MicleError as e:
            logger.debug("命令失敗", exc_info=True)
            print(f"  ✗ {e}", file=sys.stderr)
            return e.exit_code
        except KeyboardInterrupt:
            print("  ✗ 已中斷", file=sys.stderr)
            return 1
        except Exception as e:
            logger.exception("未預期的錯誤: %s", e)
            return 1

    # ------------------------------------------------------------------
    # 輸出
    # ------------------------------------------------------------------

    def print_report(self, report: MetricsReport, title: str) -> None:
        table = Table(title=title)
        table.add_column("metric", style="cyan")
        table.add_column("point", justify="right")
        table.add_column("95% CI", justify="right")
        for name, entry in report.metrics.items():
            table.add_row(name, f"{entry.point:.4f}", f"[{entry.ci_low:.4f}, {entry.ci_high:.4f}]")
            for group, values in sorted((entry.per_group or {}).items()):
                if values is None:
                    table.add_row(f"  {group}", "n/a", "")
                else:
                    table.add_row(f"  {group}", f"{values['point']:.4f}",
                                  f"[{values['ci_low']:.4f}, {values['ci_high']:.4f}]")
        self.console.print(table)

    def print_stage(self, result: StageResult) -> None:
        table = Table(title=f"{result.stage.value} 完成")
        table.add_column("item", style="cyan")
        table.add_column("value")
        losses = result.log.losses()
        table.add_row("steps", str(result.checkpoint.step))
        if losses:
            table.add_row("loss (first → last)", f"{losses[0]:.4f} → {losses[-1]:.4f}")
        for key in ("initial_alignment", "final_alignment", "init", "best_step", "sweep_winner"):
            value = result.extra.get(key)
            if value is not None:
                table.add_row(key, f"{value:.4f}" if isinstance(value, float) else str(value))
        if result.validation_score is not None:
            table.add_row("validation", f"{result.validation_score:.4f}")
        table.add_row("checkpoint", str(result.checkpoint_path))
        self.console.print(table)
        from tools.data_visualizer import plot_train_loss
        plot_train_loss(result.log.to_frame(), result.checkpoint_path.parent / "train_loss.png")

    # ------------------------------------------------------------------
    # 子命令
    # ------------------------------------------------------------------

    def handle_gencorpus_command(self, args) -> int:
        spec = SyntheticCorpusSpec.from_dict(read_json(args.spec)) if args.spec else SyntheticCorpusSpec()
        if args.seed is not None:
            spec = SyntheticCorpusSpec.from_dict({**spec.to_dict(), "seed": args.seed})
        manifest = generate_synthetic_corpus(spec, args.out)
        table = Table(title="合成資料集")
        table.add_column("item", style="cyan")
        table.add_column("value")
        table.add_row("manifest", str(manifest.source_path))
        table.add_row("classes", str(manifest.num_classes))
        table.add_row("task", manifest.task_kind.value)
        for split, count in manifest.split_counts().items():
            table.add_row(f"bags ({split})", str(count))
        table.add_row("images", str(sum(bag.M for bag in manifest.bags)))
        if args.check:
            table.add_row("nearest-centroid top1", f"{nearest_centroid_accuracy(manifest):.4f}")
        self.console.print(table)
        return 0

    def _prepare(self, args, stage: Stage, from_scratch: bool = False, **overrides):
        run = load_run_config(args.config)
        if from_scratch:
            run.stage.from_scratch = True
        apply_cli_overrides(run, seed=args.seed, out_dir=args.out, manifest=args.manifest,
                            **overrides)
        if not run.data.manifest:
            raise UsageError("需要 --manifest 或設定 data.manifest")
        manifest = load_manifest(run.data.manifest)
        cfg = resolve_stage(run, stage, manifest.task_kind, manifest.image_size)
        run.write_resolved(cfg.out_dir, extra={"stage": cfg.to_dict()})
        logger.info("設定已寫入 %s/config.resolved.json", cfg.out_dir)
        return run, cfg, manifest

    def handle_pretrain_command(self, args) -> int:
        _, cfg, manifest = self._prepare(args, Stage.SIMCLR)
        self.print_stage(pretrain_simclr(cfg, manifest, default_batch_processor()))
        return 0

    def handle_micle_command(self, args) -> int:
        _, cfg, manifest = self._prepare(args, Stage.MICLE, from_scratch=args.from_scratch,
                                         init_checkpoint=args.init)
        self.print_stage(pretrain_micle(cfg, manifest, default_batch_processor()))
        return 0

    def handle_finetune_command(self, args) -> int:
        if args.fraction is not None and not 0 < args.fraction <= 1:
            raise UsageError(f"--fraction 必須在 (0, 1] 之間，收到 {args.fraction}")
        run, cfg, manifest = self._prepare(args, Stage.FINETUNE, init_checkpoint=args.init,
                                           label_fraction=args.fraction, sweep=args.sweep)
        result = finetune(cfg, manifest, run.eval, default_batch_processor(),
                          base_config=run.to_dict())
        self.print_stage(result)
        if result.report is not None:
            self.print_report(result.report, f"測試切分（{result.report.num_examples} bags）")
        return 0

    def handle_eval_command(self, args) -> int:
        manifest = load_manifest(args.manifest)
        metrics = _parse_list(args.metrics, str, "--metrics") if args.metrics else None
        seed = DEFAULT_SEED if args.seed is None else args.seed
        report = evaluate_checkpoint(args.ckpt, manifest, args.split, args.group_by, args.repeats,
                                     args.bootstrap, seed, metrics, default_batch_processor())
        out = Path(args.out) if args.out else \
            Path(args.ckpt).parent / f"eval_{Path(args.manifest).stem}_{args.split}.json"
        report.save(out)
        if args.group_by:
            from tools.data_visualizer import plot_subgroups
            first = next(iter(report.metrics))
            plot_subgroups(report.to_dict(), first, out.with_suffix(".groups.png"))
        self.print_report(report, f"{Path(args.ckpt).name} @ {Path(args.manifest).name}:{args.split}")
        logger.info("報告寫入 %s", out)
        return 0

    def handle_compare_command(self, args) -> int:
        manifest = load_manifest(args.manifest)
        metric_fn = get_metric(args.metric)
        seed = DEFAULT_SEED if args.seed is None else args.seed
        processor = default_batch_processor()
        preds_a = predictions_for_checkpoint(args.ckpt_a, manifest, args.split, processor)
        preds_b = predictions_for_checkpoint(args.ckpt_b, manifest, args.split, processor)
        result = paired_significance(preds_a, preds_b, metric_fn, args.bootstrap, seed, processor)
        payload = {"metric": args.metric, "ckpt_a": args.ckpt_a, "ckpt_b": args.ckpt_b,
                   "manifest": args.manifest, "split": args.split, "seed": seed,
                   "point_a": metric_fn(preds_a), "point_b": metric_fn(preds_b),
                   **result.to_dict()}
        out = Path(args.out) if args.out else Path(args.ckpt_a).parent / f"compare_{args.metric}.json"
        write_json(out, payload)
        table = Table(title=f"paired bootstrap: {args.metric}")
        for column in ("a", "b", "delta (a − b)", "95% CI", "significant"):
            table.add_column(column, justify="right")
        table.add_row(f"{payload['point_a']:.4f}", f"{payload['point_b']:.4f}",
                      f"{result.delta:+.4f}", f"[{result.ci_low:+.4f}, {result.ci_high:+.4f}]",
                      "yes" if result.significant_at_05 else "no")
        self.console.print(table)
        return 0

    def handle_sweep_labels_command(self, args) -> int:
        inits = parse_inits(args.inits)
        fractions = check_fractions(_parse_list(args.fractions, float, "--fractions")
                                    if args.fractions else DEFAULT_FRACTIONS)
        seeds = _parse_list(args.seeds, int, "--seeds")
        run: RunConfig = load_run_config(args.config)
        apply_cli_overrides(run, out_dir=args.out, manifest=args.manifest)
        if not run.data.manifest:
            raise UsageError("需要 --manifest 或設定 data.manifest")
        manifest = load_manifest(run.data.manifest)
        run.write_resolved(run.out_dir, extra={"inits": inits, "fractions": fractions,
                                               "seeds": seeds})
        result = label_efficiency_sweep(inits, fractions, seeds, run, manifest, run.out_dir,
                                        default_batch_processor(), plot=not args.no_plot)
        summary = result.curve[result.curve["metric"] == result.metric] \
            .groupby(["init", "fraction"])["value"].mean().unstack("init")
        table = Table(title=f"label efficiency ({result.metric}, mean over {len(seeds)} seeds)")
        table.add_column("fraction", justify="right")
        for init in summary.columns:
            table.add_column(str(init), justify="right")
        for fraction, row in summary.iterrows():
            table.add_row(f"{fraction:.2f}", *[f"{v:.4f}" for v in row.values])
        table.add_row("spearman", *[_format_optional(result.spearman.get(i)) for i in summary.columns])
        self.console.print(table)
        logger.info("曲線寫入 %s", result.csv_path)
        return 0

    def handle_verify_command(self, args) -> int:
        results = run_verification(quick=args.quick)
        render_results(results, self.console)
        return 0 if all(r.passed for r in results) else 1


def _format_optional(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:+.3f}"


def main(argv: Optional[List[str]] = None) -> None:
    """主函數"""
    sys.exit(MicleCLI().run(argv))


if __name__ == "__main__":
    main()
