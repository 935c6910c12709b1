"""CLI for multi-task distillation experiments.

Usage:
    python -m src.run_bam gen-data --out data
    python -m src.run_bam train-teacher --task SMALL-A --seed 0
    python -m src.run_bam train-student --method "Single->Multi" --seed 0
    python -m src.run_bam finetune --checkpoint results/student.ckpt --task SMALL-A
    python -m src.run_bam run-matrix --study main --parallel 4 --resume
    python -m src.run_bam significance --compare "Single->Multi:Single" --test mannwhitney
    python -m src.run_bam report --plot
"""

import argparse
import logging
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

try:
    from dotenv import load_dotenv

    env_path = Path(__file__).parent.parent / ".env"
    if env_path.exists():
        load_dotenv(dotenv_path=str(env_path), override=True)
except ImportError:
    pass

from .config import Settings, load_settings
from .data_loader import write_suite
from .errors import BamError
from .harness.matrix import RESULTS_FILE, load_suite, run_matrix
from .harness.methods import TeacherStore, get_method, run_method, study_methods
from .harness.report import (
    default_comparisons,
    method_order,
    parse_comparison,
    results_frame,
    significance_report,
    summary_report,
    write_tables,
)
from .harness.training import finetune_single, train_teacher
from .metrics import evaluate_model
from .models import MatrixSpec
from .network import load_checkpoint, save_checkpoint
from .synthdata import gen_suite

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.=+-]+", "_", name)


def _out_dir(args, settings: Settings) -> Path:
    out = Path(args.out) if args.out else settings.get_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args, settings: Settings) -> int:
    out = Path(args.out) if args.out else settings.get_data_dir()
    suite = gen_suite(settings.suite_config(), settings.SUITE_SEED)
    write_suite(suite, out)
    for task_id, dataset in suite.datasets.items():
        balance = ""
        if dataset.spec.kind == "classification":
            balance = f", positive rate {dataset.train_y.mean():.1%}"
        logger.info(f"  {task_id}: {len(dataset.train_x)} train / {len(dataset.dev_x)} dev{balance}")
    return 0


def cmd_train_teacher(args, settings: Settings) -> int:
    suite = load_suite(settings)
    configs = [settings.train_config("teacher", layer_decay=a) for a in settings.teacher_alphas()]
    result = train_teacher(args.task, suite.datasets, settings.trunk_config(), configs, args.seed, settings.digest())
    score = evaluate_model(result.model, suite.datasets, [args.task])[args.task]
    path = _out_dir(args, settings) / f"teacher-{_safe(args.task)}-seed{args.seed}.ckpt"
    sha = save_checkpoint(result.checkpoint, path)
    logger.info(f"Teacher {args.task}: alpha={result.log.layer_decay} dev {score:.1f}, saved {path} ({sha[:12]})")
    return 0


def cmd_train_student(args, settings: Settings) -> int:
    suite = load_suite(settings)
    method = get_method(args.method, suite.task_ids)
    out = _out_dir(args, settings)
    store = TeacherStore(out / "teachers", settings, suite.datasets)
    outcome = run_method(method, args.seed, suite.datasets, suite.task_ids, settings, store)
    for key, checkpoint in outcome.checkpoints.items():
        path = out / f"{_safe(method.name)}-seed{args.seed}-{_safe(key)}.ckpt"
        save_checkpoint(checkpoint, path)
        logger.info(f"Saved {path}")
    for task_id, score in outcome.scores.items():
        logger.info(f"  {task_id}: {score:.1f}")
    return 0


def cmd_finetune(args, settings: Settings) -> int:
    suite = load_suite(settings)
    checkpoint = load_checkpoint(args.checkpoint)
    before = evaluate_model(checkpoint.model, suite.datasets, [args.task])[args.task]
    result = finetune_single(checkpoint, args.task, suite.datasets, settings.train_config("finetune"), args.seed)
    after = evaluate_model(result.model, suite.datasets, [args.task])[args.task]
    path = _out_dir(args, settings) / f"finetuned-{_safe(args.task)}-seed{args.seed}.ckpt"
    save_checkpoint(result.checkpoint, path)
    logger.info(f"Fine-tuned {args.task}: dev {before:.1f} -> {after:.1f}, saved {path}")
    return 0


def cmd_run_matrix(args, settings: Settings) -> int:
    suite = load_suite(settings)
    related = {t: s.related_to for t, s in suite.specs.items()}
    if args.methods:
        methods = [get_method(name, suite.task_ids) for name in args.methods]
    else:
        methods = study_methods(args.study or settings.STUDY, suite.task_ids, related)
    num_seeds = args.num_seeds or settings.NUM_SEEDS
    spec = MatrixSpec(
        methods=methods,
        seeds=list(range(args.seed, args.seed + num_seeds)),
        teacher_provenance=args.provenance or settings.TEACHER_PROVENANCE,
    )
    run = run_matrix(
        spec, settings, _out_dir(args, settings), parallel=settings.PARALLEL, resume=args.resume,
        retry_failed=args.retry_failed,
    )
    requested = {(m.name, s) for m in spec.methods for s in spec.seeds}
    failed = [r for r in run.failed if (r.method, r.seed) in requested]
    for r in failed:
        logger.error(f"Failed cell {r.method} seed {r.seed}: {r.reason}")
    return 1 if failed else 0


def _results_path(args, settings: Settings) -> Path:
    return Path(args.results) if args.results else settings.get_output_dir() / RESULTS_FILE


def cmd_significance(args, settings: Settings) -> int:
    path = _results_path(args, settings)
    if args.compare:
        comparisons = [parse_comparison(c) for c in args.compare]
    else:
        comparisons = default_comparisons(method_order(results_frame(path)), args.baseline)
    report = significance_report(
        path,
        comparisons,
        alpha=args.alpha if args.alpha is not None else settings.SIGNIFICANCE_ALPHA,
        test=args.test or settings.SIGNIFICANCE_TEST,
        resamples=settings.BOOTSTRAP_RESAMPLES,
        seed=args.seed,
    )
    out = _out_dir(args, settings)
    write_tables(out, significance=report.table, significance_wide=report.wide)
    print(report.to_text())
    return 0


def cmd_report(args, settings: Settings) -> int:
    tables = summary_report(_results_path(args, settings), _out_dir(args, settings), plot=args.plot)
    logger.info("\n" + "=" * 60)
    logger.info("MEDIAN DEV SCORES")
    logger.info("=" * 60)
    logger.info("\n" + tables["medians"].to_string())
    logger.info("\nBest single trial per method (highest average dev score):")
    logger.info("\n" + tables["best_dev"].to_string(index=False))
    logger.info("=" * 60)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Flat KEY=VALUE settings file")
    common.add_argument("--seed", type=int, default=None, help="Trial seed, first seed for run-matrix (default: SEED)")
    common.add_argument("--out", type=str, default=None, help="Output directory (default: OUTPUT_DIR)")
    common.add_argument("--parallel", type=int, default=None, help="Worker processes (default: PARALLEL)")
    common.add_argument("--resume", action="store_true", help="Continue an existing results file")

    parser = argparse.ArgumentParser(description="Born-again multi-task distillation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="Generate the synthetic suite into --out (default: DATA_DIR)")

    p = sub.add_parser("train-teacher", parents=[common], help="Train a single-task teacher")
    p.add_argument("--task", required=True)

    p = sub.add_parser("train-student", parents=[common], help="Train one method for one seed")
    p.add_argument("--method", default="Single->Multi")

    p = sub.add_parser("finetune", parents=[common], help="Fine-tune one task of a multi-task checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True)

    p = sub.add_parser("run-matrix", parents=[common], help="Run a method x seed matrix")
    p.add_argument("--study", default=None, help="main, finetune, ablation, tasks or all (default: STUDY)")
    p.add_argument("--methods", nargs="+", default=None, help="Explicit method names instead of a study")
    p.add_argument("--num-seeds", type=int, default=None, help="Trials per method (default: NUM_SEEDS)")
    p.add_argument("--provenance", choices=["fresh", "shared"], default=None)
    p.add_argument("--retry-failed", action="store_true", help="Rerun cells recorded as failed")

    p = sub.add_parser("significance", parents=[common], help="Holm-corrected significance table")
    p.add_argument("--results", default=None, help="Results file (default: OUTPUT_DIR/results.tsv)")
    p.add_argument("--compare", nargs="+", default=None, help="METHOD:BASELINE pairs")
    p.add_argument("--baseline", default=None, help="Baseline for the default comparisons")
    p.add_argument("--test", choices=["bootstrap", "mannwhitney"], default=None)
    p.add_argument("--alpha", type=float, default=None)

    p = sub.add_parser("report", parents=[common], help="Medians, spread and best-dev tables")
    p.add_argument("--results", default=None, help="Results file (default: OUTPUT_DIR/results.tsv)")
    p.add_argument("--plot", action="store_true", help="Also write a box plot of average scores")
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "finetune": cmd_finetune,
    "run-matrix": cmd_run_matrix,
    "significance": cmd_significance,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config, OUTPUT_DIR=args.out, PARALLEL=args.parallel)
        if args.seed is None:
            args.seed = settings.SEED
        return COMMANDS[args.command](args, settings)
    except (BamError, FileExistsError, FileNotFoundError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
