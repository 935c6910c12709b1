"""Run matrices: every (method, seed) cell trained once, resumable through the results file."""

import logging
import math
import re
import statistics
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import pandas as pd

try:
    from tqdm import tqdm
except ImportError:
    tqdm = None

from ..config import Settings
from ..data_loader import SUITE_FILE, read_suite
from ..metrics import average_score
from ..models import MatrixSpec, MethodSpec, SuiteConfig, TrialResult
from ..synthdata import Suite, gen_suite
from .methods import TeacherStore, needs_single_teachers, run_method

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.tsv"
SCORE_PREFIX = "score:"


def results_columns(task_ids: Sequence[str]) -> list[str]:
    """Documented header of the results file."""
    return (
        ["method", "seed", "status"]
        + [f"{SCORE_PREFIX}{t}" for t in task_ids]
        + ["average", "wall_clock_s", "config_digest", "teachers", "reason"]
    )


def _format_teachers(teachers: dict[str, str]) -> str:
    return ";".join(f"{k}={v}" for k, v in sorted(teachers.items()))


def _parse_teachers(text: str) -> dict[str, str]:
    pairs = [p.split("=", 1) for p in text.split(";") if "=" in p]
    return {k: v for k, v in pairs}


def result_to_row(result: TrialResult, task_ids: Sequence[str]) -> dict:
    row = {"method": result.method, "seed": result.seed, "status": result.status}
    for task_id in task_ids:
        row[f"{SCORE_PREFIX}{task_id}"] = result.scores.get(task_id, math.nan)
    row["average"] = result.average if result.average is not None else math.nan
    row["wall_clock_s"] = result.wall_clock_s
    row["config_digest"] = result.config_digest
    row["teachers"] = _format_teachers(result.teachers)
    row["reason"] = re.sub(r"\s+", " ", result.reason).strip()
    return row


def read_results(path: str | Path) -> list[TrialResult]:
    """Parse a results file, skipping rows a killed writer left incomplete."""
    path = Path(path)
    if not path.exists():
        return []
    frame = pd.read_csv(
        path,
        sep="\t",
        dtype={"method": str, "status": str, "config_digest": str, "teachers": str, "reason": str},
        keep_default_na=False,
        na_values={c: [""] for c in ("seed", "average", "wall_clock_s")},
        on_bad_lines="skip",
        float_precision="round_trip",
    )
    task_ids = [c[len(SCORE_PREFIX):] for c in frame.columns if c.startswith(SCORE_PREFIX)]
    results, skipped = [], 0
    for row in frame.to_dict("records"):
        try:
            scores = {}
            for task_id in task_ids:
                value = row[f"{SCORE_PREFIX}{task_id}"]
                if value != "" and not pd.isna(value):
                    scores[task_id] = float(value)
            average = row["average"]
            results.append(
                TrialResult(
                    method=row["method"],
                    seed=int(row["seed"]),
                    status=row["status"],
                    scores=scores,
                    average=None if pd.isna(average) else float(average),
                    wall_clock_s=float(row["wall_clock_s"]),
                    config_digest=row["config_digest"],
                    teachers=_parse_teachers(row["teachers"]),
                    reason=row["reason"],
                )
            )
        except (AttributeError, KeyError, TypeError, ValueError):
            skipped += 1
    if skipped:
        logger.warning(f"Skipped {skipped} incomplete rows in {path}")
    return results


def append_result(result: TrialResult, path: Path, task_ids: Sequence[str]) -> None:
    frame = pd.DataFrame([result_to_row(result, task_ids)], columns=results_columns(task_ids))
    frame.to_csv(path, sep="\t", mode="a", header=not path.exists(), index=False, na_rep="")


def _terminate_last_line(path: Path) -> None:
    """Start appended rows on a fresh line after a writer killed mid-row."""
    if path.exists() and path.stat().st_size:
        with open(path, "rb+") as f:
            f.seek(-1, 2)
            if f.read(1) != b"\n":
                f.write(b"\n")


def write_results(results: Iterable[TrialResult], path: Path, task_ids: Sequence[str]) -> None:
    """Rewrite the whole file atomically in the given row order."""
    frame = pd.DataFrame([result_to_row(r, task_ids) for r in results], columns=results_columns(task_ids))
    tmp = path.with_name(f".{path.name}.tmp")
    frame.to_csv(tmp, sep="\t", index=False, na_rep="")
    tmp.replace(path)


@lru_cache(maxsize=4)
def _cached_suite(config_json: str, seed: int, data_dir: str) -> Suite:
    config = SuiteConfig.model_validate_json(config_json)
    if (Path(data_dir) / SUITE_FILE).exists():
        suite = read_suite(data_dir)
        if suite.config == config and suite.seed == seed:
            return suite
        logger.warning(f"Suite in {data_dir} does not match the configured suite, regenerating in memory")
    return gen_suite(config, seed)


def load_suite(settings: Settings) -> Suite:
    """The configured suite, read from ``DATA_DIR`` when it was written there, else generated."""
    return _cached_suite(settings.suite_config().model_dump_json(), settings.SUITE_SEED, settings.DATA_DIR)


def _failed(method: str, seed: int, digest: str, started: float, error: BaseException) -> TrialResult:
    return TrialResult(
        method=method,
        seed=seed,
        status="failed",
        wall_clock_s=time.perf_counter() - started,
        config_digest=digest,
        reason=" ".join(f"{type(error).__name__}: {error}".split()),
    )


def run_cell(settings_values: dict, method_values: dict, seed: int, out_dir: str) -> TrialResult:
    """One matrix cell. Never raises: failures come back as ``status="failed"`` rows."""
    settings = Settings(**settings_values)
    method = MethodSpec.model_validate(method_values)
    digest = settings.digest()
    started = time.perf_counter()
    try:
        suite = load_suite(settings)
        store = TeacherStore(Path(out_dir) / "teachers", settings, suite.datasets)
        outcome = run_method(method, seed, suite.datasets, suite.task_ids, settings, store)
    except Exception as e:
        logger.error(f"Cell {method.name} seed {seed} failed: {type(e).__name__}: {e}")
        return _failed(method.name, seed, digest, started, e)
    return TrialResult(
        method=method.name,
        seed=seed,
        status="ok",
        scores=outcome.scores,
        average=average_score(outcome.scores),
        wall_clock_s=time.perf_counter() - started,
        config_digest=digest,
        teachers=outcome.teachers,
    )


def prepare_teacher(settings_values: dict, kind: str, task_ids: tuple[str, ...], seed: int, out_dir: str) -> bool:
    """Train (or find) one teacher checkpoint so cells of the same seed can share it."""
    settings = Settings(**settings_values)
    try:
        suite = load_suite(settings)
        store = TeacherStore(Path(out_dir) / "teachers", settings, suite.datasets)
        if kind == "single":
            store.single(task_ids[0], seed)
        else:
            store.multi(list(task_ids), seed)
    except Exception as e:
        logger.warning(f"Teacher {kind} {task_ids} seed {seed} failed, its cells will report it: {e}")
        return False
    return True


def teacher_jobs(cells: Sequence[tuple[MethodSpec, int]], settings: Settings, task_ids: Sequence[str]):
    """Distinct teacher checkpoints the pending cells will ask for."""
    jobs: dict[tuple, None] = {}
    for method, seed in cells:
        tasks = tuple(method.tasks or task_ids)
        tseed = seed
        if settings.TEACHER_PROVENANCE == "shared" and method.recipe != "single":
            tseed = settings.SHARED_TEACHER_SEED
        if needs_single_teachers(method):
            for task_id in tasks:
                jobs[("single", (task_id,), tseed)] = None
        if method.recipe == "multi_to_multi":
            jobs[("multi", tasks, tseed)] = None
        if method.recipe == "multi" and method.finetune:
            jobs[("multi", tasks, seed)] = None
    return list(jobs)


@dataclass
class MatrixRun:
    path: Path
    results: list[TrialResult] = field(default_factory=list)
    executed: int = 0

    @property
    def failed(self) -> list[TrialResult]:
        return [r for r in self.results if r.status == "failed"]


def _run_jobs(fn, jobs: Sequence[tuple], parallel: int, desc: str):
    """Yield results of ``fn(*job)`` as they complete."""
    if parallel <= 1:
        iterator = jobs
        if tqdm:
            iterator = tqdm(jobs, desc=desc)
        for job in iterator:
            yield fn(*job)
        return
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        iterator = as_completed(futures)
        if tqdm:
            iterator = tqdm(iterator, total=len(futures), desc=desc)
        for future in iterator:
            yield future.result()


def run_matrix(
    spec: MatrixSpec,
    settings: Settings,
    out_dir: str | Path,
    parallel: int = 1,
    resume: bool = False,
    retry_failed: bool = False,
) -> MatrixRun:
    """
    Run every missing cell of ``spec`` and return all rows of the results file.

    Completed cells found in an existing results file are skipped, so a rerun
    of a finished matrix leaves the file untouched. New rows are appended as
    cells finish; the file is rewritten in method/seed order at the end.

    Args:
        spec: Methods and seeds to run
        settings: Run settings; their digest is stamped on every row
        out_dir: Directory of the results file and teacher checkpoints
        parallel: Worker processes
        resume: Continue an existing results file instead of refusing it
        retry_failed: Rerun cells recorded as failed

    Returns:
        MatrixRun with every row of the results file

    Raises:
        FileExistsError: A results file exists and ``resume`` is off
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESULTS_FILE
    if path.exists() and not resume:
        raise FileExistsError(f"{path} exists; pass resume to continue it")

    settings = settings.model_copy(update={"TEACHER_PROVENANCE": spec.teacher_provenance})
    digest = settings.digest()
    suite = load_suite(settings)
    task_ids = suite.task_ids

    existing = read_results(path)
    stale = sorted({r.config_digest for r in existing} - {digest})
    if stale:
        raise ValueError(f"{path} holds rows for config digests {stale}, current config is {digest}")
    kept = [r for r in existing if not (retry_failed and r.status == "failed")]
    done = {(r.method, r.seed) for r in kept}
    pending = [(m, s) for m in spec.methods for s in spec.seeds if (m.name, s) not in done]
    run = MatrixRun(path=path, results=list(kept))
    if not pending:
        logger.info(f"All {len(spec.methods) * len(spec.seeds)} cells already in {path}, nothing to run")
        return run

    values = settings.model_dump()
    jobs = teacher_jobs(pending, settings, task_ids)
    if jobs:
        logger.info(f"Preparing {len(jobs)} teacher checkpoints")
        list(_run_jobs(prepare_teacher, [(values, k, t, s, str(out_dir)) for k, t, s in jobs], parallel, "Teachers"))

    logger.info(f"Running {len(pending)} cells ({len(done)} already done) with {parallel} worker(s)")
    cells = [(values, m.model_dump(), s, str(out_dir)) for m, s in pending]
    if retry_failed and len(kept) != len(existing):
        write_results(kept, path, task_ids)
    _terminate_last_line(path)
    for result in _run_jobs(run_cell, cells, parallel, "Cells"):
        append_result(result, path, task_ids)
        run.results.append(result)
        run.executed += 1

    order = {m.name: i for i, m in enumerate(spec.methods)}
    seed_order = {s: i for i, s in enumerate(spec.seeds)}
    run.results.sort(
        key=lambda r: (order.get(r.method, len(order)), r.method, seed_order.get(r.seed, len(seed_order)), r.seed)
    )
    write_results(run.results, path, task_ids)
    log_summary(run.results, spec.methods)
    return run


def log_summary(results: Sequence[TrialResult], methods: Optional[Sequence[MethodSpec]] = None) -> None:
    names = [m.name for m in methods] if methods else sorted({r.method for r in results})
    logger.info("\n" + "=" * 60)
    logger.info("RUN MATRIX SUMMARY")
    logger.info("=" * 60)
    for name in names:
        rows = [r for r in results if r.method == name]
        ok = [r.average for r in rows if r.status == "ok" and r.average is not None]
        median = f"{statistics.median(ok):.1f}" if ok else "-"
        logger.info(f"  {name}: median average {median} over {len(ok)} ok / {len(rows)} trials")
    logger.info("=" * 60)
