"""Significance tables and summary views over a results file."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
import pandas as pd

from ..errors import InsufficientTrialsError, UnknownMethodError
from ..sampling import derive_seed
from ..stats import MIN_TRIALS, bootstrap_test, holm_bonferroni, mann_whitney_u, median_of_trials, stars
from .matrix import read_results

logger = logging.getLogger(__name__)

AVERAGE = "average"
TestName = Literal["bootstrap", "mannwhitney"]


def results_frame(path: str | Path) -> pd.DataFrame:
    """Long-format frame of the ok trials: one row per (method, seed) with a column per metric."""
    rows = []
    for r in read_results(path):
        if r.status != "ok":
            continue
        row = {"method": r.method, "seed": r.seed, AVERAGE: r.average}
        row.update(r.scores)
        rows.append(row)
    if not rows:
        raise FileNotFoundError(f"no completed trials in {path}")
    return pd.DataFrame(rows)


def metric_columns(frame: pd.DataFrame) -> list[str]:
    return [c for c in frame.columns if c not in ("method", "seed", AVERAGE)] + [AVERAGE]


def method_order(frame: pd.DataFrame) -> list[str]:
    return list(dict.fromkeys(frame["method"]))


def medians(frame: pd.DataFrame) -> pd.DataFrame:
    """Median per method and metric, methods in file order."""
    table = frame.groupby("method", sort=False)[metric_columns(frame)].median()
    return table.loc[method_order(frame)]


def spread(frame: pd.DataFrame) -> pd.DataFrame:
    """Median, mean and standard deviation of every method/metric over its trials."""
    long = frame.melt(id_vars=["method", "seed"], var_name="metric", value_name="score").dropna()
    table = long.groupby(["method", "metric"], sort=False)["score"].agg(["count", "median", "mean", "std"])
    return table.reset_index()


def best_dev(frame: pd.DataFrame) -> pd.DataFrame:
    """The single trial with the highest average dev score per method (lowest seed on ties)."""
    ranked = frame.sort_values([AVERAGE, "seed"], ascending=[False, True], kind="mergesort")
    best = ranked.groupby("method", sort=False).head(1).set_index("method")
    return best.loc[method_order(frame)].reset_index()


@dataclass
class SignificanceReport:
    table: pd.DataFrame
    wide: pd.DataFrame
    test: str
    alpha: float

    def to_text(self) -> str:
        header = (
            f"{self.test} tests, Holm-corrected per comparison at alpha={self.alpha} "
            f"(* <{self.alpha}, ** <.01, *** <.001)"
        )
        return "\n".join([header, "", self.wide.to_string(), "", self.table.to_string(index=False)])


def _scores(frame: pd.DataFrame, method: str, metric: str) -> np.ndarray:
    return frame.loc[frame["method"] == method, metric].dropna().to_numpy(dtype=np.float64)


def significance_report(
    results_path: str | Path,
    comparisons: Sequence[tuple[str, str]],
    alpha: float = 0.05,
    test: TestName = "bootstrap",
    resamples: int = 10000,
    seed: int = 0,
) -> SignificanceReport:
    """Test every ``(method, baseline)`` pair on each task and on the average.

    The tasks plus the average of one comparison form one Holm family.
    Bootstrap p-values are one-sided (method beats baseline); Mann-Whitney
    p-values are two-sided, so ``direction`` records which side the medians
    fall on and only improvements get stars.
    """
    frame = results_frame(results_path)
    known = set(frame["method"])
    for a, b in comparisons:
        for name in (a, b):
            if name not in known:
                raise UnknownMethodError(f"method {name!r} has no completed trials in {results_path}")

    rows = []
    for a, b in comparisons:
        family = []
        for metric in metric_columns(frame):
            sa, sb = _scores(frame, a, metric), _scores(frame, b, metric)
            if len(sa) == 0 or len(sb) == 0:
                continue
            if min(len(sa), len(sb)) < MIN_TRIALS:
                raise InsufficientTrialsError(f"{a} vs {b} on {metric}: need >= {MIN_TRIALS} trials per method")
            if test == "bootstrap":
                p = bootstrap_test(sa, sb, resamples, derive_seed(seed, a, b, metric))
            else:
                p = mann_whitney_u(sa, sb).pvalue
            shift = median_of_trials(sa) - median_of_trials(sb)
            family.append({
                "method": a,
                "baseline": b,
                "metric": metric,
                "n_method": len(sa),
                "n_baseline": len(sb),
                "median_method": round(median_of_trials(sa), 1),
                "median_baseline": round(median_of_trials(sb), 1),
                "direction": "better" if shift > 0 else "worse" if shift < 0 else "tie",
                "p": p,
            })
        holm = holm_bonferroni([r["p"] for r in family], alpha)
        for row, p_holm, reject in zip(family, holm.adjusted, holm.reject):
            row["p_holm"] = float(p_holm)
            row["stars"] = stars(float(p_holm), alpha) if reject and row["direction"] == "better" else ""
        rows += family

    table = pd.DataFrame(
        rows,
        columns=["method", "baseline", "metric", "n_method", "n_baseline", "median_method", "median_baseline",
                 "direction", "p", "p_holm", "stars"],
    )
    return SignificanceReport(table, _wide(frame, table), test, alpha)


def _wide(frame: pd.DataFrame, table: pd.DataFrame) -> pd.DataFrame:
    """Medians with one decimal; stars mark the first comparison a method is tested in."""
    meds = medians(frame)
    wide = meds.map(lambda v: "" if pd.isna(v) else f"{v:.1f}")
    seen = set()
    for row in table.itertuples(index=False):
        key = (row.method, row.metric)
        if key in seen:
            continue
        seen.add(key)
        if row.metric in wide.columns:
            wide.loc[row.method, row.metric] += row.stars
    return wide


def plot_averages(frame: pd.DataFrame, path: str | Path) -> Path:
    """Box plot of per-trial average dev scores per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = method_order(frame)
    data = [frame.loc[frame["method"] == n, AVERAGE].dropna().to_numpy() for n in names]
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(names)), 4))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(names) + 1), names, rotation=30, ha="right")
    ax.set_ylabel("average dev score")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_tables(out_dir: str | Path, **tables: pd.DataFrame) -> list[Path]:
    """Write each table as ``<name>.tsv`` and an aligned ``<name>.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in tables.items():
        tsv, txt = out_dir / f"{name}.tsv", out_dir / f"{name}.txt"
        table.to_csv(tsv, sep="\t", index=not isinstance(table.index, pd.RangeIndex))
        txt.write_text(table.to_string(index=not isinstance(table.index, pd.RangeIndex)) + "\n", encoding="utf-8")
        written += [tsv, txt]
    return written


def summary_report(results_path: str | Path, out_dir: str | Path, plot: bool = False) -> dict[str, pd.DataFrame]:
    """Medians, per-trial spread and the best-dev view, written next to each other."""
    frame = results_frame(results_path)
    tables = {"medians": medians(frame).round(1), "spread": spread(frame).round(2), "best_dev": best_dev(frame)}
    write_tables(out_dir, **tables)
    if plot:
        plot_averages(frame, Path(out_dir) / "averages.png")
    return tables


def default_comparisons(methods: Sequence[str], baseline: Optional[str] = None) -> list[tuple[str, str]]:
    """Every method against ``baseline`` (``Single`` when present, else the first method)."""
    if not methods:
        return []
    if baseline is None:
        baseline = "Single" if "Single" in methods else methods[0]
    return [(m, baseline) for m in methods if m != baseline]


def parse_comparison(text: str) -> tuple[str, str]:
    """``"A:B"`` -> ``("A", "B")``; method names may contain ``->`` but not ``:``."""
    a, sep, b = text.partition(":")
    if not sep or not a or not b:
        raise ValueError(f"comparison must look like METHOD:BASELINE, got {text!r}")
    return a.strip(), b.strip()
