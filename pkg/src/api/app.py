"""FastAPI backend for run-matrix results."""

import statistics
from pathlib import Path
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from ..config import settings
from ..harness.matrix import RESULTS_FILE, read_results
from ..models import TrialResult

# Constants - use settings for output directory
RESULTS_DIR = Path(settings.OUTPUT_DIR)
RESULTS_PATH = RESULTS_DIR / RESULTS_FILE

app = FastAPI(
    title="Multi-task Distillation Results API",
    description="Read-only access to run-matrix trials and per-method medians",
    version="1.0.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class MethodSummary(BaseModel):
    method: str
    trials: int
    failed: int
    medians: Dict[str, float]
    median_average: Optional[float] = None


def load_trials() -> List[TrialResult]:
    """Load every row of the results file."""
    if not RESULTS_PATH.exists():
        raise HTTPException(
            status_code=404,
            detail=f"Results file not found at {RESULTS_PATH}. Please run the matrix first.",
        )
    return read_results(RESULTS_PATH)


def summarize(trials: List[TrialResult]) -> List[MethodSummary]:
    summaries = []
    for method in dict.fromkeys(t.method for t in trials):
        rows = [t for t in trials if t.method == method]
        ok = [t for t in rows if t.status == "ok"]
        tasks = dict.fromkeys(task for t in ok for task in t.scores)
        medians = {task: statistics.median(t.scores[task] for t in ok if task in t.scores) for task in tasks}
        averages = [t.average for t in ok if t.average is not None]
        summaries.append(
            MethodSummary(
                method=method,
                trials=len(rows),
                failed=len(rows) - len(ok),
                medians=medians,
                median_average=statistics.median(averages) if averages else None,
            )
        )
    return summaries


@app.get("/api/summary", response_model=List[MethodSummary])
def get_summary() -> List[MethodSummary]:
    """Per-method medians over completed trials."""
    return summarize(load_trials())


@app.get("/api/trials", response_model=List[TrialResult])
def get_trials(method: Optional[str] = None, status: Optional[str] = None) -> List[TrialResult]:
    """
    Get all trials with optional filtering.

    Query parameters:
    - method: Only trials of this method
    - status: ``ok`` or ``failed``
    """
    trials = load_trials()
    if method is not None:
        trials = [t for t in trials if t.method == method]
    if status is not None:
        trials = [t for t in trials if t.status == status]
    return trials


@app.get("/api/trials/{method:path}", response_model=List[TrialResult])
def get_method_trials(method: str) -> List[TrialResult]:
    """Trials of one method; method names may contain ``/``."""
    trials = [t for t in load_trials() if t.method == method]
    if not trials:
        raise HTTPException(status_code=404, detail=f"Method '{method}' not found")
    return trials


@app.get("/")
def root() -> Dict[str, Any]:
    """Root endpoint with API information."""
    return {
        "message": "Multi-task Distillation Results API",
        "version": "1.0.0",
        "results": str(RESULTS_PATH),
        "endpoints": {
            "summary": "/api/summary",
            "trials": "/api/trials",
            "method_trials": "/api/trials/{method}",
        },
    }
