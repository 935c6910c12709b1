"""Experiment orchestration: training recipes, method grids, run matrices and reports."""

from .matrix import MatrixRun, read_results, run_matrix
from .methods import REGISTRY, STUDIES, TeacherStore, get_method, run_method, study_methods
from .report import significance_report, summary_report
from .training import TrainResult, finetune_single, train_multi, train_single, train_teacher

__all__ = [
    "MatrixRun",
    "REGISTRY",
    "STUDIES",
    "TeacherStore",
    "TrainResult",
    "finetune_single",
    "get_method",
    "read_results",
    "run_matrix",
    "run_method",
    "significance_report",
    "study_methods",
    "summary_report",
    "train_multi",
    "train_single",
    "train_teacher",
]
