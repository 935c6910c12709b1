"""Environment-driven matrix entrypoint (no CLI flags).

Runs the ``STUDY`` grid over ``NUM_SEEDS`` seeds into ``OUTPUT_DIR``, resuming
any results already there, then writes the summary tables.
"""

import logging
import sys

from .config import settings
from .harness.matrix import load_suite, run_matrix
from .harness.methods import study_methods
from .harness.report import summary_report
from .models import MatrixSpec

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)


def run_from_env() -> int:
    suite = load_suite(settings)
    related = {t: s.related_to for t, s in suite.specs.items()}
    spec = MatrixSpec(
        methods=study_methods(settings.STUDY, suite.task_ids, related),
        seeds=list(range(settings.SEED, settings.SEED + settings.NUM_SEEDS)),
        teacher_provenance=settings.TEACHER_PROVENANCE,
    )
    run = run_matrix(spec, settings, settings.get_output_dir(), parallel=settings.PARALLEL, resume=True)
    summary_report(run.path, settings.get_output_dir())
    return 1 if run.failed else 0


if __name__ == "__main__":
    sys.exit(run_from_env())
