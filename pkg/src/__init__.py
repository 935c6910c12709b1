"""Multi-task distillation with teacher annealing at desk scale: models, training, statistics and experiment harness."""

__version__ = "0.1.0"
