"""Adam with layerwise learning-rate decay."""

import logging
from typing import Container, Mapping, Optional

import numpy as np

from .errors import ShapeError
from .models import OptimConfig

logger = logging.getLogger(__name__)


def layer_lr(base_lr: float, alpha: float, depth: int) -> float:
    """``base_lr * alpha**depth``; depth 0 is the layer closest to the output."""
    if base_lr <= 0:
        raise ValueError(f"base_lr must be positive, got {base_lr}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    return base_lr * alpha**depth


class Adam:
    """Bias-corrected Adam whose step size for a parameter depends on its depth.

    No weight decay, warmup or clipping.
    """

    def __init__(self, config: OptimConfig, depths: Mapping[str, int]):
        self.config = config
        self.depths = dict(depths)
        self.lrs = {name: layer_lr(config.base_lr, config.layer_decay, d) for name, d in self.depths.items()}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(
        self,
        params: Mapping[str, np.ndarray],
        grads: Mapping[str, np.ndarray],
        step_index: int,
        frozen: Optional[Container[str]] = None,
    ) -> dict[str, np.ndarray]:
        """Return updated parameters; inputs are left untouched.

        ``frozen`` names keep their value and accumulate no moments.
        """
        if step_index < 1:
            raise ValueError(f"step_index starts at 1, got {step_index}")
        cfg = self.config
        frozen = frozen or ()
        bias1 = 1.0 - cfg.beta1**step_index
        bias2 = 1.0 - cfg.beta2**step_index
        updated = {}
        for name, value in params.items():
            if name in frozen:
                updated[name] = value
                continue
            grad = grads.get(name)
            if grad is None:
                raise ShapeError(f"no gradient for parameter {name}")
            if grad.shape != value.shape:
                raise ShapeError(f"{name}: gradient shape {grad.shape} != parameter shape {value.shape}")
            m = cfg.beta1 * self.m.get(name, np.zeros_like(value)) + (1.0 - cfg.beta1) * grad
            v = cfg.beta2 * self.v.get(name, np.zeros_like(value)) + (1.0 - cfg.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            m_hat = m / bias1
            v_hat = v / bias2
            updated[name] = value - self.lrs[name] * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return updated
