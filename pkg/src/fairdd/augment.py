"""Cross-domain mixup: each current sample is blended with a partner drawn from current + memory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MixupConfig:
    theta: float = 0.8
    enabled: bool = True

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError(f"mixup theta must be positive, got {self.theta}")


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def mix(
    x_cur: np.ndarray,
    y_cur,
    x_mem: np.ndarray | None,
    y_mem,
    num_classes: int,
    rng: np.random.Generator,
    theta: float = 0.8,
    lam: np.ndarray | float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return mixed features and soft labels, one row per current sample.

    ``lam`` overrides the Beta(theta, theta) draws (scalar or one per sample).
    Partners are drawn uniformly from the union of current and memory samples.
    """
    x_cur = np.asarray(x_cur, dtype=np.float64)
    n = x_cur.shape[0]
    if n == 0:
        raise ValueError("mixup needs at least one current sample")
    y_cur_oh = one_hot(y_cur, num_classes)
    if x_mem is not None and len(x_mem):
        pool_x = np.concatenate([x_cur, np.asarray(x_mem, dtype=np.float64)])
        pool_y = np.concatenate([y_cur_oh, one_hot(y_mem, num_classes)])
    else:
        pool_x, pool_y = x_cur, y_cur_oh

    if lam is None:
        lam = rng.beta(theta, theta, size=n)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    j = rng.integers(0, pool_x.shape[0], size=n)

    l = lam[:, None]
    x_mix = l * x_cur + (1.0 - l) * pool_x[j]
    y_mix = l * y_cur_oh + (1.0 - l) * pool_y[j]
    return x_mix, y_mix
