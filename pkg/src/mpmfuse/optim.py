"""Small numerical-optimization toolkit for scalar parameter vectors.

AdamW with decoupled weight decay, a linear-warmup cosine schedule,
global-norm clipping, the clamped softplus temperature transform, and a
central-difference gradient checker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import NumericalError

TEMP_OFFSET = 1e-3
TEMP_MIN = 0.8
TEMP_MAX = 2.0


@dataclass
class AdamW:
    """AdamW over a flat float64 parameter vector.

    The update is

        theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * theta

    with the decay term using the pre-update parameters.
    """

    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("AdamW hyperparameters must be nonnegative (eps positive)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("AdamW betas must lie in [0, 1)")

    def reset(self):
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads, lr: Optional[float] = None) -> np.ndarray:
        """Return updated parameters; moments are updated in place."""
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if params.shape != grads.shape:
            raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
        if not np.all(np.isfinite(grads)):
            raise NumericalError("non-finite gradient passed to AdamW")
        lr = self.lr if lr is None else lr
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)

        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)

        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps) - lr * self.weight_decay * params


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    total_steps: int
    warmup_steps: int = 200

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValueError("base_lr must be nonnegative")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"need 0 <= warmup_steps <= total_steps, got {self.warmup_steps}, {self.total_steps}"
            )

    def __call__(self, step: int) -> float:
        return lr_at(self, step)


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear warmup from 0, then cosine decay to 0 at ``total_steps``."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    base, warm, total = schedule.base_lr, schedule.warmup_steps, schedule.total_steps
    if step >= total:
        return 0.0
    if step < warm:
        return base * step / warm
    progress = (step - warm) / (total - warm)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(grads, dtype=np.float64)))))


def clip_global_norm(grads, max_norm: float = 1.0) -> np.ndarray:
    grads = np.asarray(grads, dtype=np.float64)
    norm = global_norm(grads)
    if norm > max_norm:
        clipped = grads * (max_norm / norm)
        # rounding can leave the rescaled norm one ulp above the bound
        while global_norm(clipped) > max_norm:
            clipped = clipped * (1.0 - 2.0**-52)
        return clipped
    return grads.copy()


def softplus(x):
    """Overflow-safe ``log(1 + exp(x))``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def sigmoid(x):
    out = expit(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


def softplus_temperature(raw, lo: float = TEMP_MIN, hi: float = TEMP_MAX, offset: float = TEMP_OFFSET):
    """Effective temperature ``clamp(softplus(raw) + offset, lo, hi)``."""
    t = np.clip(np.asarray(softplus(raw)) + offset, lo, hi)
    return t if t.ndim else float(t)


def softplus_temperature_grad(raw, lo: float = TEMP_MIN, hi: float = TEMP_MAX, offset: float = TEMP_OFFSET):
    """d T / d raw; zero wherever the clamp is active (no straight-through)."""
    pre = np.asarray(softplus(raw)) + offset
    g = np.where((pre > lo) & (pre < hi), sigmoid(raw), 0.0)
    return g if g.ndim else float(g)


def check_gradient(f: Callable[[np.ndarray], float], point, analytic_grad, h: float = 1e-5) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``f``.

    The per-coordinate error is ``|fd - an| / max(1, |fd|, |an|)``.
    """
    x = np.array(point, dtype=np.float64, ndmin=1)
    an = np.array(analytic_grad, dtype=np.float64, ndmin=1)
    if an.shape != x.shape:
        raise ValueError(f"analytic gradient shape {an.shape} != point shape {x.shape}")
    worst = 0.0
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        fp, fm = float(f(xp)), float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericalError(f"non-finite function value while differencing coordinate {k}")
        fd = (fp - fm) / (2.0 * h)
        err = abs(fd - an[k]) / max(1.0, abs(fd), abs(an[k]))
        worst = max(worst, err)
    return worst
