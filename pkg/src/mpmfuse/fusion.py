"""Four-branch scalar logit fusion and its training loop.

Each branch ``b`` contributes ``W_b * Z_b / T_b + bias_b`` where ``W_b``
applies ``w_bg`` to channel 0 and ``w_fg`` to every object channel, ``T_b``
is the clamped softplus temperature and ``bias_b`` is added to every
element. The fused logits are the sum over branches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, NumericalError
from .losses import softmax_cross_entropy
from .optim import (
    TEMP_MAX,
    TEMP_MIN,
    TEMP_OFFSET,
    AdamW,
    LrSchedule,
    clip_global_norm,
    global_norm,
    lr_at,
    softplus_temperature,
    softplus_temperature_grad,
)

logger = logging.getLogger(__name__)

BRANCHES = ("C", "S", "M-", "M+")
PARAM_FIELDS = ("w_fg", "w_bg", "bias", "temp_raw")
TEMP_INIT = 1.2


class BranchParams(NamedTuple):
    w_fg: float = 1.0
    w_bg: float = 1.0
    bias: float = 0.0
    temp_raw: float = TEMP_INIT


@dataclass(frozen=True)
class TemperatureClamp:
    lo: float = TEMP_MIN
    hi: float = TEMP_MAX
    offset: float = TEMP_OFFSET

    def __call__(self, raw):
        return softplus_temperature(raw, self.lo, self.hi, self.offset)

    def grad(self, raw):
        return softplus_temperature_grad(raw, self.lo, self.hi, self.offset)


@dataclass(frozen=True)
class FusionParams:
    branches: tuple[BranchParams, ...] = field(default_factory=lambda: (BranchParams(),) * 4)

    def __post_init__(self):
        if len(self.branches) != len(BRANCHES):
            raise ValueError(f"need exactly {len(BRANCHES)} branches, got {len(self.branches)}")
        object.__setattr__(self, "branches", tuple(BranchParams(*map(float, b)) for b in self.branches))

    @classmethod
    def initial(cls, temp_raw: float = TEMP_INIT) -> "FusionParams":
        return cls((BranchParams(1.0, 1.0, 0.0, temp_raw),) * 4)

    def to_vector(self) -> np.ndarray:
        return np.array([v for b in self.branches for v in b], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "FusionParams":
        vec = np.asarray(vec, dtype=np.float64).reshape(len(BRANCHES), len(PARAM_FIELDS))
        return cls(tuple(BranchParams(*map(float, row)) for row in vec))

    def to_dict(self) -> dict[str, float]:
        """Flat ``{"<branch>.<field>": value}`` mapping of all 16 scalars."""
        return {f"{name}.{f}": getattr(b, f) for name, b in zip(BRANCHES, self.branches) for f in PARAM_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionParams":
        expected = {f"{name}.{f}" for name in BRANCHES for f in PARAM_FIELDS}
        missing, extra = expected - set(d), set(d) - expected
        if missing or extra:
            raise DataError(f"fusion params keys mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        return cls(tuple(BranchParams(*(float(d[f"{name}.{f}"]) for f in PARAM_FIELDS)) for name in BRANCHES))


def check_stack(stack) -> np.ndarray:
    """Validate a ``(4, C, H, W)`` branch stack (or a sequence of four maps)."""
    try:
        arr = np.asarray(stack, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"branch logits have mismatched shapes: {exc}") from None
    if arr.ndim != 4 or arr.shape[0] != len(BRANCHES) or arr.shape[1] < 2:
        raise DataError(f"logit stack must be (4, C>=2, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("logit stack contains non-finite values")
    return arr


def synthesize_background(fg_logits) -> np.ndarray:
    """Prepend a background channel ``-max(fg)`` to an ``(N, H, W)`` foreground-only map."""
    fg = np.asarray(fg_logits, dtype=np.float64)
    return np.concatenate([-fg.max(axis=0, keepdims=True), fg], axis=0)


def _channel_weights(b: BranchParams, n_channels: int) -> np.ndarray:
    w = np.full(n_channels, b.w_fg)
    w[0] = b.w_bg
    return w[:, None, None]


def fuse(stack, params: FusionParams, clamp: TemperatureClamp = TemperatureClamp()) -> np.ndarray:
    arr = check_stack(stack)
    out = np.zeros(arr.shape[1:])
    for z, b in zip(arr, params.branches):
        out += _channel_weights(b, z.shape[0]) * (z / clamp(b.temp_raw)) + b.bias
    return out


def fusion_loss_and_grad(stack, labels, params: FusionParams,
                         clamp: TemperatureClamp = TemperatureClamp()) -> tuple[float, np.ndarray]:
    """Cross-entropy of :func:`fuse` output and its gradient over the 16 scalars."""
    arr = check_stack(stack)
    loss, dF = softmax_cross_entropy(fuse(arr, params, clamp), labels)
    grad = np.zeros((len(BRANCHES), len(PARAM_FIELDS)))
    for k, (z, b) in enumerate(zip(arr, params.branches)):
        t = clamp(b.temp_raw)
        dz = dF * z
        fg_term = np.sum(dz[1:])
        bg_term = np.sum(dz[0])
        grad[k, 0] = fg_term / t
        grad[k, 1] = bg_term / t
        grad[k, 2] = np.sum(dF)
        dT = -(b.w_fg * fg_term + b.w_bg * bg_term) / t**2
        grad[k, 3] = dT * clamp.grad(b.temp_raw)
    return loss, grad.ravel()


@dataclass
class TrainResult:
    params: FusionParams
    losses: list[float]
    clipped_grad_norms: list[float]
    grad_norms: list[float]
    learning_rates: list[float]
    temperatures: list[tuple[float, ...]]
    initial_loss: float
    final_loss: float


def dataset_loss(dataset, params: FusionParams, clamp: TemperatureClamp = TemperatureClamp()) -> float:
    return float(np.mean([fusion_loss_and_grad(s, y, params, clamp)[0] for s, y in dataset]))


def train_fusion(dataset: Sequence, params: FusionParams, schedule: LrSchedule, optimizer: AdamW,
                 max_norm: float = 1.0, clamp: TemperatureClamp = TemperatureClamp()) -> TrainResult:
    """Run ``schedule.total_steps`` AdamW steps cycling through ``dataset``.

    ``dataset`` is a sequence of ``(stack, labels)`` pairs. Step ``s`` uses
    sample ``s % len(dataset)`` with learning rate ``lr_at(schedule, s)``.
    """
    if len(dataset) == 0:
        raise DataError("fusion training needs at least one sample")
    dataset = [(check_stack(s), np.asarray(y)) for s, y in dataset]
    vec = params.to_vector()
    res = TrainResult(params, [], [], [], [], [], dataset_loss(dataset, params, clamp), float("nan"))
    for step in range(schedule.total_steps):
        idx = step % len(dataset)
        stack, labels = dataset[idx]
        cur = FusionParams.from_vector(vec)
        loss, grad = fusion_loss_and_grad(stack, labels, cur, clamp)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalError(f"non-finite fusion loss at step {step} (sample {idx})")
        clipped = clip_global_norm(grad, max_norm)
        lr = lr_at(schedule, step)
        vec = optimizer.step(vec, clipped, lr=lr)

        res.losses.append(loss)
        res.grad_norms.append(global_norm(grad))
        res.clipped_grad_norms.append(global_norm(clipped))
        res.learning_rates.append(lr)
        res.temperatures.append(tuple(clamp(b.temp_raw) for b in cur.branches))
        if step % 500 == 0:
            logger.debug("fusion step %d loss %.6f lr %.3g", step, loss, lr)
    res.params = FusionParams.from_vector(vec)
    res.final_loss = dataset_loss(dataset, res.params, clamp)
    return res


def with_branch(params: FusionParams, index: int, **changes) -> FusionParams:
    branches = list(params.branches)
    branches[index] = branches[index]._replace(**changes)
    return replace(params, branches=tuple(branches))
