"""Motion prediction: per-object kinematic state, Gaussian prior, logit blending.

Each tracked object keeps a normalized position, bounding-box extent and
per-frame velocity. Observations are smoothed with an exponential moving
average; when no usable mask is observed the position is advanced by the
last velocity. The state is turned into a separable Gaussian map whose
log is added, scaled by ``beta``, to that object's logit channel.

Only ``beta`` and ``sigma_scale`` are learnable (see :func:`adapt_step`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DataError, NumericalError
from .geometry import (
    FrameSize,
    NormalizedExtent,
    NormalizedPoint,
    as_mask,
    centroid,
    extent,
    mask_area,
    pixel_centers,
)
from .losses import softmax_cross_entropy
from .optim import AdamW, clip_global_norm

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3


class Velocity(NamedTuple):
    vx: float
    vy: float


@dataclass(frozen=True)
class MpmConfig:
    alpha: float = 0.9
    beta: float = 0.5
    sigma_scale: tuple[float, float] = (0.5, 0.5)
    epsilon: float = 1e-6
    min_valid_area: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if len(self.sigma_scale) != 2 or min(self.sigma_scale) <= 0:
            raise ValueError(f"sigma_scale must be two positive numbers, got {self.sigma_scale}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.min_valid_area < 1:
            raise ValueError("min_valid_area must be at least 1")
        object.__setattr__(self, "sigma_scale", (float(self.sigma_scale[0]), float(self.sigma_scale[1])))


@dataclass(frozen=True)
class KinematicState:
    position: NormalizedPoint
    extent: NormalizedExtent
    velocity: Velocity
    size: FrameSize
    frames_since_observation: int = 0


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, v))


def init_state(first_mask, size: Optional[FrameSize] = None) -> KinematicState:
    """State from the annotated first-frame mask, with zero velocity."""
    m = as_mask(first_mask, size)
    size = size or FrameSize.of(m)
    pos = centroid(m)
    if pos is None:
        raise DataError("initial annotation mask is empty")
    return KinematicState(pos, extent(m), Velocity(0.0, 0.0), size, 0)


def observe(state: KinematicState, mask, config: MpmConfig) -> KinematicState:
    """Advance ``state`` by one frame given the predicted mask (or ``None``).

    A mask is usable when its area reaches ``config.min_valid_area``;
    otherwise the object is treated as unobserved and extrapolated.
    """
    if mask is not None:
        mask = as_mask(mask)
        if mask.shape != state.size.shape:
            raise DataError(
                f"mask shape {mask.shape} does not match tracked frame "
                f"{state.size.height}x{state.size.width}"
            )
    if mask is None or mask_area(mask) < config.min_valid_area:
        return extrapolate(state)

    a = config.alpha
    obs_pos = centroid(mask)
    obs_ext = extent(mask)
    prev = state.position
    pos = NormalizedPoint(a * prev.x + (1 - a) * obs_pos.x, a * prev.y + (1 - a) * obs_pos.y)
    ext = NormalizedExtent(
        a * state.extent.w + (1 - a) * obs_ext.w,
        a * state.extent.h + (1 - a) * obs_ext.h,
    )
    vel = Velocity(pos.x - prev.x, pos.y - prev.y)
    return KinematicState(pos, ext, vel, state.size, 0)


def extrapolate(state: KinematicState) -> KinematicState:
    """One unobserved frame: move by the last velocity, keep extent and velocity."""
    return replace(
        state,
        position=predicted_position(state),
        frames_since_observation=state.frames_since_observation + 1,
    )


def predicted_position(state: KinematicState) -> NormalizedPoint:
    """Constant-velocity guess for the next frame, clamped to the frame."""
    p, v = state.position, state.velocity
    return NormalizedPoint(_clamp01(p.x + v.vx), _clamp01(p.y + v.vy))


def predict(state: KinematicState) -> KinematicState:
    """State whose position is the constant-velocity guess for the next frame."""
    return replace(state, position=predicted_position(state))


def _sigmas(ext: NormalizedExtent, sigma_scale) -> tuple[float, float, bool, bool]:
    sx, sy = sigma_scale[0] * ext.w, sigma_scale[1] * ext.h
    return max(sx, SIGMA_FLOOR), max(sy, SIGMA_FLOOR), sx > SIGMA_FLOOR, sy > SIGMA_FLOOR


def gaussian_prior(state: KinematicState, size: FrameSize, config: MpmConfig) -> np.ndarray:
    """``(H, W)`` Gaussian map centered at ``state.position``.

    Standard deviations are ``sigma_scale * extent`` (floored at
    ``SIGMA_FLOOR``), evaluated at normalized pixel centers. Values lie in
    ``(0, 1]`` up to float underflow far from the center.
    """
    cx, cy = pixel_centers(size)
    sig_x, sig_y, _, _ = _sigmas(state.extent, config.sigma_scale)
    gx = np.exp(-((cx - state.position.x) ** 2) / (2.0 * sig_x**2))
    gy = np.exp(-((cy - state.position.y) ** 2) / (2.0 * sig_y**2))
    return gy[:, None] * gx[None, :]


def _check_logits(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[0] < 2:
        raise DataError(f"logits must be (C>=2, H, W), got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise DataError("logits contain non-finite values")
    return raw


def blend_logits(raw, priors: Sequence[Optional[np.ndarray]], config: MpmConfig) -> np.ndarray:
    """Add ``beta * log(G + eps)`` to each foreground channel.

    ``priors[k]`` belongs to channel ``k + 1``; a ``None`` entry leaves that
    channel untouched. The background channel is never modified.
    """
    raw = _check_logits(raw)
    if len(priors) != raw.shape[0] - 1:
        raise DataError(f"expected {raw.shape[0] - 1} priors, got {len(priors)}")
    out = raw.copy()
    if config.beta == 0:
        return out
    for k, g in enumerate(priors):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != raw.shape[1:]:
            raise DataError(f"prior {k} shape {g.shape} does not match logits {raw.shape[1:]}")
        out[k + 1] += config.beta * np.log(g + config.epsilon)
    return out


def mpm_loss_and_grad(raw, states: Sequence[Optional[KinematicState]], labels, beta: float,
                      sigma_scale, epsilon: float = 1e-6) -> tuple[float, np.ndarray]:
    """Cross-entropy of the blended logits and its gradient w.r.t. ``(beta, s_x, s_y)``."""
    raw = _check_logits(raw)
    size = FrameSize.of(raw)
    cx, cy = pixel_centers(size)
    blended = raw.copy()
    terms = []
    for k, st in enumerate(states):
        if st is None:
            terms.append(None)
            continue
        sig_x, sig_y, live_x, live_y = _sigmas(st.extent, sigma_scale)
        dx2 = (cx - st.position.x) ** 2
        dy2 = (cy - st.position.y) ** 2
        g = np.exp(-dy2 / (2 * sig_y**2))[:, None] * np.exp(-dx2 / (2 * sig_x**2))[None, :]
        logg = np.log(g + epsilon)
        blended[k + 1] += beta * logg
        terms.append((g, logg, dx2, dy2, sig_x, sig_y, live_x, live_y, st.extent))

    loss, dz = softmax_cross_entropy(blended, labels)
    grad = np.zeros(3)
    for k, t in enumerate(terms):
        if t is None:
            continue
        g, logg, dx2, dy2, sig_x, sig_y, live_x, live_y, ext = t
        dzk = dz[k + 1]
        grad[0] += np.sum(dzk * logg)
        # dZ/dsigma = beta * G / (G + eps) * d2 / sigma^3
        ratio = beta * g / (g + epsilon)
        if live_x:
            grad[1] += np.sum(dzk * ratio * dx2[None, :]) / sig_x**3 * ext.w
        if live_y:
            grad[2] += np.sum(dzk * ratio * dy2[:, None]) / sig_y**3 * ext.h
    return loss, grad


def make_mpm_optimizer(lr: float = 1e-4, weight_decay: float = 1e-6) -> AdamW:
    return AdamW(lr=lr, weight_decay=weight_decay)


def adapt_step(config: MpmConfig, raw, states, labels, optimizer: AdamW,
               max_norm: float = 1.0) -> tuple[MpmConfig, float]:
    """One AdamW update of ``beta`` and ``sigma_scale`` on a single annotated frame.

    Segmentation logits are frozen input. Returns the updated config and the
    loss evaluated before the update. Raises :class:`NumericalError` (config
    unchanged) if the loss or gradient is non-finite. After the update
    ``beta`` is projected to ``>= 0`` and each scale to ``>= SIGMA_FLOOR``.
    """
    params = np.array([config.beta, *config.sigma_scale])
    loss, grad = mpm_loss_and_grad(raw, states, labels, config.beta, config.sigma_scale, config.epsilon)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalError(f"non-finite MPM loss {loss}")
    new = optimizer.step(params, clip_global_norm(grad, max_norm))
    new[0] = max(new[0], 0.0)
    new[1:] = np.maximum(new[1:], SIGMA_FLOOR)
    return replace(config, beta=float(new[0]), sigma_scale=(float(new[1]), float(new[2]))), loss


class MotionPredictor:
    """Tracks every object of one video and blends its prior into raw logits.

    Object ``l`` (1-based) owns logit channel ``l``. Call :meth:`start` on the
    annotated first frame, then per frame :meth:`blend` followed by
    :meth:`update` with the resulting label grid.
    """

    def __init__(self, config: MpmConfig, num_objects: int):
        self.config = config
        self.num_objects = num_objects
        self.states: list[Optional[KinematicState]] = [None] * num_objects

    def start(self, labels):
        labels = np.asarray(labels)
        size = FrameSize.of(labels)
        self.states = []
        for obj in range(1, self.num_objects + 1):
            m = labels == obj
            self.states.append(init_state(m, size) if m.any() else None)

    def predicted_states(self) -> list[Optional[KinematicState]]:
        return [None if s is None else predict(s) for s in self.states]

    def priors(self) -> list[Optional[np.ndarray]]:
        return [
            None if s is None else gaussian_prior(s, s.size, self.config)
            for s in self.predicted_states()
        ]

    def blend(self, raw) -> np.ndarray:
        return blend_logits(raw, self.priors(), self.config)

    def update(self, labels):
        labels = np.asarray(labels)
        for k, st in enumerate(self.states):
            m = labels == (k + 1)
            if st is None:
                # objects absent at start are picked up on first sighting
                if m.any():
                    self.states[k] = init_state(m)
                continue
            self.states[k] = observe(st, m, self.config)

    def adapt(self, raw, labels, optimizer: AdamW, steps: int = 5, max_norm: float = 1.0) -> list[float]:
        """``steps`` updates of the learnable scalars on one annotated frame."""
        states = self.predicted_states()
        losses = []
        for _ in range(steps):
            self.config, loss = adapt_step(self.config, raw, states, labels, optimizer, max_norm)
            losses.append(loss)
        return losses
