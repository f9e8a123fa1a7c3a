"""Deterministic multi-object scenario simulator.

Objects follow piecewise-linear waypoint scripts, disappear during scripted
occlusion intervals, and are rasterized into label grids. Synthetic logit
"branches" are derived from the ground truth with a fixed margin plus
seeded corruption (Gaussian noise, per-object dropout, look-alike
distractors). Randomness comes from numpy's PCG64 generator seeded through
``SeedSequence([seed, branch_index, frame])``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .fusion import BRANCHES
from .geometry import FrameSize
from .metrics import MetricReport, evaluate_sequence
from .mpm import KinematicState, MotionPredictor, MpmConfig, make_mpm_optimizer

logger = logging.getLogger(__name__)

MARGIN = 4.0
SHAPES = ("rectangle", "ellipse")


@dataclass(frozen=True)
class ObjectScript:
    id: int
    size: tuple[int, int]  # (width, height) in pixels
    waypoints: tuple[tuple[int, tuple[float, float]], ...]
    shape: str = "rectangle"
    occlusions: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.id < 1:
            raise DataError(f"object id must be positive, got {self.id}")
        if self.shape not in SHAPES:
            raise DataError(f"object {self.id}: unknown shape {self.shape!r}")
        if len(self.size) != 2 or min(self.size) <= 0:
            raise DataError(f"object {self.id}: size must be two positive pixel counts")
        if not self.waypoints:
            raise DataError(f"object {self.id}: needs at least one waypoint")
        wp = tuple((int(f), (float(c[0]), float(c[1]))) for f, c in self.waypoints)
        frames = [f for f, _ in wp]
        if frames != sorted(frames) or len(set(frames)) != len(frames):
            raise DataError(f"object {self.id}: waypoint frames must be strictly increasing")
        if any(not (0 <= x <= 1 and 0 <= y <= 1) for _, (x, y) in wp):
            raise DataError(f"object {self.id}: waypoint centers must lie in [0, 1]^2")
        occ = tuple(sorted((int(a), int(b)) for a, b in self.occlusions))
        for a, b in occ:
            if b < a:
                raise DataError(f"object {self.id}: occlusion [{a}, {b}) is reversed")
        for (_, b0), (a1, _) in zip(occ, occ[1:]):
            if a1 < b0:
                raise DataError(f"object {self.id}: occlusion intervals overlap")
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "occlusions", occ)

    def center_at(self, frame: int) -> tuple[float, float]:
        """Linearly interpolated center; held constant outside the script."""
        frames = [f for f, _ in self.waypoints]
        xs = [c[0] for _, c in self.waypoints]
        ys = [c[1] for _, c in self.waypoints]
        return float(np.interp(frame, frames, xs)), float(np.interp(frame, frames, ys))

    def occluded(self, frame: int) -> bool:
        return any(a <= frame < b for a, b in self.occlusions)


@dataclass(frozen=True)
class BranchProfile:
    name: str
    noise_std: float = 0.0
    dropout_prob: float = 0.0
    distractor_gain: float = 0.0

    def __post_init__(self):
        if self.name not in BRANCHES:
            raise DataError(f"unknown branch {self.name!r}; expected one of {BRANCHES}")
        if self.noise_std < 0:
            raise DataError(f"branch {self.name}: noise_std must be nonnegative")
        if not 0 <= self.dropout_prob <= 1:
            raise DataError(f"branch {self.name}: dropout_prob must lie in [0, 1]")
        if self.distractor_gain < 0:
            raise DataError(f"branch {self.name}: distractor_gain must be nonnegative")


def default_profiles() -> dict[str, BranchProfile]:
    return {
        "C": BranchProfile("C", noise_std=1.5, dropout_prob=0.05),
        "S": BranchProfile("S", noise_std=1.5, distractor_gain=0.6),
        "M-": BranchProfile("M-", noise_std=1.0),
    }


@dataclass(frozen=True)
class Scenario:
    size: FrameSize
    frames: int
    objects: tuple[ObjectScript, ...]
    seed: int = 0
    branches: dict = field(default_factory=default_profiles)

    def __post_init__(self):
        if self.frames < 1:
            raise DataError(f"frames must be at least 1, got {self.frames}")
        ids = sorted(o.id for o in self.objects)
        if ids != list(range(1, len(ids) + 1)):
            raise DataError(f"object ids must be exactly 1..N, got {ids}")
        object.__setattr__(self, "objects", tuple(sorted(self.objects, key=lambda o: o.id)))

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    def seed_for(self, branch: str, frame: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed, BRANCHES.index(branch), frame])


def rasterize(obj: ObjectScript, center: tuple[float, float], size: FrameSize) -> np.ndarray:
    """Pixels whose centers fall inside the shape at ``center`` (normalized)."""
    px = np.arange(size.width) + 0.5
    py = np.arange(size.height) + 0.5
    cx, cy = center[0] * size.width, center[1] * size.height
    half_w, half_h = obj.size[0] / 2, obj.size[1] / 2
    if obj.shape == "rectangle":
        in_x = (px >= cx - half_w) & (px < cx + half_w)
        in_y = (py >= cy - half_h) & (py < cy + half_h)
        return in_y[:, None] & in_x[None, :]
    dx = ((px - cx) / half_w) ** 2
    dy = ((py - cy) / half_h) ** 2
    return dy[:, None] + dx[None, :] <= 1.0


def render_gt(scenario: Scenario, frame: int) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Per-object visible masks and the label grid; higher ids paint on top."""
    if not 0 <= frame < scenario.frames:
        raise DataError(f"frame {frame} outside 0..{scenario.frames - 1}")
    labels = np.zeros(scenario.size.shape, dtype=np.uint8)
    for obj in scenario.objects:
        if obj.occluded(frame):
            continue
        labels[rasterize(obj, obj.center_at(frame), scenario.size)] = obj.id
    masks = {obj.id: labels == obj.id for obj in scenario.objects}
    return masks, labels


def render_sequence(scenario: Scenario) -> np.ndarray:
    return np.stack([render_gt(scenario, t)[1] for t in range(scenario.frames)])


def synth_logits(labels, num_objects: int, profile: BranchProfile, seed, margin: float = MARGIN) -> np.ndarray:
    """Noisy ``(N+1, H, W)`` logits whose noiseless argmax is ``labels``.

    * dropout: with ``dropout_prob`` an object's pixels are rewritten to look
      like background for the whole frame;
    * distractor: each object's channel is raised by ``distractor_gain * 2m``
      over the other objects' pixels (look-alike instances);
    * noise: i.i.d. Gaussian with ``noise_std`` on every logit.
    """
    labels = np.asarray(labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    c = num_objects + 1
    onehot = np.arange(c)[:, None, None] == labels[None]
    logits = np.where(onehot, margin, -margin).astype(np.float64)

    drops = rng.random(num_objects) < profile.dropout_prob
    for k in np.flatnonzero(drops):
        obj = labels == k + 1
        logits[0][obj] = margin
        logits[k + 1][obj] = -margin

    if profile.distractor_gain > 0:
        fg = labels > 0
        for k in range(num_objects):
            others = fg & (labels != k + 1)
            logits[k + 1][others] += profile.distractor_gain * 2 * margin

    if profile.noise_std > 0:
        logits += profile.noise_std * rng.standard_normal(logits.shape)
    return logits


def branch_logits(scenario: Scenario, branch: str, frame: int, labels=None) -> np.ndarray:
    if labels is None:
        labels = render_gt(scenario, frame)[1]
    return synth_logits(labels, scenario.num_objects, scenario.branches[branch], scenario.seed_for(branch, frame))


@dataclass
class FrameTrace:
    frame: int
    predicted: list[Optional[tuple[float, float]]]
    states: list[Optional[KinematicState]]


@dataclass
class TrackingResult:
    labels: np.ndarray
    trace: list[FrameTrace]
    report: Optional[MetricReport] = None
    blended: Optional[list[np.ndarray]] = None
    config: Optional[MpmConfig] = None


def track_sequence(raw_frames: Sequence[np.ndarray], first_labels, num_objects: int, config: MpmConfig,
                   mpm: bool = True, gt=None, adapt_steps: int = 0, keep_logits: bool = False,
                   adapt_lr: float = 1e-4, adapt_weight_decay: float = 1e-6, max_norm: float = 1.0) -> TrackingResult:
    """Run the per-frame loop: (blend) -> argmax -> state update.

    Frame 0 is the annotation: its prediction is ``first_labels`` and it
    initializes the object states. If ``gt`` is given and ``adapt_steps > 0``,
    the MPM scalars are adapted on every frame before blending (training
    protocol, parameters fresh for this sequence).
    """
    first_labels = np.asarray(first_labels)
    predictor = MotionPredictor(config, num_objects)
    predictor.start(first_labels)
    optimizer = make_mpm_optimizer(adapt_lr, adapt_weight_decay) if adapt_steps else None

    out_labels, trace, blended_frames = [], [], []
    for t, raw in enumerate(raw_frames):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[0] != num_objects + 1 or raw.shape[1:] != first_labels.shape:
            raise DataError(f"frame {t}: logits shape {raw.shape} does not match "
                            f"{num_objects + 1} channels x {first_labels.shape}")
        predicted = [None if s is None else (s.position.x, s.position.y) for s in predictor.predicted_states()]
        if mpm and optimizer is not None and gt is not None:
            predictor.adapt(raw, gt[t], optimizer, adapt_steps, max_norm)
        z = predictor.blend(raw) if mpm else raw
        if keep_logits:
            blended_frames.append(z)
        if t == 0:
            labels = first_labels.astype(np.uint8)
            trace.append(FrameTrace(0, predicted, list(predictor.states)))
        else:
            labels = np.argmax(z, axis=0).astype(np.uint8)
            predictor.update(labels)
            trace.append(FrameTrace(t, predicted, list(predictor.states)))
        out_labels.append(labels)
    return TrackingResult(np.stack(out_labels), trace, blended=blended_frames if keep_logits else None,
                          config=predictor.config)


def run_tracking(scenario: Scenario, config: MpmConfig, profile: Optional[BranchProfile] = None,
                 mpm: bool = True, tolerance: Optional[float] = None, adapt_steps: int = 0) -> TrackingResult:
    """Simulate one branch's logits for every frame, track, and score against ground truth."""
    profile = profile or scenario.branches["M-"]
    gt = render_sequence(scenario)
    raws = [
        synth_logits(gt[t], scenario.num_objects, profile, scenario.seed_for(profile.name, t))
        for t in range(scenario.frames)
    ]
    result = track_sequence(raws, gt[0], scenario.num_objects, config, mpm=mpm,
                            gt=gt if adapt_steps else None, adapt_steps=adapt_steps)
    result.report = evaluate_sequence(result.labels, gt, scenario.num_objects, tolerance)
    return result


# Fixtures used by tests, the acceptance suite and the CLI sample configs.

def constant_velocity_scenario(frames: int = 30, occlusion: tuple[int, int] = (12, 17), seed: int = 0) -> Scenario:
    """One 7x7 square moving +1 px/frame along x on a 64x48 frame, occluded for 5 frames."""
    size = FrameSize(64, 48)
    start = (10.5 / 64, 24.5 / 48)
    end = ((10.5 + frames - 1) / 64, 24.5 / 48)
    obj = ObjectScript(1, (7, 7), ((0, start), (frames - 1, end)), occlusions=(occlusion,))
    quiet = {b: BranchProfile(b) for b in ("C", "S", "M-")}
    return Scenario(size, frames, (obj,), seed, quiet)


def crossing_scenario(frames: int = 40, seed: int = 3, noise_std: float = 0.5, distractor_gain: float = 1.1) -> Scenario:
    """Two identical squares swapping sides along crossing diagonals.

    The branch's distractor gain exceeds 1, so without a spatial prior each
    object's channel wins over the other object's pixels.
    """
    size = FrameSize(64, 48)
    a = ObjectScript(1, (7, 7), ((0, (0.15, 0.3)), (frames - 1, (0.85, 0.7))))
    b = ObjectScript(2, (7, 7), ((0, (0.85, 0.3)), (frames - 1, (0.15, 0.7))))
    profile = BranchProfile("M-", noise_std=noise_std, distractor_gain=distractor_gain)
    branches = {"C": BranchProfile("C", noise_std=noise_std), "S": BranchProfile("S", noise_std=noise_std),
                "M-": profile}
    return Scenario(size, frames, (a, b), seed, branches)
