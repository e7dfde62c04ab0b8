"""Direction-of-movement controller.

Instead of regressing commands directly, a scalar regressor predicts
where the path ahead sits on a virtual image line; a PID loop on the
offset from the line's center steers the robot.  Out-of-distribution
observations produce low confidence and the controller abstains.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .imitation import Dataset
from .optim import ridge_closed_form
from .world import (
    COMMAND_CLIP,
    MotorCommand,
    Observation,
    Trajectory,
    WorldState,
    clip_command_value,
    cross_track,
    wrap_angle,
)

VIRTUAL_IMAGE_WIDTH = 896.0
DEFAULT_SHIFT = 150.0
DEFAULT_DEAD_BAND = 0.05


@dataclass(frozen=True)
class DirectionLabel:
    """Horizontal target coordinate on the virtual image line."""

    center_x: float
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def label_direction(expert_cmd: MotorCommand, width: float = VIRTUAL_IMAGE_WIDTH,
                    shift: float = DEFAULT_SHIFT, dead_band: float = DEFAULT_DEAD_BAND) -> DirectionLabel:
    """Training label from an expert command: centered while driving
    straight, shifted left/right of center by `shift` pixels when turning.
    A turn rate exactly at the dead band counts as straight."""
    if width <= 0:
        raise ValueError("width must be positive")
    if not 0 < shift < width / 2:
        raise ValueError("shift must lie in (0, width/2)")
    center = width / 2.0
    if expert_cmd.angular > dead_band:
        return DirectionLabel(center - shift, 1.0)
    if expert_cmd.angular < -dead_band:
        return DirectionLabel(center + shift, 1.0)
    return DirectionLabel(center, 1.0)


def direction_class(label: DirectionLabel, width: float = VIRTUAL_IMAGE_WIDTH) -> str:
    if label.center_x < width / 2.0:
        return "left"
    if label.center_x > width / 2.0:
        return "right"
    return "none"


@dataclass
class DirectionDetector:
    """Ridge regressor for the direction coordinate plus a confidence
    model built from training-feature statistics.

    Confidence is exp(-max(0, d - d_ref)^2 / 2) where d is the RMS
    z-score of the features against the stored mean/std; d_ref is the
    largest distance seen in training, so in-distribution inputs score 1
    and confidence never increases with distance.
    """

    weights: np.ndarray
    bias: float
    width: float
    shift: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    dist_ref: float
    ridge_lambda: float
    featurizer_hash: str = ""
    class_counts: dict = field(default_factory=dict)

    def distance(self, features: np.ndarray) -> float:
        z = (features - self.feat_mean) / self.feat_std
        return float(np.sqrt(np.mean(z ** 2)))

    def confidence(self, features: np.ndarray) -> float:
        excess = max(0.0, self.distance(features) - self.dist_ref)
        return math.exp(-0.5 * excess * excess)

    def predict(self, features: np.ndarray) -> tuple[float, float]:
        if len(features) != len(self.weights):
            raise ValueError(f"observation has {len(features)} features, detector expects {len(self.weights)}")
        raw = float(features @ self.weights + self.bias)
        return min(max(raw, 0.0), self.width), self.confidence(features)


def train_detector(data: Dataset, width: float = VIRTUAL_IMAGE_WIDTH, shift: float = DEFAULT_SHIFT,
                   dead_band: float = DEFAULT_DEAD_BAND, ridge_lambda: float = 1.0,
                   featurizer_hash: str = "") -> DirectionDetector:
    """Fit the direction coordinate as a ridge regression on features and
    store the statistics backing the confidence model.  Warns (but still
    trains) when the labels do not cover all three steering classes."""
    if len(data) == 0:
        raise ValueError("cannot train a detector on an empty dataset")
    x, _ = data.to_arrays()
    labels = np.array([label_direction(s.command, width, shift, dead_band).center_x for s in data.samples])
    counts = {"left": 0, "none": 0, "right": 0}
    for value in labels:
        counts[direction_class(DirectionLabel(value, 1.0), width)] += 1
    missing = [name for name, c in counts.items() if c == 0]
    if missing:
        warnings.warn(f"direction labels missing classes {missing}; training on an imbalanced set",
                      stacklevel=2)
    weights, bias = ridge_closed_form(x, labels, ridge_lambda, fit_bias=True)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-9, 1e-9, std)
    z = (x - mean) / std
    dist_ref = float(np.sqrt((z ** 2).mean(axis=1)).max())
    return DirectionDetector(weights[:, 0], float(bias[0]), width, shift, mean, std,
                             dist_ref, ridge_lambda, featurizer_hash, counts)


def detect(detector, obs: Observation) -> DirectionLabel:
    """Run any detector-like object (trained or oracle) on an observation."""
    x, conf = detector.predict(obs.features)
    return DirectionLabel(x, conf)


@dataclass
class PidState:
    """Classic PID on the pixel error, with integral anti-windup.

    Output sign opposes the error: a target right of center (positive
    error) yields a negative, clockwise turn command.
    """

    kp: float = 0.01
    ki: float = 0.001
    kd: float = 0.005
    integral_limit: float = 25.0
    integral: float = 0.0
    prev_error: float | None = None

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be >= 0")

    def step(self, error: float, dt: float) -> float:
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.integral = min(max(self.integral + error * dt, -self.integral_limit), self.integral_limit)
        derivative = 0.0 if self.prev_error is None else (error - self.prev_error) / dt
        self.prev_error = error
        return -(self.kp * error + self.ki * self.integral + self.kd * derivative)

    def reset(self):
        self.integral = 0.0
        self.prev_error = None


def pid_step(pid: PidState, error: float, dt: float) -> tuple[float, PidState]:
    return pid.step(error, dt), pid


@dataclass(frozen=True)
class Abstain:
    """Controller output when detection confidence is below the floor."""

    confidence: float


@dataclass
class DetectionController:
    """Steering from detected direction offsets.

    Angular velocity comes from the PID on e = x_t - width/2; linear
    velocity is the cruise speed scaled down proportionally with |e|.
    Carries mutable PID state: one owner per episode.
    """

    detector: DirectionDetector
    pid: PidState = field(default_factory=PidState)
    cruise_speed: float = 0.5
    confidence_floor: float = 0.3
    clip: float = COMMAND_CLIP

    @property
    def width(self) -> float:
        return self.detector.width

    def reset(self):
        self.pid.reset()

    def act(self, obs: Observation, dt: float) -> MotorCommand | Abstain:
        return detection_act(self, obs, dt)


def detection_act(controller: DetectionController, obs: Observation, dt: float) -> MotorCommand | Abstain:
    if dt <= 0:
        raise ValueError("dt must be positive")
    label = detect(controller.detector, obs)
    if label.confidence < controller.confidence_floor:
        return Abstain(label.confidence)
    half = controller.width / 2.0
    error = label.center_x - half
    angular = clip_command_value(controller.pid.step(error, dt), controller.clip)
    linear = clip_command_value(controller.cruise_speed * max(0.0, 1.0 - abs(error) / half), controller.clip)
    return MotorCommand(linear, angular)


@dataclass
class GeometricDirectionOracle:
    """Perfect detector: projects the pursuit point onto the virtual image
    line from ground-truth geometry.  Duck-types DirectionDetector's
    predict so it can drive a DetectionController in closed loop.

    pixels_per_radian maps the target bearing onto the line.  Keep
    kd * pixels_per_radian below ~1: one tick's saturated heading change
    otherwise swings the error enough for the derivative term alone to
    re-saturate the PID, which locks the loop into chatter.
    """

    traj: Trajectory
    world: WorldState | None = None
    width: float = VIRTUAL_IMAGE_WIDTH
    lookahead: float = 0.8
    pixels_per_radian: float = 160.0

    def bind(self, world: WorldState) -> "GeometricDirectionOracle":
        self.world = world
        return self

    def predict(self, features: np.ndarray) -> tuple[float, float]:
        if self.world is None:
            raise RuntimeError("oracle must be bound to a world")
        pose = self.world.pose
        _, _, arc = cross_track(pose, self.traj)
        target = self.traj.point_at(arc + self.lookahead)
        alpha = wrap_angle(math.atan2(target[1] - pose.y, target[0] - pose.x) - pose.theta)
        x = self.width / 2.0 - self.pixels_per_radian * alpha
        return min(max(x, 0.0), self.width), 1.0
