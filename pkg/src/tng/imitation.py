"""Behavior cloning on scripted expert laps.

Expert demonstrations come from a pure-pursuit tracker, get augmented
with shifted/relabeled recovery pairs, and train a ridge-regression
command head (closed form or gradient).  Rollout relabeling for dataset
aggregation lives here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .optim import GradientConfig, adam_minimize, gd_minimize, max_curvature, ridge_closed_form, ridge_loss
from .world import (
    COMMAND_CLIP,
    Environment,
    MotorCommand,
    Observation,
    Pose,
    Trajectory,
    WorldState,
    clip_command_value,
    cross_track,
    observe,
    wrap_angle,
)

EXPERT_LOST_DISTANCE = 5.0
AUGMENT_LATERAL_BOUND = 0.5
AUGMENT_ROTATION_BOUND = 0.4

SOURCE_EXPERT = "expert-lap"
SOURCE_AUGMENTATION = "augmentation"


class ExpertLostError(RuntimeError):
    """The scripted expert is too far from its trajectory to recover."""


@dataclass(frozen=True)
class ExpertConfig:
    lookahead: float = 0.5
    cruise_speed: float = 0.5
    max_angular: float = 1.5

    def __post_init__(self):
        if self.lookahead <= 0 or self.cruise_speed <= 0:
            raise ValueError("lookahead and cruise_speed must be positive")


def expert_command(pose: Pose, traj: Trajectory, cfg: ExpertConfig) -> MotorCommand:
    """Pure-pursuit tracking command toward the point one lookahead ahead
    of the nearest arc position."""
    dist, _, arc = cross_track(pose, traj)
    if dist > EXPERT_LOST_DISTANCE:
        raise ExpertLostError(f"pose ({pose.x:.2f}, {pose.y:.2f}) is {dist:.2f} m from {traj.name}")
    target = traj.point_at(arc + cfg.lookahead)
    dx, dy = target[0] - pose.x, target[1] - pose.y
    if math.hypot(dx, dy) < 1e-12:
        alpha = 0.0
    else:
        alpha = wrap_angle(math.atan2(dy, dx) - pose.theta)
    angular = 2.0 * cfg.cruise_speed * math.sin(alpha) / cfg.lookahead
    limit = min(cfg.max_angular, COMMAND_CLIP)
    return MotorCommand(clip_command_value(cfg.cruise_speed), clip_command_value(angular, limit))


class ExpertPolicy:
    """Expert wrapped in the controller interface.

    Reads ground-truth pose from the world it is bound to, so it can run
    inside the same episode loops as the learned controllers.
    """

    def __init__(self, traj: Trajectory, cfg: ExpertConfig | None = None, world: WorldState | None = None):
        self.traj = traj
        self.cfg = cfg or ExpertConfig()
        self.world = world

    def bind(self, world: WorldState) -> "ExpertPolicy":
        self.world = world
        return self

    def act(self, obs: Observation, dt: float | None = None) -> MotorCommand:
        if self.world is None:
            raise RuntimeError("ExpertPolicy must be bound to a world before acting")
        return expert_command(self.world.pose, self.traj, self.cfg)


@dataclass(frozen=True)
class DemoSample:
    observation: Observation
    command: MotorCommand
    pose: Pose
    trajectory_id: int


class Dataset:
    """Ordered demonstration samples with per-source provenance counts."""

    def __init__(self, samples=(), provenance=()):
        self.samples: list[DemoSample] = list(samples)
        self.provenance: list[tuple[str, int]] = [(str(s), int(n)) for s, n in provenance]
        if sum(n for _, n in self.provenance) != len(self.samples):
            raise ValueError("provenance counts must sum to the sample count")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def feature_dim(self) -> int:
        if not self.samples:
            raise ValueError("empty dataset has no feature dimension")
        return len(self.samples[0].observation.features)

    def extended(self, source: str, new_samples) -> "Dataset":
        new_samples = list(new_samples)
        return Dataset(self.samples + new_samples, self.provenance + [(source, len(new_samples))])

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([s.observation.features for s in self.samples])
        y = np.array([[s.command.linear, s.command.angular] for s in self.samples])
        return x, y

    def dagger_iteration_count(self) -> int:
        return sum(1 for source, _ in self.provenance if source.startswith("dagger-iteration-"))


def _start_pose(traj: Trajectory) -> Pose:
    return traj.pose_at(0.0)


def _lap_budget(traj: Trajectory, laps: int, dt: float, cruise: float) -> int:
    return int(4 * laps * traj.length / (cruise * dt)) + 100


def collect_demonstrations(env: Environment, traj: Trajectory, laps: int, dt: float,
                           cfg: ExpertConfig | None = None, seed: int = 0,
                           max_steps: int | None = None) -> Dataset:
    """Drive the expert around the trajectory and record one sample per
    simulation step.  Closed trajectories count wrap-arounds as laps; open
    ones reset to the start after each end-to-end pass."""
    if laps < 1:
        raise ValueError("laps must be >= 1")
    cfg = cfg or ExpertConfig()
    if max_steps is None:
        max_steps = _lap_budget(traj, laps, dt, cfg.cruise_speed)
    world = WorldState(env, _start_pose(traj), np.random.default_rng(seed))
    samples: list[DemoSample] = []
    completed = 0
    prev_arc = 0.0
    for _ in range(max_steps):
        obs = world.observe()
        cmd = expert_command(world.pose, traj, cfg)
        samples.append(DemoSample(obs, cmd, world.pose, traj.id))
        world.apply(cmd, dt)
        _, _, arc = cross_track(world.pose, traj)
        if traj.closed:
            if prev_arc > 0.75 * traj.length and arc < 0.25 * traj.length:
                completed += 1
        elif arc >= traj.length - min(cfg.lookahead, 0.25 * traj.length):
            completed += 1
            world.pose = _start_pose(traj)
            arc = 0.0
        prev_arc = arc
        if completed >= laps:
            break
    else:
        raise RuntimeError(f"step budget {max_steps} exhausted before {laps} laps of {traj.name}")
    return Dataset(samples, [(SOURCE_EXPERT, len(samples))])


def augment_shift(sample: DemoSample, lateral: float, rotational: float, env: Environment,
                  cfg: ExpertConfig | None = None,
                  rng: np.random.Generator | None = None) -> DemoSample | None:
    """Re-observe from a laterally shifted / rotated pose and relabel with
    the expert from there: a recovery-teaching pair.  Returns None when
    the perturbed pose leaves the world bounds."""
    if abs(lateral) > AUGMENT_LATERAL_BOUND:
        raise ValueError(f"|lateral| must be <= {AUGMENT_LATERAL_BOUND}, got {lateral}")
    if abs(rotational) > AUGMENT_ROTATION_BOUND:
        raise ValueError(f"|rotational| must be <= {AUGMENT_ROTATION_BOUND}, got {rotational}")
    cfg = cfg or ExpertConfig()
    base = sample.pose
    shifted = Pose(
        base.x - lateral * math.sin(base.theta),
        base.y + lateral * math.cos(base.theta),
        base.theta + rotational,
    )
    if not env.contains(shifted):
        return None
    obs = observe(env, shifted, rng, timestamp=sample.observation.timestamp)
    cmd = expert_command(shifted, env.trajectory(sample.trajectory_id), cfg)
    return DemoSample(obs, cmd, shifted, sample.trajectory_id)


def augment_feature_noise(sample: DemoSample, scale: float, rng: np.random.Generator) -> DemoSample:
    """Label-preserving feature jitter (the lighting-variation analog)."""
    obs = Observation(sample.observation.features + scale * rng.standard_normal(len(sample.observation.features)),
                      sample.observation.timestamp)
    return DemoSample(obs, sample.command, sample.pose, sample.trajectory_id)


def augment_feature_mask(sample: DemoSample, fraction: float, rng: np.random.Generator) -> DemoSample:
    """Zero a random feature subset (the regional-dropout analog)."""
    features = sample.observation.features.copy()
    mask = rng.random(len(features)) < fraction
    features[mask] = 0.0
    return DemoSample(Observation(features, sample.observation.timestamp),
                      sample.command, sample.pose, sample.trajectory_id)


def augment_dataset(data: Dataset, env: Environment, cfg: ExpertConfig | None = None,
                    per_sample: int = 2, seed: int = 0,
                    lateral_bound: float = AUGMENT_LATERAL_BOUND,
                    rotation_bound: float = AUGMENT_ROTATION_BOUND) -> Dataset:
    """Append shift-augmented recovery pairs drawn uniformly inside the
    configured bounds; skipped out-of-bounds poses are simply not added."""
    rng = np.random.default_rng(seed)
    extra = []
    for sample in data.samples:
        for _ in range(per_sample):
            lat = rng.uniform(-lateral_bound, lateral_bound)
            rot = rng.uniform(-rotation_bound, rotation_bound)
            shifted = augment_shift(sample, lat, rot, env, cfg, rng)
            if shifted is not None:
                extra.append(shifted)
    return data.extended(SOURCE_AUGMENTATION, extra)


@dataclass
class LinearHead:
    weights: np.ndarray  # (d, 2)
    bias: np.ndarray     # (2,)

    def forward(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])


@dataclass
class MlpHead:
    """One hidden ReLU layer; the desk-scale stand-in for a deeper head."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def forward(self, features: np.ndarray) -> np.ndarray:
        hidden = np.maximum(features @ self.w1 + self.b1, 0.0)
        return hidden @ self.w2 + self.b2

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])


@dataclass
class RegressionController:
    """Trained command regressor; outputs are clipped per channel."""

    head: LinearHead | MlpHead
    ridge_lambda: float
    featurizer_hash: str = ""
    clip: float = COMMAND_CLIP
    loss_trace: np.ndarray = field(default_factory=lambda: np.array([]))

    def act(self, obs: Observation, dt: float | None = None) -> MotorCommand:
        return regression_act(self, obs)


def regression_act(controller: RegressionController, obs: Observation) -> MotorCommand:
    expected = controller.head.w1.shape[0] if isinstance(controller.head, MlpHead) else controller.head.weights.shape[0]
    if len(obs.features) != expected:
        raise ValueError(f"observation has {len(obs.features)} features, head expects {expected}")
    raw = controller.head.forward(obs.features)
    return MotorCommand(
        clip_command_value(float(raw[0]), controller.clip),
        clip_command_value(float(raw[1]), controller.clip),
    )


def _train_linear_gradient(x: np.ndarray, y: np.ndarray, lam: float, cfg: GradientConfig,
                           fit_bias: bool) -> tuple[LinearHead, np.ndarray]:
    xt = np.hstack([x, np.ones((len(x), 1))]) if fit_bias else x
    n, d = xt.shape
    k = y.shape[1]
    w0 = np.zeros(d * k)

    if cfg.batch is None or cfg.batch >= n:
        gram = xt.T @ xt
        cross = xt.T @ y
        y_sq = float((y ** 2).sum())

        def grad_fn(w):
            mat = w.reshape(d, k)
            return (2.0 * (gram @ mat - cross + lam * mat)).ravel()

        def loss_fn(w):
            mat = w.reshape(d, k)
            gm = gram @ mat
            return float((mat * gm).sum() - 2.0 * (mat * cross).sum() + y_sq + lam * (mat ** 2).sum())
    else:
        rng = np.random.default_rng(0)
        scale = n / cfg.batch

        def grad_fn(w):
            mat = w.reshape(d, k)
            idx = rng.choice(n, size=cfg.batch, replace=False)
            resid = xt[idx] @ mat - y[idx]
            return (2.0 * (scale * xt[idx].T @ resid + lam * mat)).ravel()

        def loss_fn(w):
            mat = w.reshape(d, k)
            resid = xt @ mat - y
            return float((resid ** 2).sum() + lam * (mat ** 2).sum())

    if cfg.method == "gd":
        rate = cfg.rate if cfg.rate is not None else 0.95 / max_curvature(xt.T @ xt, lam)
        w, trace = gd_minimize(grad_fn, w0, cfg, rate, loss_fn)
    else:
        w, trace = adam_minimize(grad_fn, w0, cfg, loss_fn)
    mat = w.reshape(d, k)
    if fit_bias:
        return LinearHead(mat[:-1], mat[-1]), trace
    return LinearHead(mat, np.zeros(k)), trace


def _train_mlp_gradient(x: np.ndarray, y: np.ndarray, lam: float, cfg: GradientConfig,
                        hidden: int, seed: int) -> tuple[MlpHead, np.ndarray]:
    rng = np.random.default_rng(seed)
    d = x.shape[1]
    k = y.shape[1]
    shapes = [(d, hidden), (hidden,), (hidden, k), (k,)]
    sizes = [int(np.prod(s)) for s in shapes]

    def unpack(w):
        parts = np.split(w, np.cumsum(sizes)[:-1])
        return [p.reshape(s) for p, s in zip(parts, shapes)]

    w0 = np.concatenate([
        (rng.standard_normal(sizes[0]) * math.sqrt(2.0 / d)),
        np.zeros(sizes[1]),
        (rng.standard_normal(sizes[2]) * math.sqrt(2.0 / hidden)),
        np.zeros(sizes[3]),
    ])
    batch = cfg.batch if cfg.batch is not None else len(x)
    batch = min(batch, len(x))
    batch_rng = np.random.default_rng(seed + 1)

    def grad_fn(w):
        w1, b1, w2, b2 = unpack(w)
        if batch < len(x):
            idx = batch_rng.choice(len(x), size=batch, replace=False)
            xb, yb = x[idx], y[idx]
            scale = len(x) / batch
        else:
            xb, yb, scale = x, y, 1.0
        pre = xb @ w1 + b1
        hid = np.maximum(pre, 0.0)
        resid = hid @ w2 + b2 - yb
        g_w2 = 2.0 * scale * hid.T @ resid
        g_b2 = 2.0 * scale * resid.sum(axis=0)
        back = (resid @ w2.T) * (pre > 0)
        g_w1 = 2.0 * scale * xb.T @ back
        g_b1 = 2.0 * scale * back.sum(axis=0)
        reg = 2.0 * lam * w
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2]) + reg

    def loss_fn(w):
        w1, b1, w2, b2 = unpack(w)
        pred = np.maximum(x @ w1 + b1, 0.0) @ w2 + b2
        return float(((pred - y) ** 2).sum() + lam * (w ** 2).sum())

    w, trace = adam_minimize(grad_fn, w0, cfg, loss_fn)
    return MlpHead(*unpack(w)), trace


def train_regression(data: Dataset, ridge_lambda: float,
                     optimizer: str | GradientConfig = "closed-form",
                     head: str = "linear", fit_bias: bool = True, hidden: int = 32,
                     featurizer_hash: str = "", seed: int = 0) -> RegressionController:
    """Fit the command head by minimizing the ridge objective
    sum ||y - f(x)||^2 + lambda ||theta||^2 (biases included in theta).

    optimizer is "closed-form" (exact solve, linear head only) or a
    GradientConfig.  The returned controller carries the recorded training
    loss trace.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if ridge_lambda <= 0:
        raise ValueError("ridge penalty must be > 0")
    x, y = data.to_arrays()

    if head == "mlp":
        cfg = optimizer if isinstance(optimizer, GradientConfig) else GradientConfig()
        mlp, trace = _train_mlp_gradient(x, y, ridge_lambda, cfg, hidden, seed)
        return RegressionController(mlp, ridge_lambda, featurizer_hash, loss_trace=trace)
    if head != "linear":
        raise ValueError(f"unknown head type {head!r}")

    if optimizer == "closed-form":
        weights, bias = ridge_closed_form(x, y, ridge_lambda, fit_bias)
        final = ridge_loss(x, y, weights, bias if fit_bias else np.zeros(y.shape[1]), ridge_lambda)
        return RegressionController(LinearHead(weights, bias), ridge_lambda, featurizer_hash,
                                    loss_trace=np.array([final]))
    cfg = optimizer if isinstance(optimizer, GradientConfig) else GradientConfig()
    linear, trace = _train_linear_gradient(x, y, ridge_lambda, cfg, fit_bias)
    return RegressionController(linear, ridge_lambda, featurizer_hash, loss_trace=trace)


def dagger_iterate(controller: RegressionController, env: Environment, traj: Trajectory,
                   base: Dataset, steps: int, cfg: ExpertConfig | None = None,
                   dt: float = 0.1, seed: int = 0) -> Dataset:
    """Roll out the learner, relabel every visited observation with the
    expert, and append the pairs to the base dataset.  States the expert
    cannot label are skipped; leaving the world bounds truncates."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = cfg or ExpertConfig()
    iteration = base.dagger_iteration_count() + 1
    world = WorldState(env, _start_pose(traj), np.random.default_rng(seed))
    collected: list[DemoSample] = []
    for _ in range(steps):
        obs = world.observe()
        try:
            label = expert_command(world.pose, traj, cfg)
            collected.append(DemoSample(obs, label, world.pose, traj.id))
        except ExpertLostError:
            pass
        world.apply(controller.act(obs), dt)
        if not world.in_bounds():
            break
    return base.extended(f"dagger-iteration-{iteration}", collected)
