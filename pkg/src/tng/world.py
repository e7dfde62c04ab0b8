"""Deterministic 2D differential-drive world.

Unicycle kinematics with exact arc integration, directed waypoint
trajectories, geometric crossing enumeration, and a seeded synthetic
featurizer that turns a pose into a fixed-length observation vector
(wall ray distances plus nearest-landmark encodings).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Hard command clip shared by every controller output channel.
COMMAND_CLIP = 1.5

# Polyline-membership tolerance and crossing merge radius, metres.
MEMBERSHIP_TOL = 1e-6
CROSSING_DEDUP_RADIUS = 0.05

# Wall rectangle margin beyond the trajectory bounding box, metres.
WALL_MARGIN = 1.5


class EnvironmentSpecError(ValueError):
    """An environment description failed to parse or validate."""


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    angle = math.remainder(angle, TWO_PI)
    if angle <= -math.pi:
        angle += TWO_PI
    return angle


def clip_command_value(value: float, limit: float = COMMAND_CLIP) -> float:
    return max(-limit, min(limit, value))


@dataclass(frozen=True)
class Pose:
    """Planar robot configuration; heading is CCW-positive radians."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class MotorCommand:
    """Two-channel control: linear m/s and angular rad/s."""

    linear: float
    angular: float

    def __post_init__(self):
        if not (math.isfinite(self.linear) and math.isfinite(self.angular)):
            raise ValueError(f"non-finite command ({self.linear}, {self.angular})")

    def clipped(self, limit: float = COMMAND_CLIP) -> "MotorCommand":
        return MotorCommand(clip_command_value(self.linear, limit), clip_command_value(self.angular, limit))


ZERO_COMMAND = MotorCommand(0.0, 0.0)


def _stable_sinc(x: float) -> float:
    # sin(x)/x, finite and smooth through x = 0.
    if abs(x) < 1e-8:
        return 1.0 - x * x / 6.0
    return math.sin(x) / x


def step_unicycle(pose: Pose, cmd: MotorCommand, dt: float) -> Pose:
    """Advance a pose by one exact unicycle step.

    Zero angular velocity advances along a straight line; otherwise the
    pose moves along a circular arc.  The midpoint-chord form below is the
    exact arc solution written without the v/omega ratio, so it stays
    numerically stable for arbitrarily small turn rates and composes
    exactly: two dt steps equal one 2*dt step up to rounding.
    """
    if not (isinstance(dt, (int, float)) and math.isfinite(dt)) or dt <= 0:
        raise ValueError(f"dt must be finite and positive, got {dt}")
    half_turn = 0.5 * cmd.angular * dt
    chord = cmd.linear * dt * _stable_sinc(half_turn)
    mid_heading = pose.theta + half_turn
    return Pose(
        pose.x + chord * math.cos(mid_heading),
        pose.y + chord * math.sin(mid_heading),
        pose.theta + cmd.angular * dt,
    )


class Trajectory:
    """Directed waypoint polyline, optionally closed into a loop."""

    def __init__(self, id: int, waypoints, closed: bool = False, name: str = ""):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ValueError(f"trajectory {id}: need >= 3 waypoints of (x, y), got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"trajectory {id}: non-finite waypoint")
        self.id = int(id)
        self.waypoints = pts
        self.closed = bool(closed)
        self.name = name or f"traj-{id}"

        if self.closed:
            starts = pts
            ends = np.roll(pts, -1, axis=0)
        else:
            starts = pts[:-1]
            ends = pts[1:]
        vecs = ends - starts
        lens = np.hypot(vecs[:, 0], vecs[:, 1])
        if np.any(lens < 1e-12):
            raise ValueError(f"trajectory {id}: consecutive waypoints must be distinct")
        self.seg_start = starts
        self.seg_vec = vecs
        self.seg_len = lens
        self.cum_len = np.concatenate([[0.0], np.cumsum(lens)])
        self.length = float(self.cum_len[-1])

    @property
    def segment_count(self) -> int:
        return len(self.seg_len)

    def _wrap_arc(self, s: float) -> float:
        if self.closed:
            return s % self.length
        return min(max(s, 0.0), self.length)

    def _segment_of(self, s: float) -> tuple[int, float]:
        s = self._wrap_arc(s)
        i = int(np.searchsorted(self.cum_len, s, side="right")) - 1
        i = min(max(i, 0), self.segment_count - 1)
        return i, s - self.cum_len[i]

    def point_at(self, s: float) -> np.ndarray:
        """Position at arc length s (wrapping if closed, clamped if open)."""
        i, rem = self._segment_of(s)
        return self.seg_start[i] + (rem / self.seg_len[i]) * self.seg_vec[i]

    def tangent_at(self, s: float) -> float:
        """Heading of the local path direction at arc length s."""
        i, _ = self._segment_of(s)
        return math.atan2(self.seg_vec[i, 1], self.seg_vec[i, 0])

    def pose_at(self, s: float) -> Pose:
        p = self.point_at(s)
        return Pose(p[0], p[1], self.tangent_at(s))

    def project(self, x: float, y: float) -> tuple[float, float, int]:
        """Nearest point on the polyline: (distance, arc position, segment)."""
        rel = np.array([x, y]) - self.seg_start
        t = np.clip((rel * self.seg_vec).sum(axis=1) / (self.seg_len ** 2), 0.0, 1.0)
        closest = self.seg_start + t[:, None] * self.seg_vec
        d2 = ((closest[:, 0] - x) ** 2) + ((closest[:, 1] - y) ** 2)
        k = int(np.argmin(d2))
        return math.sqrt(float(d2[k])), float(self.cum_len[k] + t[k] * self.seg_len[k]), k


def cross_track(pose: Pose, traj: Trajectory) -> tuple[float, float, float]:
    """Distance to the polyline, heading error vs the local tangent, and
    the arc position of the nearest point."""
    dist, arc, seg = traj.project(pose.x, pose.y)
    tangent = math.atan2(traj.seg_vec[seg, 1], traj.seg_vec[seg, 0])
    return dist, wrap_angle(pose.theta - tangent), arc


@dataclass(frozen=True)
class Intersection:
    """One directed crossing between two trajectories."""

    from_trajectory: int
    to_trajectory: int
    point: tuple[float, float]
    from_arc: float
    to_arc: float


def polyline_crossings(ta: Trajectory, tb: Trajectory) -> list[tuple[tuple[float, float], float, float]]:
    """All crossing points of two polylines as (point, arc_a, arc_b).

    Parametric segment-pair solve; collinear overlaps are ignored.  Points
    closer than CROSSING_DEDUP_RADIUS to an earlier hit are merged, which
    absorbs duplicate hits at shared segment endpoints.
    """
    hits: list[tuple[tuple[float, float], float, float]] = []
    qs = tb.seg_start
    sv = tb.seg_vec
    for i in range(ta.segment_count):
        p = ta.seg_start[i]
        r = ta.seg_vec[i]
        denom = r[0] * sv[:, 1] - r[1] * sv[:, 0]
        qp = qs - p
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * sv[:, 1] - qp[:, 1] * sv[:, 0]) / denom
            u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / denom
        valid = (np.abs(denom) > 1e-12) & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
        for j in np.nonzero(valid)[0]:
            pt = p + t[j] * r
            arc_a = float(ta.cum_len[i] + t[j] * ta.seg_len[i])
            arc_b = float(tb.cum_len[j] + u[j] * tb.seg_len[j])
            if any(math.hypot(pt[0] - h[0][0], pt[1] - h[0][1]) < CROSSING_DEDUP_RADIUS for h in hits):
                continue
            hits.append(((float(pt[0]), float(pt[1])), arc_a, arc_b))
    return hits


@dataclass(frozen=True)
class FeaturizerConfig:
    """Fixed synthetic encoder configuration.

    The seed freezes a per-dimension gain vector, standing in for
    pretrained encoder weights: two configs with different seeds produce
    incompatible feature spaces even over identical geometry.
    """

    seed: int
    feature_dim: int = 48
    ray_count: int = 24
    max_range: float = 8.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.ray_count < 0 or self.feature_dim < self.ray_count:
            raise ValueError("feature_dim must be >= ray_count >= 0")
        if (self.feature_dim - self.ray_count) % 3 != 0:
            raise ValueError("feature_dim - ray_count must be divisible by 3 (landmark slots)")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    @property
    def landmark_slots(self) -> int:
        return (self.feature_dim - self.ray_count) // 3

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "feature_dim": self.feature_dim,
            "ray_count": self.ray_count,
            "max_range": self.max_range,
            "noise_sigma": self.noise_sigma,
        }

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def gains(self) -> np.ndarray:
        return np.random.default_rng(self.seed).uniform(0.5, 1.5, self.feature_dim)


@dataclass(frozen=True)
class Observation:
    features: np.ndarray
    timestamp: float = 0.0


def _strongly_connected(node_ids: list[int], edges: set[tuple[int, int]]) -> bool:
    if len(node_ids) <= 1:
        return True

    def reach(start: int, adj: dict[int, list[int]]) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            for nxt in adj.get(stack.pop(), []):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    fwd: dict[int, list[int]] = {}
    bwd: dict[int, list[int]] = {}
    for a, b in edges:
        fwd.setdefault(a, []).append(b)
        bwd.setdefault(b, []).append(a)
    root = node_ids[0]
    all_ids = set(node_ids)
    return reach(root, fwd) == all_ids and reach(root, bwd) == all_ids


class Environment:
    """Immutable world: trajectories, landmarks, walls, and the featurizer.

    Construct through assemble_environment or build_environment so the
    crossing list and navigability flag are always consistent with the
    geometry.
    """

    def __init__(self, trajectories, landmarks, featurizer, intersections, navigable, bounds, suppressed=()):
        self.trajectories: list[Trajectory] = list(trajectories)
        self.landmarks: np.ndarray = landmarks
        self.featurizer: FeaturizerConfig = featurizer
        self.intersections: list[Intersection] = list(intersections)
        self.navigable: bool = navigable
        self.bounds: tuple[float, float, float, float] = bounds
        self.suppressed = frozenset(tuple(p) for p in suppressed)
        self.feature_gains = featurizer.gains()
        self._by_id = {t.id: t for t in self.trajectories}

    def trajectory(self, traj_id: int) -> Trajectory:
        return self._by_id[traj_id]

    @property
    def trajectory_ids(self) -> list[int]:
        return [t.id for t in self.trajectories]

    def contains(self, pose: Pose) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= pose.x <= xmax and ymin <= pose.y <= ymax

    def crossings_on(self, traj_id: int) -> list[Intersection]:
        return [ix for ix in self.intersections if ix.from_trajectory == traj_id]


def assemble_environment(trajectories, landmarks=(), featurizer: FeaturizerConfig | None = None,
                         suppressed=()) -> Environment:
    """Build an Environment from in-memory parts, computing every pairwise
    directed crossing, the wall rectangle, and the navigability flag."""
    trajectories = list(trajectories)
    ids = [t.id for t in trajectories]
    if len(set(ids)) != len(ids):
        raise EnvironmentSpecError(f"duplicate trajectory ids: {sorted(ids)}")
    landmarks = np.asarray(landmarks, dtype=float).reshape(-1, 3)
    featurizer = featurizer or FeaturizerConfig(seed=0)
    suppressed = frozenset(tuple(p) for p in suppressed)

    intersections: list[Intersection] = []
    for a_idx in range(len(trajectories)):
        for b_idx in range(a_idx + 1, len(trajectories)):
            ta, tb = trajectories[a_idx], trajectories[b_idx]
            for point, arc_a, arc_b in polyline_crossings(ta, tb):
                if (ta.id, tb.id) not in suppressed:
                    intersections.append(Intersection(ta.id, tb.id, point, arc_a, arc_b))
                if (tb.id, ta.id) not in suppressed:
                    intersections.append(Intersection(tb.id, ta.id, point, arc_b, arc_a))

    edge_set = {(ix.from_trajectory, ix.to_trajectory) for ix in intersections}
    navigable = _strongly_connected(ids, edge_set)

    pts = np.vstack([t.waypoints for t in trajectories])
    bounds = (
        float(pts[:, 0].min() - WALL_MARGIN),
        float(pts[:, 1].min() - WALL_MARGIN),
        float(pts[:, 0].max() + WALL_MARGIN),
        float(pts[:, 1].max() + WALL_MARGIN),
    )
    return Environment(trajectories, landmarks, featurizer, intersections, navigable, bounds, suppressed)


ENV_FORMAT = "tng-env/1"


def build_environment(spec: dict) -> Environment:
    """Parse and validate an environment description (the tng-env/1 schema)."""
    if not isinstance(spec, dict):
        raise EnvironmentSpecError("environment spec must be a JSON object")
    if spec.get("format") != ENV_FORMAT:
        raise EnvironmentSpecError(f"format: expected {ENV_FORMAT!r}, got {spec.get('format')!r}")

    raw_trajs = spec.get("trajectories")
    if not isinstance(raw_trajs, list) or not raw_trajs:
        raise EnvironmentSpecError("trajectories: expected a non-empty list")
    trajectories = []
    for i, entry in enumerate(raw_trajs):
        where = f"trajectories[{i}]"
        if not isinstance(entry, dict):
            raise EnvironmentSpecError(f"{where}: expected an object")
        try:
            traj = Trajectory(
                id=int(entry["id"]),
                waypoints=entry["waypoints"],
                closed=bool(entry.get("closed", False)),
                name=str(entry.get("name", "")),
            )
        except KeyError as exc:
            raise EnvironmentSpecError(f"{where}: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise EnvironmentSpecError(f"{where}: {exc}") from None
        trajectories.append(traj)

    raw_landmarks = spec.get("landmarks", [])
    if not isinstance(raw_landmarks, list):
        raise EnvironmentSpecError("landmarks: expected a list of [x, y, signature]")
    for i, lm in enumerate(raw_landmarks):
        if not (isinstance(lm, (list, tuple)) and len(lm) == 3):
            raise EnvironmentSpecError(f"landmarks[{i}]: expected [x, y, signature]")

    raw_feat = spec.get("featurizer", {})
    if not isinstance(raw_feat, dict):
        raise EnvironmentSpecError("featurizer: expected an object")
    try:
        featurizer = FeaturizerConfig(
            seed=int(raw_feat.get("seed", 0)),
            feature_dim=int(raw_feat.get("feature_dim", 48)),
            ray_count=int(raw_feat.get("ray_count", 24)),
            max_range=float(raw_feat.get("max_range", 8.0)),
            noise_sigma=float(raw_feat.get("noise_sigma", 0.0)),
        )
    except (TypeError, ValueError) as exc:
        raise EnvironmentSpecError(f"featurizer: {exc}") from None

    suppressed = spec.get("suppressed_directions", [])
    try:
        return assemble_environment(trajectories, raw_landmarks, featurizer, suppressed)
    except EnvironmentSpecError:
        raise
    except ValueError as exc:
        raise EnvironmentSpecError(str(exc)) from None


def environment_to_dict(env: Environment) -> dict:
    out = {
        "format": ENV_FORMAT,
        "trajectories": [
            {"id": t.id, "name": t.name, "closed": t.closed, "waypoints": t.waypoints.tolist()}
            for t in env.trajectories
        ],
        "landmarks": env.landmarks.tolist(),
        "featurizer": env.featurizer.to_dict(),
    }
    if env.suppressed:
        out["suppressed_directions"] = sorted(list(p) for p in env.suppressed)
    return out


def _ray_wall_distances(x: float, y: float, headings: np.ndarray, bounds, max_range: float) -> np.ndarray:
    xmin, ymin, xmax, ymax = bounds
    c = np.cos(headings)
    s = np.sin(headings)
    tx = np.where(c > 1e-12, (xmax - x) / np.where(c > 1e-12, c, 1.0),
                  np.where(c < -1e-12, (xmin - x) / np.where(c < -1e-12, c, 1.0), np.inf))
    ty = np.where(s > 1e-12, (ymax - y) / np.where(s > 1e-12, s, 1.0),
                  np.where(s < -1e-12, (ymin - y) / np.where(s < -1e-12, s, 1.0), np.inf))
    return np.clip(np.minimum(tx, ty), 0.0, max_range)


def _landmark_encoding(x: float, y: float, theta: float, landmarks: np.ndarray,
                       slots: int, max_range: float) -> np.ndarray:
    # The k nearest landmarks fill the slots in landmark-index order, and
    # every component is weighted by signature * proximity: a landmark
    # fades out smoothly as it approaches max_range, so slot contents
    # change continuously with pose wherever membership swaps happen out
    # of range (always the case when slots cover all landmarks).
    enc = np.zeros(3 * slots)
    if slots == 0 or len(landmarks) == 0:
        return enc
    dx = landmarks[:, 0] - x
    dy = landmarks[:, 1] - y
    ranges = np.hypot(dx, dy)
    nearest = np.sort(np.argsort(ranges, kind="stable")[:slots])
    for slot, idx in enumerate(nearest):
        bearing = wrap_angle(math.atan2(dy[idx], dx[idx]) - theta)
        weight = landmarks[idx, 2] * max(0.0, 1.0 - min(ranges[idx], max_range) / max_range)
        enc[3 * slot] = weight * math.cos(bearing)
        enc[3 * slot + 1] = weight * math.sin(bearing)
        enc[3 * slot + 2] = weight
    return enc


def observe(env: Environment, pose: Pose, rng: np.random.Generator | None = None,
            timestamp: float = 0.0) -> Observation:
    """Featurize a pose: wall ray distances over evenly spaced headings,
    then signature-weighted bearing/range encodings of the nearest
    landmarks, scaled by the frozen per-dimension gains.  Additive
    Gaussian noise is drawn from rng only when noise_sigma > 0; with no
    stream the observation is the clean encoding.
    """
    cfg = env.featurizer
    headings = pose.theta + TWO_PI * np.arange(cfg.ray_count) / max(cfg.ray_count, 1)
    rays = _ray_wall_distances(pose.x, pose.y, headings, env.bounds, cfg.max_range)
    enc = _landmark_encoding(pose.x, pose.y, pose.theta, env.landmarks, cfg.landmark_slots, cfg.max_range)
    features = env.feature_gains * np.concatenate([rays, enc])
    if rng is not None and cfg.noise_sigma > 0:
        features = features + cfg.noise_sigma * rng.standard_normal(cfg.feature_dim)
    return Observation(features, timestamp)


@dataclass
class WorldState:
    """Single-owner mutable episode state: pose, clock, and noise stream."""

    env: Environment
    pose: Pose
    rng: np.random.Generator | None = None
    time: float = 0.0

    def observe(self) -> Observation:
        return observe(self.env, self.pose, self.rng, timestamp=self.time)

    def apply(self, cmd: MotorCommand, dt: float) -> Pose:
        self.pose = step_unicycle(self.pose, cmd, dt)
        self.time += dt
        return self.pose

    def in_bounds(self) -> bool:
        return self.env.contains(self.pose)
