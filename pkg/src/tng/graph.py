"""Topological navigation graph.

Vertices pair a trajectory-following controller with a trajectory
classifier output; edges are exemplar-matching crossing recognizers.
Planning is Dijkstra over edge weights, and the executive runs the
vertex controllers, switching at recognized crossings until the goal
recognizer fires.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .detection import Abstain
from .optim import GradientConfig, adam_minimize, softmax
from .world import (
    Environment,
    MotorCommand,
    Observation,
    Trajectory,
    WorldState,
    ZERO_COMMAND,
    observe,
)


class GraphValidationError(ValueError):
    """A graph references vertices or weights it must not."""


class NoPathError(RuntimeError):
    """No directed path exists between the requested vertices."""


@dataclass
class TrajectoryClassifier:
    """Shared multiclass softmax head over features.

    The per-trajectory indicator outputs are the argmax one-hot of the
    shared head, so exactly one indicator is 1 for any observation.
    """

    weights: np.ndarray  # (d, C)
    bias: np.ndarray     # (C,)
    featurizer_hash: str = ""
    train_accuracy: np.ndarray = field(default_factory=lambda: np.array([]))

    @property
    def class_count(self) -> int:
        return self.weights.shape[1]

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        if len(features) != self.weights.shape[0]:
            raise ValueError(f"observation has {len(features)} features, classifier expects {self.weights.shape[0]}")
        return softmax(features @ self.weights + self.bias)


def train_trajectory_classifier(datasets, l2: float = 1e-4,
                                optimizer: GradientConfig | None = None,
                                featurizer_hash: str = "", seed: int = 0) -> TrajectoryClassifier:
    """Fit the shared softmax head by cross-entropy over the per-trajectory
    datasets (class label = dataset position)."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one per-trajectory dataset")
    for i, ds in enumerate(datasets):
        if len(ds) == 0:
            raise ValueError(f"dataset for class {i} is empty")
    x = np.vstack([ds.to_arrays()[0] for ds in datasets])
    labels = np.concatenate([np.full(len(ds), i) for i, ds in enumerate(datasets)])
    n, d = x.shape
    c = len(datasets)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    cfg = optimizer or GradientConfig(rate=0.05, steps=1200)

    def unpack(w):
        return w[: d * c].reshape(d, c), w[d * c:]

    def grad_fn(w):
        weights, bias = unpack(w)
        probs = softmax(x @ weights + bias)
        delta = (probs - onehot) / n
        return np.concatenate([(x.T @ delta + 2.0 * l2 * weights).ravel(), delta.sum(axis=0)])

    def loss_fn(w):
        weights, bias = unpack(w)
        probs = softmax(x @ weights + bias)
        ce = -np.log(np.clip(probs[np.arange(n), labels], 1e-12, None)).mean()
        return float(ce + l2 * (weights ** 2).sum())

    w, _ = adam_minimize(grad_fn, np.zeros(d * c + c), cfg, loss_fn)
    weights, bias = unpack(w)
    clf = TrajectoryClassifier(weights, bias, featurizer_hash)
    predicted = np.argmax(x @ weights + bias, axis=1)
    clf.train_accuracy = np.array([
        float((predicted[labels == i] == i).mean()) for i in range(c)
    ])
    return clf


def classify_trajectory(clf: TrajectoryClassifier, obs: Observation) -> tuple[int, np.ndarray, np.ndarray]:
    """Argmax class, its one-hot indicator vector, and the probabilities.
    Exact ties resolve toward the smaller index."""
    probs = clf.probabilities(obs.features)
    index = int(np.argmax(probs))
    indicator = np.zeros(clf.class_count)
    indicator[index] = 1.0
    return index, indicator, probs


def _dedup_exemplars(observations) -> np.ndarray:
    rows: list[np.ndarray] = []
    for obs in observations:
        feats = obs.features if isinstance(obs, Observation) else np.asarray(obs, dtype=float)
        if not any(np.array_equal(feats, r) for r in rows):
            rows.append(np.asarray(feats, dtype=float))
    return np.stack(rows)


@dataclass
class ExemplarSet:
    """A few stored observations plus a feature-distance threshold."""

    exemplars: np.ndarray  # (m, d)
    threshold: float

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")

    def min_distance(self, features: np.ndarray) -> float:
        return float(np.sqrt(((self.exemplars - features) ** 2).sum(axis=1)).min())

    def matches(self, features: np.ndarray) -> bool:
        return self.min_distance(features) <= self.threshold


MAX_EXEMPLARS = 10


@dataclass
class IntersectionClassifier(ExemplarSet):
    from_id: int = 0
    to_id: int = 0


@dataclass
class GoalReacher(ExemplarSet):
    pass


def enroll_intersection(observations, from_id: int, to_id: int, threshold: float) -> IntersectionClassifier:
    """Store up to ten exemplar observations for one directed crossing;
    exact duplicates collapse into a single exemplar."""
    observations = list(observations)
    if not 1 <= len(observations) <= MAX_EXEMPLARS:
        raise ValueError(f"need 1..{MAX_EXEMPLARS} exemplars, got {len(observations)}")
    return IntersectionClassifier(_dedup_exemplars(observations), threshold, from_id, to_id)


def detect_intersection(classifier: IntersectionClassifier, obs: Observation) -> bool:
    return classifier.matches(obs.features)


def enroll_goal(observations, threshold: float) -> GoalReacher:
    observations = list(observations)
    if not 1 <= len(observations) <= MAX_EXEMPLARS:
        raise ValueError(f"need 1..{MAX_EXEMPLARS} exemplars, got {len(observations)}")
    return GoalReacher(_dedup_exemplars(observations), threshold)


def goal_reached(reacher: GoalReacher, obs: Observation) -> bool:
    return reacher.matches(obs.features)


@dataclass
class TngVertex:
    controller: object  # anything with act(obs, dt)
    classifier_index: int
    trajectory_id: int


@dataclass
class TngEdge:
    from_vertex: int
    to_vertex: int
    classifier: IntersectionClassifier
    weight: float


@dataclass
class TngGraph:
    vertices: list[TngVertex]
    edges: list[TngEdge]
    trajectory_classifier: TrajectoryClassifier
    unreachable_pairs: list[tuple[int, int]] = field(default_factory=list)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    def out_edges(self, vertex: int) -> list[TngEdge]:
        return [e for e in self.edges if e.from_vertex == vertex]


def build_tng(controllers, trajectory_classifier: TrajectoryClassifier, edges,
              trajectory_ids=None) -> TngGraph:
    """Assemble and validate the graph: one controller per trajectory,
    every edge referencing existing vertices with positive weight.  The
    unreachable vertex pairs are computed and reported on the graph."""
    controllers = list(controllers)
    c = len(controllers)
    if c == 0:
        raise GraphValidationError("graph needs at least one vertex")
    if trajectory_classifier.class_count != c:
        raise GraphValidationError(
            f"classifier covers {trajectory_classifier.class_count} classes for {c} controllers")
    trajectory_ids = list(trajectory_ids) if trajectory_ids is not None else list(range(c))
    vertices = [TngVertex(ctrl, i, trajectory_ids[i]) for i, ctrl in enumerate(controllers)]
    validated: list[TngEdge] = []
    for edge in edges:
        if isinstance(edge, TngEdge):
            frm, to, clf, weight = edge.from_vertex, edge.to_vertex, edge.classifier, edge.weight
        else:
            frm, to, clf, weight = edge
        if not (0 <= frm < c and 0 <= to < c):
            raise GraphValidationError(f"edge ({frm} -> {to}) references a missing vertex")
        if weight <= 0:
            raise GraphValidationError(f"edge ({frm} -> {to}) has non-positive weight {weight}")
        validated.append(TngEdge(frm, to, clf, float(weight)))

    adjacency: dict[int, set[int]] = {i: set() for i in range(c)}
    for e in validated:
        adjacency[e.from_vertex].add(e.to_vertex)
    unreachable = []
    for src in range(c):
        seen = {src}
        stack = [src]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        unreachable.extend((src, dst) for dst in range(c) if dst not in seen)
    return TngGraph(vertices, validated, trajectory_classifier, unreachable)


def localize(tng: TngGraph, obs: Observation) -> tuple[int, list[TngEdge]]:
    """Current vertex from the trajectory classifier plus every crossing
    classifier that fires on this observation."""
    vertex, _, _ = classify_trajectory(tng.trajectory_classifier, obs)
    firing = [e for e in tng.edges if detect_intersection(e.classifier, obs)]
    return vertex, firing


def identify_goal(tng: TngGraph, goal_obs: Observation) -> int:
    index, _, _ = classify_trajectory(tng.trajectory_classifier, goal_obs)
    return index


@dataclass
class Plan:
    vertices: list[int]
    edges: list[TngEdge]
    total_weight: float


def plan(tng: TngGraph, src: int, dst: int) -> Plan:
    """Minimum-total-weight directed path via Dijkstra; ties break toward
    the lexicographically smallest vertex sequence."""
    c = tng.vertex_count
    if not (0 <= src < c and 0 <= dst < c):
        raise GraphValidationError(f"plan endpoints ({src}, {dst}) outside 0..{c - 1}")
    if src == dst:
        return Plan([src], [], 0.0)
    best_edge_to: dict[tuple[int, int], TngEdge] = {}
    for e in tng.edges:
        key = (e.from_vertex, e.to_vertex)
        if key not in best_edge_to or e.weight < best_edge_to[key].weight:
            best_edge_to[key] = e
    queue: list[tuple[float, tuple[int, ...]]] = [(0.0, (src,))]
    settled: set[int] = set()
    while queue:
        dist, path = heapq.heappop(queue)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == dst:
            edges = [best_edge_to[(a, b)] for a, b in zip(path, path[1:])]
            return Plan(list(path), edges, dist)
        for (a, b), edge in best_edge_to.items():
            if a == node and b not in settled:
                heapq.heappush(queue, (dist + edge.weight, path + (b,)))
    raise NoPathError(f"vertex {dst} is unreachable from {src}")


class Phase(Enum):
    FOLLOWING = "following"
    GOAL_SEEKING = "goal-seeking"
    DONE = "done"
    FAILED = "failed"


@dataclass
class ExecutiveConfig:
    dt: float = 0.1
    timeout: float = 300.0
    min_switch_interval: float = 2.0


@dataclass
class TickRecord:
    t: float
    pose: tuple[float, float, float]
    command: tuple[float, float]
    phase: str
    events: list[str] = field(default_factory=list)


@dataclass
class EpisodeLog:
    """Timed record of one navigation episode."""

    ticks: list[TickRecord] = field(default_factory=list)
    total_time: float = 0.0
    human_time: float = 0.0
    distance: float = 0.0
    switches: list[tuple[float, int, int]] = field(default_factory=list)
    interventions: list[tuple[float, float, str]] = field(default_factory=list)
    abstain_count: int = 0
    outcome: str = "failed"
    failure_reason: str = ""
    final_pose: tuple[float, float, float] | None = None


def _controller_command(controller, obs: Observation, dt: float, log: EpisodeLog,
                        events: list[str]) -> MotorCommand:
    result = controller.act(obs, dt)
    if isinstance(result, Abstain):
        log.abstain_count += 1
        events.append(f"abstain({result.confidence:.3f})")
        return ZERO_COMMAND
    return result


def execute(tng: TngGraph, route: Plan, world: WorldState, goal: GoalReacher,
            cfg: ExecutiveConfig | None = None, supervisor=None) -> EpisodeLog:
    """Run the planned controllers, switching at recognized crossings.

    Following the current vertex, the next planned edge's classifier
    triggers a switch (debounced by min_switch_interval); after the last
    switch the goal trajectory's controller runs until the goal recognizer
    fires.  Non-planned edge firings are logged and ignored.  An optional
    supervisor may override commands; overridden time accrues to
    human_time and does not count toward autonomous distance.
    """
    cfg = cfg or ExecutiveConfig()
    log = EpisodeLog()
    cursor = 0
    vertex = route.vertices[0]
    controller = tng.vertices[vertex].controller
    if hasattr(controller, "reset"):
        controller.reset()
    phase = Phase.GOAL_SEEKING if cursor == len(route.edges) else Phase.FOLLOWING
    last_switch = -math.inf
    max_ticks = int(cfg.timeout / cfg.dt)
    intervention_start = None
    intervention_trigger = ""

    for _ in range(max_ticks):
        obs = world.observe()
        events: list[str] = []
        override = None
        if supervisor is not None:
            override, trigger = supervisor.update(world.pose, world.time, cfg.dt)
            if override is not None and intervention_start is None:
                intervention_start = world.time
                intervention_trigger = trigger
                events.append(f"intervention-start({trigger})")
            elif override is None and intervention_start is not None:
                log.interventions.append((intervention_start, world.time, intervention_trigger))
                intervention_start = None
                events.append("intervention-end")

        if override is not None:
            cmd = override
            log.human_time += cfg.dt
        else:
            if phase is Phase.FOLLOWING:
                planned = route.edges[cursor]
                for edge in tng.out_edges(vertex):
                    if edge is planned:
                        continue
                    if detect_intersection(edge.classifier, obs):
                        events.append(f"unplanned-edge({edge.from_vertex}->{edge.to_vertex})")
                if detect_intersection(planned.classifier, obs) and world.time - last_switch >= cfg.min_switch_interval:
                    cursor += 1
                    vertex = planned.to_vertex
                    controller = tng.vertices[vertex].controller
                    if hasattr(controller, "reset"):
                        controller.reset()
                    last_switch = world.time
                    log.switches.append((world.time, planned.from_vertex, planned.to_vertex))
                    events.append(f"switch({planned.from_vertex}->{planned.to_vertex})")
                    if supervisor is not None:
                        supervisor.set_reference(tng.vertices[vertex].trajectory_id)
                    if cursor == len(route.edges):
                        phase = Phase.GOAL_SEEKING
            if phase is Phase.GOAL_SEEKING and goal_reached(goal, obs):
                log.outcome = "done"
                phase = Phase.DONE
                log.ticks.append(TickRecord(world.time, (world.pose.x, world.pose.y, world.pose.theta),
                                            (0.0, 0.0), phase.value, events + ["goal-reached"]))
                break
            cmd = _controller_command(controller, obs, cfg.dt, log, events)
            log.distance += abs(cmd.linear) * cfg.dt

        log.ticks.append(TickRecord(world.time, (world.pose.x, world.pose.y, world.pose.theta),
                                    (cmd.linear, cmd.angular), phase.value, events))
        world.apply(cmd, cfg.dt)
    else:
        log.outcome = "failed"
        log.failure_reason = "timeout"

    if intervention_start is not None:
        log.interventions.append((intervention_start, world.time, intervention_trigger))
    log.total_time = world.time
    log.final_pose = (world.pose.x, world.pose.y, world.pose.theta)
    return log


# ---------------------------------------------------------------------------
# Construction helpers: enrollment with calibrated thresholds.

def _clean_obs(env: Environment, pose) -> Observation:
    return observe(env, pose, rng=None)


def calibrate_offsets(env: Environment, traj: Trajectory, arc: float, offset: float) -> float:
    """Feature distance between the observation at `arc` and observations
    `offset` metres before/after it along the trajectory (the smaller of
    the two): the geometric scale for an exemplar threshold."""
    center = _clean_obs(env, traj.pose_at(arc)).features
    dists = []
    for s in (arc - offset, arc + offset):
        dists.append(float(np.linalg.norm(_clean_obs(env, traj.pose_at(s)).features - center)))
    return min(dists)


def exemplar_threshold(env: Environment, traj: Trajectory, arc: float,
                       offset: float = 0.15, noise_mult: float = 3.0) -> float:
    """Threshold that fires within roughly +/-offset metres of `arc` while
    absorbing the observation-noise floor."""
    geometric = calibrate_offsets(env, traj, arc, offset)
    sigma = env.featurizer.noise_sigma
    noise_floor = noise_mult * sigma * math.sqrt(env.featurizer.feature_dim)
    return math.sqrt(geometric ** 2 + noise_floor ** 2)


def enroll_crossing_from_environment(env: Environment, crossing, exemplar_arcs=(-0.05, 0.0, 0.05),
                                     offset: float = 0.15, noise_mult: float = 3.0) -> IntersectionClassifier:
    """Enroll a directed crossing with clean observations captured on the
    source trajectory around the crossing arc, approaching it."""
    traj = env.trajectory(crossing.from_trajectory)
    observations = [_clean_obs(env, traj.pose_at(crossing.from_arc + d)) for d in exemplar_arcs]
    threshold = exemplar_threshold(env, traj, crossing.from_arc, offset, noise_mult)
    return enroll_intersection(observations, crossing.from_trajectory, crossing.to_trajectory, threshold)


def goal_reacher_for_pose(env: Environment, traj: Trajectory, arc: float, goal_obs: Observation,
                          offset: float = 0.4, noise_mult: float = 3.0,
                          slack: float = 1.6) -> GoalReacher:
    # The goal check must fire while the controller passes the goal pose
    # with its usual tracking offset, so the calibration gets extra slack
    # compared to crossing recognizers.
    threshold = slack * exemplar_threshold(env, traj, arc, offset, noise_mult)
    return enroll_goal([goal_obs], threshold)


def edge_weight_for_crossing(crossing, mode: str = "arc") -> float:
    """Static edge weight: arc length from the source trajectory's start
    to the crossing (floored to stay positive), or 1 in hop-count mode."""
    if mode == "hops":
        return 1.0
    return max(crossing.from_arc, 1e-3)


def build_tng_from_environment(env: Environment, controllers, trajectory_classifier: TrajectoryClassifier,
                               weight_mode: str = "arc", offset: float = 0.15,
                               noise_mult: float = 3.0) -> TngGraph:
    """Build the full graph for an environment: one vertex per trajectory
    (in trajectory-id order) and one enrolled edge per directed crossing."""
    ids = sorted(env.trajectory_ids)
    index_of = {tid: i for i, tid in enumerate(ids)}
    edges = []
    for crossing in env.intersections:
        classifier = enroll_crossing_from_environment(env, crossing, offset=offset, noise_mult=noise_mult)
        edges.append((index_of[crossing.from_trajectory], index_of[crossing.to_trajectory],
                      classifier, edge_weight_for_crossing(crossing, weight_mode)))
    return build_tng(controllers, trajectory_classifier, edges, trajectory_ids=ids)
