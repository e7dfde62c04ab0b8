"""Evaluation harness.

Percentage autonomy over supervised episodes, lap experiments with a
geometric stand-in for the human safety driver, landmark-perturbation
degradation sweeps, and the all-pairs navigation matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detection import Abstain
from .graph import (
    EpisodeLog,
    ExecutiveConfig,
    GoalReacher,
    NoPathError,
    Plan,
    TngGraph,
    execute,
    goal_reacher_for_pose,
    identify_goal,
    localize,
    plan,
)
from .imitation import ExpertConfig, ExpertLostError, expert_command
from .world import (
    Environment,
    MotorCommand,
    Pose,
    Trajectory,
    WorldState,
    ZERO_COMMAND,
    assemble_environment,
    cross_track,
    observe,
)


def percentage_autonomy(log) -> float:
    """PA = 100 * (1 - human_time / total_time)."""
    tau = getattr(log, "total_time")
    tau_h = getattr(log, "human_time")
    if tau <= 0:
        raise ValueError("total time must be positive")
    return 100.0 * (1.0 - tau_h / tau)


@dataclass(frozen=True)
class SupervisorConfig:
    """Geometric stand-in for a human who intervenes on visible mistakes."""

    max_cross_track: float = 0.75
    max_heading_error: float = 1.2
    grace: float = 1.0
    recover_to: float = 0.1
    recovery: ExpertConfig = field(default_factory=lambda: ExpertConfig(cruise_speed=0.4))

    def __post_init__(self):
        if self.recover_to >= self.max_cross_track:
            raise ValueError("recover_to must be smaller than max_cross_track")
        if self.grace < 0:
            raise ValueError("grace must be >= 0")


class EpisodeFailure(RuntimeError):
    """The supervisor itself could not recover the robot."""


class TrajectorySupervisor:
    """Tracks violations against the current reference trajectory and
    takes over (driving the recovery expert) once a violation persists
    for the grace period, releasing when back within recover_to."""

    def __init__(self, cfg: SupervisorConfig, env: Environment, reference: Trajectory):
        self.cfg = cfg
        self.env = env
        self.reference = reference
        self.intervening = False
        self.trigger = ""
        self._violating_since: float | None = None

    def set_reference(self, trajectory_id: int):
        self.reference = self.env.trajectory(trajectory_id)
        self._violating_since = None

    def _violation(self, pose: Pose) -> str | None:
        dist, heading_err, _ = cross_track(pose, self.reference)
        if dist > self.cfg.max_cross_track:
            return "max_cross_track"
        if abs(heading_err) > self.cfg.max_heading_error:
            return "max_heading_error"
        return None

    def update(self, pose: Pose, t: float, dt: float) -> tuple[MotorCommand | None, str]:
        """Returns (override command, trigger); the command is None while
        the controller under test keeps authority."""
        dist, _, _ = cross_track(pose, self.reference)
        if self.intervening:
            if dist <= self.cfg.recover_to:
                self.intervening = False
                self._violating_since = None
                return None, ""
            try:
                return expert_command(pose, self.reference, self.cfg.recovery), self.trigger
            except ExpertLostError as exc:
                raise EpisodeFailure(f"unrecoverable at t={t:.1f}s: {exc}") from exc
        trigger = self._violation(pose)
        if trigger is None:
            self._violating_since = None
            return None, ""
        if self._violating_since is None:
            self._violating_since = t
        if t - self._violating_since + dt >= self.cfg.grace:
            self.intervening = True
            self.trigger = trigger
            return expert_command(pose, self.reference, self.cfg.recovery), trigger
        return None, ""


@dataclass
class LapReport:
    """Outcome of one supervised multi-lap run."""

    pa: float
    laps_completed: int
    laps_requested: int
    total_time: float
    human_time: float
    distance: float
    interventions: list[tuple[float, float, str]]
    abstain_count: int = 0
    partial: bool = False

    @property
    def intervention_count(self) -> int:
        return len(self.interventions)


def run_lap_experiment(controller, env: Environment, traj: Trajectory, laps: int = 10,
                       supervisor_cfg: SupervisorConfig | None = None, seed: int = 0,
                       dt: float = 0.1, step_budget: int | None = None) -> LapReport:
    """Run a controller around a closed trajectory under supervision until
    `laps` completions (or the step budget, which flags a partial report)."""
    if not traj.closed:
        raise ValueError("lap experiments need a closed trajectory")
    supervisor_cfg = supervisor_cfg or SupervisorConfig()
    world = WorldState(env, traj.pose_at(0.0), np.random.default_rng(seed))
    if hasattr(controller, "bind"):
        controller.bind(world)
    if hasattr(controller, "reset"):
        controller.reset()
    supervisor = TrajectorySupervisor(supervisor_cfg, env, traj)
    if step_budget is None:
        step_budget = int(6 * laps * traj.length / (0.2 * dt)) + 200

    human_time = 0.0
    distance = 0.0
    abstains = 0
    completed = 0
    prev_arc = 0.0
    interventions: list[tuple[float, float, str]] = []
    open_start: float | None = None
    open_trigger = ""
    steps = 0
    while steps < step_budget and completed < laps:
        steps += 1
        override, trigger = supervisor.update(world.pose, world.time, dt)
        if override is not None:
            if open_start is None:
                open_start = world.time
                open_trigger = trigger
            cmd = override
            human_time += dt
        else:
            if open_start is not None:
                interventions.append((open_start, world.time, open_trigger))
                open_start = None
            obs = world.observe()
            result = controller.act(obs, dt)
            if isinstance(result, Abstain):
                abstains += 1
                cmd = ZERO_COMMAND
            else:
                cmd = result
            distance += abs(cmd.linear) * dt
        world.apply(cmd, dt)
        _, _, arc = cross_track(world.pose, traj)
        if prev_arc > 0.75 * traj.length and arc < 0.25 * traj.length:
            completed += 1
        prev_arc = arc
    if open_start is not None:
        interventions.append((open_start, world.time, open_trigger))
    total = world.time
    return LapReport(
        pa=100.0 * (1.0 - human_time / total) if total > 0 else 0.0,
        laps_completed=completed,
        laps_requested=laps,
        total_time=total,
        human_time=human_time,
        distance=distance,
        interventions=interventions,
        abstain_count=abstains,
        partial=completed < laps,
    )


def perturb_environment(env: Environment, magnitude: float, seed: int) -> Environment:
    """Displace every landmark by a Gaussian offset of scale `magnitude`
    metres; trajectory geometry and the featurizer stay untouched."""
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    rng = np.random.default_rng(seed)
    landmarks = env.landmarks.copy()
    if len(landmarks):
        landmarks[:, :2] += magnitude * rng.standard_normal((len(landmarks), 2))
    return assemble_environment(env.trajectories, landmarks, env.featurizer, env.suppressed)


@dataclass
class MatrixCell:
    src: int
    dst: int
    pa: float
    distance: float
    outcome: str
    switches: int
    interventions: int
    goal_error: float
    localized_as: int
    identified_goal: int


@dataclass
class MatrixReport:
    """All-pairs navigation outcomes (diagonal stays empty)."""

    cells: list[MatrixCell]
    pa_matrix: np.ndarray
    distance_matrix: np.ndarray
    mean_pa: float
    total_distance: float
    failures: int


def _sample_arc_away_from_crossings(traj: Trajectory, env: Environment, rng: np.random.Generator,
                                    margin: float = 0.8, tries: int = 200) -> float:
    """Uniform arc position at least `margin` metres (along the arc) from
    every crossing on the trajectory."""
    crossing_arcs = [ix.from_arc for ix in env.intersections if ix.from_trajectory == traj.id]
    crossing_arcs += [ix.to_arc for ix in env.intersections if ix.to_trajectory == traj.id]
    length = traj.length
    best = 0.0
    for _ in range(tries):
        arc = float(rng.uniform(0.0, length))
        if traj.closed:
            gap = min((min(abs(arc - a), length - abs(arc - a)) for a in crossing_arcs), default=length)
        else:
            gap = min((abs(arc - a) for a in crossing_arcs), default=length)
        if gap >= margin:
            return arc
        best = arc
    return best


def run_navigation_episode(tng: TngGraph, env: Environment, src_id: int, dst_id: int,
                           seed: int, supervisor_cfg: SupervisorConfig | None = None,
                           exec_cfg: ExecutiveConfig | None = None,
                           start_margin: float = 0.8) -> MatrixCell:
    """One matrix cell: sample start/goal poses, capture the goal
    observation, localize, plan, and execute under supervision."""
    supervisor_cfg = supervisor_cfg or SupervisorConfig()
    exec_cfg = exec_cfg or ExecutiveConfig()
    rng = np.random.default_rng(np.random.SeedSequence((seed, src_id, dst_id)))
    src_traj = env.trajectory(src_id)
    dst_traj = env.trajectory(dst_id)
    start_arc = _sample_arc_away_from_crossings(src_traj, env, rng, start_margin)
    goal_arc = _sample_arc_away_from_crossings(dst_traj, env, rng, start_margin)
    start_pose = src_traj.pose_at(start_arc)
    goal_pose = dst_traj.pose_at(goal_arc)

    world = WorldState(env, start_pose, rng)
    goal_obs = observe(env, goal_pose, rng, timestamp=0.0)
    goal = goal_reacher_for_pose(env, dst_traj, goal_arc, goal_obs)
    for vertex in tng.vertices:
        if hasattr(vertex.controller, "bind"):
            vertex.controller.bind(world)

    current, _ = localize(tng, world.observe())
    target = identify_goal(tng, goal_obs)
    try:
        route = plan(tng, current, target)
    except NoPathError:
        return MatrixCell(src_id, dst_id, 0.0, 0.0, "no-path", 0, 0, math.inf, current, target)
    supervisor = TrajectorySupervisor(supervisor_cfg, env,
                                      env.trajectory(tng.vertices[current].trajectory_id))
    try:
        log = execute(tng, route, world, goal, exec_cfg, supervisor)
    except EpisodeFailure:
        return MatrixCell(src_id, dst_id, 0.0, 0.0, "unrecoverable", 0, 0, math.inf, current, target)
    goal_error = math.hypot(world.pose.x - goal_pose.x, world.pose.y - goal_pose.y)
    return MatrixCell(src_id, dst_id, percentage_autonomy(log), log.distance, log.outcome,
                      len(log.switches), len(log.interventions), goal_error, current, target)


def _matrix_cell_task(args) -> MatrixCell:
    return run_navigation_episode(*args)


def run_navigation_matrix(tng: TngGraph, env: Environment, seed: int = 0,
                          supervisor_cfg: SupervisorConfig | None = None,
                          exec_cfg: ExecutiveConfig | None = None,
                          jobs: int = 1) -> MatrixReport:
    """Run every ordered trajectory pair and assemble the PA/distance
    matrices.  Cells are independent episodes; with jobs > 1 they run in
    worker processes and the report assembly order stays deterministic."""
    ids = sorted(env.trajectory_ids)
    if len(ids) < 2:
        raise ValueError("the navigation matrix needs at least two trajectories")
    tasks = [(tng, env, src, dst, seed, supervisor_cfg, exec_cfg)
             for src in ids for dst in ids if src != dst]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_matrix_cell_task, tasks))
    else:
        cells = [_matrix_cell_task(t) for t in tasks]

    index = {tid: i for i, tid in enumerate(ids)}
    c = len(ids)
    pa = np.full((c, c), np.nan)
    dist = np.full((c, c), np.nan)
    for cell in cells:
        pa[index[cell.src], index[cell.dst]] = cell.pa
        dist[index[cell.src], index[cell.dst]] = cell.distance
    return MatrixReport(
        cells=cells,
        pa_matrix=pa,
        distance_matrix=dist,
        mean_pa=float(np.mean([c_.pa for c_ in cells])),
        total_distance=float(np.sum([c_.distance for c_ in cells])),
        failures=sum(1 for c_ in cells if c_.outcome != "done"),
    )


@dataclass
class DegradationReport:
    """PA per controller across landmark-perturbation magnitudes, with the
    deltas against the unperturbed run."""

    magnitudes: list[float]
    pa: dict[str, list[float]]
    delta_pa: dict[str, list[float]]
    seed: int


def run_degradation_study(controllers: dict[str, object], env: Environment, traj: Trajectory,
                          magnitudes=(0.0, 0.1, 0.2, 0.4), laps: int = 10, seed: int = 0,
                          supervisor_cfg: SupervisorConfig | None = None,
                          dt: float = 0.1) -> DegradationReport:
    """Evaluate already-trained controllers on progressively perturbed
    copies of the environment (the before/after analog)."""
    magnitudes = list(magnitudes)
    pa: dict[str, list[float]] = {name: [] for name in controllers}
    for m_index, magnitude in enumerate(magnitudes):
        perturbed = perturb_environment(env, magnitude, seed + m_index)
        ref = perturbed.trajectory(traj.id)
        for name, controller in controllers.items():
            report = run_lap_experiment(controller, perturbed, ref, laps=laps,
                                        supervisor_cfg=supervisor_cfg, seed=seed, dt=dt)
            pa[name].append(report.pa)
    delta = {name: [values[0] - v for v in values] for name, values in pa.items()}
    return DegradationReport(magnitudes, pa, delta, seed)
