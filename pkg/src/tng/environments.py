"""Bundled desk-scale environments.

All loops are stadium shapes (two straights joined by semicircular caps)
sized so the pure-pursuit expert can track them well inside the command
clip.  The ring chain overlaps adjacent loops just slightly and
alternates traversal direction, which keeps the heading change at every
crossing shallow enough for a controller trained with shifted/relabeled
data to recover after a switch.
"""

from __future__ import annotations

import math

import numpy as np

from .world import Environment, FeaturizerConfig, Trajectory, assemble_environment

DEFAULT_FEATURIZER_SEED = 7


def _stadium_points(cx: float, cy: float, half_straight: float, radius: float,
                    clockwise: bool = False, cap_points: int = 12) -> list[tuple[float, float]]:
    pts: list[tuple[float, float]] = [(cx - half_straight, cy - radius)]
    for k in range(cap_points + 1):
        ang = -math.pi / 2 + math.pi * k / cap_points
        pts.append((cx + half_straight + radius * math.cos(ang), cy + radius * math.sin(ang)))
    for k in range(cap_points):
        ang = math.pi / 2 + math.pi * k / cap_points
        pts.append((cx - half_straight + radius * math.cos(ang), cy + radius * math.sin(ang)))
    if clockwise:
        pts = [pts[0]] + pts[:0:-1]
    return pts


def _featurizer(noise_sigma: float, landmark_count: int, ray_count: int = 24,
                seed: int = DEFAULT_FEATURIZER_SEED) -> FeaturizerConfig:
    # One slot per landmark keeps the encoding free of membership churn.
    return FeaturizerConfig(seed=seed, feature_dim=ray_count + 3 * landmark_count,
                            ray_count=ray_count, max_range=8.0, noise_sigma=noise_sigma)


def two_crossing(noise_sigma: float = 0.0) -> Environment:
    """Two straight open trajectories crossing once."""
    t0 = Trajectory(0, [(-2.0, 0.0), (0.0, 0.0), (2.0, 0.0)], closed=False, name="west-east")
    t1 = Trajectory(1, [(0.3, -2.0), (0.3, 0.0), (0.3, 2.0)], closed=False, name="south-north")
    landmarks = [(-1.5, 1.0, 1.0), (1.5, -1.0, 1.6), (0.3, 1.5, 2.2)]
    return assemble_environment([t0, t1], landmarks, _featurizer(noise_sigma, len(landmarks)))


def lap_loop(noise_sigma: float = 0.0) -> Environment:
    """Single closed stadium loop for lap experiments."""
    loop = Trajectory(0, _stadium_points(0.0, 0.0, 1.5, 0.8), closed=True, name="lap-loop")
    landmarks = [
        (0.0, 0.0, 2.0),
        (2.6, 1.6, 1.2),
        (-2.6, 1.6, 0.8),
        (2.6, -1.6, 1.6),
        (-2.6, -1.6, 2.4),
        (0.0, 2.0, 1.0),
        (0.0, -2.0, 1.4),
        (3.2, 0.0, 0.6),
    ]
    return assemble_environment([loop], landmarks, _featurizer(noise_sigma, len(landmarks)))


RING_HALF_STRAIGHT = 1.2
RING_RADIUS = 0.8
RING_SPACING = 3.98  # cap centers 1.58 m apart: shallow ~0.32 rad crossings


def ring_chain(count: int = 5, noise_sigma: float = 0.0) -> Environment:
    """A row of `count` overlapping stadium loops with alternating
    traversal direction; strongly connected through the cap crossings."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cap_x = RING_HALF_STRAIGHT + RING_RADIUS
    trajectories = []
    landmarks = []
    for i in range(count):
        cx = i * RING_SPACING
        pts = _stadium_points(cx, 0.0, RING_HALF_STRAIGHT, RING_RADIUS, clockwise=(i % 2 == 1))
        trajectories.append(Trajectory(i, pts, closed=True, name=f"ring-{i}"))
        landmarks.append((cx, 1.9, 0.6 + 0.45 * i))
        landmarks.append((cx - 0.9, -1.9, 0.8 + 0.37 * i))
        landmarks.append((cx + 0.9, -1.4, 1.1 + 0.29 * i))
        # cap-tip cues: close landmarks whose bearings swing fast right
        # where the turn into each cap begins
        landmarks.append((cx - cap_x - 0.3, 0.5, 1.3 + 0.23 * i))
        landmarks.append((cx + cap_x + 0.3, -0.5, 0.9 + 0.41 * i))
    return assemble_environment(trajectories, landmarks, _featurizer(noise_sigma, len(landmarks)))


def five_ring(noise_sigma: float = 0.0) -> Environment:
    return ring_chain(5, noise_sigma)


BUNDLED = {
    "two-crossing": two_crossing,
    "lap-loop": lap_loop,
    "five-ring": five_ring,
}


def by_name(name: str, noise_sigma: float = 0.0) -> Environment:
    if name.startswith("ring-chain-"):
        return ring_chain(int(name.rsplit("-", 1)[1]), noise_sigma)
    try:
        return BUNDLED[name](noise_sigma)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; have {sorted(BUNDLED)} or ring-chain-N") from None
