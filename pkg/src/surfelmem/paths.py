"""Trajectory builders: waypoint walks, in-place pans, and scenario tours.

Cameras face along the direction of travel. Heading discontinuities at
waypoint corners and pan junctions are regularized by inserting in-place
turning frames, so consecutive frames never snap by more than a bounded yaw
step (a batch of target views must stay coherent for step-averaged
retrieval). These generators feed the exploration harness and the evaluation
scenarios; they are plain constructors, no I/O.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import Camera
from .harness import Trajectory
from .world import camera_at

MAX_TURN_PER_FRAME = math.radians(15.0)


def _unwrap_to(prev: float, yaw: float) -> float:
    while yaw - prev > math.pi:
        yaw -= 2 * math.pi
    while yaw - prev < -math.pi:
        yaw += 2 * math.pi
    return yaw


def polyline(
    waypoints: list[tuple[float, float]],
    spacing: float,
    wiggle: float = 0.0,
    wiggle_period: float = 1.5,
    yaw_offset: float = 0.0,
) -> tuple[list[tuple[float, float]], list[float]]:
    """Positions and travel-facing yaws sampled along a polyline.

    `wiggle` overlays a sinusoidal yaw sway (radians) with the given arclength
    period; the final waypoint is included with the last heading.
    """
    pts = [np.asarray(w, dtype=float) for w in waypoints]
    pos: list[tuple[float, float]] = []
    yaws: list[float] = []
    total = 0.0
    prev_yaw = 0.0
    for leg in range(len(pts) - 1):
        a, b = pts[leg], pts[leg + 1]
        seg = b - a
        length = float(np.linalg.norm(seg))
        if length < 1e-12:
            continue
        heading = math.atan2(seg[1], seg[0])
        n = max(1, int(round(length / spacing)))
        for i in range(n):
            d = (i / n) * length
            p = a + seg * (d / length)
            yaw = heading + yaw_offset
            if wiggle:
                yaw += wiggle * math.sin(2 * math.pi * (total + d) / wiggle_period)
            yaw = _unwrap_to(prev_yaw, yaw) if (pos or leg) else yaw
            prev_yaw = yaw
            pos.append((float(p[0]), float(p[1])))
            yaws.append(yaw)
        total += length
    pos.append((float(pts[-1][0]), float(pts[-1][1])))
    yaws.append(prev_yaw)
    return pos, yaws


def pan_sequence(
    position: tuple[float, float],
    start_yaw: float,
    sweep: float,
    frames: int,
) -> tuple[list[tuple[float, float]], list[float]]:
    """In-place yaw sweep of `sweep` radians over `frames` frames."""
    pos = [position] * frames
    yaws = [start_yaw + sweep * (i + 1) / frames for i in range(frames)]
    return pos, yaws


def regularize_turns(
    positions: list[tuple[float, float]],
    yaws: list[float],
    max_step: float = MAX_TURN_PER_FRAME,
) -> tuple[list[tuple[float, float]], list[float]]:
    """Insert in-place turning frames wherever yaw would jump more than max_step."""
    if not positions:
        return [], []
    out_p = [positions[0]]
    out_y = [yaws[0]]
    for p, yaw in zip(positions[1:], yaws[1:]):
        yaw = _unwrap_to(out_y[-1], yaw)
        base = out_y[-1]
        delta = yaw - base
        steps = int(math.ceil(abs(delta) / max_step))
        for s in range(1, steps):  # equal yaw increments at the prior position
            out_p.append(out_p[-1])
            out_y.append(base + delta * s / steps)
        out_p.append(p)
        out_y.append(yaw)
    return out_p, out_y


def build_cameras(
    positions: list[tuple[float, float]],
    yaws: list[float],
    z: float = 1.5,
    fov_deg: float = 60.0,
    width: int = 256,
    height: int = 256,
) -> list[Camera]:
    return [
        camera_at((p[0], p[1], z), yaw, fov_deg=fov_deg, width=width, height=height)
        for p, yaw in zip(positions, yaws)
    ]


def walk(
    waypoints: list[tuple[float, float]],
    spacing: float,
    z: float = 1.5,
    wiggle: float = 0.0,
    wiggle_period: float = 1.5,
    fov_deg: float = 60.0,
    width: int = 256,
    height: int = 256,
) -> list[Camera]:
    """Cameras along a polyline facing travel, with regularized turns."""
    pos, yaws = polyline(waypoints, spacing, wiggle, wiggle_period)
    pos, yaws = regularize_turns(pos, yaws)
    return build_cameras(pos, yaws, z, fov_deg, width, height)


def two_rooms_tour(
    spacing: float = 0.15,
    width: int = 256,
    height: int = 256,
    m: int = 4,
) -> Trajectory:
    """Outbound tour of the two-room scene for the revisitation benchmark.

    An S-sweep covers room A with a yaw sway and a full look-around pan, the
    doorway is crossed head-on, and room B gets a counterclockwise loop whose
    south leg runs westward (staring at the shared wall from inside B) plus a
    pan beside the doorway. Wrap with cycle_protocol to force revisits along
    the reverse path.
    """
    pos: list[tuple[float, float]] = []
    yaws: list[float] = []

    def extend(p, y):
        if pos and p and pos[-1] == p[0]:
            p, y = p[1:], y[1:]
        if yaws and y:
            y = [_unwrap_to(yaws[-1], y[0])] + list(y[1:])
        pos.extend(p)
        yaws.extend(y)

    # First sweep of room A, with a look-around pan in its west half.
    p, y = polyline(
        [(0.8, 0.8), (3.1, 0.8), (3.1, 2.1), (1.0, 2.1)],
        spacing,
        wiggle=0.45,
        wiggle_period=1.6,
    )
    extend(p, y)
    p, y = pan_sequence((1.0, 2.1), yaws[-1], 2 * math.pi, 36)
    extend(p, y)
    p, y = polyline(
        [(1.0, 2.1), (0.9, 3.3), (3.2, 3.3), (3.4, 2.0)],
        spacing,
        wiggle=0.45,
        wiggle_period=1.6,
    )
    extend(p, y)
    # First visit of room B: a short counterclockwise loop, then back into A,
    # so later crossings revisit known territory on both sides of the wall.
    p, y = polyline(
        [(3.4, 2.0), (4.6, 2.0), (4.65, 3.25), (6.0, 3.25), (6.0, 0.8), (5.0, 0.7), (4.5, 1.6)],
        spacing,
        wiggle=0.25,
        wiggle_period=2.2,
    )
    extend(p, y)
    # Return into A and patrol its south and center from new headings.
    p, y = polyline(
        [(4.5, 1.6), (4.2, 2.0), (3.2, 2.0), (2.6, 0.9), (1.2, 1.2)],
        spacing,
        wiggle=0.35,
        wiggle_period=1.8,
    )
    extend(p, y)
    p, y = polyline(
        [(1.2, 1.2), (2.2, 2.8), (3.4, 2.1), (4.6, 2.05)],
        spacing,
        wiggle=0.35,
        wiggle_period=1.8,
    )
    extend(p, y)
    # Full counterclockwise loop of room B: the south leg runs westward,
    # staring at the shared wall and doorway from inside B, then a pan beside
    # the doorway.
    p, y = polyline(
        [(4.6, 2.05), (4.65, 3.3), (7.3, 3.3), (7.3, 0.7), (5.0, 0.7), (4.9, 1.7)],
        spacing,
        wiggle=0.25,
        wiggle_period=2.2,
    )
    extend(p, y)
    p, y = pan_sequence((4.9, 1.7), yaws[-1], 2 * math.pi, 36)
    extend(p, y)
    p, y = polyline([(4.9, 1.7), (6.2, 1.9)], spacing)
    extend(p, y)

    pos, yaws = regularize_turns(pos, yaws)
    cams = build_cameras(pos, yaws, z=1.5, fov_deg=60.0, width=width, height=height)
    return Trajectory(cams, m, "two_rooms_tour")


def corridor_lap(
    spacing: float = 0.4,
    width: int = 256,
    height: int = 256,
    m: int = 4,
) -> Trajectory:
    """One lap of the loop corridor, facing travel direction."""
    cams = walk(
        [(1.0, 1.0), (9.0, 1.0), (9.0, 9.0), (1.0, 9.0), (1.0, 1.2)],
        spacing,
        z=1.5,
        fov_deg=60.0,
        width=width,
        height=height,
    )
    return Trajectory(cams, m, "corridor_lap")
