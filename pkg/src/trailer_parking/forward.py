"""Forward repositioning: pure-pursuit tracking of the straight exit line.

When reverse motion alone cannot finish the park, the tractor pulls forward
along a line extending out of the space (trailer ignored by the controller;
towing forward straightens it naturally) until the hitch is nearly straight
and the rig has enough room to try reversing again.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .model import SystemState, VehicleTrailerParams, derive_poses, wrap_angle

__all__ = ["ForwardPath", "ForwardConfig", "pursuit_steer", "forward_terminated"]


@dataclass(frozen=True)
class ForwardPath:
    """Infinite straight line: anchor point plus unit direction.

    Defaults to the parking frame's X axis, the line out of the space along
    the desired final trailer heading.
    """

    anchor: tuple[float, float] = (0.0, 0.0)
    direction: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        norm = math.hypot(*self.direction)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"direction must be a unit vector, |{self.direction}| = {norm}")


@dataclass(frozen=True)
class ForwardConfig:
    """Pure-pursuit tuning and the dual termination thresholds."""

    lookahead: float = 5.0
    speed: float = 1.0                            # forward, > 0
    hitch_threshold: float = math.radians(2.0)
    distance_threshold: float = 8.0
    steer_min: float = -0.75
    steer_max: float = 0.75

    def __post_init__(self):
        if self.lookahead <= 0.0 or self.speed <= 0.0:
            raise ValueError("lookahead and speed must be positive")
        if self.hitch_threshold <= 0.0 or self.distance_threshold <= 0.0:
            raise ValueError("termination thresholds must be positive")
        if self.steer_min > self.steer_max:
            raise ValueError("steer bounds out of order")


def pursuit_steer(
    state: SystemState,
    path: ForwardPath,
    cfg: ForwardConfig,
    params: VehicleTrailerParams,
) -> float:
    """Steer toward the point on the line one lookahead distance ahead.

    Classic geometric pure pursuit from the rear axle: the chord to the
    lookahead point subtends the heading error ``alpha`` and the steer is
    atan(2 L sin(alpha) / lookahead), clamped to the tractor limits.  If the
    rig sits farther from the line than the lookahead radius, the target
    falls back to the foot of the perpendicular, which saturates steering
    toward the line.
    """
    dx = state.x - path.anchor[0]
    dy = state.y - path.anchor[1]
    ux, uy = path.direction
    along = dx * ux + dy * uy
    offset = ux * dy - uy * dx  # signed, positive left of the line
    chord = cfg.lookahead * cfg.lookahead - offset * offset
    advance = math.sqrt(chord) if chord > 0.0 else 0.0
    target_x = path.anchor[0] + (along + advance) * ux
    target_y = path.anchor[1] + (along + advance) * uy
    alpha = wrap_angle(math.atan2(target_y - state.y, target_x - state.x) - state.yaw)
    steer = math.atan(2.0 * params.wheelbase * math.sin(alpha) / cfg.lookahead)
    return min(max(steer, cfg.steer_min), cfg.steer_max)


def forward_terminated(
    state: SystemState,
    path: ForwardPath,
    cfg: ForwardConfig,
    params: VehicleTrailerParams,
) -> bool:
    """Stop the forward leg once the hitch is nearly straight and the trailer
    axle is far enough from the parking-frame origin."""
    if abs(wrap_angle(state.hitch_angle)) >= cfg.hitch_threshold:
        return False
    trailer = derive_poses(state, params).trailer
    return math.hypot(trailer[0], trailer[1]) > cfg.distance_threshold
