"""Kinematic plant model of a tractor towing a single-axle trailer.

The rig is parameterized by three lengths (tractor wheelbase, rear axle to
hitch, hitch to trailer axle) and carries a four-component state: tractor
rear-axle position, tractor yaw, trailer yaw.  Trailer and hitch positions
are never integrated; they are reconstructed algebraically from the rigid
links, so link lengths are exact at every step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "VehicleTrailerParams",
    "SystemState",
    "ControlInput",
    "PoseSet",
    "JackknifeError",
    "DEFAULT_JACKKNIFE_LIMIT",
    "derive_poses",
    "plant_derivative",
    "trailer_speed",
    "integrate",
    "wrap_angle",
]

# Reverse motion past this hitch angle is treated as a fold-up, not a plan.
DEFAULT_JACKKNIFE_LIMIT = math.radians(75.0)


class JackknifeError(RuntimeError):
    """Hitch angle exceeded the configured fold-up guard during simulation."""

    def __init__(self, state: "SystemState", limit: float):
        self.state = state
        self.limit = limit
        super().__init__(
            f"hitch angle {math.degrees(state.hitch_angle):.2f} deg exceeds "
            f"jackknife guard {math.degrees(limit):.2f} deg"
        )


@dataclass(frozen=True)
class VehicleTrailerParams:
    """Geometric constants of the rig, all in meters.

    ``cg_to_front`` and ``cg_to_rear`` locate the tractor center of gravity;
    they are carried for completeness but no kinematic relation here uses
    them.
    """

    wheelbase: float            # tractor front axle to rear axle
    hitch_offset: float         # tractor rear axle to hitch joint (> 0: hitch behind axle)
    trailer_length: float       # hitch joint to trailer axle
    cg_to_front: float = 0.0
    cg_to_rear: float = 0.0

    def __post_init__(self):
        if not (self.wheelbase > 0.0):
            raise ValueError(f"wheelbase must be positive, got {self.wheelbase}")
        if not (self.hitch_offset > 0.0):
            raise ValueError(f"hitch_offset must be positive, got {self.hitch_offset}")
        if not (self.trailer_length > 0.0):
            raise ValueError(f"trailer_length must be positive, got {self.trailer_length}")


@dataclass(frozen=True)
class SystemState:
    """Full plant state: tractor rear-axle pose plus trailer yaw.

    Angles are stored unwrapped (continuous); wrapping is applied only when
    reporting orientation errors.
    """

    x: float
    y: float
    yaw: float          # tractor
    trailer_yaw: float

    @property
    def hitch_angle(self) -> float:
        return self.yaw - self.trailer_yaw


@dataclass(frozen=True)
class ControlInput:
    """Tractor inputs: signed rear-axle speed (negative = reverse) and
    front-wheel steer angle."""

    speed: float
    steer: float

    def __post_init__(self):
        if not abs(self.steer) < math.pi / 2:
            raise ValueError(f"steer angle {self.steer} outside (-pi/2, pi/2)")


@dataclass(frozen=True)
class PoseSet:
    """Positions of the rig's key points, reconstructed from one state."""

    front: tuple[float, float]
    rear: tuple[float, float]
    hitch: tuple[float, float]
    trailer: tuple[float, float]


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def derive_poses(state: SystemState, params: VehicleTrailerParams) -> PoseSet:
    """Reconstruct front-axle, hitch and trailer-axle positions from the state.

    The hitch sits behind the tractor rear axle along the tractor axis; the
    trailer axle sits behind the hitch along the trailer axis.
    """
    c1, s1 = math.cos(state.yaw), math.sin(state.yaw)
    c2, s2 = math.cos(state.trailer_yaw), math.sin(state.trailer_yaw)
    front = (state.x + params.wheelbase * c1, state.y + params.wheelbase * s1)
    hitch = (state.x - params.hitch_offset * c1, state.y - params.hitch_offset * s1)
    trailer = (hitch[0] - params.trailer_length * c2, hitch[1] - params.trailer_length * s2)
    return PoseSet(front=front, rear=(state.x, state.y), hitch=hitch, trailer=trailer)


def plant_derivative(
    state: SystemState, u: ControlInput, params: VehicleTrailerParams
) -> tuple[float, float, float, float]:
    """Time derivative of (x, y, yaw, trailer_yaw) under no-slip rolling.

    Trailer translational rates are not part of the integrated state; the
    trailer pose follows algebraically from the yaws and the rigid links.
    """
    for name, value in (("x", state.x), ("y", state.y), ("yaw", state.yaw),
                        ("trailer_yaw", state.trailer_yaw),
                        ("speed", u.speed), ("steer", u.steer)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite {name}: {value}")
    tan_steer = math.tan(u.steer)
    hitch = state.hitch_angle
    x_rate = u.speed * math.cos(state.yaw)
    y_rate = u.speed * math.sin(state.yaw)
    yaw_rate = u.speed / params.wheelbase * tan_steer
    trailer_yaw_rate = (
        u.speed
        / params.trailer_length
        * (math.sin(hitch) - params.hitch_offset / params.wheelbase * math.cos(hitch) * tan_steer)
    )
    return (x_rate, y_rate, yaw_rate, trailer_yaw_rate)


def trailer_speed(state: SystemState, u: ControlInput, params: VehicleTrailerParams) -> float:
    """Signed speed of the trailer axle center along the trailer axis."""
    hitch = state.hitch_angle
    return u.speed * (
        math.cos(hitch)
        + params.hitch_offset / params.wheelbase * math.sin(hitch) * math.tan(u.steer)
    )


def integrate(
    state: SystemState,
    u: ControlInput,
    dt: float,
    params: VehicleTrailerParams,
    substeps: int = 10,
    jackknife_limit: float = DEFAULT_JACKKNIFE_LIMIT,
) -> SystemState:
    """Propagate the plant by ``dt`` seconds of constant input, RK4 fixed step.

    ``substeps`` subdivides ``dt``; the result is deterministic.  Raises
    :class:`JackknifeError` if the hitch angle leaves the guard band at any
    substep boundary.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    h = dt / substeps
    current = state
    for _ in range(substeps):
        k1 = plant_derivative(current, u, params)
        k2 = plant_derivative(_shift(current, k1, 0.5 * h), u, params)
        k3 = plant_derivative(_shift(current, k2, 0.5 * h), u, params)
        k4 = plant_derivative(_shift(current, k3, h), u, params)
        current = SystemState(
            x=current.x + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y=current.y + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            yaw=current.yaw + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
            trailer_yaw=current.trailer_yaw
            + h / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        )
        if abs(current.hitch_angle) > jackknife_limit:
            raise JackknifeError(current, jackknife_limit)
    return current


def _shift(state: SystemState, rate: tuple[float, float, float, float], h: float) -> SystemState:
    return SystemState(
        x=state.x + h * rate[0],
        y=state.y + h * rate[1],
        yaw=state.yaw + h * rate[2],
        trailer_yaw=state.trailer_yaw + h * rate[3],
    )
