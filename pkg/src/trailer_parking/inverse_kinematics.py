"""Virtual-steer kinematics: the trailer treated as a standalone vehicle.

Placing a fictitious steer axle at the hitch lets the trailer be commanded
like a bicycle-model vehicle.  This module maps that virtual steer angle and
trailer axle speed to the tractor's actual front-wheel steer and rear-axle
speed (and back), and provides the closed-loop harness that checks the
mapping reproduces a commanded virtual-steer profile on the full plant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import (
    ControlInput,
    SystemState,
    VehicleTrailerParams,
    integrate,
    plant_derivative,
    trailer_speed,
)

__all__ = [
    "VirtualInput",
    "SingularConfigurationError",
    "HitchAtRestError",
    "virtual_to_actual_steer",
    "actual_to_virtual_steer",
    "virtual_to_actual_speed",
    "desired_yaw_rates",
    "measured_virtual_steer",
    "SteerTrackingResult",
    "step_profile",
    "run_steer_tracking",
]

_SINGULAR_TOL = 1e-9


class SingularConfigurationError(ValueError):
    """Steer mapping denominator vanished: hitch velocity direction undefined."""


class HitchAtRestError(ValueError):
    """Virtual steer is undefined while the hitch point is not moving."""


@dataclass(frozen=True)
class VirtualInput:
    """Trailer-as-vehicle inputs: signed trailer axle speed and virtual steer
    angle at the hitch."""

    speed: float
    steer: float

    def __post_init__(self):
        if not abs(self.steer) < math.pi / 2:
            raise ValueError(f"virtual steer {self.steer} outside (-pi/2, pi/2)")


def virtual_to_actual_steer(
    virtual_steer: float, hitch_angle: float, params: VehicleTrailerParams
) -> float:
    """Map a virtual steer angle at the hitch to the tractor front-wheel angle.

    In reverse trailer operation the sign inverts: steering the virtual axle
    left requires steering the tractor right.
    """
    ch, sh = math.cos(hitch_angle), math.sin(hitch_angle)
    tv = math.tan(virtual_steer)
    den = ch + sh * tv
    if abs(den) < _SINGULAR_TOL:
        raise SingularConfigurationError(
            f"singular mapping at hitch angle {hitch_angle!r}, virtual steer {virtual_steer!r}"
        )
    return math.atan(params.wheelbase / params.hitch_offset * (sh - ch * tv) / den)


def actual_to_virtual_steer(
    steer: float, hitch_angle: float, params: VehicleTrailerParams
) -> float:
    """Map the tractor front-wheel angle to the equivalent virtual steer angle."""
    ch, sh = math.cos(hitch_angle), math.sin(hitch_angle)
    ts = math.tan(steer)
    den = params.wheelbase * ch + params.hitch_offset * sh * ts
    if abs(den) < _SINGULAR_TOL:
        raise SingularConfigurationError(
            f"singular mapping at hitch angle {hitch_angle!r}, steer {steer!r}"
        )
    return math.atan((params.wheelbase * sh - params.hitch_offset * ch * ts) / den)


def virtual_to_actual_speed(trailer_axle_speed: float, virtual_steer: float, hitch_angle: float) -> float:
    """Tractor rear-axle speed that realizes the given trailer axle speed."""
    return trailer_axle_speed * (
        math.cos(hitch_angle) + math.sin(hitch_angle) * math.tan(virtual_steer)
    )


def desired_yaw_rates(
    v: VirtualInput, hitch_angle: float, params: VehicleTrailerParams
) -> tuple[float, float]:
    """Yaw rates (trailer, tractor) the rig must exhibit to realize ``v``."""
    trailer_yaw_rate = v.speed / params.trailer_length * math.tan(v.steer)
    yaw_rate = (
        v.speed
        / params.hitch_offset
        * (math.sin(hitch_angle) - math.cos(hitch_angle) * math.tan(v.steer))
    )
    return (trailer_yaw_rate, yaw_rate)


def measured_virtual_steer(
    state: SystemState, u: ControlInput, params: VehicleTrailerParams
) -> float:
    """Virtual steer angle realized by the plant under input ``u``.

    Computed as the angle of the hitch-point velocity relative to the trailer
    axis, folded modulo pi so forward and reverse motion read the same steer.
    """
    v_t = trailer_speed(state, u, params)
    trailer_yaw_rate = plant_derivative(state, u, params)[3]
    c2, s2 = math.cos(state.trailer_yaw), math.sin(state.trailer_yaw)
    lt = params.trailer_length
    hitch_vx = v_t * c2 - lt * trailer_yaw_rate * s2
    hitch_vy = v_t * s2 + lt * trailer_yaw_rate * c2
    if math.hypot(hitch_vx, hitch_vy) < _SINGULAR_TOL:
        raise HitchAtRestError("hitch velocity is zero; virtual steer undefined")
    along = hitch_vx * c2 + hitch_vy * s2
    across = -hitch_vx * s2 + hitch_vy * c2
    return math.atan(across / along)


@dataclass(frozen=True)
class SteerTrackingResult:
    """Closed-loop virtual-steer tracking run: sampled profiles and error."""

    times: tuple[float, ...]
    desired: tuple[float, ...]
    measured: tuple[float, ...]
    max_error: float
    states: tuple[SystemState, ...] = field(repr=False, default=())


def step_profile(
    magnitude: float = 0.2, step_duration: float = 5.0, total_time: float = 20.0
):
    """Piecewise-constant virtual-steer profile alternating +/- magnitude."""

    def profile(t: float) -> float:
        k = min(int(t / step_duration), max(int(total_time / step_duration) - 1, 0))
        return magnitude if k % 2 == 0 else -magnitude

    return profile


def run_steer_tracking(
    params: VehicleTrailerParams,
    profile=None,
    speed: float = -1.0,
    total_time: float = 20.0,
    dt: float = 0.01,
    initial: SystemState | None = None,
) -> SteerTrackingResult:
    """Drive the plant with inverse-kinematic steering and measure tracking.

    At each sample the desired virtual steer is mapped to a tractor steer
    angle at the current hitch angle, the realized virtual steer is read back
    from the plant rates, and the plant advances one step at constant
    rear-axle ``speed``.
    """
    if profile is None:
        profile = step_profile(total_time=total_time)
    state = initial if initial is not None else SystemState(0.0, 0.0, 0.0, 0.0)
    steps = round(total_time / dt)
    times, desired, measured, states = [], [], [], []
    max_error = 0.0
    for k in range(steps + 1):
        t = k * dt
        want = profile(t)
        steer = virtual_to_actual_steer(want, state.hitch_angle, params)
        u = ControlInput(speed=speed, steer=steer)
        got = measured_virtual_steer(state, u, params)
        times.append(t)
        desired.append(want)
        measured.append(got)
        states.append(state)
        max_error = max(max_error, abs(got - want))
        if k < steps:
            state = integrate(state, u, dt, params, substeps=1)
    return SteerTrackingResult(
        times=tuple(times),
        desired=tuple(desired),
        measured=tuple(measured),
        max_error=max_error,
        states=tuple(states),
    )
