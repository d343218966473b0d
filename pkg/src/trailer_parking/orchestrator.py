"""Staged parking flow: reverse plan, optional forward reposition, reverse again.

Stage 1 reverses the rig toward the space with the receding-horizon planner.
If the resulting pose already meets the acceptance thresholds the run ends
there; otherwise the rig pulls forward along the exit line (stage 2) and
reverses once more (stage 3).  Every applied input is logged, and failures
(jackknife, singular steering, step-cap runaway) are carried in the outcome
rather than raised past it.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .forward import ForwardConfig, ForwardPath, forward_terminated, pursuit_steer
from .inverse_kinematics import SingularConfigurationError, VirtualInput
from .model import (
    ControlInput,
    JackknifeError,
    SystemState,
    VehicleTrailerParams,
    derive_poses,
    integrate,
    wrap_angle,
    DEFAULT_JACKKNIFE_LIMIT,
)
from .nmpc import EmptyBoundsError, OcpConfig, nmpc_step, shift_warm_start, stage_terminated

__all__ = [
    "AcceptanceThresholds",
    "SimConfig",
    "StageMetrics",
    "LogRow",
    "StageResult",
    "ParkingOutcome",
    "run_stage_reverse",
    "run_stage_forward",
    "run_parking",
]


@dataclass(frozen=True)
class AcceptanceThresholds:
    """Pose-error bounds that count as a finished park (also the stage-1
    "good enough, skip repositioning" test)."""

    max_distance: float = 0.05
    max_orientation: float = math.radians(1.0)
    max_hitch: float = math.radians(5.0)

    def __post_init__(self):
        if min(self.max_distance, self.max_orientation, self.max_hitch) <= 0.0:
            raise ValueError("acceptance thresholds must be positive")


@dataclass(frozen=True)
class SimConfig:
    """Plant-propagation and runaway guards shared by all stages."""

    substeps: int = 10
    jackknife_limit: float = DEFAULT_JACKKNIFE_LIMIT
    max_stage_steps: int = 1200
    max_cycles: int = 1

    def __post_init__(self):
        if self.substeps < 1 or self.max_stage_steps < 1 or self.max_cycles < 1:
            raise ValueError("substeps, max_stage_steps and max_cycles must be >= 1")
        if self.jackknife_limit <= 0.0:
            raise ValueError("jackknife_limit must be positive")


@dataclass(frozen=True)
class StageMetrics:
    """End-of-stage pose errors in the parking frame."""

    stage: int
    distance_error: float      # trailer axle to origin, m
    orientation_error: float   # trailer yaw, wrapped, rad
    final_hitch: float         # hitch angle, wrapped, rad
    steps: int
    wall_time: float


@dataclass(frozen=True)
class LogRow:
    """One control period: the state at ``t`` and the input applied over it.

    ``virtual`` and ``ocp_cost`` are present only for reverse stages; the
    terminal row carries the final state with no input at all.
    """

    t: float
    state: SystemState
    control: ControlInput | None
    virtual: VirtualInput | None
    ocp_cost: float | None
    stage: int


@dataclass(frozen=True)
class StageResult:
    final_state: SystemState
    metrics: StageMetrics
    rows: tuple[LogRow, ...]
    failure: str | None = None


@dataclass(frozen=True)
class ParkingOutcome:
    stages: tuple[StageMetrics, ...]
    stage2_executed: bool
    log: tuple[LogRow, ...]
    success: bool
    failure: str | None = None


def _metrics(state: SystemState, params: VehicleTrailerParams, stage: int,
             steps: int, wall: float) -> StageMetrics:
    trailer = derive_poses(state, params).trailer
    return StageMetrics(
        stage=stage,
        distance_error=math.hypot(trailer[0], trailer[1]),
        orientation_error=wrap_angle(state.trailer_yaw),
        final_hitch=wrap_angle(state.hitch_angle),
        steps=steps,
        wall_time=wall,
    )


def _passes(m: StageMetrics, thresholds: AcceptanceThresholds) -> bool:
    return (
        m.distance_error < thresholds.max_distance
        and abs(m.orientation_error) < thresholds.max_orientation
        and abs(m.final_hitch) < thresholds.max_hitch
    )


def run_stage_reverse(
    state: SystemState,
    ocp: OcpConfig,
    params: VehicleTrailerParams,
    sim: SimConfig = SimConfig(),
    stage: int = 1,
    t0: float = 0.0,
    max_steps: int | None = None,
) -> StageResult:
    """Closed-loop reverse leg: plan, apply the first input, repeat until the
    planner picks zero trailer speed (or a guard trips)."""
    started = time.perf_counter()
    cap = sim.max_stage_steps if max_steps is None else max_steps
    rows: list[LogRow] = []
    warm = None
    failure = None
    t = t0
    steps = 0
    for _ in range(cap):
        if abs(state.hitch_angle) > sim.jackknife_limit:
            failure = (
                f"jackknife guard: hitch angle "
                f"{math.degrees(state.hitch_angle):.1f} deg at t={t:.1f}s (stage {stage})"
            )
            break
        try:
            control, result = nmpc_step(state, ocp, params, warm)
        except (EmptyBoundsError, SingularConfigurationError) as exc:
            failure = f"planner bounds failure at t={t:.1f}s (stage {stage}): {exc}"
            break
        if stage_terminated(result, ocp):
            break
        rows.append(LogRow(t, state, control, result.first_input, result.cost, stage))
        try:
            state = integrate(state, control, ocp.step, params,
                              substeps=sim.substeps, jackknife_limit=sim.jackknife_limit)
        except JackknifeError as exc:
            failure = f"jackknife during integration at t={t:.1f}s (stage {stage}): {exc}"
            break
        warm = shift_warm_start(result.inputs)
        t += ocp.step
        steps += 1
    else:
        failure = f"step cap {cap} exceeded in stage {stage}"
    wall = time.perf_counter() - started
    return StageResult(state, _metrics(state, params, stage, steps, wall), tuple(rows), failure)


def run_stage_forward(
    state: SystemState,
    fwd: ForwardConfig,
    params: VehicleTrailerParams,
    period: float,
    sim: SimConfig = SimConfig(),
    stage: int = 2,
    t0: float = 0.0,
    path: ForwardPath = ForwardPath(),
    max_steps: int | None = None,
) -> StageResult:
    """Forward repositioning leg along the exit line; zero steps if the
    termination conditions already hold."""
    started = time.perf_counter()
    cap = sim.max_stage_steps if max_steps is None else max_steps
    rows: list[LogRow] = []
    failure = None
    t = t0
    steps = 0
    for _ in range(cap):
        if forward_terminated(state, path, fwd, params):
            break
        if abs(state.hitch_angle) > sim.jackknife_limit:
            failure = (
                f"jackknife guard: hitch angle "
                f"{math.degrees(state.hitch_angle):.1f} deg at t={t:.1f}s (stage {stage})"
            )
            break
        control = ControlInput(speed=fwd.speed, steer=pursuit_steer(state, path, fwd, params))
        rows.append(LogRow(t, state, control, None, None, stage))
        try:
            state = integrate(state, control, period, params,
                              substeps=sim.substeps, jackknife_limit=sim.jackknife_limit)
        except JackknifeError as exc:
            failure = f"jackknife during integration at t={t:.1f}s (stage {stage}): {exc}"
            break
        t += period
        steps += 1
    else:
        failure = f"step cap {cap} exceeded in stage {stage}"
    wall = time.perf_counter() - started
    return StageResult(state, _metrics(state, params, stage, steps, wall), tuple(rows), failure)


def run_parking(
    start: SystemState,
    ocp: OcpConfig,
    fwd: ForwardConfig,
    params: VehicleTrailerParams,
    thresholds: AcceptanceThresholds = AcceptanceThresholds(),
    sim: SimConfig = SimConfig(),
    max_steps: int | None = None,
) -> ParkingOutcome:
    """Full staged flow; stages 2 and 3 run only when stage 1 falls short."""
    stages: list[StageMetrics] = []
    log: list[LogRow] = []
    stage2_executed = False

    result = run_stage_reverse(start, ocp, params, sim, stage=1, t0=0.0, max_steps=max_steps)
    stages.append(result.metrics)
    log.extend(result.rows)
    state = result.final_state
    t = result.rows[-1].t + ocp.step if result.rows else 0.0
    failure = result.failure
    success = failure is None and _passes(result.metrics, thresholds)

    cycles = 0
    while failure is None and not success and cycles < sim.max_cycles:
        cycles += 1
        stage_fwd = 2 * cycles
        fwd_result = run_stage_forward(
            state, fwd, params, ocp.step, sim, stage=stage_fwd, t0=t, max_steps=max_steps
        )
        stage2_executed = True
        stages.append(fwd_result.metrics)
        log.extend(fwd_result.rows)
        state = fwd_result.final_state
        t = fwd_result.rows[-1].t + ocp.step if fwd_result.rows else t
        failure = fwd_result.failure
        if failure is not None:
            break

        rev_result = run_stage_reverse(
            state, ocp, params, sim, stage=stage_fwd + 1, t0=t, max_steps=max_steps
        )
        stages.append(rev_result.metrics)
        log.extend(rev_result.rows)
        state = rev_result.final_state
        t = rev_result.rows[-1].t + ocp.step if rev_result.rows else t
        failure = rev_result.failure
        success = failure is None and _passes(rev_result.metrics, thresholds)

    log.append(LogRow(t, state, None, None, None, stages[-1].stage))
    return ParkingOutcome(
        stages=tuple(stages),
        stage2_executed=stage2_executed,
        log=tuple(log),
        success=success,
        failure=failure,
    )
