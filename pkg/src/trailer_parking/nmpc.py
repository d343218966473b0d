"""Receding-horizon reverse planner over the trailer-only model.

Planning is done for the trailer alone: three states (axle position and yaw
in the parking frame) and two inputs (axle speed, virtual steer at the
hitch).  A single-shooting transcription rolls the Euler-discretized model
forward from the current trailer state, so the decision vector is just the
stacked input sequence; per-step box bounds are the only constraints.  The
solver is a projected quasi-Newton method: gradient projection with an
Armijo backtracking line search and BFGS curvature on the free variables.
Gradients come from a hand-coded adjoint sweep of the rollout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .inverse_kinematics import (
    VirtualInput,
    actual_to_virtual_steer,
    virtual_to_actual_speed,
    virtual_to_actual_steer,
    SingularConfigurationError,
)
from .model import ControlInput, SystemState, VehicleTrailerParams, derive_poses

__all__ = [
    "TrailerState",
    "OcpConfig",
    "InputBounds",
    "SolveResult",
    "EmptyBoundsError",
    "predict_step",
    "trajectory_cost",
    "cost_gradient",
    "compute_input_bounds",
    "solve_ocp",
    "shift_warm_start",
    "nmpc_step",
    "stage_terminated",
]


class EmptyBoundsError(ValueError):
    """No admissible virtual steer exists at the current hitch angle."""


@dataclass(frozen=True)
class TrailerState:
    """Trailer axle pose in the parking frame (goal is the zero state)."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x, self.y, self.yaw))):
            raise ValueError(f"non-finite trailer state {(self.x, self.y, self.yaw)}")


@dataclass(frozen=True, eq=False)
class OcpConfig:
    """Horizon, weights, bounds and solver knobs for the reverse planner.

    ``state_weights`` and ``terminal_weights`` must be symmetric positive
    definite; ``input_weights`` may be merely positive semidefinite (a zero
    speed weight is what makes the planner ride the reverse-speed bound).
    """

    step: float
    horizon: int
    state_weights: np.ndarray
    input_weights: np.ndarray
    terminal_weights: np.ndarray
    trailer_speed_min: float
    trailer_speed_max: float
    virtual_steer_min: float
    virtual_steer_max: float
    steer_min: float
    steer_max: float
    gradient_tol: float = 1e-8
    max_iterations: int = 100
    termination_speed: float = 1e-3

    def __post_init__(self):
        if self.step <= 0.0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        object.__setattr__(self, "state_weights", _check_sym(self.state_weights, 3, "state_weights"))
        object.__setattr__(self, "input_weights", _check_sym(self.input_weights, 2, "input_weights"))
        object.__setattr__(self, "terminal_weights", _check_sym(self.terminal_weights, 3, "terminal_weights"))
        if np.linalg.eigvalsh(self.state_weights).min() <= 0.0:
            raise ValueError("state_weights must be positive definite")
        if np.linalg.eigvalsh(self.terminal_weights).min() <= 0.0:
            raise ValueError("terminal_weights must be positive definite")
        if np.linalg.eigvalsh(self.input_weights).min() < -1e-12:
            raise ValueError("input_weights must be positive semidefinite")
        if not self.trailer_speed_min <= self.trailer_speed_max <= 0.0:
            raise ValueError(
                "trailer speed bounds must satisfy min <= max <= 0 for a reverse "
                f"planner, got [{self.trailer_speed_min}, {self.trailer_speed_max}]"
            )
        for lo, hi, name in (
            (self.virtual_steer_min, self.virtual_steer_max, "virtual steer"),
            (self.steer_min, self.steer_max, "steer"),
        ):
            if not (lo <= hi and -math.pi / 2 < lo and hi < math.pi / 2):
                raise ValueError(f"{name} bounds [{lo}, {hi}] invalid")
        if self.gradient_tol <= 0.0 or self.max_iterations < 1 or self.termination_speed <= 0.0:
            raise ValueError("solver tolerances must be positive")

    @classmethod
    def defaults(cls, **overrides) -> "OcpConfig":
        """Standard tuning: 1 s lookahead at 0.1 s steps, heavy lateral and
        yaw weights, unpenalized speed, full-range reverse."""
        values = dict(
            step=0.1,
            horizon=10,
            state_weights=np.diag([1.0, 10.0, 10.0]),
            input_weights=np.diag([0.0, 0.1]),
            terminal_weights=np.diag([1.0, 10.0, 10.0]),
            trailer_speed_min=-1.0,
            trailer_speed_max=0.0,
            virtual_steer_min=-0.5,
            virtual_steer_max=0.5,
            steer_min=-0.75,
            steer_max=0.75,
        )
        values.update(overrides)
        return cls(**values)


def _check_sym(m, size: int, name: str) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {arr.shape}")
    if not np.allclose(arr, arr.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    return arr


@dataclass(frozen=True)
class InputBounds:
    """Per-step box bounds on (trailer axle speed, virtual steer)."""

    speed_min: float
    speed_max: float
    steer_min: float
    steer_max: float

    def __post_init__(self):
        if self.speed_min > self.speed_max or self.steer_min > self.steer_max:
            raise EmptyBoundsError(f"empty input bounds {self}")

    def lower(self, horizon: int) -> np.ndarray:
        return np.tile((self.speed_min, self.steer_min), horizon)

    def upper(self, horizon: int) -> np.ndarray:
        return np.tile((self.speed_max, self.steer_max), horizon)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Optimized input sequence with its predicted rollout and diagnostics."""

    inputs: np.ndarray            # (N, 2): columns speed, virtual steer
    predicted_states: np.ndarray  # (N, 3): trailer states after each input
    cost: float
    iterations: int
    converged: bool

    @property
    def first_input(self) -> VirtualInput:
        return VirtualInput(speed=float(self.inputs[0, 0]), steer=float(self.inputs[0, 1]))


def _step_scalar(x: float, y: float, yaw: float, v: float, d: float,
                 dt: float, lt: float) -> tuple[float, float, float]:
    # Shared by predict_step and the solver rollout so both produce
    # bit-identical trajectories.
    return (
        x + dt * v * math.cos(yaw),
        y + dt * v * math.sin(yaw),
        yaw + dt * v * math.tan(d) / lt,
    )


def predict_step(
    x: TrailerState, u: VirtualInput, dt: float, params: VehicleTrailerParams
) -> TrailerState:
    """One Euler-forward step of the trailer-only prediction model."""
    nx, ny, nyaw = _step_scalar(x.x, x.y, x.yaw, u.speed, u.steer, dt, params.trailer_length)
    return TrailerState(nx, ny, nyaw)


class _Evaluator:
    """Scalar-math cost/gradient evaluator for one solve.

    Flattens the weight matrices once; the rollout loop then runs on plain
    floats, which keeps a full solve at the default horizon well under a
    millisecond.
    """

    __slots__ = ("x0", "dt", "lt", "n", "q", "r", "p")

    def __init__(self, x0: TrailerState, cfg: OcpConfig, params: VehicleTrailerParams):
        self.x0 = (x0.x, x0.y, x0.yaw)
        self.dt = cfg.step
        self.lt = params.trailer_length
        self.n = cfg.horizon
        q = cfg.state_weights
        r = cfg.input_weights
        p = cfg.terminal_weights
        self.q = (q[0, 0], q[0, 1], q[0, 2], q[1, 1], q[1, 2], q[2, 2])
        self.r = (r[0, 0], r[0, 1], r[1, 1])
        self.p = (p[0, 0], p[0, 1], p[0, 2], p[1, 1], p[1, 2], p[2, 2])

    def rollout(self, u: list[float]) -> list[tuple[float, float, float]]:
        """States visited by the input sequence, including the initial one."""
        dt, lt = self.dt, self.lt
        x, y, yaw = self.x0
        states = [(x, y, yaw)]
        for k in range(self.n):
            x, y, yaw = _step_scalar(x, y, yaw, u[2 * k], u[2 * k + 1], dt, lt)
            states.append((x, y, yaw))
        return states

    def cost(self, u: list[float]) -> float:
        q11, q12, q13, q22, q23, q33 = self.q
        r11, r12, r22 = self.r
        p11, p12, p13, p22, p23, p33 = self.p
        dt, lt = self.dt, self.lt
        x, y, yaw = self.x0
        j = 0.0
        for k in range(self.n):
            v = u[2 * k]
            d = u[2 * k + 1]
            j += (
                q11 * x * x + q22 * y * y + q33 * yaw * yaw
                + 2.0 * (q12 * x * y + q13 * x * yaw + q23 * y * yaw)
            )
            j += r11 * v * v + 2.0 * r12 * v * d + r22 * d * d
            x, y, yaw = _step_scalar(x, y, yaw, v, d, dt, lt)
        j += (
            p11 * x * x + p22 * y * y + p33 * yaw * yaw
            + 2.0 * (p12 * x * y + p13 * x * yaw + p23 * y * yaw)
        )
        return j

    def cost_and_grad(self, u: list[float]) -> tuple[float, list[float]]:
        """Cost plus its gradient from one adjoint (reverse) sweep."""
        q11, q12, q13, q22, q23, q33 = self.q
        r11, r12, r22 = self.r
        p11, p12, p13, p22, p23, p33 = self.p
        dt, lt = self.dt, self.lt
        n = self.n
        x, y, yaw = self.x0
        trace = []
        j = 0.0
        for k in range(n):
            v = u[2 * k]
            d = u[2 * k + 1]
            j += (
                q11 * x * x + q22 * y * y + q33 * yaw * yaw
                + 2.0 * (q12 * x * y + q13 * x * yaw + q23 * y * yaw)
            )
            j += r11 * v * v + 2.0 * r12 * v * d + r22 * d * d
            cy = math.cos(yaw)
            sy = math.sin(yaw)
            td = math.tan(d)
            trace.append((x, y, yaw, v, d, cy, sy, td))
            x = x + dt * v * cy
            y = y + dt * v * sy
            yaw = yaw + dt * v * td / lt
        j += (
            p11 * x * x + p22 * y * y + p33 * yaw * yaw
            + 2.0 * (p12 * x * y + p13 * x * yaw + p23 * y * yaw)
        )
        lam1 = 2.0 * (p11 * x + p12 * y + p13 * yaw)
        lam2 = 2.0 * (p12 * x + p22 * y + p23 * yaw)
        lam3 = 2.0 * (p13 * x + p23 * y + p33 * yaw)
        grad = [0.0] * (2 * n)
        for k in range(n - 1, -1, -1):
            x, y, yaw, v, d, cy, sy, td = trace[k]
            sec2 = 1.0 + td * td
            grad[2 * k] = (
                2.0 * (r11 * v + r12 * d)
                + dt * (cy * lam1 + sy * lam2 + td / lt * lam3)
            )
            grad[2 * k + 1] = 2.0 * (r12 * v + r22 * d) + dt * v * sec2 / lt * lam3
            lam3 = -dt * v * sy * lam1 + dt * v * cy * lam2 + lam3 + 2.0 * (
                q13 * x + q23 * y + q33 * yaw
            )
            lam1 = lam1 + 2.0 * (q11 * x + q12 * y + q13 * yaw)
            lam2 = lam2 + 2.0 * (q12 * x + q22 * y + q23 * yaw)
        return j, grad


def trajectory_cost(
    x0: TrailerState, inputs, cfg: OcpConfig, params: VehicleTrailerParams
) -> float:
    """Quadratic cost of an input sequence rolled out from ``x0``.

    Stage cost on every visited state (including ``x0``, whose term is a
    constant offset) and on every input, plus a terminal state cost.
    """
    flat = _flatten_inputs(inputs, cfg.horizon)
    return _Evaluator(x0, cfg, params).cost(flat)


def cost_gradient(
    x0: TrailerState, inputs, cfg: OcpConfig, params: VehicleTrailerParams
) -> np.ndarray:
    """Gradient of :func:`trajectory_cost` with respect to the inputs, shape (N, 2)."""
    flat = _flatten_inputs(inputs, cfg.horizon)
    _, grad = _Evaluator(x0, cfg, params).cost_and_grad(flat)
    return np.asarray(grad).reshape(cfg.horizon, 2)


def _flatten_inputs(inputs, horizon: int) -> list[float]:
    arr = np.asarray(inputs, dtype=float).reshape(-1)
    if arr.size != 2 * horizon:
        raise ValueError(f"expected {2 * horizon} input values, got {arr.size}")
    return arr.tolist()


def compute_input_bounds(
    hitch_angle: float, cfg: OcpConfig, params: VehicleTrailerParams
) -> InputBounds:
    """Virtual-input box admissible at the current hitch angle.

    The tractor steering range is mapped endpoint-wise into virtual-steer
    space (the map is decreasing, so the images are swapped into order) and
    intersected with the static virtual-steer limits.  Speed bounds pass
    through unchanged.
    """
    ch, sh = math.cos(hitch_angle), math.sin(hitch_angle)
    lw, lh = params.wheelbase, params.hitch_offset
    den_at_min = lw * ch + lh * sh * math.tan(cfg.steer_min)
    den_at_max = lw * ch + lh * sh * math.tan(cfg.steer_max)
    if den_at_min * den_at_max <= 0.0:
        raise SingularConfigurationError(
            f"steer mapping has a pole inside the steering range at hitch angle {hitch_angle!r}"
        )
    image_a = actual_to_virtual_steer(cfg.steer_min, hitch_angle, params)
    image_b = actual_to_virtual_steer(cfg.steer_max, hitch_angle, params)
    mapped_lo, mapped_hi = min(image_a, image_b), max(image_a, image_b)
    steer_lo = max(mapped_lo, cfg.virtual_steer_min)
    steer_hi = min(mapped_hi, cfg.virtual_steer_max)
    if steer_lo > steer_hi:
        raise EmptyBoundsError(
            f"mapped steer interval [{mapped_lo}, {mapped_hi}] does not intersect "
            f"static bounds [{cfg.virtual_steer_min}, {cfg.virtual_steer_max}]"
        )
    return InputBounds(
        speed_min=cfg.trailer_speed_min,
        speed_max=cfg.trailer_speed_max,
        steer_min=steer_lo,
        steer_max=steer_hi,
    )


def solve_ocp(
    x0: TrailerState,
    bounds: InputBounds,
    cfg: OcpConfig,
    params: VehicleTrailerParams,
    warm_start: np.ndarray | None = None,
) -> SolveResult:
    """Minimize the rollout cost over the input box.

    Starts from the cheaper of the projected warm start and the projected
    zero sequence; the line search only ever accepts improvement, so the
    returned cost is bounded by both.  Non-convergence within the iteration
    budget returns the best iterate with ``converged=False``.
    """
    n = cfg.horizon
    lo = bounds.lower(n)
    hi = bounds.upper(n)
    ev = _Evaluator(x0, cfg, params)

    start = np.clip(np.zeros(2 * n), lo, hi)
    if warm_start is not None:
        warm = np.clip(np.asarray(warm_start, dtype=float).reshape(-1), lo, hi)
        if warm.size != 2 * n:
            raise ValueError(f"warm start must have {2 * n} entries, got {warm.size}")
        if ev.cost(warm.tolist()) < ev.cost(start.tolist()):
            start = warm

    u, cost, iterations, converged = _minimize_box(ev, start, lo, hi,
                                                   cfg.gradient_tol, cfg.max_iterations)
    states = ev.rollout(u.tolist())[1:]
    return SolveResult(
        inputs=u.reshape(n, 2),
        predicted_states=np.asarray(states),
        cost=cost,
        iterations=iterations,
        converged=converged,
    )


def _minimize_box(ev: _Evaluator, x: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                  gtol: float, max_iterations: int):
    """Projected quasi-Newton over a box: BFGS model on the free set,
    steepest descent on the active set, Armijo backtracking along the
    projected arc."""
    dim = x.size
    hess = np.eye(dim)
    f, glist = ev.cost_and_grad(x.tolist())
    g = np.asarray(glist)
    iterations = 0
    converged = False
    for _ in range(max_iterations):
        iterations += 1
        projected_grad = x - np.clip(x - g, lo, hi)
        if np.max(np.abs(projected_grad)) <= gtol:
            converged = True
            break
        at_lower = (x - lo <= 1e-12) & (g > 0.0)
        at_upper = (hi - x <= 1e-12) & (g < 0.0)
        active = at_lower | at_upper
        direction = np.where(active, -g, 0.0)
        free = ~active
        if free.any():
            try:
                direction[free] = np.linalg.solve(hess[np.ix_(free, free)], -g[free])
            except np.linalg.LinAlgError:
                direction[free] = -g[free]
        if direction @ g >= 0.0:
            direction = -g

        alpha = 1.0
        accepted = False
        for _ in range(60):
            candidate = np.clip(x + alpha * direction, lo, hi)
            step = candidate - x
            if not step.any():
                break
            f_cand = ev.cost(candidate.tolist())
            if f_cand <= f + 1e-4 * (g @ step):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # No admissible decrease along this direction; accept the iterate.
            converged = np.max(np.abs(projected_grad)) <= max(gtol, 1e-12)
            break

        f_new, g_new_list = ev.cost_and_grad(candidate.tolist())
        g_new = np.asarray(g_new_list)
        s = candidate - x
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            hs = hess @ s
            hess = hess - np.outer(hs, hs) / (s @ hs) + np.outer(yv, yv) / sy
        x, f, g = candidate, f_new, g_new
    return x, f, iterations, converged


def shift_warm_start(inputs: np.ndarray) -> np.ndarray:
    """Receding-horizon warm start: drop the applied input, repeat the last."""
    arr = np.asarray(inputs, dtype=float)
    return np.vstack([arr[1:], arr[-1:]])


def nmpc_step(
    state: SystemState,
    cfg: OcpConfig,
    params: VehicleTrailerParams,
    warm_start: np.ndarray | None = None,
) -> tuple[ControlInput, SolveResult]:
    """One closed-loop planning step from the full plant state.

    Extracts the trailer pose, recomputes the hitch-dependent input bounds,
    solves the horizon problem and translates the first virtual input into
    tractor speed and steer.  The bound construction keeps the mapped steer
    inside the tractor's limits; the final clamp only absorbs float dust.
    """
    poses = derive_poses(state, params)
    trailer = TrailerState(poses.trailer[0], poses.trailer[1], state.trailer_yaw)
    hitch = state.hitch_angle
    bounds = compute_input_bounds(hitch, cfg, params)
    result = solve_ocp(trailer, bounds, cfg, params, warm_start)
    first = result.first_input
    steer = virtual_to_actual_steer(first.steer, hitch, params)
    steer = min(max(steer, cfg.steer_min), cfg.steer_max)
    speed = virtual_to_actual_speed(first.speed, first.steer, hitch)
    return ControlInput(speed=speed, steer=steer), result


def stage_terminated(result: SolveResult, cfg: OcpConfig) -> bool:
    """Reverse stage ends when the first planned trailer speed is numerically zero."""
    return abs(float(result.inputs[0, 0])) < cfg.termination_speed
