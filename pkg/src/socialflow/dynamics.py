"""Vehicle motion: kinematic bicycle integration and PID speed tracking.

The engine advances every agent with the same rear-axle bicycle model
under explicit Euler integration, fed by a longitudinal PID controller
that turns a reference speed into a bounded acceleration.  Both pieces
are pure scalar math so a single implementation serves the public
operations and the batched simulation loop bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import Pose2D, norm_angle


@dataclass(frozen=True)
class VehicleParams:
    """Geometric and actuation limits of one vehicle."""

    length: float = 4.5
    width: float = 2.0
    wheelbase: float = 2.8
    v_max: float = 10.0
    sigma_max: float = 0.6
    accel_max: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.wheelbase < self.length:
            raise ValueError("wheelbase must satisfy 0 < wheelbase < length")
        if self.width <= 0.0 or self.v_max <= 0.0 or self.accel_max <= 0.0:
            raise ValueError("width, v_max, and accel_max must be positive")
        if not 0.0 < self.sigma_max < math.pi / 2.0:
            raise ValueError("sigma_max must lie in (0, pi/2)")


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    speed: float


@dataclass(frozen=True)
class Action:
    """Lower-level control command: reference speed and steering angle."""

    v_ref: float
    sigma: float


@dataclass(frozen=True)
class PidParams:
    """Speed-loop gains; acceleration saturates at +-accel_bound.

    The default is a pure proportional loop with kp = 1/dt for the
    standard 0.1 s step, which settles on the reference in one step when
    unsaturated and makes a scripted v_ref = v + a*dt command realize
    the acceleration ``a`` exactly.
    """

    kp: float = 10.0
    ki: float = 0.0
    kd: float = 0.0
    accel_bound: float = 5.0


@dataclass
class PidMemory:
    """Controller state carried across steps of one agent."""

    integral: float = 0.0
    prev_error: float = field(default=math.nan)

    def reset(self):
        self.integral = 0.0
        self.prev_error = math.nan


def pid_speed_control(
    speed: float,
    v_ref: float,
    pid: PidParams,
    memory: PidMemory,
    dt: float,
) -> float:
    """One PID update; returns acceleration clamped to +-accel_bound.

    The integral accumulates error*dt before the output is formed; the
    derivative term is zero on the first call of an episode.  ``memory``
    is mutated in place.
    """
    error = v_ref - speed
    memory.integral += error * dt
    if math.isnan(memory.prev_error):
        derivative = 0.0
    else:
        derivative = (error - memory.prev_error) / dt
    memory.prev_error = error
    accel = pid.kp * error + pid.ki * memory.integral + pid.kd * derivative
    bound = pid.accel_bound
    if accel > bound:
        return bound
    if accel < -bound:
        return -bound
    return accel


def bicycle_scalar(x, y, theta, speed, accel, sigma, dt, wheelbase, v_max, sigma_max):
    """Scalar core of the bicycle update, shared with the batch loop.

    Position and heading advance with the pre-step speed; the speed
    update applies last and clamps to [0, v_max].  Steering is clamped
    to +-sigma_max before use.  Returns (x, y, theta, speed).
    """
    if sigma > sigma_max:
        sigma = sigma_max
    elif sigma < -sigma_max:
        sigma = -sigma_max
    x = x + speed * math.cos(theta) * dt
    y = y + speed * math.sin(theta) * dt
    theta = norm_angle(theta + speed * math.tan(sigma) / wheelbase * dt)
    speed = speed + accel * dt
    if speed < 0.0:
        speed = 0.0
    elif speed > v_max:
        speed = v_max
    return x, y, theta, speed


def bicycle_step(
    state: VehicleState,
    accel: float,
    sigma: float,
    dt: float,
    params: VehicleParams,
) -> VehicleState:
    """Advance one vehicle by one step of the rear-axle bicycle model."""
    x, y, theta, speed = bicycle_scalar(
        state.pose.x,
        state.pose.y,
        state.pose.theta,
        state.speed,
        accel,
        sigma,
        dt,
        params.wheelbase,
        params.v_max,
        params.sigma_max,
    )
    return VehicleState(Pose2D(x, y, theta), speed)
