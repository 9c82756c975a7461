"""
CartPole dynamics with the classic control constants (gravity 9.8, cart mass
1.0, pole mass 0.1, pole half-length 0.5, push force 10 N, explicit Euler with
``dt = 0.02``). Episodes end when the pole leans past 12 degrees, the cart
leaves ``|x| <= 2.4`` or the horizon is reached. Agents only see the pole
angle and angular velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from .circuit import ObservationPair
from .exceptions import EpisodeDoneError

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
DT = 0.02
ANGLE_LIMIT = 12 * 2 * math.pi / 360
POSITION_LIMIT = 2.4
DEFAULT_HORIZON = 200
RESET_BOUND = 0.05


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    step_count: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])


@dataclass(frozen=True)
class StepResult:
    state: CartPoleState
    observation: ObservationPair
    reward: float
    done: bool
    done_reason: Optional[str] = None


def accelerations(state: CartPoleState, action: int) -> tuple[float, float]:
    """Cart and pole angular accelerations ``(x_acc, theta_acc)``."""
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    cos_t, sin_t = math.cos(state.theta), math.sin(state.theta)
    temp = (force + POLE_MASS_LENGTH * state.theta_dot**2 * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_t**2 / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    return x_acc, theta_acc


def reset(rng: np.random.Generator) -> CartPoleState:
    x, x_dot, theta, theta_dot = rng.uniform(-RESET_BOUND, RESET_BOUND, size=4)
    return CartPoleState(float(x), float(x_dot), float(theta), float(theta_dot), 0)


def restrict(state: CartPoleState) -> ObservationPair:
    return ObservationPair(state.theta, state.theta_dot)


def step(state: CartPoleState, action: int, horizon: int = DEFAULT_HORIZON) -> StepResult:
    """Advance one Euler step. Pure: the input state is not modified."""
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1; got {action!r}.")
    x_acc, theta_acc = accelerations(state, action)
    new = CartPoleState(
        x=state.x + DT * state.x_dot,
        x_dot=state.x_dot + DT * x_acc,
        theta=state.theta + DT * state.theta_dot,
        theta_dot=state.theta_dot + DT * theta_acc,
        step_count=state.step_count + 1,
    )
    if abs(new.theta) > ANGLE_LIMIT:
        reason = "angle"
    elif abs(new.x) > POSITION_LIMIT:
        reason = "position"
    elif new.step_count >= horizon:
        reason = "horizon"
    else:
        reason = None
    return StepResult(new, restrict(new), 1.0, reason is not None, reason)


class CartPoleEnv:
    """Stateful wrapper: one instance per agent.

    With ``trace`` set, every step writes a CSV row
    ``step,x,x_dot,theta,theta_dot,action,reward,done`` for diffing runs.
    """

    def __init__(self, rng: np.random.Generator, horizon: int = DEFAULT_HORIZON,
                 trace: TextIO | None = None):
        self.rng = rng
        self.horizon = horizon
        self.trace = trace
        self.state: CartPoleState | None = None
        self.done = True

    def reset(self) -> ObservationPair:
        self.state = reset(self.rng)
        self.done = False
        if self.trace is not None:
            self._write(self.state, "", 0.0, False)
        return restrict(self.state)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeDoneError("step() called on a finished episode; call reset() first.")
        result = step(self.state, action, self.horizon)
        self.state, self.done = result.state, result.done
        if self.trace is not None:
            self._write(result.state, action, result.reward, result.done)
        return result

    def _write(self, s: CartPoleState, action, reward, done):
        self.trace.write(
            f"{s.step_count},{s.x!r},{s.x_dot!r},{s.theta!r},{s.theta_dot!r},{action},{reward!r},{int(done)}\n"
        )
