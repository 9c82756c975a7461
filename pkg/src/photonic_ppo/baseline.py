"""
Classical networks: a 2-8-2 policy with the same 42 parameters as the
three-layer circuit, and the 2-8-1 value network (32 weights, no output bias)
used as critic by every agent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .circuit import ActionDistribution, softmax_with_temperature
from .exceptions import ShapeError

N_IN, N_HIDDEN, N_ACTIONS = 2, 8, 2


class _FlatParams:
    """Shared flat-vector and named-checkpoint views over ``SHAPES``."""

    SHAPES: ClassVar[dict]
    SIZE: ClassVar[int]

    def __post_init__(self):
        for name, shape in self.SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}; got {arr.shape}.")
            setattr(self, name, arr)
        if self.size != self.SIZE:
            raise ShapeError(f"expected {self.SIZE} parameters; got {self.size}.")

    @property
    def size(self) -> int:
        return sum(getattr(self, n).size for n in self.SHAPES)

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in self.SHAPES])

    @classmethod
    def from_flat(cls, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != cls.SIZE:
            raise ShapeError(f"expected {cls.SIZE} values; got {theta.size}.")
        parts, i = {}, 0
        for name, shape in cls.SHAPES.items():
            n = int(np.prod(shape))
            parts[name] = theta[i : i + n].reshape(shape)
            i += n
        return cls(**parts)

    @classmethod
    def zeros(cls):
        return cls.from_flat(np.zeros(cls.SIZE))

    def named(self) -> dict[str, float]:
        return {
            ".".join([name, *map(str, idx)]): float(v)
            for name in self.SHAPES
            for idx, v in np.ndenumerate(getattr(self, name))
        }

    @classmethod
    def from_named(cls, named):
        parts = {}
        for name, shape in cls.SHAPES.items():
            arr = np.empty(shape)
            for idx in np.ndindex(*shape):
                key = ".".join([name, *map(str, idx)])
                if key not in named:
                    raise ShapeError(f"missing parameter {key!r}.")
                arr[idx] = named[key]
            parts[name] = arr
        return cls(**parts)

    @classmethod
    def random(cls, rng: np.random.Generator):
        # weights ~ N(0, 1/fan_in), biases zero
        parts = {}
        for name, shape in cls.SHAPES.items():
            if name.startswith("b_"):
                parts[name] = np.zeros(shape)
            else:
                parts[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        return cls(**parts)


@dataclass
class ClassicalPolicyParams(_FlatParams):
    w_in: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    SHAPES: ClassVar[dict] = {"w_in": (N_IN, N_HIDDEN), "b_hidden": (N_HIDDEN,),
                              "w_out": (N_HIDDEN, N_ACTIONS), "b_out": (N_ACTIONS,)}
    SIZE: ClassVar[int] = 42


@dataclass
class ValueNetParams(_FlatParams):
    w_in: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray

    SHAPES: ClassVar[dict] = {"w_in": (N_IN, N_HIDDEN), "b_hidden": (N_HIDDEN,), "w_out": (N_HIDDEN,)}
    SIZE: ClassVar[int] = 32


def classical_forward(obs, params: ClassicalPolicyParams, tau: float = 1.0) -> ActionDistribution:
    obs = np.asarray(tuple(obs), dtype=float)
    hidden = np.tanh(obs @ params.w_in + params.b_hidden)
    logits = hidden @ params.w_out + params.b_out
    probs, logp = softmax_with_temperature(logits, tau)
    return ActionDistribution(float(probs[0]), float(probs[1]), float(logp[0]), float(logp[1]))


def value_forward(obs, vparams: ValueNetParams) -> float:
    obs = np.asarray(tuple(obs), dtype=float)
    return float(np.tanh(obs @ vparams.w_in + vparams.b_hidden) @ vparams.w_out)


@dataclass
class _Tape:
    obs: np.ndarray
    hidden: np.ndarray
    w_out: np.ndarray
    scores: np.ndarray
    norms: None = None


class ClassicalPolicy:
    """Batched 2-8-2 tanh network producing action logits (scores)."""

    n_params = ClassicalPolicyParams.SIZE

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return ClassicalPolicyParams.random(rng).flat()

    def run(self, theta, obs, grad=False) -> _Tape:
        p = ClassicalPolicyParams.from_flat(theta)
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        hidden = np.tanh(obs @ p.w_in + p.b_hidden)
        return _Tape(obs, hidden, p.w_out, hidden @ p.w_out + p.b_out)

    def scores(self, theta, obs):
        tape = self.run(theta, obs)
        return tape.scores, None

    def backward(self, tape: _Tape, dscores) -> np.ndarray:
        dz = np.asarray(dscores, dtype=float)
        d_pre = (dz @ tape.w_out.T) * (1.0 - tape.hidden**2)
        return np.concatenate([
            (tape.obs.T @ d_pre).ravel(),
            d_pre.sum(axis=0),
            (tape.hidden.T @ dz).ravel(),
            dz.sum(axis=0),
        ])

    def l2(self, theta) -> float:
        return 0.0

    def l2_grad(self, theta) -> np.ndarray:
        return np.zeros(self.n_params)

    def params(self, theta) -> ClassicalPolicyParams:
        return ClassicalPolicyParams.from_flat(theta)


class ValueNet:
    """Batched critic ``tanh(obs W + b) . w_out``."""

    n_params = ValueNetParams.SIZE

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return ValueNetParams.random(rng).flat()

    def predict(self, theta, obs) -> np.ndarray:
        p = ValueNetParams.from_flat(theta)
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        return np.tanh(obs @ p.w_in + p.b_hidden) @ p.w_out

    def loss_and_grad(self, theta, obs, targets):
        """Mean squared error against ``targets`` and its gradient."""
        p = ValueNetParams.from_flat(theta)
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        targets = np.asarray(targets, dtype=float)
        if obs.shape[0] == 0:
            raise ValueError("value loss needs a non-empty batch.")
        hidden = np.tanh(obs @ p.w_in + p.b_hidden)
        err = hidden @ p.w_out - targets
        loss = float(np.mean(err**2))
        dv = 2.0 * err / err.size
        d_pre = np.outer(dv, p.w_out) * (1.0 - hidden**2)
        grad = np.concatenate([(obs.T @ d_pre).ravel(), d_pre.sum(axis=0), hidden.T @ dv])
        return loss, grad
