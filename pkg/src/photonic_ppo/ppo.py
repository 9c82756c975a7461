"""
Proximal policy optimization pieces shared by the photonic and classical agents.

The policy objective maximized per minibatch is

    mean[ min(r A, clip(r, 1-eps, 1+eps) A) - beta KL(pi || pi_old) + c2 H(pi) ] - alpha L2

and :func:`ppo_loss` returns its negative. Policies only need to expose
``run(theta, obs, grad)`` returning a tape with ``scores`` (pre-temperature
logits) and ``backward(tape, dscores)``; the loss head supplies
``d loss / d scores`` analytically.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .baseline import ValueNetParams  # noqa: F401  (re-exported critic parameter type)
from .circuit import ActionDistribution, ObservationPair, softmax_with_temperature
from .exceptions import InvalidConfigError, ShapeError


@dataclass(frozen=True)
class Hyperparameters:
    gamma: float = 0.99
    lam: float = 0.95
    epsilon: float = 0.2
    beta: float = 0.1
    c2: float = 0.01
    alpha: float = 0.075
    tau: float = 1.0
    lr_policy: float = 0.01
    lr_value: float = 0.005
    minibatch: int = 8
    epochs: int = 4
    horizon: int = 200
    memory: int = 10000
    normalize_advantages: bool = True
    # "episode": each update sees only the episode just played (memory caps its size).
    # "window": transitions persist across updates as a sliding window of ``memory`` steps.
    buffer_mode: str = "episode"
    # Optional step decay: multiply learning rates by lr_decay every lr_decay_every episodes.
    lr_decay: float = 1.0
    lr_decay_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidConfigError(f"gamma must be in (0, 1]; got {self.gamma}.")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidConfigError(f"lam must be in [0, 1]; got {self.lam}.")
        for name in ("epsilon", "beta", "c2", "alpha", "lr_policy", "lr_value", "lr_decay"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be nonnegative; got {getattr(self, name)}.")
        if not self.tau > 0:
            raise InvalidConfigError(f"tau must be positive; got {self.tau}.")
        for name in ("minibatch", "epochs", "horizon", "memory"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1; got {getattr(self, name)}.")
        if self.buffer_mode not in ("episode", "window"):
            raise InvalidConfigError(f"buffer_mode must be 'episode' or 'window'; got {self.buffer_mode!r}.")
        if self.lr_decay_every < 0:
            raise InvalidConfigError("lr_decay_every must be >= 0.")

    def replace(self, **changes) -> "Hyperparameters":
        """Copy with ``changes`` applied; string values are coerced to the field type."""
        types = {f.name: f.type for f in dataclasses.fields(self)}
        coerced = {}
        for key, value in changes.items():
            key = "lam" if key == "lambda" else key
            if key not in types:
                raise InvalidConfigError(f"unknown hyperparameter {key!r}.")
            coerced[key] = _coerce(value, types[key], key)
        return dataclasses.replace(self, **coerced)

    def learning_rate_scale(self, episode: int) -> float:
        if self.lr_decay_every <= 0:
            return 1.0
        return self.lr_decay ** (episode // self.lr_decay_every)


def _coerce(value, type_name, key):
    if not isinstance(value, str):
        return value
    try:
        if type_name == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if type_name == "int":
            return int(value)
        if type_name == "str":
            return value
        return float(value)
    except ValueError:
        raise InvalidConfigError(f"cannot parse {value!r} for hyperparameter {key!r}.") from None


@dataclass(frozen=True)
class TrajectoryStep:
    obs: ObservationPair
    action: int
    reward: float
    log_prob_old: float
    value: float
    done: bool
    probs_old: tuple = (0.5, 0.5)
    state_norm: Optional[float] = None


class Batch(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    log_prob_old: np.ndarray
    probs_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


class RolloutBuffer:
    """Ordered transitions plus their returns and advantages once computed."""

    def __init__(self, capacity: int = 10000):
        self.capacity = capacity
        self.steps: list[TrajectoryStep] = []
        self.returns: np.ndarray | None = None
        self.advantages: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def append(self, step: TrajectoryStep) -> None:
        self.steps.append(step)
        if len(self.steps) > self.capacity:
            del self.steps[: len(self.steps) - self.capacity]
        self.returns = self.advantages = None

    def clear(self) -> None:
        self.steps.clear()
        self.returns = self.advantages = None

    def segments(self) -> list[tuple[int, int]]:
        bounds, start = [], 0
        for i, s in enumerate(self.steps):
            if s.done:
                bounds.append((start, i + 1))
                start = i + 1
        if start < len(self.steps):
            bounds.append((start, len(self.steps)))
        return bounds

    def compute(self, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-episode discounted returns and GAE advantages (terminal bootstrap 0)."""
        rewards = np.array([s.reward for s in self.steps], dtype=float)
        values = np.array([s.value for s in self.steps], dtype=float)
        returns = np.empty_like(rewards)
        advantages = np.empty_like(rewards)
        for a, b in self.segments():
            returns[a:b] = discounted_returns(rewards[a:b], gamma)
            advantages[a:b] = gae_advantages(rewards[a:b], values[a:b], 0.0, gamma, lam)
        self.returns, self.advantages = returns, advantages
        return returns, advantages

    def batch(self, normalize: bool = True) -> Batch:
        if self.advantages is None:
            raise RuntimeError("call compute() before batch().")
        adv = self.advantages
        if normalize:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return Batch(
            obs=np.array([tuple(s.obs) for s in self.steps], dtype=float).reshape(-1, 2),
            actions=np.array([s.action for s in self.steps], dtype=int),
            log_prob_old=np.array([s.log_prob_old for s in self.steps], dtype=float),
            probs_old=np.array([s.probs_old for s in self.steps], dtype=float).reshape(-1, 2),
            advantages=adv,
            returns=self.returns,
        )


# ---------------------------------------------------------------------------
# Returns and advantages

def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    running = 0.0
    for t in range(rewards.size - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def gae_advantages(rewards, values, bootstrap_value: float, gamma: float, lam: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ShapeError(f"rewards {rewards.shape} and values {values.shape} differ in length.")
    next_values = np.append(values[1:], bootstrap_value)
    deltas = rewards + gamma * next_values - values
    out = np.empty_like(deltas)
    running = 0.0
    for t in range(deltas.size - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        out[t] = running
    return out


# ---------------------------------------------------------------------------
# Objective terms

def clip_objective(ratio, advantage, epsilon: float):
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)
    return float(out) if out.ndim == 0 else out


def kl_categorical(p_new: ActionDistribution, p_old: ActionDistribution) -> float:
    """``KL(p_new || p_old)``."""
    return float(np.sum(p_new.probs * (p_new.log_probs - p_old.log_probs)))


def entropy_categorical(p: ActionDistribution) -> float:
    probs = p.probs
    logp = p.log_probs
    return float(-np.sum(np.where(probs > 0, probs * logp, 0.0)))


def value_loss(values, targets) -> float:
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if values.size == 0:
        raise ValueError("value loss needs a non-empty batch.")
    if values.shape != targets.shape:
        raise ShapeError(f"values {values.shape} and targets {targets.shape} differ.")
    return float(np.mean((values - targets) ** 2))


@dataclass(frozen=True)
class LossBreakdown:
    """Policy loss and the batch means it was assembled from.

    ``total = -(clip - beta * kl + c2 * entropy) + alpha * l2``.
    """

    total: float
    clip: float
    kl: float
    entropy: float
    l2: float


def surrogate_head(scores, actions, log_prob_old, probs_old, advantages, hp: Hyperparameters):
    """Batch-mean surrogate terms and ``d(-objective)/d scores``."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    n = scores.shape[0]
    if n == 0:
        raise ValueError("ppo loss needs a non-empty minibatch.")
    probs, logp = softmax_with_temperature(scores, hp.tau)
    rows = np.arange(n)
    ratio = np.exp(logp[rows, actions] - log_prob_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - hp.epsilon, 1.0 + hp.epsilon) * advantages
    take_unclipped = unclipped <= clipped
    clip_term = np.where(take_unclipped, unclipped, clipped)

    log_old = np.log(probs_old)
    diff = logp - log_old
    kl = np.sum(probs * diff, axis=1)
    entropy = -np.sum(probs * logp, axis=1)

    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    d_clip = np.where(take_unclipped, unclipped, 0.0)[:, None] * (onehot - probs)
    d_kl = probs * (diff - kl[:, None])
    d_ent = -probs * (logp + entropy[:, None])
    d_obj = d_clip - hp.beta * d_kl + hp.c2 * d_ent
    dscores = -d_obj / (hp.tau * n)
    return float(clip_term.mean()), float(kl.mean()), float(entropy.mean()), dscores


def ppo_loss(policy, theta, batch: Batch, hp: Hyperparameters, grad: bool = False):
    """Negated PPO objective on ``batch``.

    Returns ``(LossBreakdown, gradient or None, state norms or None)``.
    """
    if len(batch.actions) == 0:
        raise ValueError("ppo loss needs a non-empty minibatch.")
    theta = np.asarray(theta, dtype=float)
    tape = policy.run(theta, batch.obs, grad=grad)
    clip, kl, ent, dscores = surrogate_head(
        tape.scores, batch.actions, batch.log_prob_old, batch.probs_old, batch.advantages, hp
    )
    l2 = policy.l2(theta)
    total = -(clip - hp.beta * kl + hp.c2 * ent) + hp.alpha * l2
    g = None
    if grad:
        g = policy.backward(tape, dscores) + hp.alpha * policy.l2_grad(theta)
    return LossBreakdown(total, clip, kl, ent, l2), g, tape.norms


def gradient(objective: Callable[[np.ndarray], float], x, h: float = 1e-4) -> np.ndarray:
    """Central finite differences, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp, fm = objective(x + e), objective(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"objective is not finite around coordinate {i}.")
        g[i] = (fp - fm) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Inputs are not modified."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}.")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, dataclasses.replace(state, m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# One PPO update

@dataclass
class UpdateResult:
    theta: np.ndarray
    value_theta: np.ndarray
    policy_adam: AdamState
    value_adam: AdamState
    diagnostics: dict = field(default_factory=dict)


def _minimum_norm(*arrays) -> float:
    vals = [np.asarray(a, dtype=float).ravel() for a in arrays if a is not None]
    vals = np.concatenate(vals) if vals else np.empty(0)
    vals = vals[np.isfinite(vals)]
    return float(vals.min()) if vals.size else float("nan")


def update(buffer: RolloutBuffer, policy, theta, value_net, value_theta,
           policy_adam: AdamState, value_adam: AdamState, hp: Hyperparameters,
           rng: np.random.Generator, lr_scale: float = 1.0,
           gradient_engine: str = "adjoint") -> UpdateResult:
    """Run ``hp.epochs`` passes of shuffled minibatches over ``buffer``.

    Each minibatch takes one Adam step on the policy, then one on the critic.
    ``gradient_engine="finite-difference"`` swaps the analytic policy gradient
    for central differences (slow; for checking).
    """
    if len(buffer) == 0:
        raise ValueError("cannot update from an empty buffer.")
    buffer.compute(hp.gamma, hp.lam)
    data = buffer.batch(hp.normalize_advantages)
    n = len(data.actions)
    theta = np.asarray(theta, dtype=float)
    value_theta = np.asarray(value_theta, dtype=float)

    rollout_norms = [s.state_norm for s in buffer.steps if s.state_norm is not None]
    min_norm = _minimum_norm(rollout_norms)
    sums = dict(policy_loss=0.0, clip_term=0.0, kl_term=0.0, entropy_term=0.0, l2_term=0.0, value_loss=0.0)
    n_steps = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch):
            idx = order[start : start + hp.minibatch]
            mb = Batch(*(arr[idx] for arr in data))
            if gradient_engine == "adjoint":
                loss, g, norms = ppo_loss(policy, theta, mb, hp, grad=True)
            elif gradient_engine == "finite-difference":
                loss, _, norms = ppo_loss(policy, theta, mb, hp)
                g = gradient(lambda x: ppo_loss(policy, x, mb, hp)[0].total, theta)
            else:
                raise InvalidConfigError(f"unknown gradient engine {gradient_engine!r}.")
            min_norm = _minimum_norm([min_norm], norms)
            theta, policy_adam = adam_step(theta, g, policy_adam, hp.lr_policy * lr_scale)
            vloss, vg = value_net.loss_and_grad(value_theta, mb.obs, mb.returns)
            value_theta, value_adam = adam_step(value_theta, vg, value_adam, hp.lr_value * lr_scale)
            sums["policy_loss"] += loss.total
            sums["clip_term"] += loss.clip
            sums["kl_term"] += loss.kl
            sums["entropy_term"] += loss.entropy
            sums["l2_term"] += loss.l2
            sums["value_loss"] += vloss
            n_steps += 1

    scores, norms = policy.scores(theta, data.obs)
    probs, logp = softmax_with_temperature(scores, hp.tau)
    kl = np.sum(probs * (logp - np.log(data.probs_old)), axis=1)
    diagnostics = {k: v / n_steps for k, v in sums.items()}
    diagnostics.update(
        mean_kl=float(kl.mean()),
        mean_entropy=float(-np.sum(probs * logp, axis=1).mean()),
        min_state_norm=_minimum_norm([min_norm], norms),
        n_minibatches=n_steps,
    )
    return UpdateResult(theta, value_theta, policy_adam, value_adam, diagnostics)
