"""
scikit-learn style wrappers.

``PhotonicPPOAgent.fit`` trains a single agent on restricted CartPole (the
environment is the data, so ``X``/``y`` are ignored); afterwards
``predict_proba`` maps ``(x, theta)`` observation rows to action probabilities.
``QuadratureFeatures`` exposes the circuit readout ``(<P1>, <P2>)`` as a
feature transform.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .circuit import EncodingVariant, PhotonicCircuit, softmax_with_temperature
from .env import CartPoleEnv
from .exceptions import ShapeError
from .fock import SimConfig
from .harness import ExperimentConfig, make_policy, run_agent
from .ppo import Hyperparameters


def _observations(X) -> np.ndarray:
    X = check_array(X, dtype=float, ensure_2d=True)
    if X.shape[1] != 2:
        raise ShapeError(f"expected observation rows (x, theta) with 2 columns; got {X.shape[1]}.")
    return X


class PhotonicPPOAgent(BaseEstimator):
    """One PPO agent with a photonic (or classical) policy."""

    def __init__(self, policy="reupload", layers=3, cutoff=16, episodes=200, seed=1,
                 gamma=0.99, lam=0.95, epsilon=0.2, beta=0.1, c2=0.01, alpha=0.075, tau=1.0,
                 lr_policy=0.01, lr_value=0.005, minibatch=8, epochs=4,
                 gradient_engine="adjoint"):
        self.policy = policy
        self.layers = layers
        self.cutoff = cutoff
        self.episodes = episodes
        self.seed = seed
        self.gamma = gamma
        self.lam = lam
        self.epsilon = epsilon
        self.beta = beta
        self.c2 = c2
        self.alpha = alpha
        self.tau = tau
        self.lr_policy = lr_policy
        self.lr_value = lr_value
        self.minibatch = minibatch
        self.epochs = epochs
        self.gradient_engine = gradient_engine

    def _config(self) -> ExperimentConfig:
        hp = Hyperparameters(
            gamma=self.gamma, lam=self.lam, epsilon=self.epsilon, beta=self.beta, c2=self.c2,
            alpha=self.alpha, tau=self.tau, lr_policy=self.lr_policy, lr_value=self.lr_value,
            minibatch=self.minibatch, epochs=self.epochs,
        )
        return ExperimentConfig(policy_kind=self.policy, layers=self.layers, cutoff=self.cutoff,
                                episodes=self.episodes, num_agents=1, seeds=(self.seed,), hp=hp,
                                gradient_engine=self.gradient_engine)

    def fit(self, X=None, y=None):
        cfg = self._config()
        record = run_agent(cfg, self.seed)
        self.config_ = cfg
        self.record_ = record
        self.rewards_ = np.asarray(record.rewards)
        self.policy_theta_ = record.policy_theta
        self.value_theta_ = record.value_theta
        self.status_ = record.status
        self.n_features_in_ = 2
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_theta_")
        X = _observations(X)
        scores, _ = make_policy(self.config_).scores(self.policy_theta_, X)
        return softmax_with_temperature(scores, self.tau)[0]

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def evaluate(self, episodes: int = 10, seed: int = 0) -> float:
        """Mean reward of the greedy policy over fresh episodes."""
        check_is_fitted(self, "policy_theta_")
        env = CartPoleEnv(np.random.default_rng(seed), self.config_.hp.horizon)
        totals = []
        for _ in range(episodes):
            obs, total, done = env.reset(), 0.0, False
            while not done:
                result = env.step(int(self.predict([obs])[0]))
                obs, done = result.observation, result.done
                total += result.reward
            totals.append(total)
        return float(np.mean(totals))


class QuadratureFeatures(TransformerMixin, BaseEstimator):
    """Map observation rows to circuit readouts ``(<P1>, <P2>)``.

    ``params`` fixes the circuit parameters (flat, ``layers * 14`` values);
    otherwise ``fit`` draws the standard initialization from ``random_state``.
    """

    def __init__(self, layers=3, cutoff=16, variant="reupload", params=None, random_state=None):
        self.layers = layers
        self.cutoff = cutoff
        self.variant = variant
        self.params = params
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _observations(X)
        self.circuit_ = PhotonicCircuit(SimConfig(2, self.cutoff), self.layers, EncodingVariant(self.variant))
        if self.params is None:
            self.params_ = self.circuit_.init_params(np.random.default_rng(self.random_state))
        else:
            params = np.asarray(self.params, dtype=float).ravel()
            if params.size != self.circuit_.n_params:
                raise ShapeError(f"expected {self.circuit_.n_params} parameters; got {params.size}.")
            self.params_ = params
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = _observations(X)
        return self.circuit_.scores(self.params_, X)[0]
