"""
Photonic policy circuit for the two-feature CartPole observation.

Two qumodes start in squeezed vacuum; the pole angle and angular velocity are
written in as P-quadrature displacements; ``L`` variational layers of
``BS, D, R, BS, S, R, K`` follow; the policy reads ``<P1>`` and ``<P2>`` and
turns them into action probabilities with a temperature softmax. In the
re-uploading variant the encoding displacements are repeated before every
layer, while the initial squeezing is applied once.

:class:`PhotonicCircuit` evaluates whole batches of observations and computes
parameter gradients by reverse-mode (adjoint) propagation through the gate
sequence. The single-observation functions below are thin wrappers on it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import fock
from .exceptions import InvalidConfigError, ShapeError
from .fock import FockState, SimConfig

INIT_SQUEEZING = 0.5
ENCODING_PHASE = math.pi / 2
READOUT_PHASE = math.pi / 2
INIT_MAGNITUDE_STD = 0.05

# Flat layout of one layer. Slot names are used in checkpoints.
SLOT_NAMES = (
    "bs1.theta", "bs1.phi",
    "disp.0", "disp.1",
    "rot1.0", "rot1.1",
    "bs2.theta", "bs2.phi",
    "squeeze.0", "squeeze.1",
    "rot2.0", "rot2.1",
    "kerr.0", "kerr.1",
)
PARAMS_PER_LAYER = len(SLOT_NAMES)
DISP_SLOTS = (2, 3)
SQUEEZE_SLOTS = (8, 9)
ACTIVE_SLOTS = DISP_SLOTS + SQUEEZE_SLOTS


class EncodingVariant(str, enum.Enum):
    SINGLE = "single"
    REUPLOAD = "reupload"


class ObservationPair(NamedTuple):
    pole_angle: float
    angular_velocity: float


@dataclass
class LayerParams:
    bs1_theta: float = 0.0
    bs1_phi: float = 0.0
    disp: tuple = (0.0, 0.0)
    rot1: tuple = (0.0, 0.0)
    bs2_theta: float = 0.0
    bs2_phi: float = 0.0
    squeeze: tuple = (0.0, 0.0)
    rot2: tuple = (0.0, 0.0)
    kerr: tuple = (0.0, 0.0)

    def to_array(self) -> np.ndarray:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.extend(v if isinstance(v, (tuple, list, np.ndarray)) else [v])
        return np.asarray(out, dtype=float)

    @classmethod
    def from_array(cls, values) -> "LayerParams":
        v = [float(x) for x in np.asarray(values, dtype=float).reshape(-1)]
        if len(v) != PARAMS_PER_LAYER:
            raise ShapeError(f"a layer has {PARAMS_PER_LAYER} parameters; got {len(v)}.")
        return cls(v[0], v[1], (v[2], v[3]), (v[4], v[5]), v[6], v[7],
                   (v[8], v[9]), (v[10], v[11]), (v[12], v[13]))


@dataclass
class PolicyParams:
    """Trainable circuit parameters, stored as an ``(L, 14)`` array."""

    values: np.ndarray
    variant: EncodingVariant = EncodingVariant.SINGLE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size == 0:
            values = values.reshape(0, PARAMS_PER_LAYER)
        if values.ndim != 2 or values.shape[1] != PARAMS_PER_LAYER:
            raise ShapeError(f"expected shape (L, {PARAMS_PER_LAYER}); got {values.shape}.")
        self.values = values
        self.variant = EncodingVariant(self.variant)

    @classmethod
    def from_layers(cls, layers, variant=EncodingVariant.SINGLE) -> "PolicyParams":
        arr = np.array([lp.to_array() for lp in layers]).reshape(-1, PARAMS_PER_LAYER)
        return cls(arr, variant)

    @classmethod
    def zeros(cls, n_layers: int, variant=EncodingVariant.SINGLE) -> "PolicyParams":
        return cls(np.zeros((n_layers, PARAMS_PER_LAYER)), variant)

    @property
    def layers(self) -> list[LayerParams]:
        return [LayerParams.from_array(row) for row in self.values]

    @property
    def n_layers(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    def with_flat(self, theta) -> "PolicyParams":
        return PolicyParams(np.asarray(theta, dtype=float).reshape(self.values.shape), self.variant)

    def named(self) -> dict[str, float]:
        return {
            f"layer.{i}.{name}": float(v)
            for i, row in enumerate(self.values)
            for name, v in zip(SLOT_NAMES, row)
        }

    @classmethod
    def from_named(cls, named: dict[str, float], variant=EncodingVariant.SINGLE) -> "PolicyParams":
        n_layers = len(named) // PARAMS_PER_LAYER
        if n_layers * PARAMS_PER_LAYER != len(named):
            raise ShapeError(f"{len(named)} named values do not form whole layers.")
        values = np.empty((n_layers, PARAMS_PER_LAYER))
        for i in range(n_layers):
            for j, name in enumerate(SLOT_NAMES):
                key = f"layer.{i}.{name}"
                if key not in named:
                    raise ShapeError(f"missing parameter {key!r}.")
                values[i, j] = named[key]
        return cls(values, variant)


@dataclass(frozen=True)
class ActionDistribution:
    p0: float
    p1: float
    log_p0: float
    log_p1: float

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.p0, self.p1])

    @property
    def log_probs(self) -> np.ndarray:
        return np.array([self.log_p0, self.log_p1])


def softmax_with_temperature(scores: np.ndarray, tau: float):
    """Row-wise ``softmax(scores / tau)``; returns ``(probs, log_probs)``."""
    if not tau > 0:
        raise InvalidConfigError(f"temperature must be positive; got {tau}.")
    z = np.asarray(scores, dtype=float) / tau
    z = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - log_norm
    return np.exp(logp), logp


def policy_distribution(p1: float, p2: float, tau: float = 1.0) -> ActionDistribution:
    """Action probabilities ``Pr(a=k) ~ exp(<P_{k+1}>/tau)``."""
    probs, logp = softmax_with_temperature(np.array([p1, p2]), tau)
    return ActionDistribution(float(probs[0]), float(probs[1]), float(logp[0]), float(logp[1]))


def feature_transform(s):
    """Squash an observation into a displacement: ``sign(s) (4/pi) |arctan s|^(1/3)``."""
    s = np.asarray(s, dtype=float)
    out = np.sign(s) * (4.0 / math.pi) * np.cbrt(np.abs(np.arctan(s)))
    return float(out) if out.ndim == 0 else out


def l2_active(params) -> float:
    """Sum of squared in-layer displacement and squeezing magnitudes."""
    values = params.values if isinstance(params, PolicyParams) else np.asarray(params, dtype=float)
    values = values.reshape(-1, PARAMS_PER_LAYER)
    return float(np.sum(values[:, ACTIVE_SLOTS] ** 2))


def param_count(params: PolicyParams) -> int:
    return PARAMS_PER_LAYER * params.n_layers


def init_params(rng: np.random.Generator, n_layers: int = 3,
                variant=EncodingVariant.SINGLE, config: SimConfig | None = None) -> PolicyParams:
    """Phases uniform on ``[0, 2pi)``; displacement and squeezing magnitudes ~ N(0, 0.05^2)."""
    if n_layers < 1:
        raise InvalidConfigError(f"need at least one layer; got {n_layers}.")
    config = config or SimConfig()
    values = rng.uniform(0.0, 2 * math.pi, size=(n_layers, PARAMS_PER_LAYER))
    values[:, ACTIVE_SLOTS] = rng.normal(0.0, INIT_MAGNITUDE_STD, size=(n_layers, len(ACTIVE_SLOTS)))
    values[:, DISP_SLOTS] = np.clip(values[:, DISP_SLOTS], -config.displacement_limit, config.displacement_limit)
    values[:, SQUEEZE_SLOTS] = np.clip(values[:, SQUEEZE_SLOTS], -config.squeezing_limit, config.squeezing_limit)
    return PolicyParams(values, variant)


# ---------------------------------------------------------------------------
# Batched engine

class _Tape(NamedTuple):
    ops: list
    states: list
    final: np.ndarray
    norms: np.ndarray
    scores: np.ndarray


class PhotonicCircuit:
    """Two-mode policy circuit evaluated on batches of observations.

    ``scores`` returns ``(<P1>, <P2>)`` for each observation, normalized by the
    state's squared norm, together with that norm. ``backward`` turns
    per-sample sensitivities ``dF/d<P_k>`` into ``dF/dtheta``.
    """

    modes = 2

    def __init__(self, config: SimConfig | None = None, n_layers: int = 3,
                 variant=EncodingVariant.SINGLE):
        self.config = config or SimConfig()
        if self.config.modes != self.modes:
            raise InvalidConfigError(f"the policy circuit needs 2 modes; got {self.config.modes}.")
        self.n_layers = n_layers
        self.variant = EncodingVariant(variant)
        D = self.config.cutoff
        sq = fock.squeezing_gate(INIT_SQUEEZING, 0.0, self.config)[:, 0]
        self._squeezed_vacuum = np.outer(sq, sq)[None]

    @property
    def n_params(self) -> int:
        return PARAMS_PER_LAYER * self.n_layers

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return init_params(rng, self.n_layers, self.variant, self.config).flat()

    def _encoding_gates(self, obs: np.ndarray) -> list[np.ndarray]:
        x = feature_transform(obs)
        gates = []
        for k in range(self.modes):
            gates.append(np.stack([
                fock.displacement_matrices(xi, ENCODING_PHASE, self.config)[0] for xi in x[:, k]
            ]))
        return gates

    def _layer_ops(self, row: np.ndarray, offset: int, grad: bool) -> list:
        cfg, D = self.config, self.config.cutoff
        n = np.arange(D)
        ops = []

        def bs(theta_slot, phi_slot):
            U, dth, dph = fock.beamsplitter_matrices(row[theta_slot], row[phi_slot], cfg, grad)
            ops.append(("two", U, None, [(offset + theta_slot, dth), (offset + phi_slot, dph)] if grad else []))

        def single(builder, slots):
            for mode, slot in enumerate(slots):
                U, dU = builder(row[slot], 0.0, cfg, grad)
                ops.append(("one", U, mode + 1, [(offset + slot, dU)] if grad else []))

        def diag(slots, power):
            for mode, slot in enumerate(slots):
                gen = 1j * n**power
                ph = np.exp(gen * row[slot])
                ops.append(("diag", ph, mode + 1, [(offset + slot, gen * ph)] if grad else []))

        bs(0, 1)
        single(fock.displacement_matrices, DISP_SLOTS)
        diag((4, 5), 1)
        bs(6, 7)
        single(fock.squeezing_matrices, SQUEEZE_SLOTS)
        diag((10, 11), 1)
        diag((12, 13), 2)
        return ops

    def _all_layer_ops(self, theta: np.ndarray, grad: bool) -> list:
        # Layer gates depend only on theta; rollouts reuse them step after step.
        key = (theta.tobytes(), grad)
        cached = getattr(self, "_layer_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        layers = [self._layer_ops(row, i * PARAMS_PER_LAYER, grad) for i, row in enumerate(theta)]
        self._layer_cache = (key, layers)
        return layers

    def _build_ops(self, theta: np.ndarray, obs: np.ndarray, grad: bool) -> list:
        theta = np.asarray(theta, dtype=float).reshape(self.n_layers, PARAMS_PER_LAYER)
        enc = self._encoding_gates(obs)
        encode = [("one", enc[k], k + 1, []) for k in range(self.modes)]
        ops = [] if self.variant is EncodingVariant.REUPLOAD else list(encode)
        for layer in self._all_layer_ops(theta, grad):
            if self.variant is EncodingVariant.REUPLOAD:
                ops.extend(encode)
            ops.extend(layer)
        return ops

    def l2(self, theta) -> float:
        return l2_active(np.asarray(theta).reshape(self.n_layers, PARAMS_PER_LAYER))

    def l2_grad(self, theta) -> np.ndarray:
        values = np.asarray(theta, dtype=float).reshape(self.n_layers, PARAMS_PER_LAYER)
        grad = np.zeros_like(values)
        grad[:, ACTIVE_SLOTS] = 2.0 * values[:, ACTIVE_SLOTS]
        return grad.ravel()

    def params(self, theta) -> PolicyParams:
        return PolicyParams(np.asarray(theta).reshape(self.n_layers, PARAMS_PER_LAYER), self.variant)

    @staticmethod
    def _apply(op, psi, adjoint=False):
        kind, U, axis, _ = op
        if kind == "diag":
            return fock.apply_diagonal(psi, U.conj() if adjoint else U, axis)
        if kind == "two":
            return fock.apply_two_mode(psi, U.conj().T if adjoint else U, (1, 2))
        if adjoint:
            U = U.conj().swapaxes(-1, -2)
        return fock.apply_single_mode(psi, U, axis)

    @staticmethod
    def _apply_derivative(op, dU, psi):
        kind, _, axis, _ = op
        if kind == "diag":
            return fock.apply_diagonal(psi, dU, axis)
        if kind == "two":
            return fock.apply_two_mode(psi, dU, (1, 2))
        return fock.apply_single_mode(psi, dU, axis)

    def _readout(self, psi: np.ndarray):
        norms = np.einsum("bij,bij->b", psi.conj(), psi).real
        c = self.config.quadrature_scale
        scores = np.empty((psi.shape[0], self.modes))
        for k in range(self.modes):
            mean_a = np.einsum("bij,bij->b", psi.conj(), fock.lowering(psi, k + 1))
            scores[:, k] = 2.0 * c * mean_a.imag / norms
        return scores, norms

    def run(self, theta, obs, initial=None, grad=False) -> _Tape:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if obs.shape[1] != self.modes:
            raise ShapeError(f"observations must have {self.modes} columns; got {obs.shape}.")
        ops = self._build_ops(theta, obs, grad)
        if initial is None:
            psi = np.repeat(self._squeezed_vacuum, obs.shape[0], axis=0)
        else:
            psi = initial
        states = []
        for op in ops:
            if grad:
                states.append(psi)
            psi = self._apply(op, psi)
        scores, norms = self._readout(psi)
        return _Tape(ops, states, psi, norms, scores)

    def scores(self, theta, obs):
        tape = self.run(theta, obs)
        return tape.scores, tape.norms

    def backward(self, tape: _Tape, dscores: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_b sum_k dscores[b, k] * <P_k>_b`` with respect to theta."""
        psi = tape.final
        c = self.config.quadrature_scale
        dscores = np.asarray(dscores, dtype=float)
        lam = np.zeros_like(psi)
        for k in range(self.modes):
            p_psi = fock.quadrature_apply(psi, k + 1, READOUT_PHASE, c)
            lam += (dscores[:, k] / tape.norms)[:, None, None] * (p_psi - tape.scores[:, k, None, None] * psi)
        grad = np.zeros(self.n_params)
        for op, psi_in in zip(reversed(tape.ops), reversed(tape.states)):
            for idx, dU in op[3]:
                grad[idx] += 2.0 * np.vdot(lam, self._apply_derivative(op, dU, psi_in)).real
            lam = self._apply(op, lam, adjoint=True)
        return grad


# ---------------------------------------------------------------------------
# Single-observation API

def _as_obs(obs) -> np.ndarray:
    arr = np.asarray(tuple(obs), dtype=float).reshape(1, 2)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"observation must be finite; got {obs}.")
    return arr


def prepare_input(obs, config: SimConfig | None = None) -> FockState:
    """Squeezed two-mode vacuum displaced along P by the transformed observation."""
    config = config or SimConfig()
    circ = PhotonicCircuit(config, 0, EncodingVariant.SINGLE)
    return FockState(circ.run(np.zeros(0), _as_obs(obs)).final[0], config)


def apply_layer(state: FockState, layer: LayerParams, config: SimConfig | None = None) -> FockState:
    config = config or state.config
    circ = PhotonicCircuit(config, 1)
    psi = state.tensor[None]
    for op in circ._layer_ops(layer.to_array(), 0, grad=False):
        psi = circ._apply(op, psi)
    return FockState(psi[0], config)


def forward(obs, params: PolicyParams, config: SimConfig | None = None) -> tuple[float, float]:
    """``(<P1>, <P2>)`` of the output state for one observation."""
    circ = PhotonicCircuit(config, params.n_layers, params.variant)
    scores, _ = circ.scores(params.flat(), _as_obs(obs))
    return float(scores[0, 0]), float(scores[0, 1])
