r"""
Truncated Fock-basis simulator for continuous-variable circuits.

States are pure and stored as complex amplitude tensors over ``M`` qumodes,
each truncated to photon numbers ``0 .. D-1``. Gates are dense matrices.

Displacement and squeezing have generators that do not close on the truncated
space, so they are exponentiated on an enlarged internal cutoff and then
projected back to ``D x D``. The projected matrices carry the exact matrix
elements of the infinite-dimensional gate, which means columns near the cutoff
lose norm. That leakage is intentional: states are never renormalized and the
squared norm is the truncation diagnostic.

The beamsplitter conserves total photon number, so each number sector is a
closed finite block and is exponentiated exactly.

Quadratures follow :math:`X = c(a + a^\dagger)`, :math:`P = -ic(a - a^\dagger)`
with :math:`c = \sqrt{\hbar/2}`; the default :math:`\hbar = 2` gives ``c = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, TextIO, Union

import numpy as np
import scipy.linalg

from .exceptions import (
    GateDomainError,
    InvalidConfigError,
    NumericalDegeneracyError,
    ShapeError,
)

Modes = Union[int, Sequence[int]]


@dataclass(frozen=True)
class SimConfig:
    """Simulator configuration: number of modes, cutoff and gate safety limits."""

    modes: int = 2
    cutoff: int = 16
    hbar: float = 2.0
    displacement_limit: float = 4.0
    squeezing_limit: float = 1.5

    def __post_init__(self):
        if int(self.modes) != self.modes or self.modes < 1:
            raise InvalidConfigError(f"modes must be a positive integer; got {self.modes}.")
        if int(self.cutoff) != self.cutoff or self.cutoff < 2:
            raise InvalidConfigError(f"cutoff must be an integer >= 2; got {self.cutoff}.")
        if not self.hbar > 0:
            raise InvalidConfigError(f"hbar must be positive; got {self.hbar}.")

    @property
    def dim(self) -> int:
        return self.cutoff**self.modes

    @property
    def quadrature_scale(self) -> float:
        return math.sqrt(self.hbar / 2.0)


@dataclass
class FockState:
    """Pure (possibly sub-normalized) state; ``amplitudes`` is flat, row-major over modes."""

    amplitudes: np.ndarray
    config: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.config.dim:
            raise ShapeError(
                f"expected {self.config.dim} amplitudes for "
                f"M={self.config.modes}, D={self.config.cutoff}; got {amps.size}."
            )
        self.amplitudes = amps

    @classmethod
    def vacuum(cls, config: SimConfig | None = None) -> "FockState":
        config = config or SimConfig()
        amps = np.zeros(config.dim, dtype=complex)
        amps[0] = 1.0
        return cls(amps, config)

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((self.config.cutoff,) * self.config.modes)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def purity(self) -> float:
        # Tr(rho^2) of the unnormalized projector |psi><psi|.
        return self.norm_squared() ** 2


def annihilation_matrix(cutoff: int) -> np.ndarray:
    """Truncated annihilation operator with ``<n-1|a|n> = sqrt(n)``."""
    if int(cutoff) != cutoff or cutoff < 2:
        raise InvalidConfigError(f"cutoff must be an integer >= 2; got {cutoff}.")
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1).astype(complex)


def _antihermitian_eig(G: np.ndarray):
    # G = V diag(-i w) V^H with w real, via the Hermitian matrix iG.
    w, V = np.linalg.eigh(1j * G)
    return w, V


def _is_antihermitian(G: np.ndarray) -> bool:
    scale = max(1.0, float(np.abs(G).max(initial=0.0)))
    return bool(np.abs(G + G.conj().T).max(initial=0.0) <= 1e-13 * scale)


def matrix_exponential(G: np.ndarray) -> np.ndarray:
    """Return ``exp(G)`` for a square complex matrix.

    Anti-Hermitian input (every gate generator) goes through a Hermitian
    eigendecomposition, which keeps the result unitary to roundoff. Anything
    else falls back to scaling-and-squaring Pade.
    """
    G = np.asarray(G, dtype=complex)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ShapeError(f"matrix_exponential needs a square matrix; got shape {G.shape}.")
    if _is_antihermitian(G):
        w, V = _antihermitian_eig(G)
        return (V * np.exp(-1j * w)) @ V.conj().T
    return scipy.linalg.expm(G)


# ---------------------------------------------------------------------------
# Padded spectral generators for displacement and squeezing

def _bucket(r: float) -> float:
    return max(0.25, math.ceil(abs(r) * 4.0) / 4.0)


def _padded_size(kind: str, cutoff: int, r: float) -> int:
    rb = _bucket(r)
    if kind == "displacement":
        return int(math.ceil((math.sqrt(cutoff - 1) + rb + 7.0) ** 2)) + 8
    t = math.tanh(rb)
    m = int(math.ceil(40.0 / -math.log(t)))
    return 2 * cutoff + 2 * m + 16


@lru_cache(maxsize=64)
def _generator_spectrum(kind: str, size: int):
    a = annihilation_matrix(size)
    ad = a.conj().T
    if kind == "displacement":
        G = ad - a
    else:
        G = 0.5 * (a @ a - ad @ ad)
    w, V = _antihermitian_eig(G)
    return w, V


def _projected_exp(kind: str, r: float, cutoff: int, with_derivative: bool):
    # Returns the D x D block of exp(r G) (and d/dr) computed on a padded space.
    w, V = _generator_spectrum(kind, _padded_size(kind, cutoff, r))
    Vd = V[:cutoff]
    phase = np.exp(-1j * r * w)
    U = (Vd * phase) @ Vd.conj().T
    if not with_derivative:
        return U, None
    dU = (Vd * (-1j * w * phase)) @ Vd.conj().T
    return U, dU


def _phase_matrix(cutoff: int, phi: float, scale: float = 1.0) -> np.ndarray:
    n = np.arange(cutoff)
    return np.exp(1j * phi * scale * (n[:, None] - n[None, :]))


def _check_limit(name: str, r: float, limit: float):
    if not np.isfinite(r) or abs(r) > limit:
        raise GateDomainError(f"{name} magnitude {r} exceeds the safety limit {limit}.")


def displacement_matrices(r: float, phi: float, config: SimConfig, with_derivative=False):
    """``D(r, phi)`` and optionally its derivative with respect to ``r``."""
    _check_limit("displacement", r, config.displacement_limit)
    U, dU = _projected_exp("displacement", float(r), config.cutoff, with_derivative)
    if phi != 0.0:
        ph = _phase_matrix(config.cutoff, phi)
        U = U * ph
        dU = dU * ph if dU is not None else None
    return U, dU


def squeezing_matrices(r: float, phi: float, config: SimConfig, with_derivative=False):
    """``S(r e^{i phi})`` and optionally its derivative with respect to ``r``."""
    _check_limit("squeezing", r, config.squeezing_limit)
    U, dU = _projected_exp("squeezing", float(r), config.cutoff, with_derivative)
    if phi != 0.0:
        ph = _phase_matrix(config.cutoff, phi, 0.5)
        U = U * ph
        dU = dU * ph if dU is not None else None
    return U, dU


def displacement_gate(r: float, phi: float, config: SimConfig | None = None) -> np.ndarray:
    r"""Displacement :math:`D(\alpha) = \exp(\alpha a^\dagger - \alpha^* a)`, ``alpha = r e^{i phi}``."""
    return displacement_matrices(r, phi, config or SimConfig())[0]


def squeezing_gate(r: float, phi: float, config: SimConfig | None = None) -> np.ndarray:
    r"""Squeezing :math:`S(z) = \exp((z^* a^2 - z a^{\dagger 2})/2)`, ``z = r e^{i phi}``."""
    return squeezing_matrices(r, phi, config or SimConfig())[0]


def rotation_phases(phi: float, cutoff: int) -> np.ndarray:
    return np.exp(1j * phi * np.arange(cutoff))


def kerr_phases(kappa: float, cutoff: int) -> np.ndarray:
    n = np.arange(cutoff)
    return np.exp(1j * kappa * n * n)


def rotation_gate(phi: float, config: SimConfig | None = None) -> np.ndarray:
    config = config or SimConfig()
    return np.diag(rotation_phases(phi, config.cutoff))


def kerr_gate(kappa: float, config: SimConfig | None = None) -> np.ndarray:
    config = config or SimConfig()
    return np.diag(kerr_phases(kappa, config.cutoff))


# ---------------------------------------------------------------------------
# Beamsplitter, exact per photon-number sector

@lru_cache(maxsize=None)
def _sector_spectrum(total: int):
    k = np.arange(total)
    off = np.sqrt((k + 1.0) * (total - k))
    J = np.zeros((total + 1, total + 1))
    J[k + 1, k] = off
    J[k, k + 1] = -off
    return _antihermitian_eig(J.astype(complex))


@lru_cache(maxsize=16)
def _sector_layout(cutoff: int):
    # Stack every sector, zero-padded to a common shape, so one batched matmul
    # builds all blocks; ``target``/``source`` scatter them into the D^2 matrix.
    n_sec = 2 * cutoff - 1
    width = n_sec
    V = np.zeros((n_sec, cutoff, width), dtype=complex)
    w = np.zeros((n_sec, width))
    target, source = [], []
    for total in range(n_sec):
        kmin, kmax = max(0, total - cutoff + 1), min(total, cutoff - 1)
        k = np.arange(kmin, kmax + 1)
        ws, Vs = _sector_spectrum(total)
        rows = k.size
        V[total, :rows, : total + 1] = Vs[kmin : kmax + 1]
        w[total, : total + 1] = ws
        idx = k * cutoff + (total - k)
        local = np.arange(rows)
        target.append((idx[:, None] * cutoff * cutoff + idx[None, :]).ravel())
        source.append((total * cutoff * cutoff + local[:, None] * cutoff + local[None, :]).ravel())
    n1 = np.repeat(np.arange(cutoff), cutoff)
    return V, w, np.concatenate(target), np.concatenate(source), n1


def beamsplitter_matrices(theta: float, phi: float, config: SimConfig, with_derivative=False):
    """Two-mode beamsplitter on the ``D**2`` space.

    Returns ``(U, dU/dtheta, dU/dphi)``; the derivatives are ``None`` unless
    requested.
    """
    D = config.cutoff
    V, w, target, source, n1 = _sector_layout(D)
    Vh = V.conj().transpose(0, 2, 1)
    phase = np.exp(-1j * theta * w)[:, None, :]

    def scatter(blocks):
        out = np.zeros(D**4, dtype=complex)
        out[target] = blocks.reshape(-1)[source]
        return out.reshape(D * D, D * D)

    U = scatter((V * phase) @ Vh)
    dU = scatter((V * (-1j * w[:, None, :] * phase)) @ Vh) if with_derivative else None
    if phi != 0.0:
        v = np.exp(1j * phi * n1)
        ph = v[:, None] * v.conj()[None, :]
        U *= ph
        if with_derivative:
            dU *= ph
    if not with_derivative:
        return U, None, None
    dphi = (1j * (n1[:, None] - n1[None, :])) * U
    return U, dU, dphi


def beamsplitter_gate(theta: float, phi: float, config: SimConfig | None = None) -> np.ndarray:
    r"""Beamsplitter :math:`\exp(\theta(e^{i\phi} a^\dagger b - e^{-i\phi} a b^\dagger))`."""
    return beamsplitter_matrices(theta, phi, config or SimConfig())[0]


# ---------------------------------------------------------------------------
# Applying gates to (batched) amplitude tensors

def apply_single_mode(psi: np.ndarray, gate: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``gate`` into ``psi`` along ``axis``.

    ``gate`` is ``(D, D)`` or, for per-sample gates, ``(B, D, D)`` where ``B`` is
    the leading axis of ``psi``.
    """
    moved = np.moveaxis(psi, axis, -1)
    shape = moved.shape
    if gate.ndim == 3:
        out = moved.reshape(shape[0], -1, shape[-1]) @ gate.transpose(0, 2, 1)
    else:
        out = moved @ gate.T
    return np.moveaxis(out.reshape(shape), -1, axis)


def apply_diagonal(psi: np.ndarray, phases: np.ndarray, axis: int) -> np.ndarray:
    shape = [1] * psi.ndim
    shape[axis] = phases.size
    return psi * phases.reshape(shape)


def apply_two_mode(psi: np.ndarray, gate: np.ndarray, axes: tuple[int, int]) -> np.ndarray:
    moved = np.moveaxis(psi, axes, (-2, -1))
    shape = moved.shape
    out = moved.reshape(shape[:-2] + (-1,)) @ gate.T
    return np.moveaxis(out.reshape(shape), (-2, -1), axes)


def apply_gate(state: FockState, gate: np.ndarray, modes: Modes) -> FockState:
    """Apply a single- or two-mode gate matrix to ``state`` on ``modes``."""
    cfg = state.config
    D, M = cfg.cutoff, cfg.modes
    gate = np.asarray(gate, dtype=complex)
    modes = (modes,) if np.isscalar(modes) else tuple(modes)
    if any(not 0 <= m < M for m in modes) or len(set(modes)) != len(modes):
        raise ShapeError(f"invalid mode indices {modes} for {M} modes.")
    arity = {(D, D): 1, (D * D, D * D): 2}.get(gate.shape)
    if arity is None or arity != len(modes):
        raise ShapeError(f"gate of shape {gate.shape} cannot act on modes {modes} at cutoff {D}.")
    psi = state.tensor
    if arity == 1:
        out = apply_single_mode(psi, gate, modes[0])
    else:
        out = apply_two_mode(psi, gate, modes)
    return FockState(out.reshape(-1), cfg)


# ---------------------------------------------------------------------------
# Readout

def lowering(psi: np.ndarray, axis: int) -> np.ndarray:
    """``a psi`` on ``axis`` without building the matrix."""
    D = psi.shape[axis]
    out = np.zeros_like(psi)
    src = [slice(None)] * psi.ndim
    dst = [slice(None)] * psi.ndim
    src[axis] = slice(1, D)
    dst[axis] = slice(0, D - 1)
    shape = [1] * psi.ndim
    shape[axis] = D - 1
    out[tuple(dst)] = psi[tuple(src)] * np.sqrt(np.arange(1, D)).reshape(shape)
    return out


def raising(psi: np.ndarray, axis: int) -> np.ndarray:
    D = psi.shape[axis]
    out = np.zeros_like(psi)
    src = [slice(None)] * psi.ndim
    dst = [slice(None)] * psi.ndim
    src[axis] = slice(0, D - 1)
    dst[axis] = slice(1, D)
    shape = [1] * psi.ndim
    shape[axis] = D - 1
    out[tuple(dst)] = psi[tuple(src)] * np.sqrt(np.arange(1, D)).reshape(shape)
    return out


def quadrature_apply(psi: np.ndarray, axis: int, phi: float, scale: float) -> np.ndarray:
    """``X_phi psi`` with ``X_phi = scale (e^{-i phi} a + e^{i phi} a^dagger)``."""
    return scale * (np.exp(-1j * phi) * lowering(psi, axis) + np.exp(1j * phi) * raising(psi, axis))


def quadrature_expectation(state: FockState, mode: int, phi: float = 0.0) -> float:
    """Normalized expectation of ``X cos(phi) + P sin(phi)`` on ``mode``."""
    if not 0 <= mode < state.config.modes:
        raise ShapeError(f"mode {mode} out of range for {state.config.modes} modes.")
    norm = state.norm_squared()
    if not norm > 0 or not np.isfinite(norm):
        raise NumericalDegeneracyError(f"state has squared norm {norm}.")
    psi = state.tensor
    mean_a = np.vdot(psi, lowering(psi, mode))
    return float(2.0 * state.config.quadrature_scale * (np.exp(-1j * phi) * mean_a).real / norm)


def mean_photon_number(state: FockState, mode: int) -> float:
    norm = state.norm_squared()
    if not norm > 0:
        raise NumericalDegeneracyError(f"state has squared norm {norm}.")
    probs = np.abs(np.moveaxis(state.tensor, mode, 0)) ** 2
    n = np.arange(state.config.cutoff)
    return float((probs.reshape(state.config.cutoff, -1).sum(axis=1) * n).sum() / norm)


# ---------------------------------------------------------------------------
# Plain-text gate dumps

def dump_gate(gate: np.ndarray, fh: TextIO) -> None:
    """Write one matrix row per line as space-separated ``re,im`` pairs."""
    for row in np.asarray(gate, dtype=complex):
        fh.write(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) + "\n")


def load_gate(fh: TextIO) -> np.ndarray:
    rows = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        rows.append([complex(float(re), float(im)) for re, im in (tok.split(",") for tok in line.split())])
    gate = np.array(rows, dtype=complex)
    if gate.ndim != 2 or gate.shape[0] != gate.shape[1]:
        raise ShapeError(f"gate dump is not square: {gate.shape}.")
    return gate
