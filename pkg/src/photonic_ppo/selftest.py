"""
Gate-matrix oracle suite: compares simulator gates against closed forms that
do not share code with the gate builders. Used by ``photonic-ppo gates-selftest``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fock import (
    SimConfig,
    annihilation_matrix,
    beamsplitter_gate,
    displacement_gate,
    kerr_gate,
    rotation_gate,
    squeezing_gate,
)


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    error: float
    tolerance: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: error={self.error:.3e} tol={self.tolerance:.0e}"


def coherent_column(r: float, phi: float, n_max: int) -> np.ndarray:
    alpha = r * np.exp(1j * phi)
    return np.array([
        math.exp(-r * r / 2) * alpha**n / math.sqrt(math.factorial(n)) for n in range(n_max + 1)
    ])


def squeezed_vacuum(r: float, phi: float, cutoff: int) -> np.ndarray:
    out = np.zeros(cutoff, dtype=complex)
    t = -np.exp(1j * phi) * math.tanh(r)
    for n in range(0, (cutoff + 1) // 2):
        out[2 * n] = t**n * math.sqrt(math.factorial(2 * n)) / (2**n * math.factorial(n))
    return out / math.sqrt(math.cosh(r))


def truncated_commutator(cutoff: int) -> np.ndarray:
    a = annihilation_matrix(cutoff)
    return a @ a.conj().T - a.conj().T @ a


def _beamsplitter_reference(theta: float, phi: float, cutoff: int) -> np.ndarray:
    # Generator on a doubled cutoff, exponentiated directly, then projected.
    big = 2 * cutoff
    a = annihilation_matrix(big)
    eye = np.eye(big)
    A, B = np.kron(a, eye), np.kron(eye, a)
    G = theta * (np.exp(1j * phi) * A.conj().T @ B - np.exp(-1j * phi) * A @ B.conj().T)
    U = scipy.linalg.expm(G).reshape(big, big, big, big)
    return U[:cutoff, :cutoff, :cutoff, :cutoff].reshape(cutoff**2, cutoff**2)


def run_gate_oracles(cutoff: int = 16) -> list[OracleResult]:
    cfg = SimConfig(2, cutoff)
    results = []

    for r in (0.5, 1.0, 2.0):
        for phi in (0.0, 0.7):
            col = displacement_gate(r, phi, cfg)[:9, 0]
            err = float(np.max(np.abs(col - coherent_column(r, phi, 8))))
            results.append(OracleResult(f"coherent column D({r},{phi})", err <= 1e-9, err, 1e-9))

    for phi in (0.0, 1.1):
        col = squeezing_gate(0.5, phi, cfg)[:, 0]
        err = float(np.max(np.abs(col - squeezed_vacuum(0.5, phi, cutoff))))
        results.append(OracleResult(f"squeezed vacuum S(0.5,{phi})", err <= 1e-8, err, 1e-8))

    eye = np.eye(cutoff)
    for name, U in (("rotation", rotation_gate(0.83, cfg)), ("kerr", kerr_gate(0.21, cfg))):
        err = float(np.max(np.abs(U @ U.conj().T - eye)))
        results.append(OracleResult(f"{name} unitarity", err <= 1e-12, err, 1e-12))

    bs = beamsplitter_gate(0.6, 0.4, cfg)
    n = np.arange(cutoff)
    total = (n[:, None] + n[None, :]).ravel()
    leak = float(np.max(np.abs(bs[total[:, None] != total[None, :]])))
    results.append(OracleResult("beamsplitter number blocks", leak == 0.0, leak, 0.0))
    ref_cut = min(cutoff, 6)
    err = float(np.max(np.abs(beamsplitter_gate(0.6, 0.4, SimConfig(2, ref_cut)) - _beamsplitter_reference(0.6, 0.4, ref_cut))))
    results.append(OracleResult(f"beamsplitter vs direct exponential (D={ref_cut})", err <= 1e-12, err, 1e-12))

    # sqrt(n)**2 rounds in floating point, so the float check allows a few ulp.
    for d in (2, 4, 16):
        expected = np.diag([1.0] * (d - 1) + [-(d - 1.0)])
        err = float(np.max(np.abs(truncated_commutator(d) - expected)))
        tol = 8 * np.finfo(float).eps * d
        results.append(OracleResult(f"truncated commutator D={d}", err <= tol, err, tol))
    return results
