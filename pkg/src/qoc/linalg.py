"""Dense complex linear algebra kernel.

Hamiltonians are in angular-frequency units with hbar = 1, so a slice
propagator is ``expm_antihermitian(H, -1j * dt)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, DimMismatch, NonHermitian

HERMITIAN_RTOL = 1e-10

IDENTITY2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (IDENTITY2, SIGMA_X, SIGMA_Y, SIGMA_Z)


@dataclass(frozen=True)
class HermitianDecomposition:
    """Eigenvalues (ascending) and orthonormal eigenvector columns of a Hermitian matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[-1]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues[..., None, :]) @ dag(v)

    def apply_function(self, values: np.ndarray) -> np.ndarray:
        """Return ``V diag(values) V^dagger``."""
        v = self.eigenvectors
        return (v * values[..., None, :]) @ dag(v)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatch(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def dag(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(np.conj(a), -1, -2)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def hermiticity_error(h: np.ndarray) -> float:
    return float(np.linalg.norm(h - dag(h)))


def check_hermitian(h: np.ndarray, name: str = "H") -> None:
    norm = np.linalg.norm(h, axis=(-2, -1))
    err = np.linalg.norm(h - dag(h), axis=(-2, -1))
    if np.any(err >= HERMITIAN_RTOL * np.maximum(1.0, norm)):
        raise NonHermitian(f"{name} is not Hermitian (|H - H^+|_F = {np.max(err):.3e})")


def hermitian_eig(h) -> HermitianDecomposition:
    """Eigendecomposition of a Hermitian matrix (or a stack of them).

    Raises
    ------
    NonHermitian
        If ``|H - H^+|_F >= 1e-10 max(1, |H|_F)``.
    ConvergenceFailure
        If the LAPACK driver does not converge.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        raise DimMismatch(f"expected square matrices, got shape {h.shape}")
    check_hermitian(h)
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return HermitianDecomposition(w, v)


def expm_antihermitian(h, scale: complex = -1j, decomp: HermitianDecomposition | None = None) -> np.ndarray:
    """Compute ``exp(scale * H)`` for Hermitian ``H`` through its eigendecomposition.

    With ``scale = -1j * t`` the result is the unitary ``exp(-i H t)``.
    A precomputed ``decomp`` of ``H`` skips the factorization.
    """
    if decomp is None:
        decomp = hermitian_eig(h)
    return decomp.apply_function(np.exp(scale * decomp.eigenvalues))


def trace_inner(a, b) -> complex:
    """Hilbert-Schmidt inner product ``Tr(A^+ B)``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes {a.shape} and {b.shape} differ")
    return complex(np.vdot(a, b))


def normalize(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    n = np.linalg.norm(psi)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return psi / n


def basis_state(dim: int, index: int) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def unitarity_error(u: np.ndarray) -> float:
    return float(np.linalg.norm(dag(u) @ u - np.eye(u.shape[-1])))


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + dag(a)) / 2


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a Ginibre matrix."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))
