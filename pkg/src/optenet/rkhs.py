"""Kernel embedding of measures on observation triples and the projection onto a basis span.

Measures and functions on ``O^3`` are flat vectors of length ``O**3`` in C
order over ``(o_1, o_2, o_3)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .linear import ObsBases

ALPHA_TOL = 1e-10


class SingularGramError(ValueError):
    def __init__(self, msg: str, alpha: float):
        super().__init__(msg)
        self.alpha = alpha


def delta_triple_kernel(O: int) -> np.ndarray:
    return np.eye(O**3)


def rbf_triple_kernel(O: int, bandwidth: float = 1.0) -> np.ndarray:
    """Gaussian kernel on triples embedded as integer points of ``{0..O-1}^3``."""
    pts = np.indices((O, O, O)).reshape(3, -1).T.astype(float)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2.0 * bandwidth**2))


def embed(kernel: np.ndarray, p: np.ndarray) -> np.ndarray:
    return kernel @ p


def mmd(kernel: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> float:
    d = np.asarray(p1, dtype=float) - np.asarray(p2, dtype=float)
    return float(np.sqrt(max(d @ kernel @ d, 0.0)))


@dataclass(frozen=True, eq=False)
class RKHSContext:
    """Kernel, basis and factorized Gram matrix ``G = phi^T K phi``."""

    kernel: np.ndarray
    phi: np.ndarray
    G: np.ndarray
    alpha: float
    _chol: tuple

    @property
    def d_o(self) -> int:
        return self.phi.shape[1]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve(self._chol, b)


def compute_G(kernel: np.ndarray, phi: ObsBases | np.ndarray) -> RKHSContext:
    """Gram matrix of the basis under the kernel; refuses when ``lambda_min(G) <= 1e-10``."""
    phi = np.asarray(phi.phi if isinstance(phi, ObsBases) else phi, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if not np.allclose(kernel, kernel.T, atol=1e-12) or np.max(np.abs(kernel)) > 1 + 1e-12:
        raise ValueError("triple kernel must be symmetric with entries bounded by 1")
    G = phi.T @ kernel @ phi
    G = 0.5 * (G + G.T)
    alpha = float(np.linalg.eigvalsh(G)[0])
    if alpha <= ALPHA_TOL:
        raise SingularGramError(f"Gram matrix is not positive definite (alpha = {alpha:.3g})", alpha)
    return RKHSContext(kernel, phi, G, alpha, cho_factor(G))


def default_context(O: int) -> RKHSContext:
    """Delta kernel with the one-hot basis of ``O^3``."""
    return compute_G(delta_triple_kernel(O), np.eye(O**3))


def apply_S(ctx: RKHSContext, f: np.ndarray) -> np.ndarray:
    """``(S f)(x) = sum_ij G^{-1}[i, j] (K phi_i)(x) <phi_j, f>``."""
    return ctx.kernel @ ctx.phi @ ctx.solve(ctx.phi.T @ f)


def project_distribution(ctx: RKHSContext, rho: np.ndarray) -> np.ndarray:
    """Best approximation of ``rho`` in ``span(phi)`` under the kernel metric."""
    return ctx.phi @ ctx.solve(ctx.phi.T @ (ctx.kernel @ rho))
