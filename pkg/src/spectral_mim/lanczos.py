"""Matrix-free Lanczos for the algebraically largest eigenpairs of a symmetric operator."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .errors import SolverFailure

log = logging.getLogger(__name__)


def lanczos_top(matvec: Callable[[np.ndarray], np.ndarray], d: int, k: int, rng: np.random.Generator,
                max_iter: int = 300, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Top-k eigenpairs with full reorthogonalization.

    Returns (values descending, d x k orthonormal vectors).  Convergence is
    declared when every wanted Ritz pair has residual below ``tol * |theta_1|``.
    """
    m_max = min(max_iter, d)
    Q = np.zeros((d, m_max + 1))
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    q = rng.standard_normal(d)
    Q[:, 0] = q / np.linalg.norm(q)
    for m in range(m_max):
        w = matvec(Q[:, m])
        alpha[m] = Q[:, m] @ w
        w -= Q[:, : m + 1] @ (Q[:, : m + 1].T @ w)
        w -= Q[:, : m + 1] @ (Q[:, : m + 1].T @ w)
        beta[m] = np.linalg.norm(w)
        size = m + 1
        if size >= k and (size % 5 == 0 or beta[m] < 1e-14 or size == m_max):
            T = np.diag(alpha[:size]) + np.diag(beta[: size - 1], 1) + np.diag(beta[: size - 1], -1)
            theta, S = np.linalg.eigh(T)
            theta, S = theta[::-1][:k], S[:, ::-1][:, :k]
            resid = np.abs(beta[m] * S[-1, :])
            scale = max(abs(theta[0]), 1e-300)
            if np.all(resid <= tol * scale) or beta[m] < 1e-14:
                V = Q[:, :size] @ S
                V, _ = np.linalg.qr(V)
                # Rayleigh-Ritz on the final block keeps values and vectors consistent
                H = V.T @ np.column_stack([matvec(V[:, i]) for i in range(k)])
                vals, U = np.linalg.eigh(0.5 * (H + H.T))
                order = np.argsort(vals)[::-1]
                return vals[order], V @ U[:, order]
        if beta[m] < 1e-14:
            break
        Q[:, m + 1] = w / beta[m]
    raise SolverFailure(f"Lanczos did not converge in {m_max} iterations")
