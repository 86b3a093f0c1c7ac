"""Sparse SPD linear algebra: Jacobi-preconditioned CG and power iteration."""

from __future__ import annotations

import numpy as np
from scipy import sparse


class SolverError(RuntimeError):
    """Iteration budget exhausted; carries the final relative residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def solve_spd(A, b, tol: float = 1e-10, max_iter=None, x0=None,
              return_info: bool = False):
    """Conjugate gradients with Jacobi preconditioning.

    Converges when ||b - A x|| <= tol * ||b||. Raises SolverError with the
    final relative residual if max_iter is exhausted.
    """
    A = sparse.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = max(200, 20 * int(np.sqrt(n) + 1) * 10)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        x = np.zeros(n)
        return (x, {"iterations": 0, "residual": 0.0}) if return_info else x

    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("operator has a non-positive diagonal entry")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r)
    it = 0
    while res > tol * norm_b:
        if it >= max_iter:
            raise SolverError(
                f"CG did not converge in {max_iter} iterations "
                f"(relative residual {res / norm_b:.3e})",
                residual=res / norm_b)
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    if return_info:
        return x, {"iterations": it, "residual": res / norm_b}
    return x


def max_generalized_eigenvalue(S, diag, tol: float = 1e-4, max_iter: int = 500,
                               return_vector: bool = False):
    """Largest eigenvalue of diag(d)^-1 S by power iteration.

    Symmetrized as D^-1/2 S D^-1/2 with a fixed deterministic start vector.
    Stops when the Rayleigh quotient changes by less than tol relatively;
    raises SolverError on stagnation past max_iter.
    """
    S = sparse.csr_matrix(S)
    d = np.asarray(diag, dtype=float)
    if np.any(d <= 0.0):
        raise SolverError("generalized mass diagonal must be positive")
    n = S.shape[0]
    scale = 1.0 / np.sqrt(d)

    # fixed oscillatory start vector, nonzero component on rough modes
    idx = np.arange(n)
    v = np.where(idx % 2 == 0, 1.0, -1.0) * (1.0 + 0.25 * np.cos(0.7 * idx))
    v /= np.linalg.norm(v)

    lam_prev = 0.0
    for it in range(max_iter):
        w = scale * (S @ (scale * v))
        lam = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            raise SolverError("power iteration hit the null space")
        v = w / norm_w
        if it > 0 and abs(lam - lam_prev) <= tol * abs(lam):
            if return_vector:
                return lam, scale * v
            return lam
        lam_prev = lam
    raise SolverError(f"power iteration did not settle in {max_iter} "
                      f"iterations (last value {lam_prev:.6e})")
