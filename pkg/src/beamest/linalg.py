"""Dense complex linear algebra used by the transforms and the estimators.

Matrices are numpy arrays; vectorisation is column-stacked everywhere
(``order="F"``), so beam ``(i, j)`` of a ``P_v x P_h`` grid lives at linear
index ``j * P_v + i`` (0-based).

Measurement matrices in this package are real-valued (Bernoulli) while the
vectors they act on are complex.  ``apply`` / ``adjoint`` / ``ls_solve``
detect that case and run real BLAS/LAPACK on the stacked real and imaginary
parts instead of promoting the matrix to complex.
"""

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from .errors import DimensionMismatch, RankDeficient

RANK_RTOL = 1e-10
RIDGE_SCALE = 1e-10


def vec(H):
    """Column-stack a matrix into a vector."""
    return np.asarray(H).ravel(order="F")


def unvec(h, rows, cols):
    """Inverse of :func:`vec`."""
    return np.asarray(h).reshape((rows, cols), order="F")


def _as_pairs(z):
    # complex128 (n,) -> float64 (n, 2) view of (re, im) pairs
    z = np.ascontiguousarray(z, dtype=np.complex128)
    return z.view(np.float64).reshape(z.shape[0], 2)


def _from_pairs(w):
    return np.ascontiguousarray(w).view(np.complex128).ravel()


def apply(A, x):
    """Return ``A @ x`` for a complex vector ``x``."""
    A = np.asarray(A)
    if A.shape[1] != np.shape(x)[0]:
        raise DimensionMismatch(f"matrix has {A.shape[1]} columns, vector has {np.shape(x)[0]}")
    if np.isrealobj(A):
        return _from_pairs(A @ _as_pairs(x))
    return A @ np.asarray(x, dtype=np.complex128)


def adjoint(A, r):
    """Return ``A^H @ r`` for a complex vector ``r``."""
    A = np.asarray(A)
    if A.shape[0] != np.shape(r)[0]:
        raise DimensionMismatch(f"matrix has {A.shape[0]} rows, vector has {np.shape(r)[0]}")
    if np.isrealobj(A):
        return _from_pairs(A.T @ _as_pairs(r))
    return A.conj().T @ np.asarray(r, dtype=np.complex128)


def gram_correlate(A, r):
    """Magnitudes of the column/residual inner products, ``|A^H r|``."""
    return np.abs(adjoint(A, r))


def dft_basis(P):
    """Unitary ``P x P`` DFT beamforming matrix.

    Row ``i`` (1-based) is the steering vector ``[1, e^{j2 pi t}, ...,
    e^{j2 pi (P-1) t}] / sqrt(P)`` at grid frequency ``t = i/P - 0.5``.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    grid = beam_grid(P)
    n = np.arange(P)
    # reduce the phase mod 1 before scaling by 2 pi to keep the argument small
    phase = np.mod(np.outer(grid, n), 1.0)
    return np.exp(2j * np.pi * phase) / np.sqrt(P)


def beam_grid(P):
    """Beam-grid spatial frequencies ``i/P - 0.5`` for ``i = 1..P``."""
    return np.arange(1, P + 1) / P - 0.5


def _chol_solve(M, rhs, check=True):
    """Solve ``M x = rhs`` for Hermitian positive definite ``M`` (overwritten).

    Returns ``None`` when the factorisation fails or, with ``check``, when
    its diagonal ratio is below ``RANK_RTOL``.
    """
    real = np.isrealobj(M)
    potrf, potrs = (lapack.dpotrf, lapack.dpotrs) if real else (lapack.zpotrf, lapack.zpotrs)
    L, info = potrf(M, lower=1, clean=0, overwrite_a=1)
    if info != 0:
        return None
    if check:
        d = np.abs(np.diag(L))
        if d.min() < RANK_RTOL * d.max():
            return None
    x, info = potrs(L, rhs, lower=1)
    return x if info == 0 else None


def _ridge(A, y):
    """``(A^H A + lam I)^{-1} A^H y`` with ``lam = 1e-10 * trace(A^H A) / m``.

    For wide ``A`` the identical ``A^H (A A^H + lam I)^{-1} y`` form is used,
    which only factors a ``K x K`` matrix.
    """
    K, m = A.shape
    AH = A.T if np.isrealobj(A) else A.conj().T
    lam = RIDGE_SCALE * float(np.sum(np.abs(A) ** 2)) / m
    if lam <= 0.0:
        raise RankDeficient("zero matrix")
    if m > K:
        W = A @ AH
        W[np.diag_indices(K)] += lam
        z = _chol_solve(W, y, check=False)
        x = None if z is None else AH @ z
    else:
        G = AH @ A
        G[np.diag_indices(m)] += lam
        x = _chol_solve(G, AH @ y, check=False)
    if x is None:
        raise RankDeficient("ridge system is not positive definite")
    if not np.all(np.isfinite(x)):
        raise RankDeficient("ridge solution is not finite")
    return x


def ls_solve(A, y):
    """Least-squares solution of ``A x = y``.

    Uses a reduced QR factorisation.  If the triangular factor shows a
    diagonal ratio below ``RANK_RTOL`` (or there are more columns than
    rows) a small ridge ``1e-10 * trace(A^H A) / m`` is added to the Gram
    matrix instead.
    """
    A = np.asarray(A)
    y = np.asarray(y)
    if A.ndim != 2:
        raise DimensionMismatch("A must be two-dimensional")
    K, m = A.shape
    if y.shape != (K,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({K},)")
    if m == 0:
        return np.zeros(0, dtype=np.complex128)

    split = np.isrealobj(A) and np.iscomplexobj(y)
    rhs = _as_pairs(y) if split else y

    if m <= K:
        Q, R = np.linalg.qr(A)
        d = np.abs(np.diag(R))
        if d.min() >= RANK_RTOL * d.max():
            x = sla.solve_triangular(R, Q.conj().T @ rhs, check_finite=False)
            if np.all(np.isfinite(x)):
                return _from_pairs(x) if split else x
    x = _ridge(A, rhs)
    return _from_pairs(x) if split else x
