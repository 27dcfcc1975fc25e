"""Small dense linear algebra for Jacobian matrices.

Every function accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``
and broadcasts over the leading axes. Singular values for ``n`` in {2, 3} use
closed forms; larger ``n`` falls back to cyclic Jacobi on ``A^T A``.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, SingularMatrixError

SINGULAR_RTOL = 1e-12
JACOBI_TOL = 1e-14


def as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise InvalidInputError(f"expected square matrix, got shape {A.shape}")
    if A.shape[-1] < 1:
        raise InvalidInputError("empty matrix")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return A


def _sv2(A: np.ndarray) -> np.ndarray:
    a, b = A[..., 0, 0], A[..., 0, 1]
    c, d = A[..., 1, 0], A[..., 1, 1]
    q = 0.5 * np.hypot(a + d, c - b)
    r = 0.5 * np.hypot(a - d, c + b)
    return np.stack([q + r, np.abs(q - r)], axis=-1)


def _sym_eig3(S: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of symmetric 3x3 stacks (trigonometric form)."""
    s00, s11, s22 = S[..., 0, 0], S[..., 1, 1], S[..., 2, 2]
    s01, s02, s12 = S[..., 0, 1], S[..., 0, 2], S[..., 1, 2]
    q = (s00 + s11 + s22) / 3.0
    p1 = s01**2 + s02**2 + s12**2
    p2 = (s00 - q) ** 2 + (s11 - q) ** 2 + (s22 - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    b00, b11, b22 = (s00 - q) / safe, (s11 - q) / safe, (s22 - q) / safe
    b01, b02, b12 = s01 / safe, s02 / safe, s12 / safe
    detb = (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    phi = np.arccos(np.clip(detb / 2.0, -1.0, 1.0)) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    lam = np.stack([l1, l2, l3], axis=-1)
    lam = np.where((p > 0)[..., None], lam, q[..., None])
    return -np.sort(-lam, axis=-1)


def _det3(A: np.ndarray) -> np.ndarray:
    return (
        A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
        - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
        + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0])
    )


def _sv3(A: np.ndarray) -> np.ndarray:
    S = np.swapaxes(A, -1, -2) @ A
    lam = np.maximum(_sym_eig3(S), 0.0)
    s1 = np.sqrt(lam[..., 0])
    s2 = np.sqrt(lam[..., 1])
    prod = s1 * s2
    # smallest value from the determinant keeps exact singularity exact
    s3 = np.where(prod > 0, np.abs(_det3(A)) / np.where(prod > 0, prod, 1.0), 0.0)
    s3 = np.minimum(s3, s2)
    return np.stack([s1, s2, s3], axis=-1)


def jacobi_eigenvalues(S: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of one symmetric matrix by cyclic Jacobi rotations, descending."""
    S = np.array(S, dtype=float)
    n = S.shape[0]
    scale = max(np.abs(S).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(S, 1) ** 2))
        if off <= tol * scale:
            break
        for i in range(n - 1):
            for j in range(i + 1, n):
                if abs(S[i, j]) <= tol * scale * 1e-3:
                    continue
                theta = (S[j, j] - S[i, i]) / (2.0 * S[i, j])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                R = np.eye(n)
                R[i, i] = R[j, j] = c
                R[i, j] = s
                R[j, i] = -s
                S = R.T @ S @ R
    return -np.sort(-np.diag(S))


def singular_values(A) -> np.ndarray:
    """Singular values in descending order, shape ``(..., n)``."""
    A = as_matrix(A)
    n = A.shape[-1]
    if n == 1:
        return np.abs(A[..., 0, :])
    if n == 2:
        return _sv2(A)
    if n == 3:
        return _sv3(A)
    flat = A.reshape(-1, n, n)
    out = np.empty((flat.shape[0], n))
    for k, M in enumerate(flat):
        out[k] = np.sqrt(np.maximum(jacobi_eigenvalues(M.T @ M), 0.0))
    return out.reshape(A.shape[:-1])


def op_norm(A) -> np.ndarray | float:
    """max_{|h|=1} |Ah|."""
    s = singular_values(A)[..., 0]
    return float(s) if np.ndim(s) == 0 else s


def min_singular(A) -> np.ndarray | float:
    """min_{|h|=1} |Ah|; zero exactly when A is singular."""
    s = singular_values(A)[..., -1]
    return float(s) if np.ndim(s) == 0 else s


def determinant(A) -> np.ndarray | float:
    A = as_matrix(A)
    n = A.shape[-1]
    if n == 2:
        d = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    elif n == 3:
        d = _det3(A)
    else:
        d = np.linalg.det(A)
    return float(d) if np.ndim(d) == 0 else d


def is_singular(A) -> np.ndarray | bool:
    """|det A| <= 1e-12 * ||A||^n, relative so that scaling never flips it."""
    A = as_matrix(A)
    n = A.shape[-1]
    res = np.abs(determinant(A)) <= SINGULAR_RTOL * np.asarray(op_norm(A)) ** n
    return bool(res) if np.ndim(res) == 0 else res


def invert(A) -> np.ndarray:
    A = as_matrix(A)
    sing = np.atleast_1d(is_singular(A))
    if np.any(sing):
        det = np.atleast_1d(np.abs(determinant(A)))
        raise SingularMatrixError(float(det[sing.reshape(det.shape)].min()))
    return np.linalg.inv(A)


def transpose_apply(A, u) -> np.ndarray:
    """A^T u, broadcast over leading axes."""
    A = as_matrix(A)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != A.shape[-1]:
        raise InvalidInputError("dimension mismatch between matrix and vector")
    return np.einsum("...ji,...j->...i", A, u)
