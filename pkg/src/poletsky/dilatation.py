"""Pointwise dilatations: cotangent, inner, tangential and the Beltrami coefficient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DegenerateMapError, InvalidInputError, SingularMatrixError, UndefinedValueError
from .maps import SmoothMap, inverse

UNIT_TOL = 1e-9
MU_ZERO_TOL = 1e-14


@dataclass(frozen=True)
class DilatationSample:
    y: tuple
    y0: tuple
    p: float
    value: float
    preimage_count: int


def _check_p(p: float) -> float:
    if not np.isfinite(p) or not p > 1:
        raise InvalidInputError(f"order p must exceed 1, got {p}")
    return float(p)


def cotangent_factor(A, u) -> np.ndarray | float:
    """sup_{|h|=1} |(A h, u)|, which equals |A^T u| by Cauchy-Schwarz."""
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(np.linalg.norm(u, axis=-1) - 1.0) > UNIT_TOL):
        raise InvalidInputError("direction must be a unit vector")
    out = np.linalg.norm(linalg.transpose_apply(A, u), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _fibre_terms(fmap: SmoothMap, Y: np.ndarray, p: float, u: np.ndarray | None):
    """Per-sheet summands ``stretch^p / |J|`` and the validity mask.

    With ``u`` given the stretch is the cotangent factor, otherwise the
    operator norm. Degenerate sheets contribute +inf.
    """
    P, valid = fmap.preimage_sheets(Y)
    terms = np.zeros(valid.shape)
    if not np.any(valid):
        return terms, valid
    X = P[valid]
    degenerate = fmap.near_branch(X)
    with np.errstate(all="ignore"):
        J = fmap.jacobian(np.where(degenerate[:, None], 1.0, X))
    finite = np.all(np.isfinite(J), axis=(-1, -2)) & ~degenerate
    vals = np.full(X.shape[0], np.inf)
    if np.any(finite):
        Jf = J[finite]
        det = np.abs(linalg.determinant(Jf))
        sing = np.atleast_1d(linalg.is_singular(Jf))
        if u is None:
            stretch = np.atleast_1d(linalg.op_norm(Jf))
        else:
            U = np.broadcast_to(u, valid.shape + (fmap.n,))[valid][finite]
            stretch = np.atleast_1d(cotangent_factor(Jf, U))
        with np.errstate(divide="ignore"):
            v = np.where(sing, np.inf, stretch**p / np.where(sing, 1.0, det))
        vals[finite] = v
    terms[valid] = vals
    return terms, valid


def cotangent_dilatation_field(fmap: SmoothMap, Y, y0, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Cotangent dilatation at many image points.

    Returns ``(values, counts)``; values are NaN off the image and +inf where a
    preimage is degenerate.
    """
    p = _check_p(p)
    Y = np.asarray(Y, dtype=float)
    diff = Y - np.asarray(y0, dtype=float)
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r == 0):
        raise InvalidInputError("cotangent dilatation is undefined at y = y0")
    u = diff / r[..., None]
    terms, valid = _fibre_terms(fmap, Y, p, u)
    counts = valid.sum(axis=0)
    values = np.where(counts > 0, terms.sum(axis=0), np.nan)
    return values, counts


def inner_dilatation_field(fmap: SmoothMap, Y, p: float) -> tuple[np.ndarray, np.ndarray]:
    p = _check_p(p)
    terms, valid = _fibre_terms(fmap, np.asarray(Y, dtype=float), p, None)
    counts = valid.sum(axis=0)
    return np.where(counts > 0, terms.sum(axis=0), np.nan), counts


def cotangent_dilatation(fmap: SmoothMap, y, y0, p: float) -> DilatationSample:
    """Fibre sum of |f'(x)^T u|^p / |J(x, f)| with u = (y - y0)/|y - y0|."""
    y = np.asarray(y, dtype=float)
    values, counts = cotangent_dilatation_field(fmap, y[None], y0, p)
    if counts[0] == 0:
        raise UndefinedValueError("y has no preimage in the domain")
    return DilatationSample(tuple(y.tolist()), tuple(np.asarray(y0, dtype=float).tolist()), float(p),
                            float(values[0]), int(counts[0]))


def inner_dilatation(fmap: SmoothMap, y, p: float) -> float:
    """Fibre sum of ||f'(x)||^p / |J(x, f)|."""
    values, counts = inner_dilatation_field(fmap, np.asarray(y, dtype=float)[None], p)
    if counts[0] == 0:
        raise UndefinedValueError("y has no preimage in the domain")
    return float(values[0])


def tangential_stretch(A, x, x0) -> float:
    """min over unit h of |A h| / |(h, u)|, u = (x - x0)/|x - x0|.

    Closed form 1/|A^{-T} u|; A^{-T} u comes from a linear solve.
    """
    A = linalg.as_matrix(A)
    d = np.asarray(x, dtype=float) - np.asarray(x0, dtype=float)
    r = np.linalg.norm(d)
    if r == 0:
        raise InvalidInputError("tangential stretch needs x != x0")
    if linalg.is_singular(A):
        raise SingularMatrixError(abs(linalg.determinant(A)))
    w = np.linalg.solve(A.T, d / r)
    return float(1.0 / np.linalg.norm(w))


def tangential_dilatation(fmap: SmoothMap, x, x0) -> float:
    """|J(x, f)| / l_f(x, x0)^n."""
    A = fmap.jacobian(np.asarray(x, dtype=float))
    return abs(linalg.determinant(A)) / tangential_stretch(A, x, x0) ** fmap.n


def beltrami_coefficient(A) -> complex:
    """f_zbar / f_z from a real 2x2 Jacobian; zero where f_z vanishes."""
    A = linalg.as_matrix(A)
    if A.shape[-1] != 2:
        raise InvalidInputError("Beltrami coefficient needs a planar Jacobian")
    a11, a12, a21, a22 = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    fz = 0.5 * ((a11 + a22) + 1j * (a21 - a12))
    fzbar = 0.5 * ((a11 - a22) + 1j * (a21 + a12))
    small = np.abs(fz) <= MU_ZERO_TOL * np.maximum(1.0, np.abs(A).max(axis=(-1, -2)))
    mu = np.where(small, 0.0, fzbar / np.where(small, 1.0, fz))
    return complex(mu) if np.ndim(mu) == 0 else mu


def tangential_dilatation_from_mu(mu: complex, x, x0) -> float:
    """|1 - conj(x - x0)/(x - x0) mu|^2 / (1 - |mu|^2) in complex notation."""
    mu = complex(mu)
    if abs(mu) >= 1.0:
        raise DegenerateMapError(f"|mu| = {abs(mu)} >= 1")
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    z = complex(x[0] - x0[0], x[1] - x0[1])
    if z == 0:
        raise InvalidInputError("needs x != x0")
    return abs(1.0 - (z.conjugate() / z) * mu) ** 2 / (1.0 - abs(mu) ** 2)


def inverse_identity_residual(fmap: SmoothMap, x, x0, n: int | None = None, inv: SmoothMap | None = None) -> float:
    """|K_CT of the inverse at order n, base x0 - tangential dilatation of f at x|.

    The inverse map sends f(x) back to x, so its fibre over x is {f(x)}, with
    Jacobian ``invert(f'(x))``.
    """
    n = n or fmap.n
    inv = inv or inverse(fmap)
    x = np.asarray(x, dtype=float)
    lhs = cotangent_dilatation(inv, x, x0, n).value
    rhs = tangential_dilatation(fmap, x, x0)
    return abs(lhs - rhs)
