"""Differentiable maps f: D -> R^n with Jacobians and fibre enumeration.

All evaluators are vectorised: points are arrays of shape ``(..., n)`` and
Jacobians come back as ``(..., n, n)`` with ``J[..., i, j] = d f_i / d x_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import linalg
from .errors import ConfigError, DomainError, InvalidInputError, NumericError

BRANCH_EXCLUSION = 1e-9
NEWTON_SEEDS_PER_AXIS = 32
NEWTON_DEDUP = 1e-7
_MEMBERSHIP_RTOL = 1e-12


@dataclass(frozen=True)
class DomainDescriptor:
    """Bounded domain: a ball, an annulus or an axis-aligned box.

    Membership is closed, with a relative slack of 1e-12 so that points
    produced on the boundary by arithmetic still count as inside.
    """

    kind: str
    center: tuple
    radius: float | None = None
    inner: float | None = None
    lower: tuple | None = None
    upper: tuple | None = None

    def __post_init__(self):
        if self.kind == "ball":
            if self.radius is None or not self.radius > 0:
                raise ConfigError("ball needs a positive radius")
        elif self.kind == "annulus":
            if self.inner is None or self.radius is None or not 0 < self.inner < self.radius:
                raise ConfigError("annulus needs 0 < inner < outer")
        elif self.kind == "box":
            if self.lower is None or self.upper is None:
                raise ConfigError("box needs lower and upper corners")
            if len(self.lower) != len(self.upper) or not np.all(np.less(self.lower, self.upper)):
                raise ConfigError("box corners must satisfy lower < upper")
        else:
            raise ConfigError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", tuple(float(c) for c in center), radius=float(radius))

    @classmethod
    def annulus(cls, center, inner, outer):
        return cls("annulus", tuple(float(c) for c in center), radius=float(outer), inner=float(inner))

    @classmethod
    def box(cls, lower, upper):
        lower = tuple(float(c) for c in lower)
        upper = tuple(float(c) for c in upper)
        center = tuple(0.5 * (a + b) for a, b in zip(lower, upper))
        return cls("box", center, lower=lower, upper=upper)

    @property
    def n(self) -> int:
        return len(self.center)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return np.array(self.lower), np.array(self.upper)
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "box":
            lo, hi = self.bounding_box()
            slack = _MEMBERSHIP_RTOL * np.maximum(1.0, np.abs(hi - lo))
            return np.all((X >= lo - slack) & (X <= hi + slack), axis=-1)
        r = np.linalg.norm(X - np.array(self.center), axis=-1)
        slack = _MEMBERSHIP_RTOL * max(1.0, self.radius)
        inside = r <= self.radius + slack
        if self.kind == "annulus":
            inside &= r >= self.inner - slack
        return inside

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "box":
            d.update(lower=list(self.lower), upper=list(self.upper))
        else:
            d["radius"] = self.radius
            if self.kind == "annulus":
                d["inner"] = self.inner
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainDescriptor":
        kind = d.get("kind")
        try:
            if kind == "ball":
                return cls.ball(d["center"], d["radius"])
            if kind == "annulus":
                return cls.annulus(d["center"], d["inner"], d["radius"])
            if kind == "box":
                return cls.box(d["lower"], d["upper"])
        except KeyError as exc:
            raise ConfigError(f"domain description missing {exc}") from None
        raise ConfigError(f"unknown domain kind {kind!r}")


@dataclass(frozen=True, eq=False)
class SmoothMap:
    """A differentiable map on a bounded domain.

    Subclasses override ``_evaluate`` and, when available, ``_analytic_jacobian``
    and ``_analytic_sheets``. A bare ``SmoothMap`` wraps a user callable and uses
    finite differences and Newton inversion.
    """

    n: int
    domain: DomainDescriptor
    func: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    jacobian_mode: str = "finite-difference"
    preimage_mode: str = "newton"
    branch_locus: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        if self.n < 1 or self.domain.n != self.n:
            raise ConfigError("domain dimension does not match map dimension")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ConfigError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.preimage_mode not in ("analytic", "newton", "none"):
            raise ConfigError(f"unknown preimage mode {self.preimage_mode!r}")
        locus = np.asarray(self.branch_locus, dtype=float).reshape(-1, self.n) if np.size(self.branch_locus) else np.empty((0, self.n))
        object.__setattr__(self, "branch_locus", locus)

    # -- hooks -----------------------------------------------------------
    def _evaluate(self, X: np.ndarray) -> np.ndarray:
        if self.func is None:
            raise NotImplementedError
        return np.asarray(self.func(X), dtype=float)

    def _analytic_jacobian(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _analytic_sheets(self, Y: np.ndarray) -> np.ndarray:
        """Candidate preimages, shape ``(sheets, ..., n)``; NaN marks no solution."""
        raise NotImplementedError

    # -- public API --------------------------------------------------------
    def _points(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n:
            raise InvalidInputError(f"expected points of dimension {self.n}, got shape {X.shape}")
        return X

    def __call__(self, X) -> np.ndarray:
        X = self._points(X)
        if not np.all(self.domain.contains(X)):
            raise DomainError(f"point outside the domain of {self.name}")
        return self._evaluate(X)

    eval = __call__

    def jacobian(self, X, mode: str | None = None) -> np.ndarray:
        X = self._points(X)
        mode = mode or self.jacobian_mode
        if mode == "analytic":
            return self._analytic_jacobian(X)
        return finite_difference_jacobian(self._evaluate, X)

    def near_branch(self, X, radius: float = BRANCH_EXCLUSION) -> np.ndarray:
        X = self._points(X)
        if self.branch_locus.shape[0] == 0:
            return np.zeros(X.shape[:-1], dtype=bool)
        d = np.linalg.norm(X[..., None, :] - self.branch_locus, axis=-1)
        return np.any(d <= radius, axis=-1)

    def preimage_sheets(self, Y) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised fibres: ``(P, valid)`` with ``P`` of shape ``(s, ..., n)``.

        ``valid[k, ...]`` is false where sheet ``k`` has no preimage in the domain.
        """
        Y = self._points(Y)
        if self.preimage_mode == "analytic":
            P = self._analytic_sheets(Y)
            valid = np.all(np.isfinite(P), axis=-1)
            valid &= self.domain.contains(np.where(valid[..., None], P, 0.0)) & valid
            return P, valid
        if self.preimage_mode == "none":
            raise InvalidInputError(f"map {self.name} has no preimage enumerator")
        flat = Y.reshape(-1, self.n)
        fibres = [self.preimages(y) for y in flat]
        s = max([len(f) for f in fibres] + [1])
        P = np.full((s, flat.shape[0], self.n), np.nan)
        for j, fib in enumerate(fibres):
            P[: len(fib), j] = fib
        valid = np.all(np.isfinite(P), axis=-1)
        return P.reshape((s,) + Y.shape), valid.reshape((s,) + Y.shape[:-1])

    def preimages(self, y, return_info: bool = False):
        """All solutions of f(x) = y inside the domain, shape ``(k, n)``."""
        y = self._points(y).reshape(self.n)
        if self.preimage_mode == "analytic":
            P = self._analytic_sheets(y)
            keep = np.all(np.isfinite(P), axis=-1)
            P = P[keep]
            P = P[self.domain.contains(P)]
            info = {"mode": "analytic", "failed_seeds": 0}
        elif self.preimage_mode == "newton":
            P, info = newton_preimages(self, y)
        else:
            raise InvalidInputError(f"map {self.name} has no preimage enumerator")
        return (P, info) if return_info else P

    def preimage_ring(self, y0, r1, r2):
        """Centre and radii of the preimage ring of A(y0, r1, r2), if it is one."""
        return None

    def describe(self) -> dict:
        return {"name": self.name, "dimension": self.n, "params": _jsonable(self.params),
                "domain": self.domain.to_dict()}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def finite_difference_jacobian(func: Callable, X: np.ndarray) -> np.ndarray:
    """Central differences with step 1e-6 * max(1, |x|)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[-1]
    h = 1e-6 * np.maximum(1.0, np.linalg.norm(X, axis=-1))
    J = np.empty(X.shape + (n,))
    for j in range(n):
        step = np.zeros(X.shape)
        step[..., j] = h
        with np.errstate(all="ignore"):
            diff = (np.asarray(func(X + step)) - np.asarray(func(X - step))) / (2.0 * h[..., None])
        if not np.all(np.isfinite(diff)):
            raise NumericError("map evaluation failed inside the finite-difference stencil")
        J[..., :, j] = diff
    return J


def newton_preimages(fmap: SmoothMap, y: np.ndarray, max_iter: int = 60):
    """Best-effort fibre by Newton iteration from a 32^n seed grid."""
    lo, hi = fmap.domain.bounding_box()
    m = NEWTON_SEEDS_PER_AXIS
    axes = [lo[d] + (np.arange(m) + 0.5) * (hi[d] - lo[d]) / m for d in range(fmap.n)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, fmap.n)
    X = X[fmap.domain.contains(X)]
    tol = 1e-12 * max(1.0, float(np.linalg.norm(y)))
    alive = np.ones(len(X), dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            R = fmap._evaluate(X[idx]) - y
            done = np.linalg.norm(R, axis=-1) <= tol
            work = idx[~done]
            if work.size == 0:
                break
            J = fmap.jacobian(X[work])
            ok = ~linalg.is_singular(J) if J.shape[-1] > 0 else np.zeros(0, bool)
            dx = np.zeros((work.size, fmap.n))
            if np.any(ok):
                dx[ok] = np.linalg.solve(J[ok], R[~done][ok][..., None])[..., 0]
            X[work] -= dx
            alive[work[~ok]] = False
            alive &= np.all(np.isfinite(X), axis=-1)
        R = np.full(len(X), np.inf)
        fin = np.all(np.isfinite(X), axis=-1)
        R[fin] = np.linalg.norm(fmap._evaluate(X[fin]) - y, axis=-1)
    good = (R <= max(tol, 1e-10)) & fin
    good[fin] &= fmap.domain.contains(X[fin])
    found: list[np.ndarray] = []
    for x in X[good]:
        if all(np.linalg.norm(x - f) >= NEWTON_DEDUP for f in found):
            found.append(x)
    P = np.array(found).reshape(-1, fmap.n)
    return P, {"mode": "newton", "failed_seeds": int((~good).sum()), "best_effort": True}


# -- gallery ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearMap(SmoothMap):
    matrix: np.ndarray = field(default_factory=lambda: np.eye(2))

    def _evaluate(self, X):
        return X @ self.matrix.T

    def _analytic_jacobian(self, X):
        return np.broadcast_to(self.matrix, X.shape + (self.n,)).copy()

    def _analytic_sheets(self, Y):
        if linalg.is_singular(self.matrix):
            return np.full((1,) + Y.shape, np.nan)
        return np.linalg.solve(self.matrix, Y.reshape(-1, self.n).T).T.reshape((1,) + Y.shape)

    def preimage_ring(self, y0, r1, r2):
        s = linalg.singular_values(self.matrix)
        if s[-1] <= 0 or s[0] - s[-1] > 1e-12 * s[0]:
            return None
        center = np.linalg.solve(self.matrix, np.asarray(y0, dtype=float))
        return center, r1 / s[0], r2 / s[0]


@dataclass(frozen=True, eq=False)
class RadialStretch(SmoothMap):
    """x -> |x|^(alpha-1) x, a homeomorphism of R^n fixing the origin."""

    alpha: float = 1.0

    def _evaluate(self, X):
        r = np.linalg.norm(X, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, r ** (self.alpha - 1.0), 0.0 if self.alpha > 1 else 1.0)
        return scale * X

    def _analytic_jacobian(self, X):
        a = self.alpha
        r = np.linalg.norm(X, axis=-1)
        eye = np.eye(self.n)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = X / r[..., None]
            outer = u[..., :, None] * u[..., None, :]
            J = (r ** (a - 1.0))[..., None, None] * (eye + (a - 1.0) * outer)
        if a == 1.0:
            return np.broadcast_to(eye, X.shape + (self.n,)).copy()
        return J

    def _analytic_sheets(self, Y):
        r = np.linalg.norm(Y, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, r ** (1.0 / self.alpha - 1.0), 0.0)
        return (scale * Y)[None]

    def preimage_ring(self, y0, r1, r2):
        if np.any(np.asarray(y0, dtype=float) != 0.0):
            return None
        return np.zeros(self.n), r1 ** (1.0 / self.alpha), r2 ** (1.0 / self.alpha)


@dataclass(frozen=True, eq=False)
class WindingMap(SmoothMap):
    """z -> z^k in the plane; branched at the origin for k >= 2."""

    k: int = 2

    def _evaluate(self, X):
        z = (X[..., 0] + 1j * X[..., 1]) ** self.k
        return np.stack([z.real, z.imag], axis=-1)

    def _analytic_jacobian(self, X):
        z = X[..., 0] + 1j * X[..., 1]
        d = self.k * z ** (self.k - 1)
        return np.stack([np.stack([d.real, -d.imag], -1), np.stack([d.imag, d.real], -1)], -2)

    def _analytic_sheets(self, Y):
        w = Y[..., 0] + 1j * Y[..., 1]
        rho = np.abs(w) ** (1.0 / self.k)
        theta = np.angle(w)
        out = []
        for j in range(self.k):
            z = rho * np.exp(1j * (theta + 2.0 * np.pi * j) / self.k)
            out.append(np.stack([z.real, z.imag], axis=-1))
        P = np.stack(out)
        # the origin has a single preimage
        if self.k > 1:
            zero = np.abs(w) == 0
            P[1:, zero] = np.nan
        return P

    def preimage_ring(self, y0, r1, r2):
        if np.any(np.asarray(y0, dtype=float) != 0.0):
            return None
        return np.zeros(2), r1 ** (1.0 / self.k), r2 ** (1.0 / self.k)


@dataclass(frozen=True, eq=False)
class InverseMap(SmoothMap):
    """Inverse of a homeomorphic map, with Jacobian ``invert(f'(f^-1(y)))``."""

    forward: SmoothMap | None = None

    def _inverse_point(self, Y):
        P, valid = self.forward.preimage_sheets(Y)
        if np.any(valid.sum(axis=0) != 1):
            raise DomainError("inverse requires exactly one preimage per point")
        return np.where(valid[0][..., None], P[0], np.nan)

    def _evaluate(self, Y):
        return self._inverse_point(Y)

    def __call__(self, Y):
        return self._evaluate(self._points(Y))

    eval = __call__

    def _analytic_jacobian(self, Y):
        return linalg.invert(self.forward.jacobian(self._inverse_point(Y)))

    def _analytic_sheets(self, X):
        X = np.asarray(X, dtype=float)
        ok = self.forward.domain.contains(X)
        img = self.forward._evaluate(X)
        return np.where(ok[..., None], img, np.nan)[None]


def inverse(fmap: SmoothMap) -> InverseMap:
    """The inverse map of a homeomorphism given by its analytic fibres."""
    lo, hi = fmap.domain.bounding_box()
    corners = np.stack(np.meshgrid(*[np.linspace(a, b, 65) for a, b in zip(lo, hi)], indexing="ij"), -1)
    corners = corners.reshape(-1, fmap.n)
    corners = corners[fmap.domain.contains(corners)]
    with np.errstate(all="ignore"):
        reach = np.nanmax(np.linalg.norm(fmap._evaluate(corners), axis=-1))
    dom = DomainDescriptor.ball(np.zeros(fmap.n), 2.0 * reach + 1.0)
    return InverseMap(n=fmap.n, domain=dom, name=f"inverse({fmap.name})", params={"of": fmap.describe()},
                      jacobian_mode="analytic", preimage_mode="analytic", forward=fmap)


GALLERY = ("identity", "linear", "radial", "winding")
DEFAULT_RADIUS = 100.0


def gallery(name: str, params: dict | None = None, domain: DomainDescriptor | None = None,
            jacobian_mode: str = "analytic", preimage_mode: str = "analytic") -> SmoothMap:
    """Build one of the test maps: identity, linear, radial or winding."""
    params = dict(params or {})
    common = dict(jacobian_mode=jacobian_mode, preimage_mode=preimage_mode)
    if name == "identity":
        n = _dimension(params.get("n", params.get("dimension", 2)))
        dom = domain or DomainDescriptor.ball(np.zeros(n), DEFAULT_RADIUS)
        return LinearMap(n=n, domain=dom, name="identity", params={"n": n}, matrix=np.eye(n), **common)
    if name == "linear":
        if "matrix" not in params:
            raise ConfigError("linear map needs a matrix")
        A = np.asarray(params["matrix"], dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2 or not np.all(np.isfinite(A)):
            raise ConfigError("linear map needs a finite square matrix of size >= 2")
        n = A.shape[0]
        dom = domain or DomainDescriptor.ball(np.zeros(n), DEFAULT_RADIUS)
        return LinearMap(n=n, domain=dom, name="linear", params={"matrix": A.tolist()}, matrix=A, **common)
    if name == "radial":
        alpha = params.get("alpha")
        if alpha is None or not np.isfinite(alpha) or not float(alpha) > 0:
            raise ConfigError("radial map needs an exponent alpha > 0")
        n = _dimension(params.get("n", params.get("dimension", 2)))
        dom = domain or DomainDescriptor.ball(np.zeros(n), DEFAULT_RADIUS)
        locus = np.zeros((1, n)) if float(alpha) != 1.0 else np.empty((0, n))
        return RadialStretch(n=n, domain=dom, name="radial", params={"alpha": float(alpha), "n": n},
                             branch_locus=locus, alpha=float(alpha), **common)
    if name == "winding":
        k = params.get("k")
        if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
            raise ConfigError("winding map needs an integer k >= 1")
        if params.get("n", params.get("dimension", 2)) != 2:
            raise ConfigError("winding map is planar")
        dom = domain or DomainDescriptor.ball(np.zeros(2), DEFAULT_RADIUS)
        locus = np.zeros((1, 2)) if k > 1 else np.empty((0, 2))
        return WindingMap(n=2, domain=dom, name="winding", params={"k": int(k)}, branch_locus=locus,
                          k=int(k), **common)
    raise ConfigError(f"unknown gallery map {name!r}; expected one of {GALLERY}")


def _dimension(n) -> int:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 2:
        raise ConfigError("dimension must be an integer >= 2")
    return int(n)


def auto_domain(fmap: SmoothMap, y0, r2: float, samples: int = 4096) -> DomainDescriptor:
    """Smallest origin-centred ball holding the preimage of the closed ball B(y0, r2)."""
    y0 = np.asarray(y0, dtype=float)
    n = fmap.n
    if n == 2:
        t = 2.0 * np.pi * np.arange(samples) / samples
        dirs = np.stack([np.cos(t), np.sin(t)], -1)
    else:
        dirs = fibonacci_sphere(samples, n)
    P, valid = fmap.preimage_sheets(y0 + r2 * dirs)
    if not np.any(valid):
        raise DomainError("no preimage of the outer sphere inside the map domain")
    radius = float(np.max(np.linalg.norm(P[valid], axis=-1)))
    return DomainDescriptor.ball(np.zeros(n), radius)


def fibonacci_sphere(count: int, n: int = 3) -> np.ndarray:
    if n != 3:
        raise InvalidInputError("Fibonacci directions are defined for n = 3")
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    phi = np.pi * (1.0 + 5.0**0.5) * i
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def with_domain(fmap: SmoothMap, domain: DomainDescriptor) -> SmoothMap:
    from dataclasses import replace

    return replace(fmap, domain=domain)
