"""p-modulus of curve families and both sides of the inverse Poletsky inequality."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gamma

from . import linalg
from .curves import CurveFamily
from .dilatation import cotangent_dilatation_field
from .errors import ConfigError, InvalidInputError, NumericError
from .grid import DensityField, Grid, chord_matrix
from .maps import SmoothMap

GAP_TOL = 1e-3
MAX_ITER = 100_000
# radial image curves per grid cell along an axis; fewer leaves boundary cells uncovered
RADIAL_PER_CELL = 8


def _check_ring(n: int, p: float, r1: float, r2: float) -> None:
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ConfigError("dimension must be an integer >= 2")
    if not np.isfinite(p) or not p > 1:
        raise ConfigError("p must exceed 1")
    if not (np.isfinite(r1) and np.isfinite(r2) and 0 < r1 < r2):
        raise ConfigError("radii must satisfy 0 < r1 < r2 < inf")


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere S^(n-1) in R^n."""
    return 2.0 * math.pi ** (n / 2) / gamma(n / 2)


def _power_integral(a: float, r1: float, r2: float) -> float:
    """Integral of t^a over (r1, r2)."""
    if abs(a + 1.0) < 1e-14:
        return math.log(r2 / r1)
    return (r2 ** (a + 1.0) - r1 ** (a + 1.0)) / (a + 1.0)


def ring_modulus_analytic(n: int, p: float, r1: float, r2: float) -> float:
    """M_p of the curves joining the boundary spheres of a ring in R^n."""
    _check_ring(n, p, r1, r2)
    a = (1.0 - n) / (p - 1.0)
    return sphere_area(n) * _power_integral(a, r1, r2) ** (1.0 - p)


@dataclass(frozen=True)
class EtaFunction:
    """Nonnegative profile on (r1, r2) with total integral at least one.

    ``kind`` is ``"extremal-power"`` (c * r^a, with ``exponent`` a) or
    ``"tabulated"`` (piecewise-linear through ``table``).
    """

    r1: float
    r2: float
    kind: str
    exponent: float = 0.0
    coefficient: float = 1.0
    table: tuple | None = None

    def __post_init__(self):
        if not 0 < self.r1 < self.r2:
            raise ConfigError("eta needs 0 < r1 < r2")
        if self.kind == "tabulated":
            r, v = np.asarray(self.table[0], float), np.asarray(self.table[1], float)
            if r.ndim != 1 or r.shape != v.shape or r.size < 2 or np.any(np.diff(r) <= 0):
                raise ConfigError("tabulated eta needs increasing abscissae")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ConfigError("eta must be finite and nonnegative")
            if r[0] > self.r1 or r[-1] < self.r2:
                raise ConfigError("eta table must cover (r1, r2)")
        elif self.kind != "extremal-power":
            raise ConfigError(f"unknown eta kind {self.kind!r}")
        if self.integral() < 1.0 - 1e-9:
            raise ConfigError("eta must integrate to at least 1 over (r1, r2)")

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        inside = (r > self.r1) & (r < self.r2)
        safe = np.where(inside, r, self.r1)
        if self.kind == "extremal-power":
            val = self.coefficient * safe**self.exponent
        else:
            val = np.interp(safe, self.table[0], self.table[1])
        return np.where(inside, val, 0.0)

    def integral(self) -> float:
        if self.kind == "extremal-power":
            return self.coefficient * _power_integral(self.exponent, self.r1, self.r2)
        r = np.asarray(self.table[0], float)
        v = np.asarray(self.table[1], float)
        knots = np.unique(np.concatenate([[self.r1, self.r2], r[(r > self.r1) & (r < self.r2)]]))
        return float(trapezoid(np.interp(knots, r, v), knots))

    def scaled(self, c: float) -> "EtaFunction":
        if self.kind == "extremal-power":
            return EtaFunction(self.r1, self.r2, self.kind, self.exponent, self.coefficient * c)
        r, v = self.table
        return EtaFunction(self.r1, self.r2, self.kind, table=(tuple(r), tuple(c * np.asarray(v))))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "r1": self.r1, "r2": self.r2}
        if self.kind == "extremal-power":
            d.update(exponent=self.exponent, coefficient=self.coefficient)
        else:
            d["table"] = [list(self.table[0]), list(self.table[1])]
        return d


def extremal_eta(n: int, p: float, r1: float, r2: float) -> EtaFunction:
    """eta(r) = r^((1-n)/(p-1)) normalised to unit integral over (r1, r2)."""
    _check_ring(n, p, r1, r2)
    a = (1.0 - n) / (p - 1.0)
    return EtaFunction(r1, r2, "extremal-power", a, 1.0 / _power_integral(a, r1, r2))


def tabulated_eta(r1: float, r2: float, radii, values) -> EtaFunction:
    return EtaFunction(r1, r2, "tabulated", table=(tuple(map(float, radii)), tuple(map(float, values))))


# -- admissible density and the two integral routes ---------------------------

def rho_from_eta(fmap: SmoothMap, eta: EtaFunction, y0, grid: Grid) -> tuple[DensityField, dict]:
    """rho(x) = eta(|f(x) - y0|) * |f'(x)^T u(x)| at cell centres, zero off the ring.

    Cells outside the map domain or within 1e-9 of a branch point get zero.
    """
    y0 = np.asarray(y0, dtype=float)
    X = grid.centers().reshape(-1, grid.n)
    values = np.zeros(X.shape[0])
    in_dom = fmap.domain.contains(X)
    branch = fmap.near_branch(X) & in_dom
    work = in_dom & ~branch
    with np.errstate(all="ignore"):
        Y = fmap._evaluate(X[work])
    if not np.all(np.isfinite(Y)):
        bad = np.flatnonzero(work)[~np.all(np.isfinite(Y), axis=1)][0]
        raise NumericError(f"map evaluation failed at cell {bad}")
    d = Y - y0
    r = np.linalg.norm(d, axis=1)
    ring = (r > eta.r1) & (r < eta.r2)
    idx = np.flatnonzero(work)[ring]
    if idx.size:
        J = fmap.jacobian(X[idx])
        if not np.all(np.isfinite(J)):
            bad = idx[~np.all(np.isfinite(J), axis=(1, 2))][0]
            raise NumericError(f"Jacobian evaluation failed at cell {bad}")
        u = d[ring] / r[ring, None]
        values[idx] = eta(r[ring]) * np.linalg.norm(linalg.transpose_apply(J, u), axis=-1)
    info = {"branch_cells": int(branch.sum()), "ring_cells": int(idx.size)}
    return DensityField(grid, values.reshape(grid.shape)), info


def rhs_domain_route(fmap: SmoothMap, eta: EtaFunction, y0, p: float, grid: Grid) -> float:
    """Integral of rho^p over the domain by the cell-centre rule."""
    rho, _ = rho_from_eta(fmap, eta, y0, grid)
    return rho.integral_power(p)


def polar_nodes(y0, r1: float, r2: float, resolution: int):
    """Midpoint nodes and weights of a polar (n = 2) or spherical (n = 3) product grid."""
    y0 = np.asarray(y0, dtype=float)
    n = y0.size
    N = int(resolution)
    dr = (r2 - r1) / N
    r = r1 + (np.arange(N) + 0.5) * dr
    if n == 2:
        dt = 2.0 * np.pi / N
        t = (np.arange(N) + 0.5) * dt
        R, T = np.meshgrid(r, t, indexing="ij")
        Y = y0 + np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
        W = R * dr * dt
    elif n == 3:
        dphi = np.pi / N
        dt = 2.0 * np.pi / N
        phi = (np.arange(N) + 0.5) * dphi
        t = (np.arange(N) + 0.5) * dt
        R, PH, T = np.meshgrid(r, phi, t, indexing="ij")
        Y = y0 + np.stack([R * np.sin(PH) * np.cos(T), R * np.sin(PH) * np.sin(T), R * np.cos(PH)], axis=-1)
        W = R**2 * np.sin(PH) * dr * dphi * dt
    else:
        raise InvalidInputError("polar product grids exist for n = 2 and n = 3")
    return Y.reshape(-1, n), W.reshape(-1), np.broadcast_to(r[:, None], (N, W.size // N)).reshape(-1)


@dataclass
class ImageRouteResult:
    value: float
    skipped_measure: float
    off_image_measure: float
    kct_min: float
    kct_max: float
    kct_mean: float
    nodes: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def rhs_image_route(fmap: SmoothMap, eta: EtaFunction, y0, p: float, resolution: int) -> ImageRouteResult:
    """Integral of K_CT * eta^p over the ring intersected with the image."""
    Y, W, R = polar_nodes(y0, eta.r1, eta.r2, resolution)
    kct, counts = cotangent_dilatation_field(fmap, Y, y0, p)
    on_image = counts > 0
    finite = on_image & np.isfinite(kct)
    value = float(np.sum(kct[finite] * eta(R[finite]) ** p * W[finite]))
    k = kct[finite]
    return ImageRouteResult(
        value=value,
        skipped_measure=float(W[on_image & ~finite].sum()),
        off_image_measure=float(W[~on_image].sum()),
        kct_min=float(k.min()) if k.size else float("nan"),
        kct_max=float(k.max()) if k.size else float("nan"),
        kct_mean=float(np.sum(k * W[finite]) / W[finite].sum()) if k.size else float("nan"),
        nodes=int(W.size),
    )


def refine_until_stable(evaluate, start: int = 32, cap: int = 1024, rtol: float = 5e-3):
    """Double the resolution until successive values differ by < rtol (or cap is hit)."""
    res, prev = start, evaluate(start)
    history = [(res, prev)]
    while res * 2 <= cap:
        res *= 2
        cur = evaluate(res)
        history.append((res, cur))
        if abs(cur - prev) <= rtol * abs(cur):
            return cur, res, history
        prev = cur
    return prev, res, history


# -- discrete modulus -----------------------------------------------------------

@dataclass
class ModulusEstimate:
    value: float
    kind: str
    diagnostics: dict = field(default_factory=dict)
    density: DensityField | None = None

    def to_dict(self) -> dict:
        return {"value": self.value, "kind": self.kind, "diagnostics": self.diagnostics}


def single_curve_modulus(lengths, volumes, p: float) -> float:
    """Discrete modulus of one curve: (sum l_i^(p/(p-1)) / v_i^(1/(p-1)))^(1-p)."""
    l = np.asarray(lengths, float)
    v = np.asarray(volumes, float)
    return float(np.sum(l ** (p / (p - 1)) / v ** (1 / (p - 1))) ** (1 - p))


def discrete_modulus(family: CurveFamily, grid: Grid, p: float, gap_tol: float = GAP_TOL,
                     max_iter: int = MAX_ITER) -> ModulusEstimate:
    """min sum_cells vol * rho^p subject to the line integral of rho >= 1 on every curve.

    Solved on the dual: each constraint carries a multiplier lambda >= 0, the
    cell densities are ``rho = (L^T lambda / (p vol))^(1/(p-1))`` and the dual
    objective ``sum(lambda) - (p-1) vol sum(rho^p)`` is a lower bound. Projected
    gradient ascent with Barzilai-Borwein steps and a nonmonotone line search
    runs until the primal point ``rho / min(L rho)`` (always feasible) is within
    ``gap_tol`` relative of the dual bound.
    """
    if len(family) == 0:
        raise InvalidInputError("cannot compute the modulus of an empty family")
    if not np.isfinite(p) or not p > 1:
        raise InvalidInputError("p must exceed 1")
    L = chord_matrix(grid, family.curves)
    cols = np.unique(L.indices)
    Lr = L[:, cols].tocsr()
    LT = Lr.T.tocsr()
    m = Lr.shape[0]
    if np.any(np.diff(Lr.indptr) == 0):
        raise InvalidInputError("family contains a curve of zero length")
    vol = grid.cell_volume
    q = 1.0 / (p - 1.0)

    def density(lam):
        return (LT @ lam / (p * vol)) ** q

    def dual(lam):
        rho = density(lam)
        return lam.sum() - (p - 1.0) * vol * np.sum(rho**p), 1.0 - Lr @ rho, rho

    # best multiple of the all-ones multiplier
    base = (LT @ np.ones(m) / (p * vol)) ** p
    A = np.sum(base ** q)
    lam = np.full(m, (m / (p * vol * A)) ** (p - 1.0))
    g, grad, rho = dual(lam)
    history = [g]
    step = 1.0 / max(np.abs(grad).max(), 1e-300) * lam[0]
    best = {"primal": np.inf, "dual": g, "rho": None}
    it = 0
    gap = np.inf
    for it in range(1, max_iter + 1):
        worst = (Lr @ rho).min()
        if worst > 0:
            primal = vol * np.sum(rho**p) / worst**p
            if primal < best["primal"]:
                best["primal"], best["rho"] = primal, rho / worst
        best["dual"] = max(best["dual"], g)
        gap = (best["primal"] - best["dual"]) / best["primal"]
        if gap <= gap_tol:
            break
        d = np.maximum(lam + step * grad, 0.0) - lam
        slope = grad @ d
        if slope <= 0:
            step = max(step * 0.5, 1e-300)
            continue
        ref = max(history[-10:])
        t = 1.0
        while True:
            cand = lam + t * d
            g_new, grad_new, rho_new = dual(cand)
            if g_new >= ref + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        s = cand - lam
        yv = grad_new - grad
        sy = s @ yv
        step = (s @ s) / -sy if sy < 0 else step * 2.0
        step = min(max(step, 1e-12 * lam.max() / max(np.abs(grad_new).max(), 1e-300)), 1e30)
        lam, g, grad, rho = cand, g_new, grad_new, rho_new
        history.append(g)
    values = np.zeros(grid.size)
    if best["rho"] is not None:
        values[cols] = best["rho"]
    certified = gap <= gap_tol
    diag = {"iterations": it, "relative_gap": float(gap), "dual_bound": float(best["dual"]),
            "primal_value": float(best["primal"]), "certified": bool(certified), "curves": m,
            "active_cells": int(cols.size), "grid": grid.to_dict(),
            "active_constraints": int(np.sum(lam > 0))}
    return ModulusEstimate(float(best["primal"]), "discrete-lower", diag, DensityField(grid, values))


# -- desk verification of the inverse inequality ------------------------------

@dataclass
class VerifySettings:
    """Resolutions, curve counts and tolerances for ``verify_inequality``."""

    grid: int = 256
    image_grid: int | None = None
    radial_curves: int | None = None
    path_curves: int | None = None
    seed: int = 0
    inequality_tol: float = 0.02
    admissibility_grid: int = 1024
    admissibility_slack: float = 0.01
    admissibility_fraction: float = 0.99
    lift_tol_cells: float = 0.1

    def curve_counts(self, n: int) -> tuple[int, int]:
        """Radial and grid-path image curves; paths are only drawn in the plane."""
        radial = self.radial_curves if self.radial_curves is not None else RADIAL_PER_CELL * self.grid
        paths = self.path_curves if self.path_curves is not None else self.grid // 4
        return int(radial), int(paths) if n == 2 else 0


def _check(name: str, value, tolerance, passed: bool, **extra) -> dict:
    return {"name": name, "value": value, "tolerance": tolerance, "pass": bool(passed), **extra}


def verify_inequality(fmap: SmoothMap, y0, r1: float, r2: float, p: float,
                      settings: VerifySettings | None = None, eta: EtaFunction | None = None) -> dict:
    """Both sides of the inverse Poletsky inequality at y0 for the ring A(y0, r1, r2).

    The left side is a discrete lower bound: the modulus of the lifts of a
    finite image family (radial segments and randomised grid paths). The right
    side is evaluated on the image (K_CT times eta^p) and on the domain
    (integral of rho^p). Any failure yields a partial report with ``error`` set.
    """
    from time import perf_counter

    from .curves import annulus_paths_family, is_admissible, pullback_family, radial_family
    from .maps import auto_domain, with_domain

    cfg = settings or VerifySettings()
    y0 = np.asarray(y0, dtype=float)
    n = fmap.n
    report: dict = {"checks": [], "diagnostics": {}, "timings": {}, "error": None,
                    "lhs_semantics": "lower bound from a finite subfamily of lifted curves"}
    diag, timings, checks = report["diagnostics"], report["timings"], report["checks"]
    clock = perf_counter()

    def lap(key):
        nonlocal clock
        now = perf_counter()
        timings[key] = now - clock
        clock = now

    try:
        _check_ring(n, p, r1, r2)
        eta = eta or extremal_eta(n, p, r1, r2)
        report["eta"] = eta.to_dict()
        local = with_domain(fmap, auto_domain(fmap, y0, r2))
        grid = Grid.covering(local.domain, cfg.grid)
        diag["domain"] = local.domain.to_dict()

        radial, paths = cfg.curve_counts(n)
        if radial + paths == 0:
            raise ConfigError("the image family is empty")
        image = radial_family(y0, r1, r2, radial, n) if radial else None
        if paths:
            grid_paths = annulus_paths_family(y0, r1, r2, cfg.grid, paths, cfg.seed)
            image = grid_paths if image is None else image + grid_paths
        family = pullback_family(local, image, cfg.lift_tol_cells * grid.cell_size, step=(r2 - r1) / cfg.grid)
        diag["family"] = dict(family.metadata, image_curves=len(image))
        lap("families")

        lhs = discrete_modulus(family, grid, p)
        report["lhs"] = lhs.to_dict()
        lap("lhs")

        rhs_dom = rhs_domain_route(local, eta, y0, p, grid)
        lap("rhs_domain")
        img = rhs_image_route(local, eta, y0, p, cfg.image_grid or cfg.grid)
        lap("rhs_image")
        report["rhs"] = {"domain_route": rhs_dom, "image_route": img.value}
        diag["image_route"] = img.to_dict()
        diag["kct"] = {"min": img.kct_min, "max": img.kct_max, "mean": img.kct_mean}

        tol = cfg.inequality_tol
        bound = min(rhs_dom, img.value)
        checks.append(_check("lhs_le_rhs_domain", [lhs.value, rhs_dom], tol, lhs.value <= rhs_dom * (1 + tol)))
        checks.append(_check("lhs_le_rhs_image", [lhs.value, img.value], tol, lhs.value <= img.value * (1 + tol)))
        rel = abs(rhs_dom - img.value) / img.value
        checks.append(_check("route_consistency", rel, tol, rel <= tol))

        ring = local.preimage_ring(y0, r1, r2)
        if ring is not None:
            analytic = ring_modulus_analytic(n, p, ring[1], ring[2])
            report["lhs_analytic"] = analytic
            err = abs(analytic - bound) / analytic
            checks.append(_check("analytic_lhs_matches_rhs", [analytic, bound], tol, err <= tol,
                                 relative_error=err))
            checks.append(_check("discrete_lhs_le_analytic", [lhs.value, analytic], tol,
                                 lhs.value <= analytic * (1 + tol)))

        agrid = Grid.covering(local.domain, cfg.admissibility_grid)
        rho, rho_info = rho_from_eta(local, eta, y0, agrid)
        adm = is_admissible(rho, family, cfg.admissibility_slack)
        diag["rho"] = rho_info
        checks.append(_check("admissibility", adm.pass_fraction, cfg.admissibility_fraction,
                             adm.pass_fraction >= cfg.admissibility_fraction,
                             min_integral=adm.min_integral, slack=cfg.admissibility_slack))
        lap("admissibility")
    except (NumericError, ArithmeticError, FloatingPointError) as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
    report["pass"] = report["error"] is None and all(c["pass"] for c in checks)
    return report
