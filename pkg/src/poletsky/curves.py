"""Polylines, arc length, line integrals and sampled curve families."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph
from scipy import sparse

from .errors import ConfigError, InvalidInputError
from .grid import DensityField, Grid, chord_matrix, segment_chords
from .maps import SmoothMap, fibonacci_sphere

BRANCH_CLEARANCE = 1e-3
MAX_LIFT_REFINEMENTS = 8
ROUNDOFF = 1e-12
AMBIGUITY = 4.0


@dataclass(frozen=True, eq=False)
class Polyline:
    vertices: np.ndarray
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim != 2 or V.shape[0] < 2 or V.shape[1] < 1:
            raise InvalidInputError("a polyline needs at least two vertices")
        if not np.all(np.isfinite(V)):
            raise InvalidInputError("polyline vertices must be finite")
        seg = np.linalg.norm(np.diff(V, axis=0), axis=1)
        if np.any(seg == 0):
            raise InvalidInputError("consecutive polyline vertices must be distinct")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        cum.setflags(write=False)
        object.__setattr__(self, "cumulative", cum)

    @classmethod
    def from_points(cls, points) -> "Polyline":
        """Build a polyline, dropping repeated consecutive points."""
        V = np.asarray(points, dtype=float)
        keep = np.concatenate([[True], np.any(np.diff(V, axis=0) != 0, axis=1)])
        return cls(V[keep])

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def point_at(self, s) -> np.ndarray:
        """Point at arc-length parameter ``s`` (the normal representation)."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        j = np.clip(np.searchsorted(self.cumulative, s, side="right") - 1, 0, len(self.cumulative) - 2)
        seg = self.cumulative[j + 1] - self.cumulative[j]
        w = ((s - self.cumulative[j]) / seg)[..., None]
        return (1.0 - w) * self.vertices[j] + w * self.vertices[j + 1]

    def normal_representation(self, step: float) -> "Polyline":
        """Resample at equal arc-length spacing L / ceil(L / step) <= step."""
        if not step > 0:
            raise InvalidInputError("resampling step must be positive")
        count = max(1, int(np.ceil(self.length / step - 1e-9)))
        return Polyline(self.point_at(np.linspace(0.0, self.length, count + 1)))

    def refined(self, pieces: int) -> "Polyline":
        """Split every segment into ``pieces`` equal parts (keeps all vertices)."""
        if pieces <= 1:
            return self
        w = (np.arange(pieces) / pieces)[None, :, None]
        V = self.vertices
        inner = V[:-1, None, :] * (1.0 - w) + V[1:, None, :] * w
        return Polyline(np.concatenate([inner.reshape(-1, self.n), V[-1:]]))

    def reversed(self) -> "Polyline":
        return Polyline(self.vertices[::-1])

    def concat(self, other: "Polyline") -> "Polyline":
        V = other.vertices
        if np.array_equal(V[0], self.vertices[-1]):
            V = V[1:]
        return Polyline(np.concatenate([self.vertices, V]))

    def scaled(self, c: float) -> "Polyline":
        return Polyline(c * self.vertices)


def arc_length(curve: Polyline) -> float:
    return curve.length


def normal_representation(curve: Polyline, step: float) -> Polyline:
    return curve.normal_representation(step)


@dataclass(frozen=True, eq=False)
class CurveFamily:
    """Finite set of polylines standing in for a continuum family."""

    curves: tuple
    generator: str
    target: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))

    def __len__(self) -> int:
        return len(self.curves)

    def __iter__(self):
        return iter(self.curves)

    def __add__(self, other: "CurveFamily") -> "CurveFamily":
        return CurveFamily(self.curves + other.curves, f"{self.generator}+{other.generator}",
                           {"parts": [self.target, other.target]},
                           {"parts": [self.metadata, other.metadata]})

    def scaled(self, c: float) -> "CurveFamily":
        return CurveFamily(tuple(g.scaled(c) for g in self.curves), self.generator, self.target,
                           dict(self.metadata, scale=c))

    def to_text(self) -> str:
        """One curve per line, vertices ``x,y[,z]`` separated by ``;``."""
        import json

        out = io.StringIO()
        out.write(f"# generator: {self.generator}\n")
        out.write(f"# target: {json.dumps(self.target, sort_keys=True)}\n")
        out.write(f"# metadata: {json.dumps(self.metadata, sort_keys=True)}\n")
        for g in self.curves:
            out.write(";".join(",".join(repr(float(c)) for c in v) for v in g.vertices))
            out.write("\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "CurveFamily":
        import json

        header = {"generator": "unknown", "target": {}, "metadata": {}}
        curves = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                key = key.strip()
                if key == "generator":
                    header[key] = val.strip()
                elif key in ("target", "metadata"):
                    header[key] = json.loads(val)
                continue
            pts = [[float(c) for c in v.split(",")] for v in line.split(";")]
            curves.append(Polyline(np.array(pts)))
        return cls(tuple(curves), header["generator"], header["target"], header["metadata"])


# -- integrals ---------------------------------------------------------------

def line_integral(rho: DensityField, curve: Polyline) -> float:
    """Integral of rho along the curve with respect to arc length.

    The arc-length parameter is split at every cell face and each piece is
    evaluated at its midpoint, which is exact for piecewise-constant rho.
    """
    V = curve.vertices
    if not np.all(rho.grid.inside(V)):
        from .errors import DomainError

        raise DomainError("curve leaves the density grid")
    _, cell, length = segment_chords(rho.grid, V[:-1], V[1:])
    return float(np.sum(rho.values.reshape(-1)[cell] * length))


@dataclass
class AdmissibilityReport:
    pass_fraction: float
    min_integral: float
    integrals: np.ndarray

    def to_dict(self) -> dict:
        return {"pass_fraction": self.pass_fraction, "min_integral": self.min_integral,
                "curves": int(self.integrals.size)}


def is_admissible(rho: DensityField, family: CurveFamily, slack: float = 0.0) -> AdmissibilityReport:
    if len(family) == 0:
        return AdmissibilityReport(0.0, float("nan"), np.zeros(0))
    L = chord_matrix(rho.grid, family.curves)
    integrals = L @ rho.values.reshape(-1)
    passed = integrals >= 1.0 - slack - ROUNDOFF
    return AdmissibilityReport(float(np.mean(passed)), float(integrals.min()), integrals)


# -- generators ----------------------------------------------------------------

def unit_directions(count: int, n: int) -> np.ndarray:
    if n == 2:
        t = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if n == 3:
        return fibonacci_sphere(count, 3)
    raise InvalidInputError("direction sets are available for n = 2 and n = 3")


def radial_family(y0, r1: float, r2: float, count: int, n: int = 2) -> CurveFamily:
    """Straight segments from S(y0, r1) to S(y0, r2) along equidistributed directions."""
    if not (0 < r1 < r2) or not np.isfinite(r2):
        raise ConfigError("radial family needs 0 < r1 < r2")
    if count < 1:
        raise ConfigError("radial family needs count >= 1")
    y0 = np.asarray(y0, dtype=float).reshape(n)
    dirs = unit_directions(int(count), n)
    curves = tuple(Polyline(np.stack([y0 + r1 * d, y0 + r2 * d])) for d in dirs)
    return CurveFamily(curves, "radial", {"ring": {"center": y0.tolist(), "r1": r1, "r2": r2}},
                       {"count": int(count)})


def _lift(fmap: SmoothMap, V: np.ndarray, tol: float):
    """Track every sheet of the fibre of V[0] continuously along V."""
    P, valid = fmap.preimage_sheets(V)
    s, m = valid.shape
    starts = np.flatnonzero(valid[:, 0])
    if m == 1 or starts.size == 0:
        return [], starts.size
    Pn = np.where(valid[..., None], P, np.inf)
    # distance from sheet a at vertex j to sheet b at vertex j + 1
    with np.errstate(invalid="ignore"):
        dist = np.linalg.norm(Pn[:, None, :-1] - Pn[None, :, 1:], axis=-1)
    dist = np.where(np.isfinite(dist), dist, np.inf)
    nxt = np.argmin(dist, axis=1)
    best = np.take_along_axis(dist, nxt[:, None], axis=1)[:, 0]
    if s > 1:
        second = np.partition(dist, 1, axis=1)[:, 1]
    else:
        second = np.full_like(best, np.inf)
    # a long step is still a clean match when every other sheet is far away
    jump = (best > tol) & (second < AMBIGUITY * best)
    jump |= ~np.isfinite(best)
    # only steps where some live sheet switches or jumps need walking
    live = valid[:, :-1]
    odd = live & ((nxt != np.arange(s)[:, None]) | jump)
    special = np.flatnonzero(odd.any(axis=0))
    lifts, broken = [], 0
    for a in starts:
        path = np.empty(m, dtype=np.int64)
        cur, pos, ok = a, 0, True
        for j in special:
            path[pos:j + 1] = cur
            if jump[cur, j]:
                ok = False
                break
            cur = nxt[cur, j]
            pos = j + 1
        if ok and np.all(valid[cur, pos:]):
            path[pos:] = cur
            lifts.append(P[path, np.arange(m)])
        else:
            broken += 1
    return lifts, broken


def pullback_family(fmap: SmoothMap, image_family: CurveFamily, continuity_tol: float,
                    step: float | None = None) -> CurveFamily:
    """Lift every image curve through every sheet of f^-1.

    Image curves are resampled at ``step`` (default ``continuity_tol``) and
    refined further wherever a lifted vertex moves by more than
    ``continuity_tol`` while another sheet sits within ``AMBIGUITY`` times that
    distance, so the sheet match is in doubt. Lifts that still break, or that pass within 1e-3 of a
    branch point, are dropped and counted.
    """
    if not continuity_tol > 0:
        raise InvalidInputError("continuity tolerance must be positive")
    step = step or continuity_tol
    out, dropped_break, dropped_branch = [], 0, 0
    for g in image_family:
        base = g.normal_representation(min(step, g.length / 2))
        for level in range(MAX_LIFT_REFINEMENTS + 1):
            curve = base.refined(2**level)
            lifts, broken = _lift(fmap, curve.vertices, continuity_tol)
            if broken == 0:
                break
        dropped_break += broken
        for lift in lifts:
            if fmap.branch_locus.shape[0] and np.any(fmap.near_branch(lift, BRANCH_CLEARANCE)):
                dropped_branch += 1
                continue
            out.append(Polyline.from_points(lift))
    meta = {"image_curves": len(image_family), "lifts": len(out), "dropped_breaks": dropped_break,
            "dropped_near_branch": dropped_branch, "continuity_tol": continuity_tol}
    return CurveFamily(tuple(out), "pullback", {"map": fmap.name, "image": image_family.target}, meta)


def grid_paths_family(grid: Grid, allowed, sources, targets, count: int, seed: int,
                      spread: float = 1.0, max_attempts: int | None = None) -> CurveFamily:
    """Distinct cell paths from ``sources`` to ``targets`` through ``allowed`` cells.

    Each path is a shortest path under edge weights ``length * exp(spread * N(0,1))``
    drawn from ``numpy.random.default_rng(seed)``; paths are polylines through
    cell centres, in generation order.
    """
    allowed = np.asarray(allowed, dtype=bool).reshape(grid.shape)
    src = np.asarray(sources, dtype=bool).reshape(grid.shape) & allowed
    dst = np.asarray(targets, dtype=bool).reshape(grid.shape) & allowed
    if not src.any() or not dst.any():
        raise InvalidInputError("source and target cell sets must be nonempty")
    rows, cols, base = _neighbour_edges(grid, allowed)
    # fixed sparsity pattern; only the weights change between draws
    pattern = sparse.csr_matrix((np.arange(1, base.size + 1, dtype=float), (rows, cols)),
                                shape=(grid.size, grid.size))
    order = pattern.data.astype(np.int64) - 1
    rng = np.random.default_rng(seed)
    src_idx = np.flatnonzero(src.reshape(-1))
    dst_mask = dst.reshape(-1)
    centers = grid.centers().reshape(-1, grid.n)
    found, seen = [], set()
    attempts = max_attempts or 4 * count
    disconnected = False
    for _ in range(attempts):
        if len(found) >= count:
            break
        w = base * np.exp(spread * rng.standard_normal(base.size)) if spread > 0 else base.copy()
        G = pattern.copy()
        G.data = w[order]
        dist, pred, _ = csgraph.dijkstra(G, directed=True, indices=src_idx, min_only=True,
                                         return_predecessors=True)
        reach = np.where(dst_mask, dist, np.inf)
        end = int(np.argmin(reach))
        if not np.isfinite(reach[end]):
            disconnected = True
            break
        path = [end]
        while pred[path[-1]] >= 0:
            path.append(int(pred[path[-1]]))
        key = tuple(path[::-1])
        if key in seen:
            continue
        seen.add(key)
        found.append(key)
    if len(found) == 0 or disconnected:
        return CurveFamily((), "grid-paths", {"grid": grid.to_dict()},
                           {"requested": count, "disconnected": True, "seed": seed})
    curves = []
    for key in found:
        pts = centers[list(key)]
        if len(pts) == 1:
            pts = np.stack([pts[0] - 0.25 * grid.h, pts[0] + 0.25 * grid.h])
        curves.append(Polyline(pts))
    return CurveFamily(tuple(curves), "grid-paths", {"grid": grid.to_dict()},
                       {"requested": count, "generated": len(curves), "seed": seed, "disconnected": False})


def _neighbour_edges(grid: Grid, allowed: np.ndarray):
    """Directed edges between allowed cells sharing a face, edge or corner."""
    import itertools

    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, lens = [], [], []
    for off in itertools.product((-1, 0, 1), repeat=grid.n):
        if not any(off):
            continue
        src_sl, dst_sl = [], []
        for o, s in zip(off, grid.shape):
            src_sl.append(slice(max(0, -o), s - max(0, o)))
            dst_sl.append(slice(max(0, o), s - max(0, -o)))
        a = idx[tuple(src_sl)]
        b = idx[tuple(dst_sl)]
        ok = allowed[tuple(src_sl)] & allowed[tuple(dst_sl)]
        rows.append(a[ok])
        cols.append(b[ok])
        lens.append(np.full(int(ok.sum()), float(np.linalg.norm(np.array(off) * grid.h))))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(lens)


def annulus_paths_family(y0, r1: float, r2: float, resolution: int, count: int, seed: int) -> CurveFamily:
    """Randomised grid paths crossing the ring A(y0, r1, r2), with radial end stubs.

    Paths run through cells whose centres keep a one-cell margin from both
    spheres; the first and last centres are joined radially to S(y0, r1) and
    S(y0, r2), so every curve connects the two spheres inside the ring.
    """
    if not (0 < r1 < r2):
        raise ConfigError("annulus paths need 0 < r1 < r2")
    if count < 1:
        raise ConfigError("path count must be >= 1")
    y0 = np.asarray(y0, dtype=float)
    n = y0.size
    grid = Grid.cube(y0 - r2, y0 + r2, resolution)
    h = grid.cell_size
    if r2 - r1 <= 4 * h:
        raise ConfigError("ring too thin for the path grid resolution")
    r = np.linalg.norm(grid.centers() - y0, axis=-1)
    allowed = (r > r1 + h) & (r < r2 - h)
    sources = allowed & (r < r1 + 2 * h)
    targets = allowed & (r > r2 - 2 * h)
    fam = grid_paths_family(grid, allowed, sources, targets, count, seed)
    curves = []
    for g in fam:
        V = g.vertices
        a = V[0] - y0
        b = V[-1] - y0
        start = y0 + r1 * a / np.linalg.norm(a)
        end = y0 + r2 * b / np.linalg.norm(b)
        curves.append(Polyline.from_points(np.concatenate([start[None], V, end[None]])))
    target = {"ring": {"center": y0.tolist(), "r1": r1, "r2": r2}, "grid": grid.to_dict()}
    return CurveFamily(tuple(curves), "grid-paths", target, dict(fam.metadata, resolution=resolution))
