"""Uniform cell grids, piecewise-constant density fields and exact cell chords."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DomainError, InvalidInputError
from .maps import DomainDescriptor

_EDGE_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box split into ``shape`` equal cells."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise InvalidInputError("grid bounds and shape disagree in dimension")
        if not all(int(s) >= 1 for s in self.shape):
            raise InvalidInputError("grid needs at least one cell per axis")
        if not np.all(np.less(self.lower, self.upper)):
            raise InvalidInputError("grid needs lower < upper")

    @classmethod
    def cube(cls, lower, upper, resolution: int) -> "Grid":
        lower = tuple(float(v) for v in np.broadcast_to(lower, np.shape(upper)))
        upper = tuple(float(v) for v in upper)
        return cls(lower, upper, (int(resolution),) * len(upper))

    @classmethod
    def covering(cls, domain: DomainDescriptor, resolution: int) -> "Grid":
        lo, hi = domain.bounding_box()
        return cls(tuple(lo.tolist()), tuple(hi.tolist()), (int(resolution),) * domain.n)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_size(self) -> float:
        return float(self.h.max())

    def axes(self) -> list[np.ndarray]:
        lo, h = np.array(self.lower), self.h
        return [lo[d] + (np.arange(self.shape[d]) + 0.5) * h[d] for d in range(self.n)]

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def inside(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        lo, hi = np.array(self.lower), np.array(self.upper)
        slack = _EDGE_RTOL * (hi - lo)
        return np.all((X >= lo - slack) & (X <= hi + slack), axis=-1)

    def locate(self, X) -> np.ndarray:
        """Flat cell index of each point; points on the outer faces go to the edge cell."""
        X = np.asarray(X, dtype=float)
        if not np.all(self.inside(X)):
            raise DomainError("point outside the grid")
        idx = np.floor((X - np.array(self.lower)) / self.h).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.shape)

    def scaled(self, c: float) -> "Grid":
        return Grid(tuple(c * v for v in self.lower), tuple(c * v for v in self.upper), self.shape)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}


@dataclass(frozen=True)
class DensityField:
    """Nonnegative piecewise-constant function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InvalidInputError("density values must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "DensityField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: Grid, func) -> "DensityField":
        return cls(grid, np.asarray(func(grid.centers()), dtype=float))

    def __call__(self, X) -> np.ndarray:
        return self.values.reshape(-1)[self.grid.locate(X)]

    def integral_power(self, p: float) -> float:
        """Integral of rho^p over the grid box."""
        return float(np.sum(self.values**p) * self.grid.cell_volume)

    def to_csv(self, path_or_buffer) -> None:
        from .report import format_number

        centers = self.grid.centers().reshape(-1, self.grid.n)
        names = ["x", "y", "z"][: self.grid.n] if self.grid.n <= 3 else [f"x{i + 1}" for i in range(self.grid.n)]
        lines = [",".join(names + ["rho"])]
        for c, v in zip(centers, self.values.reshape(-1)):
            lines.append(",".join(format_number(t) for t in (*c, v)))
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_buffer, "write"):
            path_or_buffer.write(text)
        else:
            with open(path_or_buffer, "w", encoding="utf-8") as fh:
                fh.write(text)


def segment_chords(grid: Grid, starts: np.ndarray, ends: np.ndarray):
    """Split segments at grid planes.

    Returns ``(segment, cell, length)`` arrays: every piece lies in one cell and
    the lengths of the pieces of a segment add up to its length.
    """
    P = np.asarray(starts, dtype=float)
    Q = np.asarray(ends, dtype=float)
    S = P.shape[0]
    if S == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    D = Q - P
    seglen = np.linalg.norm(D, axis=1)
    lo, h, shape = np.array(grid.lower), grid.h, np.array(grid.shape)
    seg_ids = [np.arange(S), np.arange(S)]
    ts = [np.zeros(S), np.ones(S)]
    for d in range(grid.n):
        a = (np.minimum(P[:, d], Q[:, d]) - lo[d]) / h[d]
        b = (np.maximum(P[:, d], Q[:, d]) - lo[d]) / h[d]
        k_lo = np.clip(np.floor(a).astype(np.int64) + 1, 1, shape[d] - 1)
        k_hi = np.clip(np.ceil(b).astype(np.int64) - 1, 1, shape[d] - 1)
        count = np.maximum(k_hi - k_lo + 1, 0)
        count[D[:, d] == 0] = 0
        total = int(count.sum())
        if total == 0:
            continue
        sid = np.repeat(np.arange(S), count)
        offs = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
        k = k_lo[sid] + offs
        t = (lo[d] + k * h[d] - P[sid, d]) / D[sid, d]
        keep = (t > 0) & (t < 1)
        seg_ids.append(sid[keep])
        ts.append(t[keep])
    sid = np.concatenate(seg_ids)
    t = np.concatenate(ts)
    order = np.lexsort((t, sid))
    sid, t = sid[order], t[order]
    same = sid[1:] == sid[:-1]
    s = sid[:-1][same]
    t0, t1 = t[:-1][same], t[1:][same]
    length = (t1 - t0) * seglen[s]
    keep = length > 0
    s, t0, t1, length = s[keep], t0[keep], t1[keep], length[keep]
    mid = P[s] + (0.5 * (t0 + t1))[:, None] * D[s]
    cell = grid.locate(mid)
    return s, cell, length


def chord_matrix(grid: Grid, curves) -> sparse.csr_matrix:
    """Sparse ``(len(curves), grid.size)`` matrix of curve length per cell."""
    starts, ends, owner = [], [], []
    for i, c in enumerate(curves):
        V = c.vertices
        if V.shape[1] != grid.n:
            raise InvalidInputError("curve dimension does not match grid")
        if not np.all(grid.inside(V)):
            raise DomainError(f"curve {i} leaves the grid")
        starts.append(V[:-1])
        ends.append(V[1:])
        owner.append(np.full(len(V) - 1, i))
    if not starts:
        return sparse.csr_matrix((0, grid.size))
    s, cell, length = segment_chords(grid, np.concatenate(starts), np.concatenate(ends))
    rows = np.concatenate(owner)[s]
    M = sparse.coo_matrix((length, (rows, cell)), shape=(len(curves), grid.size)).tocsr()
    M.sum_duplicates()
    return M
