"""Point patterns, rectangular domains and regular grid surfaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DomainBounds:
    """Axis-aligned rectangle ``[lo, hi]`` plus a padding fraction.

    The padded rectangle ``[lo - p*range, hi + p*range]`` is the support that
    gets mapped affinely onto the unit cube.
    """

    lo: tuple
    hi: tuple
    padding: float = 0.0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if not all(np.isfinite(lo)) or not all(np.isfinite(hi)):
            raise ValueError("bounds must be finite")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("zero range: every dimension needs lo < hi")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls, dim, padding=0.0):
        return cls((0.0,) * dim, (1.0,) * dim, padding)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def support_lo(self):
        lo, hi = np.array(self.lo), np.array(self.hi)
        return lo - self.padding * (hi - lo)

    @property
    def support_hi(self):
        lo, hi = np.array(self.lo), np.array(self.hi)
        return hi + self.padding * (hi - lo)

    @property
    def scale(self):
        """Per-dimension length of the padded support."""
        return self.support_hi - self.support_lo

    @property
    def volume(self):
        return float(np.prod(np.array(self.hi) - np.array(self.lo)))

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.support_lo) / self.scale

    def from_unit(self, u):
        return self.support_lo + np.asarray(u, dtype=float) * self.scale

    def contains(self, x, padded=True):
        x = np.asarray(x, dtype=float)
        lo = self.support_lo if padded else np.array(self.lo)
        hi = self.support_hi if padded else np.array(self.hi)
        return np.all((x >= lo) & (x <= hi), axis=-1)


@dataclass
class PointPattern:
    points: np.ndarray
    bounds: DomainBounds

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, self.bounds.dim)
        elif pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.shape[1] != self.bounds.dim:
            raise ValueError(
                f"points have dimension {pts.shape[1]}, bounds have {self.bounds.dim}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if pts.shape[0] and not np.all(self.bounds.contains(pts)):
            raise ValueError("points lie outside the pattern bounds")
        self.points = pts

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.bounds.dim

    @classmethod
    def from_points(cls, points, bounds=None):
        """Pattern with ``bounds`` inferred from the coordinate ranges if absent."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if bounds is None:
            if pts.shape[0] == 0:
                raise ValueError("empty pattern: cannot infer bounds")
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            if np.any(lo >= hi):
                raise ValueError("zero range in at least one dimension")
            bounds = DomainBounds(tuple(lo), tuple(hi))
        return cls(pts, bounds)


def midpoint_axes(lo, hi, resolution):
    """Cell-centre coordinates of a regular grid, one array per dimension."""
    lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
    res = np.broadcast_to(np.atleast_1d(resolution), lo.shape)
    return [a + (np.arange(r) + 0.5) * (b - a) / r for a, b, r in zip(lo, hi, res)]


def grid_points(axes):
    """Row-major (last axis fastest) stack of grid nodes, shape (m, d)."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def midpoint_integral(fn, lo, hi, resolution, chunk=65536):
    """Midpoint-rule integral of a vectorized ``fn`` over a rectangle."""
    axes = midpoint_axes(lo, hi, resolution)
    pts = grid_points(axes)
    cell = np.prod([(b - a) / len(ax) for a, b, ax in zip(np.atleast_1d(lo), np.atleast_1d(hi), axes)])
    total = 0.0
    for start in range(0, pts.shape[0], chunk):
        total += float(np.sum(fn(pts[start:start + chunk])))
    return total * cell


@dataclass
class GridSurface:
    """Values on the cell centres of a regular lattice over ``bounds``.

    ``values`` has shape ``(r_1, ..., r_d)``; flattening it in C order matches
    :meth:`points`.
    """

    bounds: DomainBounds
    resolution: tuple
    values: np.ndarray
    axes: list = field(init=False)

    def __post_init__(self):
        res = tuple(int(r) for r in np.broadcast_to(np.atleast_1d(self.resolution), (self.bounds.dim,)))
        self.resolution = res
        self.axes = midpoint_axes(self.bounds.lo, self.bounds.hi, res)
        self.values = np.asarray(self.values, dtype=float).reshape(res)

    @classmethod
    def evaluate(cls, fn, bounds, resolution):
        res = tuple(np.broadcast_to(np.atleast_1d(resolution), (bounds.dim,)))
        axes = midpoint_axes(bounds.lo, bounds.hi, res)
        return cls(bounds, res, np.asarray(fn(grid_points(axes))).reshape(res))

    def points(self):
        return grid_points(self.axes)

    def rows(self):
        """(m, d + 1) array of coordinates followed by the value."""
        return np.column_stack([self.points(), self.values.ravel()])
