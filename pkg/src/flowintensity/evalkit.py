"""Kernel-density baseline and goodness-of-fit metrics for intensity estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import flow
from .pattern import DomainBounds, grid_points, midpoint_axes


@dataclass
class KdeModel:
    """Product-Gaussian kernel intensity estimate.

    The estimate is sum_i K_h(x - x_i); it integrates to n over R^d, so some
    mass leaks outside a bounded domain (no edge correction).
    """

    points: np.ndarray
    bandwidth: np.ndarray

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def __call__(self, x, chunk=4096):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        norm = 1.0 / np.prod(self.bandwidth * np.sqrt(2.0 * np.pi))
        out = np.empty(x.shape[0])
        for start in range(0, x.shape[0], chunk):
            diff = (x[start:start + chunk, None, :] - self.points[None, :, :]) / self.bandwidth
            out[start:start + chunk] = np.exp(-0.5 * np.sum(diff * diff, axis=-1)).sum(axis=1)
        return out * norm


def silverman_bandwidth(points):
    """h_k = sd_k * (4 / ((d + 2) n)) ** (1 / (d + 4)) per dimension."""
    points = np.atleast_2d(points)
    n, d = points.shape
    sd = np.std(points, axis=0, ddof=1)
    return sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def kde_fit(pattern):
    if pattern.n < 2:
        raise ValueError("insufficient data: KDE needs at least two points")
    h = silverman_bandwidth(pattern.points)
    if np.any(h <= 0):
        raise ValueError("degenerate dimension: zero sample variance")
    return KdeModel(pattern.points.copy(), h)


def l2_distance(fa, fb, bounds, resolution=None):
    """Root of the midpoint-rule integral of (fa - fb)^2 over ``bounds``.

    Default resolution is 1000 nodes in 1-d and 256 per axis in 2-d.
    """
    if not isinstance(bounds, DomainBounds):
        bounds = DomainBounds(*bounds)
    if resolution is None:
        resolution = 1000 if bounds.dim == 1 else 256
    axes = midpoint_axes(bounds.lo, bounds.hi, resolution)
    pts = grid_points(axes)
    cell = float(np.prod([(b - a) / len(ax) for a, b, ax in zip(bounds.lo, bounds.hi, axes)]))
    diff = np.asarray(fa(pts), dtype=float) - np.asarray(fb(pts), dtype=float)
    return float(np.sqrt(cell * np.sum(diff * diff)))


def pit_values(model, points):
    """Probability integral transform through the fitted map, shape (n, d)."""
    u = model.bounds.to_unit(points)
    y, _ = flow.logit_embed(u)
    z, _ = flow.stack_forward(y, model.stack)
    return ndtr(z)


def pit_ks(model, pattern):
    """KS statistic of pooled PIT values against Uniform(0, 1), plus QQ pairs.

    QQ pairs are ``((i - 0.5) / m, sorted_pit_i)`` with m = n * d.
    """
    if pattern.n == 0:
        raise ValueError("empty pattern")
    if pattern.n < 10:
        raise ValueError("insufficient data: KS check needs at least 10 points")
    u = np.sort(pit_values(model, pattern.points).ravel())
    m = u.size
    ecdf_hi = np.arange(1, m + 1) / m
    ecdf_lo = np.arange(0, m) / m
    ks = float(max(np.max(ecdf_hi - u), np.max(u - ecdf_lo)))
    theoretical = (np.arange(1, m + 1) - 0.5) / m
    return ks, np.column_stack([theoretical, u])
