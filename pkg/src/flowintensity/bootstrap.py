"""Nonparametric bootstrap of the fitted intensity.

Replicate b draws n_b ~ Poisson(n), resamples n_b events with replacement,
refits the process density, and represents its intensity as n_b times that
density. Standard-error and exceedance surfaces are computed from the
replicates on a regular grid.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimate import FitConfig, FitDivergence, fit
from .pattern import GridSurface, PointPattern
from .simulate import replicate_rng, replicate_seed

log = logging.getLogger(__name__)

WORKERS_ENV = "FLOWINTENSITY_WORKERS"
MIN_SUCCESS = 0.9


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class BootstrapEnsemble:
    replicates: list
    counts: list
    pattern: PointPattern
    seed: int
    failures: list = field(default_factory=list)

    @property
    def B(self):
        return len(self.replicates) + len(self.failures)


def _draw_replicate(pattern, seed, b):
    rng = replicate_rng(seed, b)
    n = pattern.n
    n_b = int(rng.poisson(n))
    redraws = 0
    while n_b <= 1:
        redraws += 1
        n_b = int(rng.poisson(n))
    if redraws:
        log.info("replicate %d: count redrawn %d time(s)", b, redraws)
    idx = rng.integers(0, n, size=n_b)
    return PointPattern(pattern.points[idx], pattern.bounds)


def _fit_replicate(args):
    pattern, config, seed, b = args
    sample = _draw_replicate(pattern, seed, b)
    cfg = replace(config, seed=replicate_seed(seed, b))
    try:
        return b, sample.n, fit(sample, cfg), None
    except FitDivergence as err:
        return b, sample.n, None, str(err)


def bootstrap_fit(pattern, B=100, config=None, seed=0, workers=None):
    """Fit ``B`` bootstrap replicates of ``pattern`` with the same settings.

    ``workers`` > 1 fits replicates in separate processes; each replicate's
    randomness depends only on ``(seed, b)``.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    if pattern.n < 2:
        raise ValueError("insufficient data: bootstrap needs at least two points")
    config = config or FitConfig()
    workers = default_workers() if workers is None else workers
    jobs = [(pattern, config, seed, b) for b in range(B)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_replicate, jobs))
    else:
        results = [_fit_replicate(job) for job in jobs]
    replicates, counts, failures = [], [], []
    for b, n_b, model, err in sorted(results, key=lambda r: r[0]):
        if model is None:
            log.warning("replicate %d failed: %s", b, err)
            failures.append((b, err))
        else:
            replicates.append(model)
            counts.append(n_b)
    return BootstrapEnsemble(replicates, counts, pattern, seed, failures)


def replicate_grid(ensemble, resolution):
    """(B, m) intensities of every successful replicate on the grid.

    Replicates are any callables mapping (m, d) locations to intensities.
    """
    if ensemble.B and len(ensemble.replicates) < MIN_SUCCESS * ensemble.B:
        raise RuntimeError(
            f"only {len(ensemble.replicates)} of {ensemble.B} replicates succeeded"
        )
    if len(ensemble.replicates) < 2:
        raise ValueError("need at least two successful replicates")
    bounds = ensemble.pattern.bounds
    template = GridSurface(bounds, resolution, np.zeros(np.prod(
        np.broadcast_to(np.atleast_1d(resolution), (bounds.dim,)))))
    pts = template.points()
    values = np.stack([np.asarray(m(pts), dtype=float) for m in ensemble.replicates])
    return template, values


def se_surface(ensemble, resolution=100):
    template, values = replicate_grid(ensemble, resolution)
    se = np.std(values, axis=0, ddof=1)
    return GridSurface(template.bounds, template.resolution, se)


def exceedance_surface(ensemble, threshold, resolution=100):
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    template, values = replicate_grid(ensemble, resolution)
    prob = np.mean(values > threshold, axis=0)
    return GridSurface(template.bounds, template.resolution, prob)


def mean_surface(ensemble, resolution=100):
    template, values = replicate_grid(ensemble, resolution)
    return GridSurface(template.bounds, template.resolution, values.mean(axis=0))
