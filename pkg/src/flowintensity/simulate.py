"""Inversion of triangular maps, simulation from fitted intensities, and
thinning-based simulation of the benchmark intensities.

Random streams: every entry point takes an integer seed. Replicate ``b`` of
a job with master seed ``s`` uses ``SeedSequence(s, spawn_key=(b,))``, so
results do not depend on the order in which replicates are scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffkit import sigmoid
from .flow import _sublayer
from .pattern import DomainBounds, PointPattern, grid_points, midpoint_axes


class InversionError(ArithmeticError):
    pass


def replicate_rng(seed, counter):
    """Independent generator for replicate ``counter`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(counter,)))


def replicate_seed(seed, counter):
    """Integer seed derived from the same counter scheme."""
    ss = np.random.SeedSequence(seed, spawn_key=(counter,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class RootFindSpec:
    abs_tolerance: float = 1e-10
    max_bisections: int = 200
    half_width: float = 1.0
    growth: float = 2.0
    max_expansions: int = 60

    def __post_init__(self):
        if not self.abs_tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.growth > 1:
            raise ValueError("bracket growth factor must exceed 1")


def solve_increasing(fn, target, spec=RootFindSpec()):
    """Vectorized root finding for increasing ``fn``: fn(y) = target.

    Expands a symmetric bracket around 0 then bisects until the residual and
    the bracket width are both within tolerance (or the bracket can no longer
    be split in floating point).
    """
    target = np.asarray(target, dtype=float)
    lo = np.full(target.shape, -spec.half_width)
    hi = np.full(target.shape, spec.half_width)
    for _ in range(spec.max_expansions):
        f_lo, f_hi = fn(lo), fn(hi)
        low_bad = f_lo > target
        high_bad = f_hi < target
        if not (low_bad.any() or high_bad.any()):
            break
        lo = np.where(low_bad, lo * spec.growth, lo)
        hi = np.where(high_bad, hi * spec.growth, hi)
    else:
        raise InversionError("bracket expansion exceeded its limit; map may be non-finite")

    tol = spec.abs_tolerance
    mid = 0.5 * (lo + hi)
    resid = fn(mid) - target
    for _ in range(spec.max_bisections):
        done = (np.abs(resid) <= tol) & (hi - lo <= tol)
        stuck = (mid <= lo) | (mid >= hi)
        if np.all(done | stuck):
            break
        above = resid > 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        mid = 0.5 * (lo + hi)
        resid = fn(mid) - target
    worst = float(np.max(np.abs(resid))) if resid.size else 0.0
    if worst > tol:
        raise InversionError(f"bisection stopped with residual {worst:.3g} > {tol:g}")
    return mid


def invert_layer(z, layer, spec=RootFindSpec()):
    """Solve layer(y) = z one coordinate at a time (earlier coordinates first)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    y = np.zeros_like(zb)
    for k in range(layer.dim):
        theta = layer.sublayer_theta(y, k)
        y[:, k] = solve_increasing(lambda t: _sublayer(t, theta, layer.kind)[0], zb[:, k], spec)
    return y[0] if single else y


def invert_stack(z, stack, spec=RootFindSpec()):
    y = np.asarray(z, dtype=float)
    for j in range(stack.n_layers - 1, -1, -1):
        try:
            y = invert_layer(y, stack.layers[j], spec)
        except InversionError as err:
            raise InversionError(f"layer {j}: {err}") from err
    return y


def sample_fixed(model, n, seed=None, spec=RootFindSpec()):
    """Exactly ``n`` events from the fitted process density, in original
    coordinates: standard-normal draws pushed back through the inverse map,
    then the logistic function and the domain rescaling."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    d = model.dim
    if n == 0:
        return PointPattern(np.zeros((0, d)), model.bounds)
    z = rng.standard_normal((n, d))
    y = invert_stack(z, model.stack, spec)
    u = sigmoid(y)
    x = model.bounds.from_unit(u)
    x = np.clip(x, model.bounds.support_lo, model.bounds.support_hi)
    return PointPattern(x, model.bounds)


def sample_pattern(model, seed=None, spec=RootFindSpec()):
    """A Poisson-count realization: n ~ Poisson(mu_hat), then ``sample_fixed``."""
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(model.mu_hat)) if model.mu_hat > 0 else 0
    return sample_fixed(model, n, rng, spec)


@dataclass(frozen=True)
class BuiltinIntensity:
    name: str
    fn: object
    dim: int
    sup: float
    integral: float

    def __call__(self, x):
        return self.fn(np.atleast_2d(np.asarray(x, dtype=float)))

    @property
    def bounds(self):
        return DomainBounds.unit(self.dim)


def _lambda1(x):
    return 500.0 + 300.0 * np.sin(10.0 * x[:, 0])


def _lambda2(x):
    return np.full(x.shape[0], 500.0)


def _lambda3(x):
    return (30.0 + 10.0 * np.sin(10.0 * x[:, 0])) * (30.0 + 10.0 * np.cos(20.0 * x[:, 1]))


def _lambda4(x):
    return np.full(x.shape[0], 900.0)


BUILTINS = {
    "lambda1": BuiltinIntensity("lambda1", _lambda1, 1, 800.0, 500.0 + 30.0 * (1.0 - np.cos(10.0))),
    "lambda2": BuiltinIntensity("lambda2", _lambda2, 1, 500.0, 500.0),
    "lambda3": BuiltinIntensity(
        "lambda3", _lambda3, 2, 1600.0,
        (30.0 + 1.0 - np.cos(10.0)) * (30.0 + 0.5 * np.sin(20.0))),
    "lambda4": BuiltinIntensity("lambda4", _lambda4, 2, 900.0, 900.0),
}


def get_intensity(name):
    try:
        return BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown intensity {name!r}; choose from {sorted(BUILTINS)}") from None


def _grid_sup(fn, bounds, nodes=10_000):
    per_dim = int(round(nodes ** (1.0 / bounds.dim)))
    pts = grid_points(midpoint_axes(bounds.lo, bounds.hi, per_dim))
    return float(np.max(fn(pts)))


def thinning_generate(intensity, lambda_max=None, seed=None, bounds=None):
    """Simulate a Poisson process by thinning a homogeneous one.

    Candidates: Poisson(lambda_max * volume) uniform points; each is kept with
    probability intensity(x) / lambda_max.
    """
    if isinstance(intensity, str):
        intensity = get_intensity(intensity)
    if bounds is None:
        bounds = intensity.bounds
    fn = intensity.fn if isinstance(intensity, BuiltinIntensity) else intensity
    if lambda_max is None:
        if not isinstance(intensity, BuiltinIntensity):
            raise ValueError("lambda_max is required for user intensities")
        lambda_max = intensity.sup
    observed = _grid_sup(fn, bounds)
    if lambda_max < observed:
        raise ValueError(f"bound below supremum: lambda_max={lambda_max} < {observed:.6g}")
    rng = np.random.default_rng(seed)
    lo, hi = np.array(bounds.lo), np.array(bounds.hi)
    count = rng.poisson(lambda_max * bounds.volume)
    cand = lo + (hi - lo) * rng.uniform(size=(count, bounds.dim))
    keep = rng.uniform(size=count) * lambda_max < fn(cand)
    return PointPattern(cand[keep], bounds)
