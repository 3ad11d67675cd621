"""Maximum-likelihood fitting of the process density and the fitted intensity.

The integrated intensity is fixed at the observed count, so fitting reduces
to minimizing the negative log process density summed over the (unit-cube
normalized) events.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import flow
from .diffkit import CompGraph, GraphError
from .flow import NAF, SublayerKind, TransportStack
from .pattern import DomainBounds, PointPattern, midpoint_axes, grid_points

log = logging.getLogger(__name__)


class InsufficientData(ValueError):
    pass


class FitDivergence(FloatingPointError):
    def __init__(self, iteration, detail=""):
        super().__init__(f"objective became non-finite at iteration {iteration}: {detail}")
        self.iteration = iteration


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    n_layers: int = 4
    kind: str = NAF
    M: int = 64
    hidden: int = 64
    learning_rate: float = 1e-4
    iterations: int = 5000
    batch_size: int | None = None  # None means full batch
    seed: int = 0
    padding: float = 0.01

    def __post_init__(self):
        for name in ("n_layers", "M", "hidden", "iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")

    @property
    def sublayer(self):
        return SublayerKind(self.kind, self.M)


@dataclass
class FittedIntensity:
    """Fitted transport stack plus the integrated-intensity estimate.

    ``bounds`` carries the affine normalization (including padding) between
    original coordinates and the unit cube.
    """

    stack: TransportStack
    mu_hat: float
    bounds: DomainBounds
    fit_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.stack.dim

    def log_density_unit(self, u):
        return flow.log_process_density(u, self.stack)

    def __call__(self, x):
        return intensity_at(self, x)


def normalize_pattern(raw, padding=0.0):
    """Map a pattern affinely onto the unit cube.

    Each dimension's ``[lo - p*range, hi + p*range]`` goes to (0, 1). Returns
    the unit-cube pattern and the ``DomainBounds`` that record the transform;
    intensities convert back as ``lambda_orig = lambda_unit / prod(scale)``.
    """
    if raw.n < 1:
        raise InsufficientData("cannot normalize an empty pattern")
    bounds = DomainBounds(raw.bounds.lo, raw.bounds.hi, padding)
    unit = bounds.to_unit(raw.points)
    on_edge = int(np.sum((unit <= 0.0) | (unit >= 1.0)))
    if on_edge:
        warnings.warn(f"{on_edge} coordinates lie on the unit-cube boundary; "
                      "they will be clamped by the logit embedding", stacklevel=2)
    return PointPattern(unit, DomainBounds.unit(raw.dim)), bounds


def _naf_graph(g, x, t_w, t_a, t_b):
    """Build log-space NAF output and log-slope nodes for input column ``x``."""
    log_w = g.sub(t_w, g.logsumexp(t_w))
    w = g.exp(log_w)
    a = g.exp(t_a)
    u = g.add(g.mul(a, x), t_b)
    sp = g.sigmoid(u)
    sn = g.sigmoid(g.neg(u))
    p = g.sum(g.mul(w, sp), axis=-1)
    q = g.sum(g.mul(w, sn), axis=-1)
    log_p, log_q = g.log(p), g.log(q)
    s = g.sub(log_p, log_q)
    slope = g.sum(g.mul(g.mul(w, a), g.mul(sp, sn)), axis=-1)
    log_slope = g.sub(g.sub(g.log(slope), log_p), log_q)
    return s, log_slope


def _sublayer_graph(g, kind, x, theta_nodes):
    if kind.name == NAF:
        return _naf_graph(g, x, *theta_nodes)
    loc, raw = theta_nodes
    if kind.name == flow.AFFINE:
        # broadcast the log-scale against the batch so log_det has shape (n, 1)
        scale = g.exp(raw)
        return g.add(loc, g.mul(x, scale)), g.add(g.mul(x, g.constant(0.0)), raw)
    gate = g.sigmoid(raw)
    s = g.add(g.mul(gate, x), g.mul(g.sub(g.constant(1.0), gate), loc))
    return s, g.add(g.mul(x, g.constant(0.0)), g.log(gate))


def _split_theta(g, node, kind):
    """Split an (n, m) node or a parameter slice into per-group nodes."""
    if kind.name == NAF:
        M = kind.M
        bounds = [(0, M), (M, 2 * M), (2 * M, 3 * M)]
    else:
        bounds = [(0, 1), (1, 2)]
    return [g.columns(node, a, b) for a, b in bounds]


def build_objective_graph(stack):
    """Graph computing the negative log-likelihood of a batch of unit points.

    Inputs are an (n, d) array in (0,1)^d; the output is
    ``-sum_i log_process_density(x_i)``, logit Jacobian included.
    """
    d, kind = stack.dim, stack.kind
    layout = stack.params.layout
    g = CompGraph(n_params=len(stack.params), n_inputs=d)
    one = g.constant(1.0)

    def param(key, sub=None):
        sl, shape = layout[key]
        if sub is None:
            return g.parameter(sl, shape)
        start, stop, sub_shape = sub
        return g.parameter(slice(sl.start + start, sl.start + stop), sub_shape)

    def first_theta(j):
        sl, _ = layout[(j, 0, "theta")]
        if kind.name == NAF:
            M = kind.M
            return [param((j, 0, "theta"), (i * M, (i + 1) * M, (M,))) for i in range(3)]
        return [param((j, 0, "theta"), (i, i + 1, (1,))) for i in range(2)]

    per_point = None
    cols = []
    for k in range(d):
        xk = g.input(k)
        # logit embedding and its log-Jacobian, -log x - log(1 - x)
        lj = g.neg(g.add(g.log(xk), g.log(g.sub(one, xk))))
        per_point = lj if per_point is None else g.add(per_point, lj)
        cols.append(g.logit(xk))

    for j in range(stack.n_layers):
        new_cols = []
        for k in range(d):
            if k == 0:
                theta_nodes = first_theta(j)
            else:
                H = stack.hidden
                pre = param((j, k, "b_in"))
                for i in range(k):
                    row = param((j, k, "w_in"), (i * H, (i + 1) * H, (1, H)))
                    pre = g.add(pre, g.matmul(cols[i], row))
                hidden = g.sigmoid(pre)
                raw = g.add(g.matmul(hidden, param((j, k, "w_out"))), param((j, k, "b_out")))
                theta_nodes = _split_theta(g, raw, kind)
            s, log_slope = _sublayer_graph(g, kind, cols[k], theta_nodes)
            new_cols.append(s)
            per_point = g.add(per_point, log_slope)
        cols = new_cols

    half = g.constant(0.5)
    for k in range(d):
        per_point = g.sub(per_point, g.mul(half, g.mul(cols[k], cols[k])))
    per_point = g.sub(per_point, g.constant(0.5 * d * flow.LOG_2PI))
    g.set_output(g.neg(g.sum(per_point)))
    return g


def _finite_at(x, stack):
    try:
        flow.log_process_density(x, stack)
    except FloatingPointError:
        return False
    return True


def nll_objective(params, pattern, stack):
    """Negative log-likelihood of a unit-cube pattern under ``stack`` with
    parameter vector ``params``."""
    if pattern.n < 1:
        raise InsufficientData("objective needs at least one point")
    values = params.values if hasattr(params, "values") else np.asarray(params, float)
    candidate = stack.with_values(values)
    try:
        with np.errstate(all="ignore"):
            per_point = flow.log_process_density(pattern.points, candidate)
    except FloatingPointError:
        with np.errstate(all="ignore"):
            bad = next((i for i, x in enumerate(pattern.points) if not _finite_at(x, candidate)), "?")
        raise FloatingPointError(f"non-finite objective at point index {bad}") from None
    return -float(np.sum(per_point))


class Adam:
    """Adaptive-moment gradient descent on a flat parameter vector."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def fit(pattern, config=None, stack=None):
    """Fit the process density of ``pattern`` and return the fitted intensity.

    ``stack`` optionally supplies the starting map (its structure overrides
    the config's layer settings).
    """
    config = config or FitConfig()
    if pattern.n < 2:
        raise InsufficientData("insufficient data: fitting needs at least two points")
    unit, bounds = normalize_pattern(pattern, config.padding)
    rng = np.random.default_rng(config.seed)
    if stack is None:
        stack = flow.init_stack(pattern.dim, config.n_layers, config.sublayer,
                                config.hidden, rng)
    graph = build_objective_graph(stack)
    x = unit.points
    theta = stack.params.values.copy()
    opt = Adam(config.learning_rate)
    trace = np.empty(config.iterations + 1)
    batch = config.batch_size if config.batch_size and config.batch_size < unit.n else None
    order, cursor = None, 0

    for it in range(config.iterations):
        if batch is None:
            xb = x
        else:
            if order is None or cursor + batch > unit.n:
                order, cursor = rng.permutation(unit.n), 0
            xb = x[order[cursor:cursor + batch]]
            cursor += batch
        try:
            value = graph.forward_eval(theta, xb)
            grad = graph.backward_grad(theta)
        except GraphError as err:
            raise FitDivergence(it, str(err)) from err
        if batch is not None:
            value *= unit.n / xb.shape[0]
        trace[it] = value
        theta = opt.step(theta, grad)

    try:
        trace[-1] = graph.forward_eval(theta, x)
    except GraphError as err:
        raise FitDivergence(config.iterations, str(err)) from err
    log.debug("fit finished: objective %.6g -> %.6g", trace[0], trace[-1])
    meta = {"seed": config.seed, "iterations": config.iterations,
            "learning_rate": config.learning_rate, "final_objective": float(trace[-1])}
    return FittedIntensity(stack.with_values(theta), float(pattern.n), bounds, trace, meta)


def intensity_at(model, x):
    """Fitted intensity at original-coordinate locations ``x``.

    Locations must lie in the model's (padded) support.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise ValueError(f"expected points of dimension {model.dim}")
    inside = model.bounds.contains(x)
    if not np.all(inside):
        raise DomainError("location outside the fitted domain")
    u = model.bounds.to_unit(x)
    log_rho = flow.log_process_density(u, model.stack)
    return model.mu_hat * np.exp(log_rho) / float(np.prod(model.bounds.scale))


def kl_between(rho1, rho2, bounds, resolution):
    """Divergence between Poisson processes with intensities ``rho1``, ``rho2``.

    Midpoint-rule evaluation of int (rho2 - rho1) + int rho1 log(rho1 / rho2)
    over the rectangle ``bounds``.
    """
    axes = midpoint_axes(bounds.lo, bounds.hi, resolution)
    pts = grid_points(axes)
    cell = float(np.prod([(b - a) / len(ax) for a, b, ax in zip(bounds.lo, bounds.hi, axes)]))
    r1 = np.asarray(rho1(pts), dtype=float)
    r2 = np.asarray(rho2(pts), dtype=float)
    if np.any(r2 <= 0):
        raise ValueError("rho2 must be strictly positive on the grid (absolute continuity)")
    if np.any(r1 < 0):
        raise ValueError("rho1 must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        entropy_term = np.where(r1 > 0, r1 * np.log(r1 / r2), 0.0)
    return float(cell * np.sum(r2 - r1) + cell * np.sum(entropy_term))

