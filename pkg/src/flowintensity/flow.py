"""Increasing triangular maps built from conditional networks and monotone
univariate sublayers, their composition, and the log process density.

Shapes: a batch of points is an ``(n, d)`` array; single points of shape
``(d,)`` are accepted everywhere and give unbatched results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .diffkit import LOGIT_EPS, ParamVector, logit, sigmoid

LOG_2PI = np.log(2.0 * np.pi)

NAF = "naf"
AFFINE = "affine"
IAF = "iaf"


@dataclass(frozen=True)
class SublayerKind:
    """Family of univariate monotone sublayer; ``M`` only matters for NAF."""

    name: str = NAF
    M: int = 64

    def __post_init__(self):
        if self.name not in (NAF, AFFINE, IAF):
            raise ValueError(f"unknown sublayer kind {self.name!r}")
        if self.name == NAF and self.M < 1:
            raise ValueError("NAF sublayers need M >= 1")

    @property
    def n_params(self):
        return 3 * self.M if self.name == NAF else 2


@dataclass
class ConditionalNet:
    """One-hidden-layer sigmoid network mapping a coordinate prefix to
    sublayer parameters.

    Weight matrices are stored input-major: ``w_in`` is (k-1, H) and
    ``w_out`` is (H, m).
    """

    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @property
    def input_dim(self):
        return self.w_in.shape[0]

    @property
    def hidden_width(self):
        return self.w_in.shape[1]

    @property
    def output_dim(self):
        return self.w_out.shape[1]


def condnet_forward(x_prefix, net):
    x_prefix = np.asarray(x_prefix, dtype=float)
    if x_prefix.shape[-1] != net.input_dim:
        raise ValueError(
            f"prefix has length {x_prefix.shape[-1]}, network expects {net.input_dim}"
        )
    hidden = sigmoid(x_prefix @ net.w_in + net.b_in)
    return hidden @ net.w_out + net.b_out


@dataclass
class TriangularLayer:
    kind: SublayerKind
    first: np.ndarray
    nets: list

    @property
    def dim(self):
        return 1 + len(self.nets)

    def sublayer_theta(self, y, k):
        """Raw sublayer parameters for coordinate ``k`` (0-based) given ``y``."""
        if k == 0:
            return self.first
        return condnet_forward(y[..., :k], self.nets[k - 1])


@dataclass
class TransportStack:
    """Composition T_N o ... o T_1 with a standard normal reference.

    ``params`` owns every trainable scalar; the layer arrays are views into
    ``params.values``.
    """

    dim: int
    kind: SublayerKind
    hidden: int
    params: ParamVector

    def __post_init__(self):
        keys = {key[0] for key in self.params.layout}
        self.n_layers = len(keys)
        if self.n_layers < 1:
            raise ValueError("a transport stack needs at least one layer")
        self.layers = [self._layer(j) for j in range(self.n_layers)]

    def _layer(self, j):
        get = self.params.get
        nets = [
            ConditionalNet(get((j, k, "w_in")), get((j, k, "b_in")),
                           get((j, k, "w_out")), get((j, k, "b_out")))
            for k in range(1, self.dim)
        ]
        return TriangularLayer(self.kind, get((j, 0, "theta")), nets)

    def with_values(self, values):
        pv = ParamVector(np.array(values, dtype=float), dict(self.params.layout))
        return TransportStack(self.dim, self.kind, self.hidden, pv)


def stack_layout(dim, n_layers, kind, hidden):
    """Ordered ``key -> shape`` map for every parameter group of a stack."""
    m = kind.n_params
    shapes = {}
    for j in range(n_layers):
        shapes[(j, 0, "theta")] = (m,)
        for k in range(1, dim):
            shapes[(j, k, "w_in")] = (k, hidden)
            shapes[(j, k, "b_in")] = (hidden,)
            shapes[(j, k, "w_out")] = (hidden, m)
            shapes[(j, k, "b_out")] = (m,)
    return shapes


def _initial_theta(kind):
    if kind.name == NAF:
        M = kind.M
        b = np.linspace(-2.0, 2.0, M) if M > 1 else np.zeros(1)
        return np.concatenate([np.zeros(M), np.zeros(M), b])
    if kind.name == AFFINE:
        return np.zeros(2)
    # IAF: gate sigma(3) ~ 0.95 keeps the map close to the identity
    return np.array([0.0, 3.0])


def init_stack(dim, n_layers, kind=None, hidden=64, rng=None):
    """Random initial stack.

    Conditional-net weights are uniform on +-1/sqrt(fan_in); output biases
    start every sublayer near a gentle monotone map.
    """
    kind = kind or SublayerKind()
    rng = np.random.default_rng(rng)
    blocks = {}
    for key, shape in stack_layout(dim, n_layers, kind, hidden).items():
        group = key[2]
        if group == "theta" or group == "b_out":
            blocks[key] = _initial_theta(kind)
        elif group in ("w_in", "b_in"):
            bound = 1.0 / np.sqrt(key[1])
            blocks[key] = rng.uniform(-bound, bound, size=shape)
        else:
            bound = 1.0 / np.sqrt(hidden)
            blocks[key] = rng.uniform(-bound, bound, size=shape)
    return TransportStack(dim, kind, hidden, ParamVector.from_blocks(blocks))


def identity_stack(dim, n_layers=1, kind=None, hidden=4):
    """Stack whose every layer is exactly the identity map.

    Uses NAF with M=1 and zero parameters (logit(sigmoid(x)) = x) or an affine
    sublayer with zero location and log-scale.
    """
    kind = kind or SublayerKind(NAF, 1)
    if kind.name == NAF and kind.M != 1:
        raise ValueError("identity configuration needs M = 1")
    if kind.name == IAF:
        raise ValueError("IAF sublayers cannot represent the identity")
    blocks = {key: np.zeros(shape)
              for key, shape in stack_layout(dim, n_layers, kind, hidden).items()}
    return TransportStack(dim, kind, hidden, ParamVector.from_blocks(blocks))


def naf_weights(theta_w):
    """Normalized exponential weights; positive and summing to one."""
    return np.exp(theta_w - logsumexp(theta_w, axis=-1, keepdims=True))


def _log_sigmoid(t):
    return -np.logaddexp(0.0, -t)


def _sublayer(x, theta, kind):
    """Return (s, log ds/dx). ``x`` has shape (...,), ``theta`` (..., m)."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != kind.n_params:
        raise ValueError(f"{kind.name} sublayer expects {kind.n_params} parameters")
    if kind.name == AFFINE:
        s = theta[..., 0] + x * np.exp(theta[..., 1])
        return s, np.broadcast_to(theta[..., 1], np.shape(s)).astype(float)
    if kind.name == IAF:
        g = sigmoid(theta[..., 1])
        s = g * x + (1.0 - g) * theta[..., 0]
        return s, np.broadcast_to(np.log(g), np.shape(s)).astype(float)
    M = kind.M
    tw, ta, tb = theta[..., :M], theta[..., M:2 * M], theta[..., 2 * M:]
    log_w = tw - logsumexp(tw, axis=-1, keepdims=True)
    u = np.exp(ta) * x[..., None] + tb
    ls_pos = _log_sigmoid(u)
    ls_neg = _log_sigmoid(-u)
    # s = logit(p) with p = sum w sigma(u) and 1 - p = sum w sigma(-u), in log space
    log_p = logsumexp(log_w + ls_pos, axis=-1)
    log_q = logsumexp(log_w + ls_neg, axis=-1)
    s = log_p - log_q
    log_slope = logsumexp(log_w + ta + ls_pos + ls_neg, axis=-1) - log_p - log_q
    return s, log_slope


def sublayer_eval(x, theta, kind):
    """Sublayer output and its (strictly positive) derivative in ``x``."""
    s, log_slope = _sublayer(x, theta, kind)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(log_slope))):
        raise FloatingPointError("non-finite sublayer output")
    return s, np.exp(log_slope)


def layer_forward(y, layer):
    """Apply one triangular layer; returns (z, log |det grad|)."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != layer.dim:
        raise ValueError(f"point has dimension {y.shape[-1]}, layer has {layer.dim}")
    z = np.empty_like(y)
    log_det = np.zeros(y.shape[:-1])
    for k in range(layer.dim):
        theta = layer.sublayer_theta(y, k)
        s, ls = _sublayer(y[..., k], theta, layer.kind)
        z[..., k] = s
        log_det = log_det + ls
    return z, log_det


def stack_forward(y, stack):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != stack.dim:
        raise ValueError(f"point has dimension {y.shape[-1]}, stack has {stack.dim}")
    total = np.zeros(y.shape[:-1])
    z = y
    for layer in stack.layers:
        z, ld = layer_forward(z, layer)
        total = total + ld
    return z, total


def logit_embed(x, diagnostics=None):
    """Elementwise logit of points in (0,1)^d with the log-Jacobian.

    Coordinates outside [1e-7, 1 - 1e-7] are clamped; the number of clamped
    coordinates is added to ``diagnostics["clamped"]`` when a dict is passed.
    """
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, LOGIT_EPS, 1.0 - LOGIT_EPS)
    if diagnostics is not None:
        diagnostics["clamped"] = diagnostics.get("clamped", 0) + int(np.sum(xc != x))
    y = logit(xc)
    log_jac = np.sum(-np.log(xc) - np.log1p(-xc), axis=-1)
    return y, log_jac


def log_reference(z):
    """Log density of the standard normal on R^d."""
    z = np.asarray(z, dtype=float)
    return -0.5 * np.sum(z * z, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


def log_process_density(x, stack, diagnostics=None):
    """Log density on (0,1)^d: reference at T(logit x) times both Jacobians."""
    y, log_jac = logit_embed(x, diagnostics)
    z, log_det = stack_forward(y, stack)
    out = log_reference(z) + log_det + log_jac
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite log process density")
    return out
