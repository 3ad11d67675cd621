import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowintensity import flow
from flowintensity.flow import (AFFINE, IAF, NAF, ConditionalNet, SublayerKind, TriangularLayer,
                                condnet_forward, identity_stack, init_stack, layer_forward,
                                log_process_density, logit_embed, stack_forward, sublayer_eval)
from flowintensity.pattern import grid_points, midpoint_axes


def random_stack(rng, dim=2, n_layers=2, kind=None, hidden=8, scale=0.5):
    """Initial stack with extra noise so it is far from the identity."""
    st_ = init_stack(dim, n_layers, kind or SublayerKind(NAF, 4), hidden, rng)
    return st_.with_values(st_.params.values + scale * rng.normal(size=len(st_.params)))


def fd_jacobian(fn, y, h=1e-6):
    d = y.size
    jac = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        jac[:, i] = (fn(y + e) - fn(y - e)) / (2 * h)
    return jac


# logit_embed

def test_logit_embed_half():
    y, lj = logit_embed(np.array([0.5]))
    assert y[0] == 0.0
    assert lj == pytest.approx(1.386294, abs=1e-6)


def test_logit_embed_two_dims():
    y, lj = logit_embed(np.array([0.5, 0.5]))
    np.testing.assert_array_equal(y, [0.0, 0.0])
    assert lj == pytest.approx(2.772589, abs=1e-6)


def test_logit_embed_point_nine():
    y, lj = logit_embed(np.array([0.9]))
    assert y[0] == pytest.approx(2.197225, abs=1e-6)
    assert lj == pytest.approx(2.407946, abs=1e-6)
    # the Jacobian is the derivative of logit; compare with a difference quotient
    h = 1e-6
    fd = (np.log((0.9 + h) / (0.1 - h)) - np.log((0.9 - h) / (0.1 + h))) / (2 * h)
    assert np.exp(lj) == pytest.approx(fd, rel=1e-8)


def test_logit_embed_counts_clamps():
    diag = {}
    y, lj = logit_embed(np.array([[0.0, 0.5], [1.0, 1.0]]), diag)
    assert diag["clamped"] == 3
    assert np.all(np.isfinite(y)) and np.all(np.isfinite(lj))


# sublayers

def test_naf_identity_sublayer():
    s, dsdx = sublayer_eval(0.7, np.zeros(3), SublayerKind(NAF, 1))
    assert s == pytest.approx(0.7, abs=1e-12)
    assert dsdx == pytest.approx(1.0, abs=1e-12)


def test_affine_sublayer():
    s, dsdx = sublayer_eval(3.0, np.array([1.0, np.log(2)]), SublayerKind(AFFINE))
    assert s == pytest.approx(7.0)
    assert dsdx == pytest.approx(2.0)


def test_iaf_sublayer():
    s, dsdx = sublayer_eval(2.0, np.array([4.0, 0.0]), SublayerKind(IAF))
    assert s == pytest.approx(3.0)
    assert dsdx == pytest.approx(0.5)


def test_naf_slope_matches_difference_quotient():
    rng = np.random.default_rng(0)
    kind = SublayerKind(NAF, 8)
    theta = rng.normal(size=kind.n_params)
    h = 1e-5
    _, dsdx = sublayer_eval(0.3, theta, kind)
    fd = (sublayer_eval(0.3 + h, theta, kind)[0] - sublayer_eval(0.3 - h, theta, kind)[0]) / (2 * h)
    assert dsdx == pytest.approx(fd, rel=1e-6)


def test_naf_matches_direct_formula():
    rng = np.random.default_rng(1)
    kind = SublayerKind(NAF, 5)
    theta = rng.normal(size=15)
    w = np.exp(theta[:5]) / np.exp(theta[:5]).sum()
    p = np.sum(w / (1 + np.exp(-(np.exp(theta[5:10]) * 0.4 + theta[10:]))))
    s, _ = sublayer_eval(0.4, theta, kind)
    assert s == pytest.approx(np.log(p / (1 - p)), rel=1e-12)


def test_naf_saturated_input_is_finite():
    s, dsdx = sublayer_eval(np.array([-500.0, 500.0]), np.zeros(3), SublayerKind(NAF, 1))
    assert np.all(np.isfinite(s)) and np.all(dsdx > 0)


def test_naf_weight_simplex():
    rng = np.random.default_rng(2)
    w = flow.naf_weights(rng.normal(scale=5, size=(100, 64)))
    assert np.all(w > 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_sublayer_kind_validation():
    with pytest.raises(ValueError):
        SublayerKind(NAF, 0)
    with pytest.raises(ValueError):
        SublayerKind("spline")
    with pytest.raises(ValueError):
        sublayer_eval(0.0, np.zeros(4), SublayerKind(NAF, 1))


# conditional nets

def test_zero_condnet_returns_bias():
    v = np.array([1.0, -2.0, 3.0])
    net = ConditionalNet(np.zeros((2, 5)), np.zeros(5), np.zeros((5, 3)), v)
    np.testing.assert_array_equal(condnet_forward([0.3, -7.0], net), v)


def test_condnet_half_sigmoid():
    b = np.array([0.5, 1.5, -1.0])
    net = ConditionalNet(np.zeros((1, 1)), np.zeros(1), np.full((1, 3), 2.0), b)
    np.testing.assert_allclose(condnet_forward([4.0], net), b + 1.0)


def test_condnet_matches_loop_oracle():
    rng = np.random.default_rng(3)
    k1, H, m = 3, 64, 12
    net = ConditionalNet(rng.normal(size=(k1, H)), rng.normal(size=H),
                         rng.normal(size=(H, m)), rng.normal(size=m))
    x = rng.normal(size=k1)
    expected = np.empty(m)
    for o in range(m):
        acc = net.b_out[o]
        for h in range(H):
            pre = net.b_in[h] + sum(net.w_in[i, h] * x[i] for i in range(k1))
            acc += net.w_out[h, o] / (1.0 + np.exp(-pre))
        expected[o] = acc
    np.testing.assert_allclose(condnet_forward(x, net), expected, rtol=0, atol=1e-12)


def test_condnet_dimension_mismatch():
    net = ConditionalNet(np.zeros((2, 3)), np.zeros(3), np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        condnet_forward([1.0], net)


# layers and stacks

def test_identity_layer_two_dims():
    st_ = identity_stack(2)
    y = np.array([0.3, -1.2])
    z, ld = layer_forward(y, st_.layers[0])
    np.testing.assert_allclose(z, y, atol=1e-12)
    assert ld == pytest.approx(0.0, abs=1e-12)


def test_affine_layer_one_dim():
    layer = TriangularLayer(SublayerKind(AFFINE), np.array([1.0, np.log(2)]), [])
    z, ld = layer_forward(np.array([3.0]), layer)
    assert z[0] == pytest.approx(7.0)
    assert ld == pytest.approx(np.log(2))


def test_layer_log_det_matches_jacobian():
    rng = np.random.default_rng(4)
    layer = random_stack(rng, n_layers=1).layers[0]
    y = np.array([0.4, -0.8])
    _, ld = layer_forward(y, layer)
    jac = fd_jacobian(lambda v: layer_forward(v, layer)[0], y)
    assert ld == pytest.approx(np.log(np.linalg.det(jac)), rel=1e-4)


def test_identity_stack_three_layers():
    st_ = identity_stack(2, 3)
    y = np.array([[0.1, 2.0], [-3.0, 0.5]])
    z, ld = stack_forward(y, st_)
    np.testing.assert_allclose(z, y, atol=1e-12)
    np.testing.assert_allclose(ld, 0.0, atol=1e-12)


def test_affine_composition():
    kind = SublayerKind(AFFINE)
    st_ = identity_stack(1, 2, kind)
    st_.params.set((0, 0, "theta"), [0.0, np.log(2)])
    st_.params.set((1, 0, "theta"), [0.0, np.log(3)])
    st_ = st_.with_values(st_.params.values)
    z, ld = stack_forward(np.array([1.5]), st_)
    assert z[0] == pytest.approx(9.0)
    assert ld == pytest.approx(np.log(6))


def test_stack_log_det_matches_jacobian():
    rng = np.random.default_rng(5)
    st_ = random_stack(rng, n_layers=2)
    y = np.array([-0.2, 0.7])
    _, ld = stack_forward(y, st_)
    jac = fd_jacobian(lambda v: stack_forward(v, st_)[0], y)
    assert ld == pytest.approx(np.log(np.linalg.det(jac)), rel=1e-4)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        stack_forward(np.zeros(3), identity_stack(2))


# process density

def test_identity_density_half():
    assert log_process_density(np.array([0.5]), identity_stack(1)) == pytest.approx(0.467356, abs=1e-6)


def test_identity_density_point_nine():
    y = np.log(9.0)
    expected = -0.5 * np.log(2 * np.pi) - 0.5 * y * y + np.log(1 / 0.9 + 1 / 0.1)
    out = log_process_density(np.array([0.9]), identity_stack(1))
    assert out == pytest.approx(expected, abs=1e-12)
    assert out == pytest.approx(-0.924891, abs=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_density_integrates_to_one(seed):
    rng = np.random.default_rng(10 + seed)
    st_ = random_stack(rng, n_layers=2, scale=0.1)
    axes = midpoint_axes((0, 0), (1, 1), 256)
    vals = np.exp(log_process_density(grid_points(axes), st_))
    assert vals.mean() == pytest.approx(1.0, abs=0.02)


def test_strongly_perturbed_mass_in_logit_coordinates():
    # heavy tails near the edges of the square defeat a coarse grid; in logit
    # coordinates the same mass is a smooth integral over the plane
    rng = np.random.default_rng(11)
    st_ = random_stack(rng, n_layers=2, scale=0.5)
    ax = np.linspace(-30, 30, 1201)
    ax = 0.5 * (ax[1:] + ax[:-1])
    z, ld = stack_forward(grid_points([ax, ax]), st_)
    mass = np.exp(flow.log_reference(z) + ld).sum() * (ax[1] - ax[0]) ** 2
    assert mass == pytest.approx(1.0, abs=0.01)


# invariants

@pytest.mark.parametrize("kind", [SublayerKind(NAF, 8), SublayerKind(AFFINE), SublayerKind(IAF)])
def test_monotone_in_own_coordinate(kind):
    rng = np.random.default_rng(20)
    for _ in range(20):
        layer = random_stack(rng, dim=3, n_layers=1, kind=kind).layers[0]
        prefix = rng.normal(size=3)
        u = rng.uniform(-4, 4, size=1000)
        v = u + rng.uniform(1e-3, 2, size=1000)
        for k in range(3):
            yu = np.tile(prefix, (1000, 1))
            yv = yu.copy()
            yu[:, k], yv[:, k] = u, v
            assert np.all(layer_forward(yu, layer)[0][:, k] < layer_forward(yv, layer)[0][:, k])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3), st.sampled_from([NAF, AFFINE, IAF]))
def test_triangular_structure(seed, k, name):
    rng = np.random.default_rng(seed)
    kind = SublayerKind(name, 4)
    st_ = random_stack(rng, dim=4, n_layers=2, kind=kind, hidden=5)
    y = rng.normal(size=4)
    y2 = y.copy()
    y2[k:] += rng.normal(size=4 - k)
    z1, _ = stack_forward(y, st_)
    z2, _ = stack_forward(y2, st_)
    np.testing.assert_array_equal(z1[:k], z2[:k])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_density_positive_and_finite(seed):
    rng = np.random.default_rng(seed)
    st_ = random_stack(rng, n_layers=3, hidden=6)
    x = rng.uniform(1e-6, 1 - 1e-6, size=(50, 2))
    assert np.all(np.isfinite(log_process_density(x, st_)))


def test_batched_matches_single():
    rng = np.random.default_rng(6)
    st_ = random_stack(rng)
    x = rng.uniform(size=(7, 2))
    batch = log_process_density(x, st_)
    single = [log_process_density(p, st_) for p in x]
    np.testing.assert_allclose(batch, single, rtol=1e-14)
