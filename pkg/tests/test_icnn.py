import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pannplast import icnn
from pannplast.errors import DimensionMismatch, InvalidParameter
from pannplast.training import AdamHyper, adam_init, adam_step


def test_act_c_examples():
    assert float(icnn.act_c(0.0, 0.0)) == pytest.approx(np.log(2.0), abs=1e-15)
    assert float(icnn.act_c(1.0, 1.0)) == pytest.approx(np.log1p(np.exp(2.0)), rel=1e-15)
    v = float(icnn.act_c(-800.0, 0.0))
    assert 0.0 <= v < 1e-300


def test_act_c_convex_on_grid():
    x = np.linspace(-10.0, 10.0, 2001)
    for alpha in (-2.0, 0.0, 1.5):
        y = np.asarray(icnn.act_c(x, alpha))
        assert np.all(y > 0.0)
        assert np.min(y[2:] - 2 * y[1:-1] + y[:-2]) >= -1e-12
        assert np.min(np.diff(y)) >= 0.0


def test_act_m_examples():
    assert float(icnn.act_m(0.3, 2.0, 1.5, 0.3)) == pytest.approx(1.0, abs=1e-15)
    assert float(icnn.act_m(1e3, 2.0, 1.0, 0.0)) == pytest.approx(2.0, abs=1e-15)
    assert float(icnn.act_m(0.0, 2.0, 1.0, 0.0)) == 1.0


@given(st.floats(-50, 50), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(-5, 5))
def test_act_m_bounds_and_monotone(x, b1, b2, b3):
    y = float(icnn.act_m(x, b1, b2, b3))
    assert 0.0 <= y <= b1
    assert float(jax.grad(icnn.act_m)(x, b1, b2, b3)) >= 0.0


def test_init_deterministic_and_distinct():
    a = icnn.init(3, icnn.CONVEX_MONOTONE, 2)
    b = icnn.init(3, icnn.CONVEX_MONOTONE, 2)
    np.testing.assert_array_equal(icnn.flatten(a.params), icnn.flatten(b.params))
    flats = [icnn.flatten(icnn.init(s, icnn.CONVEX_MONOTONE, 2).params) for s in range(10)]
    assert len({f.tobytes() for f in flats}) == 10


def test_default_architecture():
    net = icnn.init(0, icnn.POSITIVE_MONOTONE, 1)
    assert net.spec.hidden == (20, 20)
    assert [w.shape for w in icnn.effective_weights(net.params)] == [(20, 1), (20, 20), (1, 20)]


def test_positive_convex_monotone_at_zero():
    net = icnn.init(0, icnn.POSITIVE_CONVEX_MONOTONE, 2)
    y = float(icnn.forward(net, np.zeros(2)))
    assert np.isfinite(y) and y > 0.0


def test_dimension_mismatch():
    net = icnn.init(0, icnn.CONVEX_MONOTONE, 2)
    with pytest.raises(DimensionMismatch):
        icnn.forward(net, np.zeros(3))


def test_unknown_class():
    with pytest.raises(InvalidParameter):
        icnn.NetSpec("concave", 1)


def _sampled(net, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    d = net.spec.in_dim
    f = jax.jit(jax.vmap(lambda x: icnn.forward(net, x)))
    x, y = rng.uniform(-3, 3, (n, d)), rng.uniform(-3, 3, (n, d))
    step = rng.uniform(0, 1, (n, d))
    mono = np.asarray(f(x + step) - f(x))
    conv = np.asarray(0.5 * (f(x) + f(y)) - f(0.5 * (x + y)))
    return np.asarray(f(x)), mono, conv


@pytest.mark.parametrize("cls", icnn.CLASSES)
@pytest.mark.parametrize("dim", [1, 2])
def test_sampled_constraints(cls, dim):
    net = icnn.init(7, cls, dim, init_std=1.0)
    vals, mono, conv = _sampled(net)
    assert mono.min() >= -1e-12
    if net.spec.convex:
        assert conv.min() >= -1e-10
    if net.spec.positive:
        assert vals.min() >= 0.0


def test_constraints_survive_adam():
    net = icnn.init(1, icnn.POSITIVE_MONOTONE, 2)
    params = net.params
    loss = lambda p: (icnn.apply(net.spec, p, jnp.array([0.5, -1.0])) + 3.0) ** 2  # noqa: E731
    moments = adam_init(params)
    hyper = AdamHyper(lr=0.5)
    for _ in range(50):
        params, moments = adam_step(params, jax.grad(loss)(params), moments, hyper)
        assert all(bool(jnp.all(w >= 0)) for w in icnn.effective_weights(params))
        assert all(bool(jnp.all(a["beta1"] > 0) & jnp.all(a["beta2"] > 0))
                   for a in icnn.activation_params(params))


def test_json_roundtrip():
    net = icnn.init(4, icnn.POSITIVE_CONVEX_MONOTONE, 2)
    spec, params = icnn.from_json(icnn.to_json(net.spec, net.params, {"offset": 1.0}))
    assert spec == net.spec
    np.testing.assert_array_equal(icnn.flatten(params), icnn.flatten(net.params))
