"""MLP forward, Adam, and Gaussian KL contracts."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import gauss_kl_quadrature
from progressrl.errors import ConfigError
from progressrl.gaussian import GaussianParams, kl_gaussian
from progressrl.nets import MlpParams, init_mlp, mlp_forward, mlp_from_flat
from progressrl.optim import adam_init, adam_step
from progressrl.rng import normals, seed_key
from progressrl.tensor import Tensor, matrix, vector


# -- mlp_forward -------------------------------------------------------------

def test_zero_weights_forward_returns_bias():
    params = MlpParams([(Tensor((3, 4)), vector([0.5, -1.0, 2.0]))])
    out = mlp_forward(params, Tensor((5, 4)))
    for r in range(5):
        assert out.row(r) == [0.5, -1.0, 2.0]


def test_single_linear_layer_affine_identity():
    params = MlpParams([(matrix([[2.0]]), vector([1.0]))])
    out = mlp_forward(params, matrix([[3.0]]))
    assert out.data[0] == 7.0


def test_identical_rows_give_identical_outputs():
    params = init_mlp(seed_key(11), [4, 8, 3])
    row = list(normals(seed_key(12), 4).data)
    out = mlp_forward(params, matrix([row, row]))
    assert out.row(0) == out.row(1)


def test_forward_batch_rows_independent():
    params = init_mlp(seed_key(13), [4, 6, 2])
    r0 = list(normals(seed_key(14), 4).data)
    r1 = list(normals(seed_key(15), 4).data)
    batch = mlp_forward(params, matrix([r0, r1]))
    solo0 = mlp_forward(params, matrix([r0]))
    solo1 = mlp_forward(params, matrix([r1]))
    assert batch.row(0) == solo0.row(0)
    assert batch.row(1) == solo1.row(0)


def test_forward_dimension_mismatch_is_config_error():
    params = init_mlp(seed_key(16), [4, 2])
    with pytest.raises(ConfigError):
        mlp_forward(params, Tensor((3, 5)))


def test_init_bounds_and_zero_biases():
    params = init_mlp(seed_key(17), [10, 20, 5])
    for (w, b), (fi, fo) in zip(params.layers, [(10, 20), (20, 5)]):
        bound = math.sqrt(6.0 / (fi + fo))
        assert all(-bound <= v <= bound for v in w.data)
        assert all(v == 0.0 for v in b.data)


def test_flatten_round_trip():
    params = init_mlp(seed_key(18), [3, 5, 2])
    flat = params.flatten()
    back = mlp_from_flat(params, flat)
    for (w1, b1), (w2, b2) in zip(params.layers, back.layers):
        assert w1.data == w2.data and b1.data == b2.data


# -- adam_step ---------------------------------------------------------------

def test_adam_zero_gradient_is_identity_on_params():
    p = vector([0.3, -0.7, 1.1])
    st_ = adam_init(3)
    p2, st2 = adam_step(p, Tensor((3,)), st_, 1e-3)
    assert p2.data == p.data
    assert st2.t == 1


def test_adam_hand_evaluated_first_step():
    p = vector([0.0])
    st_ = adam_init(1)
    p2, st2 = adam_step(p, vector([1.0]), st_, 1e-3)
    assert abs(p2.data[0] - (-1e-3)) < 1e-9
    assert st2.t == 1


def test_adam_constant_gradient_strictly_decreases():
    p = vector([0.0])
    st_ = adam_init(1)
    p1, st1 = adam_step(p, vector([1.0]), st_, 1e-3)
    p2, _ = adam_step(p1, vector([1.0]), st1, 1e-3)
    assert p1.data[0] < p.data[0]
    assert p2.data[0] < p1.data[0]


def test_adam_shape_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        adam_step(vector([1.0, 2.0]), vector([1.0]), adam_init(2), 1e-3)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8),
       st.lists(st.floats(0, 2), min_size=1, max_size=8), st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_adam_zero_grad_identity_when_momentum_is_zero(vals, vvals, t):
    # With zero first moment, a zero gradient never moves parameters,
    # whatever the second moment and step count.
    n = len(vals)
    p = vector(vals)
    state = adam_init(n)
    state.v = vector((vvals * n)[:n])
    state.t = t
    p2, state2 = adam_step(p, Tensor((n,)), state, 1e-3)
    assert p2.data == p.data
    assert state2.t == t + 1


def test_adam_zero_grad_with_momentum_follows_standard_update():
    # Standard bias-corrected Adam: accumulated momentum keeps moving the
    # parameter even at zero gradient.
    p = vector([0.0])
    state = adam_init(1)
    p1, state = adam_step(p, vector([1.0]), state, 1e-3)
    p2, _ = adam_step(p1, Tensor((1,)), state, 1e-3)
    assert p2.data[0] < p1.data[0]


# -- kl_gaussian ---------------------------------------------------------------

def test_kl_identity_is_zero():
    p = GaussianParams(0.3, 0.1)
    assert kl_gaussian(p, p) == 0.0


def test_kl_unit_sigma_mean_shift():
    assert abs(kl_gaussian(GaussianParams(0.0, 1.0), GaussianParams(1.0, 1.0)) - 0.5) < 1e-12


def test_kl_matches_quadrature_oracle():
    # frozen from the quadrature oracle: KL(N(0,2^2) || N(0,1)) = 0.8068528...
    val = kl_gaussian(GaussianParams(0.0, 2.0), GaussianParams(0.0, 1.0))
    assert abs(val - 0.80685) < 1e-4
    assert abs(val - gauss_kl_quadrature(0.0, 2.0, 0.0, 1.0)) < 1e-4


def test_kl_matches_quadrature_on_random_pairs():
    # 50 random pairs with sigma in [0.05, 3]
    from progressrl.rng import uniforms

    u = uniforms(seed_key(19), 200).data
    for i in range(50):
        mp, mq = 4.0 * u[4 * i] - 2.0, 4.0 * u[4 * i + 1] - 2.0
        sp = 0.05 + 2.95 * u[4 * i + 2]
        sq = 0.05 + 2.95 * u[4 * i + 3]
        closed = kl_gaussian(GaussianParams(mp, sp), GaussianParams(mq, sq))
        quad = gauss_kl_quadrature(mp, sp, mq, sq)
        assert abs(closed - quad) < 1e-4, (mp, sp, mq, sq)


@given(
    st.floats(-3, 3), st.floats(0.05, 3),
    st.floats(-3, 3), st.floats(0.05, 3),
)
@settings(max_examples=200, deadline=None)
def test_kl_nonnegative_and_zero_iff_equal(mp, sp, mq, sq):
    val = kl_gaussian(GaussianParams(mp, sp), GaussianParams(mq, sq))
    assert val >= 0.0
    if mp == mq and sp == sq:
        assert val == 0.0
    elif abs(mp - mq) > 1e-6 or abs(sp - sq) > 1e-6:
        assert val > 0.0


def test_kl_nonpositive_sigma_is_domain_error():
    with pytest.raises(ValueError):
        kl_gaussian(GaussianParams(0.0, 0.0), GaussianParams(0.0, 1.0))
    with pytest.raises(ValueError):
        kl_gaussian(GaussianParams(0.0, 1.0), GaussianParams(0.0, -2.0))


def test_kl_vector_form_sums_dimensions():
    p = GaussianParams(vector([0.0, 0.0]), vector([1.0, 1.0]))
    q = GaussianParams(vector([1.0, 1.0]), vector([1.0, 1.0]))
    assert abs(kl_gaussian(p, q) - 1.0) < 1e-12
