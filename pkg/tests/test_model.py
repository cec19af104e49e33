import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msecg import autograd as ag
from msecg.dsp import Signal, linear_interp_upsample_array
from msecg.model import (MSECG, ModelConfig, bidirectional_mamba, count_params, init_mamba_block,
                         mamba_block, msecg_forward, pixel_shuffle_1d, pixel_unshuffle_1d)

from oracles import central_diff, conv1d_loop, rel_error, scan_loop


def tiny(**kw):
    base = dict(leads=2, D=4, M=1, r=2, d_state=2, dtype="float64", seed=3)
    base.update(kw)
    return ModelConfig(**base)


def silu(v):
    return v / (1.0 + np.exp(-v))


def mamba_reference(x, p):
    """Block recomputed step by step from the raw arrays."""
    d_inner = p.out_proj.shape[0]
    xz = x @ p.in_proj.data
    u, z = xz[:, :d_inner], xz[:, d_inner:]
    u = silu(conv1d_loop(u.T, p.conv_w.data, p.conv_b.data, "causal", groups=d_inner).T)
    s = p.ssm
    R, n = s.dt_rank, s.d_state
    proj = u @ s.W_x.data
    delta = np.log1p(np.exp(proj[:, :R] @ s.W_dt.data + s.b_dt.data))
    B, C = proj[:, R:R + n], proj[:, R + n:]
    A = -np.exp(s.A_log.data)
    Abar = np.exp(delta[:, :, None] * A)
    Bbar = delta[:, :, None] * B[:, None, :]
    y = scan_loop(Abar, Bbar, C, u, s.D_skip.data)
    return x + (y * silu(z)) @ p.out_proj.data


# -- Mamba block ----------------------------------------------------------------

def test_zero_out_projection_is_identity(rng):
    p = init_mamba_block(6, 2, 4, 4, rng, dtype=np.float64)
    p.out_proj.data[:] = 0
    x = rng.normal(size=(11, 6))
    assert np.array_equal(mamba_block(x, p).data, x)


def test_block_shape_and_dim_error(rng):
    p = init_mamba_block(5, 2, 3, 4, rng, dtype=np.float64)
    assert mamba_block(rng.normal(size=(7, 5)), p).shape == (7, 5)
    assert mamba_block(rng.normal(size=(3, 7, 5)), p).shape == (3, 7, 5)
    with pytest.raises(ValueError):
        mamba_block(rng.normal(size=(7, 4)), p)


def test_block_matches_composed_reference(rng):
    p = init_mamba_block(6, 2, 4, 4, rng, dtype=np.float64)
    x = rng.normal(size=(15, 6))
    assert np.max(np.abs(mamba_block(x, p).data - mamba_reference(x, p))) < 1e-12


def test_bidirectional_zero_projections(rng):
    f = init_mamba_block(6, 2, 4, 4, rng, dtype=np.float64)
    b = init_mamba_block(6, 2, 4, 4, rng, dtype=np.float64)
    f.out_proj.data[:] = 0
    b.out_proj.data[:] = 0
    x = rng.normal(size=(9, 6))
    assert np.array_equal(bidirectional_mamba(x, f, b).data, x)


def test_bidirectional_palindrome(rng):
    p = init_mamba_block(6, 2, 4, 4, rng, dtype=np.float64)
    half = rng.normal(size=(8, 6))
    x = np.concatenate([half, half[::-1]])
    y = bidirectional_mamba(x, p, p).data
    np.testing.assert_allclose(y, y[::-1], atol=1e-12)


def test_bidirectional_two_pass_reference(rng):
    f = init_mamba_block(6, 2, 4, 4, rng, dtype=np.float64)
    b = init_mamba_block(6, 2, 4, 4, rng, dtype=np.float64)
    x = rng.normal(size=(12, 6))
    ref = mamba_reference(x, f) + mamba_reference(x[::-1], b)[::-1] - x
    assert np.max(np.abs(bidirectional_mamba(x, f, b).data - ref)) < 1e-12


# -- pixel shuffle --------------------------------------------------------------

def test_pixel_shuffle_index_example():
    x = np.tile(np.arange(10.0)[:, None], (1, 2))
    assert pixel_shuffle_1d(x, 10).data.tolist() == [list(range(10)) * 2]


def test_pixel_shuffle_r1_identity(rng):
    x = rng.normal(size=(3, 7))
    assert np.array_equal(pixel_shuffle_1d(x, 1).data, x)


def test_pixel_shuffle_formula(rng):
    C, r, L = 3, 4, 5
    x = rng.normal(size=(C * r, L))
    y = pixel_shuffle_1d(x, r).data
    for c in range(C):
        for n in range(L):
            for j in range(r):
                assert y[c, n * r + j] == x[c * r + j, n]


def test_pixel_shuffle_indivisible():
    with pytest.raises(ValueError, match="divisible"):
        pixel_shuffle_1d(np.ones((7, 3)), 2)
    with pytest.raises(ValueError, match="divisible"):
        pixel_unshuffle_1d(np.ones((2, 7)), 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_pixel_shuffle_bijection(r, C, L, seed):
    x = np.random.default_rng(seed).normal(size=(2, C * r, L))
    y = pixel_shuffle_1d(x, r).data
    assert np.array_equal(pixel_unshuffle_1d(y, r).data, x)
    assert np.array_equal(np.sort(y, axis=None), np.sort(x, axis=None))


# -- full model -----------------------------------------------------------------

def zero_network(model):
    for t in model.parameters():
        t.data[:] = 0


def test_skip_connection_identity(rng):
    model = MSECG(tiny(r=10))
    zero_network(model)
    lr = Signal(rng.normal(size=(2, 30)), 50.0)
    out = msecg_forward(lr, model)
    assert out.sample_rate == 500.0
    assert np.array_equal(out.data, linear_interp_upsample_array(lr.data, 10))


def test_default_shape_contract(rng):
    cfg = ModelConfig(D=16, M=1)
    out = msecg_forward(Signal(rng.normal(size=(12, 500)), 50.0), MSECG(cfg))
    assert out.data.shape == (12, 5000)


def test_wrong_lead_count(rng):
    model = MSECG(tiny())
    with pytest.raises(ValueError, match="leads"):
        msecg_forward(Signal(rng.normal(size=(3, 10)), 50.0), model)


@pytest.mark.parametrize("ps,sc", [(True, True), (True, False), (False, True), (False, False)])
def test_ablation_arms(rng, ps, sc):
    cfg = tiny(r=10, use_pixel_shuffle=ps, use_deconv=not ps, use_skip_connection=sc)
    model = MSECG(cfg)
    assert model.num_parameters() == count_params(cfg)
    assert model(rng.normal(size=(3, 2, 8))).shape == (3, 2, 80)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(use_pixel_shuffle=True, use_deconv=True)
    with pytest.raises(ValueError):
        ModelConfig(conv_kernel_front=4)
    with pytest.raises(ValueError):
        ModelConfig(scan_impl="fft")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"D": 8, "width": 3})
    assert ModelConfig.from_dict(tiny().to_dict()) == tiny()


def test_model_gradient_check(rng):
    model = MSECG(tiny())
    x = rng.normal(size=(2, 10))
    target = rng.normal(size=(2, 20))

    def loss():
        return ag.mean(ag.square(model.forward(x) - target))

    ag.backward(loss())
    f = lambda: float(loss().data)  # noqa: E731
    for name, t in model.named_parameters():
        assert rel_error(t.grad, central_diff(f, t.data)) < 1e-4, name


def test_sequential_and_parallel_scan_agree(rng):
    x = rng.normal(size=(2, 12))
    a = MSECG(tiny(scan_impl="parallel"))(x).data
    b = MSECG(tiny(scan_impl="sequential"))(x).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_determinism(rng):
    x = rng.normal(size=(2, 9))
    m1, m2 = MSECG(tiny(seed=5)), MSECG(tiny(seed=5))
    for (k1, t1), (k2, t2) in zip(m1.named_parameters(), m2.named_parameters()):
        assert k1 == k2 and np.array_equal(t1.data, t2.data)
    assert np.array_equal(m1(x).data, m2(x).data)
    assert not np.array_equal(MSECG(tiny(seed=6))(x).data, m1(x).data)


def test_predict_batches_match_forward(rng):
    model = MSECG(tiny())
    x = rng.normal(size=(5, 2, 6))
    np.testing.assert_allclose(model.predict(x, batch_size=2), model.predict(x, batch_size=5),
                               rtol=0, atol=1e-13)


def test_state_dict_round_trip(rng):
    a, b = MSECG(tiny(seed=1)), MSECG(tiny(seed=2))
    b.load_state_dict(a.state_dict())
    x = rng.normal(size=(2, 7))
    assert np.array_equal(a(x).data, b(x).data)
    with pytest.raises(ValueError, match="mismatch"):
        b.load_state_dict({"front.w": a.params["front.w"].data})


# -- parameter count ------------------------------------------------------------

def test_count_params_hand_count():
    cfg = ModelConfig(M=0, leads=12, D=12, conv_kernel_front=1, conv_kernel_head=1)
    front = 12 * 12 * 1 + 12
    head = (12 * 10) * 12 * 1 + 12 * 10
    assert front + head == 1716
    assert count_params(cfg) == 1716
    assert MSECG(cfg).num_parameters() == 1716


def test_count_params_increasing_in_M():
    counts = [count_params(ModelConfig(D=32, M=m)) for m in range(7)]
    assert all(b > a for a, b in zip(counts, counts[1:]))


def test_count_params_matches_instantiation():
    cfg = ModelConfig(D=24, M=2, d_state=8)
    assert MSECG(cfg).num_parameters() == count_params(cfg)


def test_default_budget():
    n = count_params(ModelConfig())
    assert 1_500_000 <= n <= 2_400_000 and n < 3_050_000
