"""Classifier oracles: finite-difference gradients, schedule values, checkpoints."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crackseg.model import (
    ADAPTER_OUT,
    CHECKPOINT_MAGIC,
    FEATURE_DIM,
    HIDDEN_HEAD,
    HIDDEN_TUNE,
    AdamW,
    AdapterBlock,
    ModelParams,
    TrainConfig,
    adapter_forward,
    backward,
    cosine_lr,
    forward,
    gelu,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


def normal_cdf(x):
    """Independent Phi via the error function."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def random_fm(seed, shape=(6, 6)):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, shape + (FEATURE_DIM,))


def scalar_loss(fm, params):
    """Fixed projection of the prob map, so FD has a scalar to differentiate."""
    prob = forward(fm, params)
    weights = np.linspace(0.5, 1.5, prob.size).reshape(prob.shape)
    return float((prob * weights).sum()), weights


# --- adapter ------------------------------------------------------------

def test_adapter_zero_weights_zero_output():
    a = AdapterBlock(np.zeros((FEATURE_DIM, HIDDEN_TUNE)), np.zeros(HIDDEN_TUNE),
                     np.zeros((HIDDEN_TUNE, ADAPTER_OUT)), np.zeros(ADAPTER_OUT))
    out = adapter_forward(np.random.default_rng(0).normal(size=FEATURE_DIM), a)
    assert np.all(out == 0.0)


def test_adapter_identity_weights_apply_gelu():
    n = FEATURE_DIM
    a = AdapterBlock(np.eye(n), np.zeros(n), np.eye(n), np.zeros(n))
    f = np.zeros(n)
    f[0] = 2.0
    out = adapter_forward(f, a)
    assert out[0] == pytest.approx(2.0 * normal_cdf(2.0), abs=1e-12)
    assert out[0] == pytest.approx(1.9545, abs=1e-4)
    assert out[1:] == pytest.approx(np.zeros(n - 1), abs=0.0)


def test_gelu_negative_tail():
    assert abs(gelu(np.array([-10.0]))[0]) < 1e-6


def test_adapter_shape_mismatch_rejected():
    a = init_params(0).adapter
    with pytest.raises(ValueError):
        adapter_forward(np.zeros(FEATURE_DIM + 1), a)


def test_adapter_batch_matches_single():
    params = init_params(1)
    rng = np.random.default_rng(2)
    batch = rng.normal(size=(5, FEATURE_DIM))
    out = adapter_forward(batch, params.adapter)
    for i in range(5):
        assert out[i] == pytest.approx(adapter_forward(batch[i], params.adapter),
                                       abs=1e-12)


# --- forward ------------------------------------------------------------

def test_zero_head_gives_half_everywhere():
    params = init_params(3)
    params.head.w1[:] = 0.0
    params.head.b1[:] = 0.0
    params.head.w2[:] = 0.0
    params.head.b2[:] = 0.0
    prob = forward(random_fm(4), params)
    assert np.all(prob == 0.5)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_forward_open_interval(seed):
    params = init_params(seed)
    prob = forward(random_fm(seed + 1), params)
    assert np.all(prob > 0.0) and np.all(prob < 1.0)


def test_forward_deterministic():
    params = init_params(5)
    fm = random_fm(6)
    a = forward(fm, params)
    b = forward(fm, params)
    assert np.array_equal(a, b)
    c = forward(fm, init_params(5))
    assert np.array_equal(a, c)


def test_forward_feature_dim_mismatch():
    with pytest.raises(ValueError):
        forward(np.zeros((4, 4, FEATURE_DIM + 2)), init_params(0))


# --- backward -----------------------------------------------------------

def test_gradients_match_finite_differences():
    params = init_params(7)
    fm = random_fm(8)
    _, weights = scalar_loss(fm, params)
    grads = backward(fm, params, weights)
    eps = 1e-4
    worst = 0.0
    for name, tensor in params.tensors().items():
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + eps
            hi, _ = scalar_loss(fm, params)
            tensor[idx] = orig - eps
            lo, _ = scalar_loss(fm, params)
            tensor[idx] = orig
            fd = (hi - lo) / (2 * eps)
            denom = max(abs(fd), abs(grads[name][idx]), 1e-8)
            worst = max(worst, abs(grads[name][idx] - fd) / denom)
    assert worst < 1e-3


def test_zero_upstream_zero_grads():
    params = init_params(9)
    fm = random_fm(10)
    grads = backward(fm, params, np.zeros(fm.shape[:2]))
    for g in grads.values():
        assert np.all(g == 0.0)


def test_upstream_linearity():
    params = init_params(11)
    fm = random_fm(12)
    up = np.random.default_rng(13).normal(size=fm.shape[:2])
    g1 = backward(fm, params, up)
    g2 = backward(fm, params, 2.0 * up)
    for name in g1:
        assert g2[name] == pytest.approx(2.0 * g1[name], rel=1e-12, abs=1e-15)


# --- schedule and config ------------------------------------------------

def test_cosine_schedule_values():
    cfg = TrainConfig()
    assert cfg.epochs == 90 and cfg.lr0 == 3e-4
    assert cosine_lr(0, cfg) == pytest.approx(3e-4, abs=0.0)
    assert cosine_lr(45, cfg) == pytest.approx(1.5e-4, abs=1e-19)
    # final epoch via the half-angle identity 0.5*(1+cos t) = cos^2(t/2)
    expect = 3e-4 * math.cos(math.radians(89.0 / 90.0 * 90.0)) ** 2
    assert cosine_lr(89, cfg) == pytest.approx(expect, rel=1e-12)
    assert cosine_lr(89, cfg) == pytest.approx(9.1376e-8, rel=1e-4)


def test_cosine_epoch_range_enforced():
    cfg = TrainConfig(epochs=10)
    with pytest.raises(ValueError):
        cosine_lr(10, cfg)
    with pytest.raises(ValueError):
        cosine_lr(-1, cfg)


def test_cosine_monotone_decreasing():
    cfg = TrainConfig(epochs=40)
    lrs = [cosine_lr(e, cfg) for e in range(40)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.beta, cfg.lam, cfg.warmup_epochs, cfg.refresh_every) == (0.3, 0.3, 5, 1)
    cfg.validate()
    TrainConfig(epochs=5, warmup_epochs=5).validate()  # boundary: never activates
    with pytest.raises(ValueError):
        TrainConfig(beta=0.0).validate()
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.1).validate()
    with pytest.raises(ValueError):
        TrainConfig(epochs=5, warmup_epochs=6).validate()
    with pytest.raises(ValueError):
        TrainConfig(refresh_every=0).validate()


# --- optimizer ----------------------------------------------------------

def test_adamw_first_step_hand_computed():
    params = init_params(14)
    before = {k: v.copy() for k, v in params.tensors().items()}
    grads = {k: np.full_like(v, 0.5) for k, v in params.tensors().items()}
    opt = AdamW(params)
    opt.step(params, grads, lr=1e-3)
    # with constant gradient g the bias-corrected first step is g/|g| = sign(g)
    for name, tensor in params.tensors().items():
        m_hat = 0.5
        v_hat = 0.5 ** 2
        expect = before[name] - 1e-3 * (m_hat / (math.sqrt(v_hat) + 1e-8)
                                        + 1e-4 * before[name])
        assert tensor == pytest.approx(expect, rel=1e-12)


def test_adamw_decay_acts_without_gradient():
    params = init_params(15)
    before = params.head.w1.copy()
    opt = AdamW(params)
    zero = {k: np.zeros_like(v) for k, v in params.tensors().items()}
    opt.step(params, zero, lr=1e-2)
    assert params.head.w1 == pytest.approx(before * (1 - 1e-2 * 1e-4), rel=1e-12)


# --- checkpoints --------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    params = init_params(16)
    path = tmp_path / "model.bin"
    save_checkpoint(path, params)
    assert path.read_bytes()[:4] == CHECKPOINT_MAGIC
    back = load_checkpoint(path)
    assert back.rng_seed == 16
    for name, tensor in params.tensors().items():
        stored = back.tensors()[name]
        assert stored.shape == tensor.shape
        assert stored == pytest.approx(tensor.astype(np.float32), abs=0.0)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    params = init_params(17)
    path = tmp_path / "model.bin"
    save_checkpoint(path, params)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_forward_identical_after_reload(tmp_path):
    params = init_params(18)
    fm = random_fm(19)
    path = tmp_path / "model.bin"
    save_checkpoint(path, params)
    back = load_checkpoint(path)
    a = forward(fm, params).astype(np.float32)
    b = forward(fm, back).astype(np.float32)
    assert a == pytest.approx(b, rel=1e-5)
