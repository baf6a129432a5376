import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tempomoe.exceptions import NonDeterministicError, ValidationError
from tempomoe.substrate import attention, depthwise_conv1d, gelu, gradient_check, softmax_stable


def conv_loop(x, kernels, bias=None):
    """Brute-force same-padded depthwise convolution (cross-correlation)."""
    L, D = x.shape
    k = kernels.shape[1]
    half = k // 2
    out = np.zeros((L, D))
    for t in range(L):
        for d in range(D):
            acc = 0.0
            for j in range(k):
                src = t + j - half
                if 0 <= src < L:
                    acc += kernels[d, j] * x[src, d]
            out[t, d] = acc + (0.0 if bias is None else bias[d])
    return out


def attention_dense(q, k, v, heads):
    L, D = q.shape
    dh = D // heads
    out = np.zeros((L, D))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        s = np.exp(s - s.max(1, keepdims=True))
        out[:, sl] = (s / s.sum(1, keepdims=True)) @ v[:, sl]
    return out


@settings(max_examples=25, deadline=None)
@given(L=st.integers(1, 12), D=st.integers(1, 4), half=st.integers(0, 3), seed=st.integers(0, 999))
def test_depthwise_conv_matches_loop(L, D, half, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(L, D)), rng.normal(size=(D, 2 * half + 1)), rng.normal(size=D)
    got = depthwise_conv1d(torch.from_numpy(x), torch.from_numpy(w), torch.from_numpy(b)).numpy()
    np.testing.assert_allclose(got, conv_loop(x, w, b), atol=1e-10)


def test_conv_delta_kernel_is_identity():
    x = torch.randn(7, 3, dtype=torch.float64)
    w = torch.zeros(3, 5, dtype=torch.float64)
    w[:, 2] = 1
    assert torch.equal(depthwise_conv1d(x, w), x)


def test_conv_batched_and_rejects_bad_kernels():
    x = torch.randn(2, 9, 4, dtype=torch.float64)
    w = torch.randn(4, 3, dtype=torch.float64)
    out = depthwise_conv1d(x, w)
    assert out.shape == x.shape
    np.testing.assert_allclose(out[1].numpy(), conv_loop(x[1].numpy(), w.numpy()), atol=1e-12)
    with pytest.raises(ValidationError):
        depthwise_conv1d(x, torch.randn(4, 4))
    with pytest.raises(ValidationError):
        depthwise_conv1d(x, torch.randn(3, 3))


def test_softmax_large_logits_stable():
    x = torch.tensor([1000.0, 1000.0, -1000.0], dtype=torch.float64)
    p = softmax_stable(x)
    assert torch.isfinite(p).all()
    np.testing.assert_allclose(p.numpy(), [0.5, 0.5, 0.0], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_softmax_simplex(values):
    p = softmax_stable(torch.tensor(values, dtype=torch.float64))
    assert (p >= 0).all()
    assert abs(float(p.sum()) - 1.0) < 1e-12


def test_attention_matches_dense_oracle(rng):
    q, k, v = (rng.normal(size=(6, 8)) for _ in range(3))
    got = attention(*(torch.from_numpy(a) for a in (q, k, v)), heads=2).numpy()
    np.testing.assert_allclose(got, attention_dense(q, k, v, 2), atol=1e-12)


def test_attention_uniform_when_keys_equal(rng):
    q = torch.from_numpy(rng.normal(size=(4, 6)))
    k = torch.ones(5, 6, dtype=torch.float64)
    v = torch.from_numpy(rng.normal(size=(5, 6)))
    out = attention(q, k, v, heads=3)
    np.testing.assert_allclose(out.numpy(), np.broadcast_to(v.mean(0).numpy(), (4, 6)), atol=1e-12)


def test_attention_rejects_bad_heads():
    x = torch.randn(3, 6)
    with pytest.raises(ValidationError):
        attention(x, x, x, heads=4)


def test_gelu_reference_points():
    x = torch.tensor([0.0, 1.0, -1.0], dtype=torch.float64)
    np.testing.assert_allclose(gelu(x).numpy(), [0.0, 0.8413447460685429, -0.15865525393145707], atol=1e-12)


def test_gradient_check_passes_on_composite():
    torch.manual_seed(1)
    x = torch.randn(8, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    rep = gradient_check(lambda: (gelu(depthwise_conv1d(x, w)) ** 2).sum(), [x, w])
    assert rep.max_rel_err < 1e-6
    assert rep.checked_params == 44


def test_gradient_check_detects_wrong_gradient():
    p = torch.randn(5, dtype=torch.float64, requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return torch.ones(5, dtype=torch.float64) * g

    assert gradient_check(lambda: Wrong.apply(p), [p]).max_rel_err > 1e-2


def test_gradient_check_requires_float64_and_determinism():
    p32 = torch.randn(3, requires_grad=True)
    with pytest.raises(ValidationError):
        gradient_check(lambda: p32.sum(), [p32])
    p = torch.randn(3, dtype=torch.float64, requires_grad=True)
    with pytest.raises(NonDeterministicError):
        gradient_check(lambda: (p * torch.rand(1, dtype=torch.float64)).sum(), [p])
