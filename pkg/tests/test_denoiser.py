import numpy as np
import pytest
import torch

from tempomoe.denoiser import (Denoiser, DenoiserBlock, DenoiserConfig, load_checkpoint, parameter_report,
                               save_checkpoint, sinusoidal_embedding)
from tempomoe.exceptions import FormatError, ValidationError
from tempomoe.substrate import gradient_check


def tiny(**kw):
    base = dict(blocks=2, latent_dim=32, heads=2, motion_dim=25)
    base.update(kw)
    return DenoiserConfig(**base)


def randomize(module, scale=0.2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
    return module


def test_config_validation():
    with pytest.raises(ValidationError):
        DenoiserConfig(latent_dim=30, heads=4)
    cfg = tiny()
    assert DenoiserConfig.from_dict(cfg.to_dict()) == cfg


def test_fresh_block_is_identity():
    block = DenoiserBlock(tiny())
    h = torch.randn(2, 9, 32)
    out = block(h, torch.randn(2, 32), torch.randn(2, 9, 32))
    assert torch.equal(out, h)


def test_block_reduces_to_prenorm_residual_with_unit_gates():
    cfg = tiny()
    block = DenoiserBlock(cfg)
    D = cfg.latent_dim
    with torch.no_grad():
        bias = block.adaln[1].bias.view(9, D)
        bias[2::3] = 1.0  # gates; shifts and scales stay 0
    h, c = torch.randn(1, 6, D), torch.randn(1, 6, D)
    expected = h + block.self_attn(block.norms[0](h))
    expected = expected + block.cross_attn(block.norms[1](expected), c)
    expected = expected + block.ffn(block.norms[2](expected), c)
    assert torch.allclose(block(h, torch.randn(1, D), c), expected, atol=1e-6)


def test_zero_init_output_is_constant():
    model = Denoiser(tiny())
    with torch.no_grad():
        model.out_proj.bias.copy_(torch.arange(25, dtype=torch.float32))
        a = model(torch.randn(2, 8, 25), torch.tensor([3.0, 700.0]), torch.randn(2, 8, 35))
        b = model(torch.randn(2, 8, 25), 10.0, None)
    assert torch.equal(a, b)
    assert torch.equal(a[0, 0], torch.arange(25, dtype=torch.float32))


def test_gate_gradient_nonzero_after_one_step():
    model = Denoiser(tiny())
    opt = torch.optim.SGD(model.parameters(), lr=0.1)
    x, c = torch.randn(2, 8, 25), torch.randn(2, 8, 35)
    for _ in range(2):
        opt.zero_grad()
        (model(x, 500.0, c) - x).pow(2).mean().backward()
        opt.step()
    assert model.blocks[0].adaln[1].weight.grad.abs().sum() > 0


@pytest.mark.parametrize("L", [16, 64, 1024])
def test_output_shapes(L):
    model = randomize(Denoiser(tiny(blocks=1)), 0.05)
    with torch.no_grad():
        assert model(torch.randn(1, L, 25), 5.0, torch.randn(1, L, 35)).shape == (1, L, 25)


def test_unbatched_input():
    model = Denoiser(tiny(blocks=1))
    assert model(torch.randn(8, 25), 5.0, torch.randn(8, 35)).shape == (8, 25)


def test_null_token_changes_output():
    model = randomize(Denoiser(tiny()), 0.1)
    x, c = torch.randn(1, 8, 25), torch.randn(1, 8, 35)
    with torch.no_grad():
        assert not torch.allclose(model(x, 5.0, c), model(x, 5.0, None))
        mixed = model(x.expand(2, -1, -1), 5.0, c.expand(2, -1, -1), null_mask=torch.tensor([False, True]))
        assert torch.allclose(mixed[1], model(x, 5.0, None)[0], atol=1e-6)
        assert torch.allclose(mixed[0], model(x, 5.0, c)[0], atol=1e-6)


def test_length_mismatch_raises():
    with pytest.raises(ValidationError):
        Denoiser(tiny())(torch.randn(1, 8, 25), 5.0, torch.randn(1, 9, 35))


def test_ffn_baseline_runs():
    model = randomize(Denoiser(tiny(ffn_baseline=True)), 0.05)
    assert not model.moe_layers
    assert model(torch.randn(2, 8, 25), 5.0, torch.randn(2, 8, 35)).shape == (2, 8, 25)


def test_sinusoidal_embedding_values():
    e = sinusoidal_embedding(torch.tensor([0.0, 1.0]), 4)
    np.testing.assert_allclose(e[0].numpy(), [0, 0, 1, 1])
    np.testing.assert_allclose(e[1].numpy(), [np.sin(1), np.sin(0.01), np.cos(1), np.cos(0.01)], atol=1e-12)


def test_block_gradient_check():
    cfg = tiny(blocks=1, latent_dim=16)
    block = randomize(DenoiserBlock(cfg).double(), 0.3, seed=4)
    h = torch.randn(1, 8, 16, dtype=torch.float64)
    temb = torch.randn(1, 16, dtype=torch.float64)
    c = torch.randn(1, 8, 16, dtype=torch.float64)
    rep = gradient_check(lambda: block(h, temb, c).pow(2).sum(), list(block.parameters()))
    assert rep.max_rel_err < 1e-3


def test_full_model_gradient_check():
    model = randomize(Denoiser(tiny()).double(), 0.2, seed=5)
    x = torch.randn(1, 8, 25, dtype=torch.float64)
    c = torch.randn(1, 8, 35, dtype=torch.float64)
    rep = gradient_check(lambda: (model(x, 250.0, c) - x).pow(2).sum(), list(model.parameters()))
    assert rep.max_rel_err < 1e-3


def test_parameter_report():
    rep = parameter_report(tiny())
    assert rep["total"] > rep["tempomoe_per_layer"] > 0
    assert "tempomoe_per_layer" not in parameter_report(tiny(ffn_baseline=True))


def test_checkpoint_round_trip_bitwise(tmp_path):
    model = randomize(Denoiser(tiny()), 0.1)
    save_checkpoint(tmp_path / "ck", model, {"note": 1})
    back, extra = load_checkpoint(tmp_path / "ck")
    assert extra == {"note": 1}
    for (n, a), (_, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert torch.equal(a, b), n
    x, c = torch.randn(1, 8, 25), torch.randn(1, 8, 35)
    with torch.no_grad():
        assert torch.equal(model(x, 7.0, c), back(x, 7.0, c))


def test_checkpoint_corruption(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "missing")
    save_checkpoint(tmp_path / "ck", Denoiser(tiny(blocks=1)))
    (tmp_path / "ck" / "checkpoint.json").write_text('{"format": "other"}')
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ck")
