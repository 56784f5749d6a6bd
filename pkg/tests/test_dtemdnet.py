import numpy as np
import pytest
import torch

from temdenoise import dtemdnet as dt
from temdenoise import simgen, sparsedict
from temdenoise.diffcore import NonFiniteError


def test_forward_shapes(tiny_model):
    x = torch.randn(3, 1, 30, 30) * 0.5
    out = dt.forward(tiny_model, x)
    assert out.denoised.shape == (3, 1, 30, 30)
    assert out.code.shape == (3, 64) and out.dict_recon.shape == (3, 900)
    # the dictionary branch is exactly code @ atoms
    assert torch.allclose(out.dict_recon, out.code @ tiny_model.atoms)
    with pytest.raises(NonFiniteError):
        dt.forward(tiny_model, torch.full((1, 1, 30, 30), float("nan")))


def test_loss_arithmetic():
    out = dt.ForwardOut(torch.full((2, 1, 30, 30), 0.1), torch.full((2, 64), 0.05), torch.zeros(2, 900))
    total, l_reg, l_den = dt.loss_total(out, torch.zeros(2, 1, 30, 30), torch.zeros(2, 64))
    assert l_reg.item() == pytest.approx(0.05)
    assert l_den.item() == pytest.approx(0.01)
    assert total.item() == pytest.approx(0.51)


def test_training_loss_gradient(tiny_dict):
    from temdenoise.diffcore import ParamSet, grad_check
    from temdenoise.network import DTEMDNet, NetConfig

    model = DTEMDNet(NetConfig(width_mult=0.125), torch.as_tensor(tiny_dict.atoms)).double()
    model.init_weights(0)
    ds = simgen.make_dataset("source", 2, 0)
    x = torch.as_tensor(simgen.to_image(ds.noisy * 1e-3)[:, None], dtype=torch.float64)
    y = torch.as_tensor(simgen.to_image(ds.clean * 1e-3)[:, None], dtype=torch.float64)
    a = torch.randn(2, 64, dtype=torch.float64, generator=torch.Generator().manual_seed(1))

    def f():
        return dt.loss_total(dt.ForwardOut(*model(x)), y, a)[0]

    assert grad_check(f, ParamSet.from_module(model), eps=1e-5, n_coords=50) < 1e-3


def test_checkpoint_roundtrip(tmp_path, tiny_ckpt, tiny_dict):
    tiny_ckpt.log = [(1, 0.5, 0.25, 5.25), (2, 0.4, 0.2, 4.2)]
    p = tmp_path / "c.bin"
    dt.save_checkpoint(tiny_ckpt, p)
    back = dt.load_checkpoint(p)
    assert back.to_bytes() == p.read_bytes()
    assert back.log == tiny_ckpt.log and back.seed == 3 and back.config == tiny_ckpt.config
    model = dt.build_model(back, tiny_dict)
    x = torch.randn(2, 1, 30, 30)
    ref = dt.build_model(tiny_ckpt, tiny_dict)
    assert torch.equal(model(x)[0], ref(x)[0])
    with pytest.raises(ValueError):
        dt.Checkpoint.from_bytes(p.read_bytes() + b"\0")
    with pytest.raises(ValueError):
        dt.Checkpoint.from_bytes(b"NOPE" + p.read_bytes()[4:])


def test_digest_mismatch(tiny_ckpt, tiny_dict):
    other = sparsedict.Dictionary(tiny_dict.atoms, tiny_dict.lam, b"\x02" * 32)
    with pytest.raises(dt.DigestMismatchError):
        dt.build_model(tiny_ckpt, other)


def test_presets():
    desk = dt.TrainConfig.preset("desk")
    assert (desk.width_mult, desk.n_train, desk.epochs) == (0.25, 5000, 20)
    full = dt.TrainConfig.preset("paper")
    assert (full.epochs, full.batch, full.lr, full.n_train) == (100, 256, 1e-3, 100000)
    with pytest.raises(ValueError):
        dt.TrainConfig.preset("huge")


def _tiny_train(dictionary, seed=0):
    ds = simgen.make_dataset("source", 48, 2)
    codes = sparsedict.sparse_encode(dictionary, ds.clean * 1e-3, 1.0, 50)
    cfg = dt.TrainConfig(epochs=2, batch=16, width_mult=0.125, n_train=48)
    return dt.train(ds.clean, ds.noisy, dictionary, codes, cfg, seed)


def test_training_is_deterministic(tiny_dict, tmp_path):
    a = _tiny_train(tiny_dict)
    b = _tiny_train(tiny_dict)
    assert a.to_bytes() == b.to_bytes()
    assert [r[0] for r in a.log] == [1, 2]
    assert all(np.isfinite(r[3]) and r[3] == pytest.approx(10 * r[1] + r[2]) for r in a.log)
    dt.write_train_log(a.log, tmp_path / "log.csv")
    rows = dt.read_train_log(tmp_path / "log.csv")
    assert [(r["epoch"], r["L_regress"], r["L_denoising"], r["total"]) for r in rows] == a.log


def test_denoise_shapes(tiny_model):
    noisy = simgen.make_dataset("agn", 5, 0).noisy
    den, code, rec = dt.denoise(tiny_model, noisy, batch=2)
    assert den.shape == (5, 900) and code.shape == (5, 64) and rec.shape == (5, 900)


def test_constant_head_and_recon_linearity(tiny_model):
    with torch.no_grad():
        tiny_model.fc_weight.zero_()
        tiny_model.fc_bias.copy_(torch.linspace(-1, 1, 64))
    out = dt.forward(tiny_model, torch.randn(3, 1, 30, 30))
    assert torch.equal(out.code, tiny_model.fc_bias.expand(3, 64))
    ref = tiny_model.fc_bias.detach().double() @ tiny_model.atoms.double()
    assert torch.allclose(out.dict_recon.double(), ref.expand(3, 900), atol=1e-6)
    a1, a2 = torch.randn(2, 64), torch.randn(2, 64)
    atoms = tiny_model.atoms
    assert torch.allclose((a1 + a2) @ atoms, a1 @ atoms + a2 @ atoms, atol=1e-5)


def test_zero_lr_training_keeps_initial_params(tiny_dict):
    from temdenoise.network import DTEMDNet, NetConfig

    ds = simgen.make_dataset("source", 16, 0)
    codes = sparsedict.sparse_encode(tiny_dict, ds.clean * 1e-3, 1.0, 20)
    ckpt = dt.train(ds.clean, ds.noisy, tiny_dict, codes,
                    dt.TrainConfig(epochs=1, lr=0.0, batch=8, width_mult=0.125, n_train=16), seed=4)
    init = DTEMDNet(NetConfig(width_mult=0.125), torch.as_tensor(tiny_dict.atoms, dtype=torch.float32))
    init.init_weights(4)
    for name, p in init.named_parameters():
        assert np.array_equal(ckpt.params[name], p.detach().numpy())
