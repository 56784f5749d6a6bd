import numpy as np
import pytest
import torch

from temdenoise import dtemdnet, sparsedict
from temdenoise.network import LENGTH, DTEMDNet, NetConfig

torch.set_num_threads(1)


def random_atoms(k=64, seed=0):
    """Unit-norm smooth-ish atoms; enough for shape and arithmetic tests."""
    rng = np.random.default_rng(seed)
    t = np.arange(1, LENGTH + 1) / 250.0
    rates = rng.uniform(0.2, 6.0, size=(k, 1))
    atoms = np.exp(-rates * t) + 0.01 * rng.standard_normal((k, LENGTH))
    return atoms / np.linalg.norm(atoms, axis=1, keepdims=True)


@pytest.fixture
def tiny_dict():
    return sparsedict.Dictionary(random_atoms().astype(np.float32).astype(np.float64), 1.0, b"\x01" * 32)


@pytest.fixture
def tiny_model(tiny_dict):
    cfg = NetConfig(width_mult=0.125)
    model = DTEMDNet(cfg, torch.as_tensor(tiny_dict.atoms, dtype=torch.float32))
    model.init_weights(3)
    return model


@pytest.fixture
def tiny_ckpt(tiny_model, tiny_dict):
    return dtemdnet.snapshot(tiny_model, tiny_dict.digest(), seed=3)


ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
