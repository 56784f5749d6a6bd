"""Training, inference and checkpoint I/O for the dictionary-conditioned denoiser."""
from __future__ import annotations

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import csvio, diffcore
from .network import LENGTH, SIDE, DTEMDNet, NetConfig
from .sparsedict import Dictionary

log = logging.getLogger(__name__)

ALPHA_REGRESS = 10.0
BETA_DENOISE = 1.0

CKPT_MAGIC = b"DPTC"
CKPT_VERSION = 1


class DigestMismatchError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class ForwardOut:
    denoised: torch.Tensor  # (B, 1, 30, 30)
    code: torch.Tensor  # (B, K)
    dict_recon: torch.Tensor  # (B, 900)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch: int = 256
    width_mult: float = 1.0
    n_train: int = 100_000

    @classmethod
    def preset(cls, name: str) -> "TrainConfig":
        if name == "paper":
            return cls()
        if name == "desk":
            return cls(epochs=20, lr=1e-3, batch=32, width_mult=0.25, n_train=5_000)
        raise ValueError(f"unknown preset {name!r}")


@dataclass
class Checkpoint:
    config: NetConfig
    params: "OrderedDict[str, np.ndarray]"
    dict_digest: bytes
    seed: int = 0
    log: list[tuple[int, float, float, float]] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        cfg = json.dumps(self.config.to_dict(), sort_keys=True).encode("utf-8")
        out = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(cfg)), cfg, struct.pack("<I", len(self.params))]
        for name, arr in self.params.items():
            key = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            out.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes())
        out.append(self.dict_digest)
        out.append(struct.pack("<QI", self.seed, len(self.log)))
        for epoch, l_reg, l_den, total in self.log:
            out.append(struct.pack("<Iddd", epoch, l_reg, l_den, total))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != CKPT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version, n_cfg = struct.unpack_from("<HI", blob, 4)
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos = 10
        config = NetConfig(**json.loads(blob[pos:pos + n_cfg].decode("utf-8")))
        pos += n_cfg
        (n_arr,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params = OrderedDict()
        for _ in range(n_arr):
            (n_key,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n_key].decode("utf-8")
            pos += n_key
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
            pos += 4 * count
        digest = bytes(blob[pos:pos + 32])
        pos += 32
        seed, n_log = struct.unpack_from("<QI", blob, pos)
        pos += 12
        rows = []
        for _ in range(n_log):
            rows.append(struct.unpack_from("<Iddd", blob, pos))
            pos += struct.calcsize("<Iddd")
        if pos != len(blob):
            raise ValueError("checkpoint has trailing bytes")
        return cls(config, params, digest, seed, [tuple(r) for r in rows])


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def build_model(ckpt: Checkpoint, dictionary: Dictionary) -> DTEMDNet:
    """Instantiate the network from a checkpoint; the dictionary must be the one it was trained with."""
    if dictionary.digest() != ckpt.dict_digest:
        raise DigestMismatchError("dictionary digest does not match the checkpoint")
    model = DTEMDNet(ckpt.config, torch.as_tensor(dictionary.atoms, dtype=torch.float32))
    state = {k: torch.from_numpy(v.copy()) for k, v in ckpt.params.items()}
    missing = set(dict(model.named_parameters())) ^ set(state)
    if missing:
        raise ValueError(f"checkpoint parameters do not match the architecture: {sorted(missing)}")
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(state[name])
    return model


def snapshot(model: DTEMDNet, dict_digest: bytes, seed: int = 0, log_rows=None) -> Checkpoint:
    params = OrderedDict((k, v.detach().cpu().numpy().astype(np.float32).copy()) for k, v in model.named_parameters())
    return Checkpoint(model.cfg, params, dict_digest, seed, list(log_rows or []))


def to_input(signals: np.ndarray, norm_scale: float) -> torch.Tensor:
    """(n, 900) raw mV -> normalised (n, 1, 30, 30) float32 tensor."""
    arr = np.asarray(signals, dtype=np.float32).reshape(-1, 1, SIDE, SIDE) * np.float32(norm_scale)
    return torch.from_numpy(np.ascontiguousarray(arr))


def forward(model: DTEMDNet, x: torch.Tensor) -> ForwardOut:
    if not bool(torch.isfinite(x).all()):
        raise diffcore.NonFiniteError("non-finite network input")
    return ForwardOut(*model(x))


def loss_total(out: ForwardOut, y_truth: torch.Tensor, a_truth: torch.Tensor):
    """Returns (total, L_regress, L_denoising) with mean reductions."""
    l_den = torch.mean((out.denoised - y_truth) ** 2)
    l_reg = torch.mean(torch.abs(out.code - a_truth))
    return ALPHA_REGRESS * l_reg + BETA_DENOISE * l_den, l_reg, l_den


@torch.no_grad()
def denoise(model: DTEMDNet, noisy: np.ndarray, batch: int = 256) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inference in raw mV; returns (denoised, codes, dict_recon) as (n, 900)/(n, K) arrays."""
    scale = model.cfg.norm_scale
    outs = ([], [], [])
    for i in range(0, len(noisy), batch):
        out = forward(model, to_input(noisy[i:i + batch], scale))
        outs[0].append(out.denoised.reshape(-1, LENGTH).numpy() / scale)
        outs[1].append(out.code.numpy())
        outs[2].append(out.dict_recon.numpy() / scale)
    return tuple(np.concatenate(o) for o in outs)


def train(
    clean: np.ndarray,
    noisy: np.ndarray,
    dictionary: Dictionary,
    codes: np.ndarray,
    cfg: TrainConfig,
    seed: int = 0,
    norm_scale: float = 1e-3,
    progress=None,
) -> Checkpoint:
    """Minimise 10 * L_regress + L_denoising with Adam; codes are the frozen clean-signal codes."""
    if len(clean) != len(noisy) or len(codes) != len(clean):
        raise ValueError("clean, noisy and code arrays must have the same number of rows")
    torch.manual_seed(seed)
    net_cfg = NetConfig(width_mult=cfg.width_mult, K=dictionary.K, norm_scale=norm_scale)
    model = DTEMDNet(net_cfg, torch.as_tensor(dictionary.atoms, dtype=torch.float32))
    model.init_weights(seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)

    x_all = to_input(noisy, norm_scale)
    y_all = to_input(clean, norm_scale)
    a_all = torch.as_tensor(np.asarray(codes), dtype=torch.float32)
    rng = np.random.default_rng(seed)
    n = len(clean)
    rows = []
    prev_check = diffcore.CHECK_FINITE
    diffcore.CHECK_FINITE = False  # the per-step loss check below catches any non-finite value
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = torch.from_numpy(rng.permutation(n))
            sums = np.zeros(3)
            for start in range(0, n, cfg.batch):
                idx = order[start:start + cfg.batch]
                out = forward(model, x_all[idx])
                total, l_reg, l_den = loss_total(out, y_all[idx], a_all[idx])
                if not bool(torch.isfinite(total)):
                    raise TrainingDiverged(f"loss became non-finite at epoch {epoch}, batch offset {start}")
                opt.zero_grad(set_to_none=True)
                total.backward()
                opt.step()
                sums += np.array([l_reg.item(), l_den.item(), total.item()]) * len(idx)
            l_reg, l_den, tot = sums / n
            rows.append((epoch, float(l_reg), float(l_den), float(tot)))
            log.info("epoch %d  L_regress %.6g  L_denoising %.6g  total %.6g", epoch, l_reg, l_den, tot)
            if progress is not None:
                progress(rows[-1])
    finally:
        diffcore.CHECK_FINITE = prev_check
    return snapshot(model, dictionary.digest(), seed, rows)


TRAIN_LOG_COLUMNS = ["epoch", "L_regress", "L_denoising", "total"]


def write_train_log(rows, path: str | Path) -> None:
    records = [dict(zip(TRAIN_LOG_COLUMNS, (int(r[0]), *map(float, r[1:])))) for r in rows]
    csvio.write(path, "train_log", 1, TRAIN_LOG_COLUMNS, records)


def read_train_log(path: str | Path) -> list[dict]:
    return csvio.read(path, "train_log", 1, TRAIN_LOG_COLUMNS, {"epoch": int})
