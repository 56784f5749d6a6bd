"""Dictionary-conditioned denoiser (encoder, decoder, code regression branch)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from . import diffcore as dc

SIDE = 30
LENGTH = SIDE * SIDE


@dataclass(frozen=True)
class NetConfig:
    width_mult: float = 1.0
    K: int = 64
    input_side: int = SIDE
    norm_scale: float = 1e-3
    dilation: int = 2

    def ch(self, n: int) -> int:
        return max(4, int(round(n * self.width_mult)))

    def to_dict(self) -> dict:
        return asdict(self)


class Conv(nn.Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, dilation: int = 1):
        super().__init__()
        self.dilation = dilation
        self.weight = nn.Parameter(torch.empty(c_out, c_in, k, k))
        self.bias = nn.Parameter(torch.zeros(c_out))

    def forward(self, x):
        return dc.conv2d(x, self.weight, self.bias, self.dilation)


class ResBlockV1(nn.Module):
    """1x1 conv -> ReLU -> 3x3 conv, projected skip when widths differ."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv1 = Conv(c_in, c_out, 1)
        self.conv2 = Conv(c_out, c_out, 3)
        self.proj = Conv(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x):
        skip = x if self.proj is None else self.proj(x)
        return dc.relu(self.conv2(dc.relu(self.conv1(x))) + skip)


class ResBlockV2(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.conv1 = Conv(c, c, 3)
        self.conv2 = Conv(c, c, 3)

    def forward(self, x):
        return dc.relu(self.conv2(dc.relu(self.conv1(x))) + x)


class DTEMDNet(nn.Module):
    def __init__(self, cfg: NetConfig, atoms: torch.Tensor):
        super().__init__()
        if atoms.shape != (cfg.K, LENGTH):
            raise ValueError(f"dictionary shape {tuple(atoms.shape)} does not match K={cfg.K}, L={LENGTH}")
        if cfg.K != 64:
            # the regression head is a flattened 8x8 map
            raise ValueError("code length K must be 64")
        self.cfg = cfg
        c = cfg.ch
        d = cfg.dilation
        self.register_buffer("atoms", atoms.clone())

        self.enc_conv1 = Conv(1, c(32), 3, d)
        self.enc_conv2 = Conv(c(32), c(64), 3, d)
        self.enc_rb1 = ResBlockV1(c(64), c(128))
        self.enc_rb2a = ResBlockV2(c(128))
        self.enc_rb2b = ResBlockV2(c(128))

        self.dec_rb2a = ResBlockV2(c(128))
        self.dec_rb2b = ResBlockV2(c(128))
        self.dec_rb1 = ResBlockV1(c(128), c(128))
        self.dec_conv1 = Conv(c(128), c(32), 3, d)
        self.dec_conv2 = Conv(c(32), c(16), 3, d)
        self.dict_proj = Conv(1, c(16), 1)
        self.dec_final = Conv(2 * c(16), 1, 3)

        self.reg_rb2a = ResBlockV2(c(128))
        self.reg_rb2b = ResBlockV2(c(128))
        self.reg_rb1 = ResBlockV1(c(128), c(128))
        self.reg_final = Conv(c(128), 1, 3)
        self.fc_weight = nn.Parameter(torch.empty(cfg.K, 64))
        self.fc_bias = nn.Parameter(torch.zeros(cfg.K))

    def init_weights(self, seed: int) -> None:
        """Kaiming fan-in normal init from a private generator; biases zero."""
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                    continue
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * math.sqrt(2.0 / fan_in))

    def encode(self, x):
        h = dc.relu(self.enc_conv1(x))
        h = dc.relu(self.enc_conv2(h))
        h = dc.pool2(self.enc_rb1(h))
        return self.enc_rb2b(self.enc_rb2a(h))

    def regress(self, z):
        h = dc.pool2(z, ceil=True)
        h = self.reg_rb1(self.reg_rb2b(self.reg_rb2a(h)))
        h = self.reg_final(h).flatten(1)
        return dc.fully_connected(h, self.fc_weight, self.fc_bias)

    def decode(self, z, recon_img):
        h = dc.upsample2(self.dec_rb2b(self.dec_rb2a(z)))
        h = self.dec_rb1(h)
        h = dc.relu(self.dec_conv1(h))
        h = dc.relu(self.dec_conv2(h))
        prior = dc.relu(self.dict_proj(recon_img))
        return self.dec_final(torch.cat([h, prior], dim=1))

    def forward(self, x):
        """Return (denoised image, code, dictionary reconstruction)."""
        z = self.encode(x)
        code = self.regress(z)
        recon = code @ self.atoms
        side = self.cfg.input_side
        denoised = self.decode(z, recon.view(-1, 1, side, side))
        return denoised, code, recon
