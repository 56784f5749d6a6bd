"""Differentiable layer set for the denoiser.

Thin, shape-checked wrappers over torch's reverse-mode autograd. Every op
validates its inputs and refuses to emit non-finite values.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn.functional as F

CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    pass


def _finite(t: torch.Tensor, where: str) -> torch.Tensor:
    if CHECK_FINITE and not bool(torch.isfinite(t).all()):
        raise NonFiniteError(f"non-finite values produced by {where}")
    return t


def _check4(x: torch.Tensor, where: str) -> None:
    if x.dim() != 4:
        raise ValueError(f"{where}: expected (B, C, H, W), got shape {tuple(x.shape)}")


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    dilation: int = 1,
) -> torch.Tensor:
    """Shape-preserving (odd k x k) cross-correlation with dilated taps."""
    _check4(x, "conv2d")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    c_out, c_in, kh, kw = weight.shape
    if x.shape[1] != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {x.shape[1]}, kernel expects {c_in}")
    if kh != kw or kh % 2 == 0:
        raise ValueError("conv2d kernels must be square with odd side")
    pad = dilation * (kh - 1) // 2
    return _finite(F.conv2d(x, weight, bias, padding=pad, dilation=dilation), "conv2d")


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def pool2(x: torch.Tensor, ceil: bool = False) -> torch.Tensor:
    """2x2 max pooling, stride 2.

    With ``ceil=True`` odd sides are allowed and the trailing partial window
    is kept (15 -> 8); otherwise odd sides are rejected.
    """
    _check4(x, "pool2")
    h, w = x.shape[-2:]
    if not ceil and (h % 2 or w % 2):
        raise ValueError(f"pool2 needs even spatial dims, got {h}x{w}")
    return _finite(F.max_pool2d(x, 2, 2, ceil_mode=ceil), "pool2")


def upsample2(x: torch.Tensor) -> torch.Tensor:
    """Nearest-neighbour 2x repetition along H and W."""
    _check4(x, "upsample2")
    return x.repeat_interleave(2, dim=2).repeat_interleave(2, dim=3)


def fully_connected(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """y = W x + b for a batch of flat vectors."""
    if x.dim() != 2 or x.shape[1] != weight.shape[1] or bias.shape[0] != weight.shape[0]:
        raise ValueError(
            f"fully_connected shape mismatch: x {tuple(x.shape)}, W {tuple(weight.shape)}, b {tuple(bias.shape)}"
        )
    return _finite(F.linear(x, weight, bias), "fully_connected")


class ParamSet(OrderedDict):
    """Named parameter tensors; gradients live in each tensor's ``.grad``."""

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParamSet":
        return cls(module.named_parameters())

    def grads(self) -> "OrderedDict[str, torch.Tensor]":
        out = OrderedDict()
        for name, p in self.items():
            out[name] = p.grad if p.grad is not None else torch.zeros_like(p)
        return out

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad = None

    def numel(self) -> int:
        return sum(p.numel() for p in self.values())

    def to_numpy(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.detach().cpu().numpy().copy()) for k, v in self.items())


def grad_check(
    f: Callable[[], torch.Tensor],
    params: ParamSet | Iterable[torch.Tensor],
    eps: float = 1e-3,
    n_coords: int = 50,
    seed: int = 0,
    skip_kinks: bool = False,
    kink_tol: float = 1e-3,
    info: dict | None = None,
) -> float:
    """Max relative error between autograd and central differences.

    ``f`` must be a closure re-evaluating a scalar loss from the current
    parameter values. Coordinates are sampled uniformly over all entries.
    Run in float64 for meaningful results at small eps.

    With ``skip_kinks`` a coordinate whose forward and backward one-sided
    differences disagree by more than ``kink_tol`` (relative) straddles a
    ReLU/max kink, where central differences are not a valid oracle; it is
    replaced by a fresh coordinate. At most ``n_coords`` replacements are made.
    Curvature also separates the one-sided differences (by ~eps * f''), so
    use this with eps near the bottom of its range.
    ``info`` receives the number of kinks skipped and the unfiltered maximum.
    """
    if not 1e-5 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-5, 1e-2], got {eps}")
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    for p in tensors:
        p.grad = None
    loss = f()
    if not bool(torch.isfinite(loss)):
        raise NonFiniteError("grad_check: loss is not finite")
    f0 = loss.item()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    analytic = [torch.zeros_like(p) if g is None else g for p, g in zip(tensors, analytic)]

    sizes = np.array([p.numel() for p in tensors])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    n_draw = min(total, 2 * n_coords if skip_kinks else n_coords)
    flat_idx = rng.choice(total, size=n_draw, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = worst_all = 0.0
    checked = kinks = 0
    with torch.no_grad():
        for idx in flat_idx:
            if checked == min(n_coords, total):
                break
            t = int(np.searchsorted(offsets, idx, side="right") - 1)
            local = int(idx - offsets[t])
            view = tensors[t].view(-1)
            orig = view[local].item()
            view[local] = orig + eps
            fp = float(f())
            view[local] = orig - eps
            fm = float(f())
            view[local] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError("grad_check: perturbed loss is not finite")
            cd = (fp - fm) / (2 * eps)
            a = float(analytic[t].view(-1)[local])
            err = abs(a - cd) / (abs(a) + abs(cd) + 1e-12)
            worst_all = max(worst_all, err)
            if skip_kinks:
                fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
                if abs(fwd - bwd) > kink_tol * (abs(fwd) + abs(bwd) + 1e-12):
                    kinks += 1
                    continue
            worst = max(worst, err)
            checked += 1
    if checked < min(n_coords, total):
        raise RuntimeError(f"grad_check: only {checked} smooth coordinates found ({kinks} kinks)")
    if info is not None:
        info.update(kinks=kinks, checked=checked, max_err_unfiltered=worst_all)
    return worst
