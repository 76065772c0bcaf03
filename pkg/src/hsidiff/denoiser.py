"""Spectral-spatial U-Net noise predictor with indexed decoder taps."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class DenoiserConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int
    base_width: int = 64
    depth: int = 3
    time_embed_dim: int = 128
    patch_size: int = 32

    def __post_init__(self):
        if self.depth < 2:
            raise DenoiserConfigError(f"depth must be >= 2, got {self.depth}")
        if self.in_channels < 1 or self.base_width < 1:
            raise DenoiserConfigError("in_channels and base_width must be positive")
        if self.time_embed_dim % 2:
            raise DenoiserConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        factor = 2 ** (self.depth - 1)
        if self.patch_size % factor:
            raise DenoiserConfigError(
                f"patch_size {self.patch_size} not divisible by 2^(depth-1) = {factor}"
            )

    def widths(self) -> list[int]:
        return [self.base_width * 2**k for k in range(self.depth)]

    def tap_channels(self) -> list[int]:
        """Channel width of tap f (f = 0 is the deepest decoder stage)."""
        return self.widths()[::-1]

    def tap_sizes(self) -> list[int]:
        return [self.patch_size // 2 ** (self.depth - 1 - f) for f in range(self.depth)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DenoiserOutput:
    eps_pred: np.ndarray
    taps: list | None = None


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sinusoidal encoding: [sin(t w_0), cos(t w_0), sin(t w_1), ...]."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    if np.any(np.asarray(t) < 0):
        raise ValueError("timestep must be >= 0")
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    ang = np.asarray(t, dtype=np.float64)[..., None] * freqs
    out = np.empty(ang.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def _torch_embedding(t: torch.Tensor, dim: int, dtype) -> torch.Tensor:
    freqs = torch.pow(10000.0, -torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    ang = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(t.shape[0], dim).to(dtype)


def _groups(c: int) -> int:
    # at most 8 groups, at least 8 channels each; one channel per group would
    # act as instance norm and erase the spectrum of a uniform patch
    for g in (8, 4, 2):
        if c % g == 0 and c // g >= 8:
            return g
    return 1


class Stage(nn.Module):
    """conv-GN-SiLU, add projected timestep embedding, conv-GN-SiLU."""

    def __init__(self, c_in: int, c_out: int, t_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups(c_out), c_out)
        self.t_proj = nn.Linear(t_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)

    def forward(self, x, temb):
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.t_proj(F.silu(temb))[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class Upsample(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class UNetDenoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths()
        td = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.stem = nn.Conv2d(cfg.in_channels, w[0], 3, padding=1)

        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        for k in range(cfg.depth):
            c_in = w[0] if k == 0 else w[k - 1]
            self.enc.append(Stage(c_in, w[k], td))
            if k < cfg.depth - 1:
                self.down.append(nn.Conv2d(w[k], w[k], 3, stride=2, padding=1))
        self.mid = Stage(w[-1], w[-1], td)

        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for j in range(cfg.depth):
            k = cfg.depth - 1 - j
            if j > 0:
                self.up.append(Upsample(w[k + 1], w[k]))
            self.dec.append(Stage(2 * w[k], w[k], td))
        self.head = nn.Conv2d(w[0], cfg.in_channels, 3, padding=1)

    def forward(self, x, t, return_taps: bool = False):
        """``x``: [N, C, P, P]; ``t``: [N] integer timesteps."""
        temb = self.time_mlp(_torch_embedding(t, self.cfg.time_embed_dim, x.dtype))
        h = self.stem(x)
        skips = []
        for k, stage in enumerate(self.enc):
            h = stage(h, temb)
            skips.append(h)
            if k < len(self.down):
                h = self.down[k](h)
        h = self.mid(h, temb)
        taps = []
        for j, stage in enumerate(self.dec):
            if j > 0:
                h = self.up[j - 1](h)
            h = stage(torch.cat([h, skips[-1 - j]], dim=1), temb)
            taps.append(h)
        eps = self.head(h)
        return (eps, taps) if return_taps else eps


def build_denoiser(cfg: DenoiserConfig, seed: int) -> UNetDenoiser:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = UNetDenoiser(cfg)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _as_batch(x_t, cfg: DenoiserConfig):
    arr = torch.as_tensor(np.asarray(x_t)) if not isinstance(x_t, torch.Tensor) else x_t
    single = arr.dim() == 3
    if single:
        arr = arr[None]
    expected = (cfg.patch_size, cfg.patch_size, cfg.in_channels)
    if arr.dim() != 4 or tuple(arr.shape[1:]) != expected:
        raise ValueError(f"expected input shape {expected} (optionally batched), got {tuple(arr.shape)}")
    return arr.permute(0, 3, 1, 2), single


@torch.no_grad()
def predict_noise(model: UNetDenoiser, x_t, t, want_taps: bool = False) -> DenoiserOutput:
    """Inference wrapper over channel-last arrays ``[P, P, C]`` or ``[N, P, P, C]``."""
    model.eval()
    x, single = _as_batch(x_t, model.cfg)
    x = x.to(next(model.parameters()).dtype)
    tt = torch.as_tensor(np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],)).copy())
    eps, taps = model(x, tt, return_taps=True)
    to_np = lambda a: (a.permute(0, 2, 3, 1).numpy()[0] if single else a.permute(0, 2, 3, 1).numpy())
    return DenoiserOutput(eps_pred=to_np(eps), taps=[to_np(a) for a in taps] if want_taps else None)


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_state_arrays(model: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    own = model.state_dict()
    missing = sorted(set(own) - set(arrays))
    unexpected = sorted(set(arrays) - set(own))
    if missing or unexpected:
        raise KeyError(f"weight names do not match model: missing={missing} unexpected={unexpected}")
    for k, v in own.items():
        if tuple(v.shape) != arrays[k].shape:
            raise ValueError(f"weight {k}: expected shape {tuple(v.shape)}, got {arrays[k].shape}")
    model.load_state_dict({k: torch.as_tensor(arrays[k]) for k in own})

