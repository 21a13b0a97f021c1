"""Multi-view single-step denoiser.

All views of a packet are processed jointly: per-view convolutions plus
attention blocks that flatten (view, height, width) into one token sequence at
the two coarsest resolutions. Views carry no absolute index embedding; they
are distinguished only through their condition features, which is what makes
the model permutation-equivariant over views. Spatial positions use fixed 2D
sinusoidal encodings shared across views.

Degraded target renders are treated as the noisy state at a fixed operating
timestep (no Gaussian noise is added on top); one forward pass predicts v,
from which the clean latent is recovered algebraically and decoded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .codec import LatentCodec
from .packet import Packet
from .priors import ConditionEncoder, prior_stack


class DenoiseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Noise schedule and v-prediction algebra.

def _cosine_alphas_bar(timesteps: int, s: float = 0.008) -> np.ndarray:
    t = np.arange(timesteps + 1, dtype=np.float64)
    f = np.cos((t / timesteps + s) / (1.0 + s) * np.pi / 2.0) ** 2
    return f / f[0]


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int = 1000
    tau: int = 200
    alphas_bar: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.alphas_bar is None:
            object.__setattr__(self, "alphas_bar", _cosine_alphas_bar(self.timesteps))
        if not (1 <= self.tau <= self.timesteps):
            raise DenoiseError(f"tau {self.tau} outside [1, {self.timesteps}]")

    def check_t(self, t: int) -> int:
        t = int(t)
        if not (0 <= t <= self.timesteps):
            raise DenoiseError(f"timestep {t} outside [0, {self.timesteps}]")
        return t

    def coeffs(self, t: int) -> tuple[float, float]:
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) as float64 scalars."""
        t = self.check_t(t)
        ab = float(self.alphas_bar[t])
        return math.sqrt(ab), math.sqrt(1.0 - ab)


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t: int,
              schedule: NoiseSchedule) -> torch.Tensor:
    """Forward process: z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    if z0.shape != eps.shape:
        raise DenoiseError("z0/eps shape mismatch")
    a, b = schedule.coeffs(t)
    return a * z0 + b * eps


def v_target(z0: torch.Tensor, eps: torch.Tensor, t: int,
             schedule: NoiseSchedule) -> torch.Tensor:
    """v = sqrt(ab_t) eps - sqrt(1 - ab_t) z0."""
    if z0.shape != eps.shape:
        raise DenoiseError("z0/eps shape mismatch")
    a, b = schedule.coeffs(t)
    return a * eps - b * z0


def recover_z0(z_t: torch.Tensor, v: torch.Tensor, t: int,
               schedule: NoiseSchedule) -> torch.Tensor:
    """Invert the v parameterization: z0 = sqrt(ab_t) z_t - sqrt(1 - ab_t) v."""
    a, b = schedule.coeffs(t)
    return a * z_t - b * v


# ---------------------------------------------------------------------------
# Network blocks.

def _groups(c: int) -> int:
    return min(8, c)


class ResBlock(nn.Module):
    def __init__(self, channels: int, dtype: torch.dtype):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(channels), channels, dtype=dtype)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, dtype=dtype)
        self.norm2 = nn.GroupNorm(_groups(channels), channels, dtype=dtype)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, dtype=dtype)

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


_PE_CACHE: dict = {}


def spatial_pos_encoding(channels: int, h: int, w: int, dtype: torch.dtype) -> torch.Tensor:
    """Fixed 2D sinusoidal encoding (channels, h, w), identical for every view."""
    key = (channels, h, w, dtype)
    if key not in _PE_CACHE:
        if channels % 4:
            raise DenoiseError("positional encoding needs channels divisible by 4")
        quarter = channels // 4
        freqs = torch.exp(-math.log(100.0) * torch.arange(quarter, dtype=torch.float64) / max(quarter - 1, 1))
        ys = torch.arange(h, dtype=torch.float64)[:, None] * freqs[None, :]   # (h, q)
        xs = torch.arange(w, dtype=torch.float64)[:, None] * freqs[None, :]   # (w, q)
        pe = torch.cat([
            torch.sin(ys)[:, None, :].expand(h, w, quarter),
            torch.cos(ys)[:, None, :].expand(h, w, quarter),
            torch.sin(xs)[None, :, :].expand(h, w, quarter),
            torch.cos(xs)[None, :, :].expand(h, w, quarter),
        ], dim=-1).permute(2, 0, 1).contiguous()
        _PE_CACHE[key] = pe.to(dtype)
    return _PE_CACHE[key]


class JointAttention(nn.Module):
    """Self-attention over the concatenation of all views' spatial positions."""

    def __init__(self, channels: int, heads: int, dtype: torch.dtype):
        super().__init__()
        if channels % heads:
            raise DenoiseError("channels must divide evenly into heads")
        self.heads = heads
        self.norm = nn.LayerNorm(channels, dtype=dtype)
        self.qkv = nn.Linear(channels, 3 * channels, dtype=dtype)
        self.proj = nn.Linear(channels, channels, dtype=dtype)

    def forward(self, x):
        V, C, h, w = x.shape
        pe = spatial_pos_encoding(C, h, w, x.dtype)
        tokens = (x + pe).permute(0, 2, 3, 1).reshape(1, V * h * w, C)
        q, k, v = self.qkv(self.norm(tokens)).chunk(3, dim=-1)
        hd = C // self.heads

        def split(t):
            return t.view(1, -1, self.heads, hd).transpose(1, 2)

        attn = F.scaled_dot_product_attention(split(q), split(k), split(v))
        attn = attn.transpose(1, 2).reshape(1, V * h * w, C)
        out = self.proj(attn).view(V, h, w, C).permute(0, 3, 1, 2)
        return x + out


class MultiViewDenoiser(nn.Module):
    """Three-level encoder-decoder with skip connections; joint attention at
    the two coarsest levels."""

    def __init__(self, d: int = 8, widths: tuple[int, int, int] = (32, 64, 128),
                 heads: int = 4, dtype: torch.dtype = torch.float32):
        super().__init__()
        w0, w1, w2 = widths
        self.conv_in = nn.Conv2d(d, w0, 3, padding=1, dtype=dtype)
        self.block0 = ResBlock(w0, dtype)
        self.down0 = nn.Conv2d(w0, w1, 3, stride=2, padding=1, dtype=dtype)
        self.block1 = ResBlock(w1, dtype)
        self.attn1 = JointAttention(w1, heads, dtype)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1, dtype=dtype)
        self.mid1 = ResBlock(w2, dtype)
        self.attn_mid = JointAttention(w2, heads, dtype)
        self.mid2 = ResBlock(w2, dtype)
        self.up1 = nn.Conv2d(w2 + w1, w1, 3, padding=1, dtype=dtype)
        self.block_up1 = ResBlock(w1, dtype)
        self.attn_up1 = JointAttention(w1, heads, dtype)
        self.up0 = nn.Conv2d(w1 + w0, w0, 3, padding=1, dtype=dtype)
        self.block_up0 = ResBlock(w0, dtype)
        self.norm_out = nn.GroupNorm(_groups(w0), w0, dtype=dtype)
        self.conv_out = nn.Conv2d(w0, d, 3, padding=1, dtype=dtype)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h, w = z.shape[-2:]
        if h % 4 or w % 4 or h < 4 or w < 4:
            raise DenoiseError(f"latent grid ({h}, {w}) must be a multiple of 4 "
                               "and at least 4x4 (two 2x downsampling levels)")
        h0 = self.block0(self.conv_in(z))
        h1 = self.attn1(self.block1(self.down0(h0)))
        h2 = self.mid2(self.attn_mid(self.mid1(self.down1(h1))))
        u1 = F.interpolate(h2, scale_factor=2, mode="nearest")
        u1 = self.attn_up1(self.block_up1(self.up1(torch.cat([u1, h1], dim=1))))
        u0 = F.interpolate(u1, scale_factor=2, mode="nearest")
        u0 = self.block_up0(self.up0(torch.cat([u0, h0], dim=1)))
        return self.conv_out(F.silu(self.norm_out(u0)))


# ---------------------------------------------------------------------------
# Full enhancer: codec + condition encoder + denoiser + guidance.

@dataclass(frozen=True)
class EnhancerConfig:
    latent_d: int = 8
    widths: tuple[int, int, int] = (32, 64, 128)
    heads: int = 4
    lora_rank: int = 4
    timesteps: int = 1000
    tau: int = 200
    cfg_scale: float = 2.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "latent_d": self.latent_d, "widths": list(self.widths), "heads": self.heads,
            "lora_rank": self.lora_rank, "timesteps": self.timesteps, "tau": self.tau,
            "cfg_scale": self.cfg_scale, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnhancerConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


def packet_to_tensors(packet: Packet, dtype: torch.dtype = torch.float32) -> dict:
    """Convert a packet to channels-first tensors for the model."""
    packet.validate()
    images = torch.from_numpy(
        np.stack([v.image.transpose(2, 0, 1) for v in packet.views])).to(dtype)
    priors = torch.from_numpy(
        np.stack([prior_stack_of(v) for v in packet.views])).to(dtype)
    masks = torch.from_numpy(
        np.stack([v.mask_grid()[None] for v in packet.views])).to(dtype)
    is_target = torch.tensor([v.is_target for v in packet.views], dtype=torch.bool)
    gts = [v.gt_image for v in packet.views if v.is_target and v.gt_image is not None]
    gt = None
    if len(gts) == int(is_target.sum()):
        gt = torch.from_numpy(np.stack([g.transpose(2, 0, 1) for g in gts])).to(dtype)
    return {"images": images, "priors": priors, "masks": masks,
            "is_target": is_target, "gt": gt}


def prior_stack_of(view) -> np.ndarray:
    from .render.raster import CMap

    cmap = CMap(view.cmap[:, :, :3].astype(np.float64), view.cmap[:, :, 3].astype(np.float64))
    return prior_stack(cmap, view.plucker.astype(np.float64))


class Enhancer(nn.Module):
    """Denoiser + condition encoder + codec, with classifier-free guidance."""

    def __init__(self, config: EnhancerConfig, codec: LatentCodec,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if codec.d != config.latent_d:
            raise DenoiseError("codec latent width does not match enhancer config")
        self.config = config
        self.schedule = NoiseSchedule(config.timesteps, config.tau)
        self.codec = codec
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self.unet = MultiViewDenoiser(config.latent_d, config.widths,
                                          config.heads, dtype)
            self.psi = ConditionEncoder(config.latent_d, dtype)
        self.null_cond = nn.Parameter(torch.zeros(config.latent_d, dtype=dtype))

    def trainable_parameters(self):
        yield from self.unet.parameters()
        yield from self.psi.parameters()
        yield self.null_cond
        yield from self.codec.adapter_parameters()

    def conditions(self, priors: torch.Tensor, masks: torch.Tensor,
                   drop_cmap: bool = False, drop_pose: bool = False,
                   use_null: bool = False) -> torch.Tensor:
        """Condition features (V, d, H/8, W/8); the learned null vector stands
        in when both geometric signals are dropped."""
        V = priors.shape[0]
        h, w = masks.shape[-2:]
        if use_null or (drop_cmap and drop_pose):
            return self.null_cond.view(1, -1, 1, 1).expand(V, -1, h, w)
        if drop_cmap or drop_pose:
            priors = priors.clone()
            if drop_cmap:
                priors[:, :4] = 0
            if drop_pose:
                priors[:, 4:] = 0
        return self.psi(priors, masks)

    def denoise(self, latents: torch.Tensor, conditions: torch.Tensor,
                is_target: torch.Tensor) -> torch.Tensor:
        """Jointly denoise a packet; returns predicted v for target views only,
        in their order of appearance."""
        if latents.shape != conditions.shape:
            raise DenoiseError(f"latent shape {tuple(latents.shape)} != condition "
                               f"shape {tuple(conditions.shape)}")
        v_all = self.unet(latents + conditions)
        return v_all[is_target]

    def cfg_denoise(self, latents: torch.Tensor, priors: torch.Tensor,
                    masks: torch.Tensor, is_target: torch.Tensor,
                    scale: float) -> torch.Tensor:
        """uncond + scale * (cond - uncond); scale=1 is exactly the conditional
        pass, scale=0 exactly the unconditional one."""
        if scale == 1.0:
            return self.denoise(latents, self.conditions(priors, masks), is_target)
        if scale == 0.0:
            return self.denoise(latents, self.conditions(priors, masks, use_null=True),
                                is_target)
        v_c = self.denoise(latents, self.conditions(priors, masks), is_target)
        v_u = self.denoise(latents, self.conditions(priors, masks, use_null=True),
                           is_target)
        return v_u + scale * (v_c - v_u)

    @torch.no_grad()
    def enhance(self, packet: Packet, tau: int | None = None,
                cfg_scale: float | None = None, conditioning: bool = True) -> np.ndarray:
        """Enhance all target views of a packet; returns (M, H, W, 3) float32.

        Encoded distorted targets are taken as the noisy state at tau, one
        guided pass predicts v, the clean latent is recovered algebraically
        and decoded through the adapted decoder. References are encoded as
        conditioning context but never decoded.
        """
        tau = self.schedule.tau if tau is None else self.schedule.check_t(tau)
        cfg_scale = self.config.cfg_scale if cfg_scale is None else cfg_scale
        dtype = self.null_cond.dtype
        t = packet_to_tensors(packet, dtype)
        latents = self.codec.encode(t["images"])
        if conditioning:
            v = self.cfg_denoise(latents, t["priors"], t["masks"], t["is_target"], cfg_scale)
        else:
            v = self.denoise(latents, self.conditions(t["priors"], t["masks"], use_null=True),
                             t["is_target"])
        z0 = recover_z0(latents[t["is_target"]], v, tau, self.schedule)
        imgs = self.codec.decode(z0, use_adapters=True).clamp(0.0, 1.0)
        return imgs.permute(0, 2, 3, 1).cpu().numpy().astype(np.float32)
