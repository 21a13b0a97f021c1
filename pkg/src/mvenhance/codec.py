"""Tiny latent image codec: frozen encoder to H/8 x W/8 x d grids, decoder with
trainable low-rank adapters.

The encoder is variational during pretraining only; at use time the mean
latent is taken so encode/decode are deterministic. After pretraining the
whole base codec is frozen and only the decoder adapters (zero-initialized,
so initially an exact no-op) remain trainable.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

log = logging.getLogger(__name__)


class CodecError(ValueError):
    pass


class LoRAConv2d(nn.Module):
    """Frozen conv with a trainable low-rank additive delta.

    delta(x) = scaling * up(down(x)); up is zero-initialized so the wrapped
    layer starts bit-identical to the base conv.
    """

    def __init__(self, base: nn.Conv2d, rank: int = 4, alpha: float | None = None):
        super().__init__()
        if rank < 1 or rank > min(base.in_channels, base.out_channels):
            raise CodecError(f"rank {rank} out of range for {base}")
        self.base = base
        self.rank = rank
        self.scaling = (alpha if alpha is not None else float(rank)) / rank
        kw = dict(dtype=base.weight.dtype)
        self.down = nn.Conv2d(base.in_channels, rank, base.kernel_size,
                              stride=base.stride, padding=base.padding, bias=False, **kw)
        self.up = nn.Conv2d(rank, base.out_channels, 1, bias=False, **kw)
        nn.init.zeros_(self.up.weight)

    def forward(self, x: torch.Tensor, use_adapter: bool = True) -> torch.Tensor:
        out = self.base(x)
        if use_adapter:
            out = out + self.scaling * self.up(self.down(x))
        return out

    def adapter_parameters(self):
        yield from self.down.parameters()
        yield from self.up.parameters()


class LatentCodec(nn.Module):
    """Conv VAE with an exact 8x spatial downscale (H, W must be multiples of 8)."""

    def __init__(self, d: int = 8, rank: int = 4, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.d = d
        self.rank = rank
        kw = dict(dtype=dtype)
        self.enc = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1, **kw), nn.GroupNorm(8, 32, **kw), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1, **kw), nn.GroupNorm(8, 64, **kw), nn.SiLU(),
            nn.Conv2d(64, 96, 3, stride=2, padding=1, **kw), nn.GroupNorm(8, 96, **kw), nn.SiLU(),
            nn.Conv2d(96, 96, 3, padding=1, **kw), nn.GroupNorm(8, 96, **kw), nn.SiLU(),
            nn.Conv2d(96, 2 * d, 3, padding=1, **kw),
        )
        # start near-deterministic: bias the log-variance half of the output
        # low so early sampled latents stay close to the mean
        nn.init.zeros_(self.enc[-1].weight)
        nn.init.constant_(self.enc[-1].bias[d:], -6.0)
        # linear shortcut: an 8x average pool feeds the latent mean through a
        # 1x1 conv initialized to copy RGB into the first three channels, so
        # the untrained codec already reproduces a low-pass image and the conv
        # stacks only have to learn the residual detail
        self.enc_skip = nn.Conv2d(3, d, 1, **kw)
        nn.init.zeros_(self.enc_skip.weight)
        nn.init.zeros_(self.enc_skip.bias)
        with torch.no_grad():
            for i in range(3):
                self.enc_skip.weight[i, i, 0, 0] = 1.0
        def adapt(conv: nn.Conv2d) -> LoRAConv2d:
            # rank is capped by the layer's channel counts (last conv has 3 outputs)
            return LoRAConv2d(conv, min(rank, conv.in_channels, conv.out_channels))

        # sub-pixel upsampling: convs 1-3 emit 4x channels at the lower
        # resolution and a pixel shuffle expands them 2x spatially, which is
        # markedly cheaper than convolving after upsampling
        self.dec_convs = nn.ModuleList([
            adapt(nn.Conv2d(d, 128, 3, padding=1, **kw)),
            adapt(nn.Conv2d(128, 64 * 4, 3, padding=1, **kw)),
            adapt(nn.Conv2d(64, 48 * 4, 3, padding=1, **kw)),
            adapt(nn.Conv2d(48, 32 * 4, 3, padding=1, **kw)),
            adapt(nn.Conv2d(32, 3, 3, padding=1, **kw)),
        ])
        self.shuffle = nn.PixelShuffle(2)
        self.dec_norms = nn.ModuleList([
            nn.GroupNorm(8, 128, **kw),
            nn.GroupNorm(8, 64, **kw),
            nn.GroupNorm(8, 48, **kw),
            nn.GroupNorm(8, 32, **kw),
        ])
        # mirror shortcut on the decode side: 1x1 conv back to RGB plus a
        # bilinear 8x upsample; the conv stack is zero-initialized so decoding
        # starts as exactly this low-pass reconstruction
        self.dec_skip = adapt(nn.Conv2d(d, 3, 1, **kw))
        nn.init.zeros_(self.dec_skip.base.weight)
        nn.init.zeros_(self.dec_skip.base.bias)
        with torch.no_grad():
            for i in range(3):
                self.dec_skip.base.weight[i, i, 0, 0] = 1.0
        nn.init.zeros_(self.dec_convs[-1].base.weight)
        nn.init.zeros_(self.dec_convs[-1].base.bias)

    @staticmethod
    def _check_dims(h: int, w: int) -> None:
        if h % 8 or w % 8:
            raise CodecError(f"image dims ({h}, {w}) must be multiples of 8")

    def encode_dist(self, images: torch.Tensor):
        """images (V, 3, H, W) -> (mu, logvar), each (V, d, H/8, W/8)."""
        self._check_dims(images.shape[-2], images.shape[-1])
        mu, logvar = self.enc(images).chunk(2, dim=1)
        mu = mu + self.enc_skip(F.avg_pool2d(images, 8))
        return mu, torch.clamp(logvar, -30.0, 4.0)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Deterministic mean latent; no gradient flows into the encoder."""
        with torch.no_grad():
            mu, _ = self.encode_dist(images)
        return mu

    def decode(self, z: torch.Tensor, use_adapters: bool = True) -> torch.Tensor:
        h = z
        for i, conv in enumerate(self.dec_convs):
            h = conv(h, use_adapter=use_adapters)
            if 1 <= i <= 3:
                h = self.shuffle(h)
            if i < len(self.dec_convs) - 1:
                h = F.silu(self.dec_norms[i](h))
        base = F.interpolate(self.dec_skip(z, use_adapter=use_adapters),
                             scale_factor=8, mode="bilinear", align_corners=False)
        return h + base

    def base_parameters(self):
        for name, p in self.named_parameters():
            if ".up." not in name and ".down." not in name:
                yield p

    def adapter_parameters(self):
        for conv in self.dec_convs:
            yield from conv.adapter_parameters()
        yield from self.dec_skip.adapter_parameters()

    def freeze_base(self) -> None:
        for p in self.base_parameters():
            p.requires_grad_(False)
        for p in self.adapter_parameters():
            p.requires_grad_(True)

    def encoder_checksum(self) -> str:
        h = hashlib.sha256()
        for p in list(self.enc.parameters()) + list(self.enc_skip.parameters()):
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class CodecTrainConfig:
    d: int = 8
    rank: int = 4
    steps: int = 1200
    batch_size: int = 8
    lr: float = 5e-4
    kl_weight: float = 1e-6
    holdout_frac: float = 0.1
    gate_db: float = 28.0
    seed: int = 0


def _psnr_t(a: torch.Tensor, b: torch.Tensor) -> float:
    mse = float(torch.mean((a - b) ** 2))
    if mse < 1e-12:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def pretrain_codec(corpus: list[np.ndarray], config: CodecTrainConfig = CodecTrainConfig(),
                   dtype: torch.dtype = torch.float32):
    """Train the codec on rendered images and gate on held-out PSNR.

    corpus: list of (H, W, 3) float arrays in [0, 1], at least 100 images.
    Returns (codec, report); report["met_gate"] is False when the held-out
    PSNR misses the configured threshold (logged, never silently accepted).
    The encoder is frozen on return.
    """
    if len(corpus) < 100:
        raise CodecError(f"corpus must hold >= 100 images, got {len(corpus)}")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(corpus))
    n_hold = max(1, int(round(config.holdout_frac * len(corpus))))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]

    stack = np.stack(corpus).astype(np.float32).transpose(0, 3, 1, 2)
    data = torch.from_numpy(stack).to(dtype)
    train_set, hold_set = data[train_idx], data[hold_idx]

    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        codec = LatentCodec(d=config.d, rank=config.rank, dtype=dtype)
    gen = torch.Generator().manual_seed(config.seed + 1)

    opt = torch.optim.Adam(codec.base_parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=config.steps, eta_min=0.02 * config.lr)
    final_loss = float("nan")
    for step in range(config.steps):
        idx = torch.from_numpy(rng.integers(0, len(train_set), size=config.batch_size))
        batch = train_set[idx]
        mu, logvar = codec.encode_dist(batch)
        eps = torch.randn(mu.shape, generator=gen, dtype=mu.dtype)
        z = mu + torch.exp(0.5 * logvar) * eps
        recon = codec.decode(z, use_adapters=False)
        rec_loss = F.mse_loss(recon, batch)
        kl = 0.5 * torch.mean(mu ** 2 + torch.exp(logvar) - 1.0 - logvar)
        loss = rec_loss + config.kl_weight * kl
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        final_loss = float(loss.detach())

    codec.freeze_base()
    with torch.no_grad():
        recon = codec.decode(codec.encode(hold_set), use_adapters=False)
    psnrs = [_psnr_t(recon[i], hold_set[i]) for i in range(len(hold_set))]
    psnr_holdout = float(np.mean(psnrs))
    met_gate = psnr_holdout >= config.gate_db
    if not met_gate:
        log.warning("codec pretraining missed the PSNR gate: %.2f dB < %.2f dB",
                    psnr_holdout, config.gate_db)
    report = {"psnr_holdout": psnr_holdout, "met_gate": met_gate,
              "final_loss": final_loss, "n_holdout": int(n_hold)}
    return codec, report
