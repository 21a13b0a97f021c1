"""Differentiable image losses shared by the trainer and the evaluator.

The perceptual term is a seed-pinned random-feature proxy: squared distance in
the feature space of a small frozen convolutional net with fixed random
weights (plus the raw-pixel layer, so the distance is zero only for identical
inputs). It preserves the monotonicity a perceptual loss needs at this scale
but is NOT a pretrained perceptual metric; reports label it "perceptual
(proxy)".
"""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

# Grayscale conversion (Rec. 601 luma) and windowed-similarity constants on
# the [0, 1] range.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

PERCEPTUAL_SEED = 20240817


def _gaussian_window(dtype: torch.dtype) -> torch.Tensor:
    half = SSIM_WINDOW // 2
    x = torch.arange(-half, half + 1, dtype=torch.float64)
    g = torch.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    g = g / g.sum()
    return (g[:, None] * g[None, :]).to(dtype)[None, None]


def _to_gray(img: torch.Tensor) -> torch.Tensor:
    """(..., 3, H, W) -> (..., 1, H, W)."""
    w = torch.tensor(LUMA_WEIGHTS, dtype=img.dtype).view(3, 1, 1)
    return (img * w).sum(dim=-3, keepdim=True)


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean windowed structural similarity of two (3, H, W) images in [0, 1].

    11x11 Gaussian window (sigma 1.5), valid windows only.
    """
    if a.shape != b.shape:
        raise ValueError("image shape mismatch")
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = _to_gray(a.unsqueeze(0) if a.dim() == 3 else a)
    y = _to_gray(b.unsqueeze(0) if b.dim() == 3 else b)
    win = _gaussian_window(x.dtype)
    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    mu_x2, mu_y2, mu_xy = mu_x ** 2, mu_y ** 2, mu_x * mu_y
    var_x = F.conv2d(x * x, win) - mu_x2
    var_y = F.conv2d(y * y, win) - mu_y2
    cov = F.conv2d(x * y, win) - mu_xy
    num = (2 * mu_xy + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x2 + mu_y2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return (num / den).mean()


class PerceptualProxy(nn.Module):
    """Frozen random-feature extractor; weights depend only on the pinned seed."""

    def __init__(self, dtype: torch.dtype = torch.float32):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(PERCEPTUAL_SEED)
            self.convs = nn.ModuleList([
                nn.Conv2d(3, 8, 3, stride=2, padding=1, dtype=dtype),
                nn.Conv2d(8, 16, 3, stride=2, padding=1, dtype=dtype),
                nn.Conv2d(16, 32, 3, stride=2, padding=1, dtype=dtype),
            ])
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, img: torch.Tensor) -> list[torch.Tensor]:
        x = img.unsqueeze(0) if img.dim() == 3 else img
        feats = [x]
        for conv in self.convs:
            x = torch.tanh(conv(x))
            feats.append(x)
        return feats

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Mean squared feature distance, averaged over layers (raw pixels
        count as layer 0, so the distance is 0 iff the inputs are identical)."""
        fa, fb = self.features(a), self.features(b)
        dists = [F.mse_loss(x, y) for x, y in zip(fa, fb)]
        return torch.stack(dists).mean()


_PROXY_CACHE: dict[torch.dtype, PerceptualProxy] = {}


def perceptual_proxy(dtype: torch.dtype = torch.float32) -> PerceptualProxy:
    if dtype not in _PROXY_CACHE:
        _PROXY_CACHE[dtype] = PerceptualProxy(dtype)
    return _PROXY_CACHE[dtype]


def pixel_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Equal-weighted composite: (MSE + (1 - SSIM) + perceptual proxy) / 3."""
    if pred.shape != gt.shape:
        raise ValueError("image shape mismatch")
    mse = F.mse_loss(pred, gt)
    ssim_term = 1.0 - ssim(pred, gt)
    perc = perceptual_proxy(pred.dtype)(pred, gt)
    return (mse + ssim_term + perc) / 3.0


def latent_loss(pred_v: torch.Tensor, target_v: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all target views' latent grids (mean reduction,
    so packet-size variation does not rescale gradients)."""
    if pred_v.shape != target_v.shape:
        raise ValueError("latent shape mismatch")
    return F.mse_loss(pred_v, target_v)
