"""Image quality metrics and degradation-over-time reporting.

numpy-facing wrappers around the torch loss kernels, plus a small reporting
layer that groups per-view rows into equal-width timestamp buckets and emits
deterministic CSV / text-table / plot artifacts. The learned-feature distance
is always labeled "perceptual (proxy)" to keep its nature explicit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import losses

PSNR_EPS = 1e-12


class MetricsError(ValueError):
    pass


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images; inf when MSE < 1e-12."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < PSNR_EPS:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _to_chw(img: np.ndarray) -> torch.Tensor:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise MetricsError(f"expected (H, W, 3) image, got {img.shape}")
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity on the luma channel (valid windows only)."""
    _check_pair(a, b)
    return float(losses.ssim(_to_chw(a), _to_chw(b)))


def perceptual_proxy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Distance in the frozen random-feature space; labeled perceptual (proxy)."""
    _check_pair(a, b)
    proxy = losses.perceptual_proxy(torch.float64)
    return float(proxy(_to_chw(a), _to_chw(b)))


@dataclass(frozen=True)
class MetricRow:
    timestamp: float
    view_id: int
    psnr_distorted: float
    psnr_enhanced: float
    ssim_distorted: float
    ssim_enhanced: float
    perceptual_distorted: float
    perceptual_enhanced: float


def evaluate_view(gt: np.ndarray, distorted: np.ndarray, enhanced: np.ndarray,
                  timestamp: float, view_id: int) -> MetricRow:
    return MetricRow(
        timestamp=float(timestamp), view_id=int(view_id),
        psnr_distorted=psnr(distorted, gt), psnr_enhanced=psnr(enhanced, gt),
        ssim_distorted=ssim(distorted, gt), ssim_enhanced=ssim(enhanced, gt),
        perceptual_distorted=perceptual_proxy_distance(distorted, gt),
        perceptual_enhanced=perceptual_proxy_distance(enhanced, gt),
    )


def bucket_by_time(rows: list[MetricRow], horizon: float, n_buckets: int = 5) -> dict[int, list[MetricRow]]:
    """Group rows into n_buckets equal-width bins over [0, horizon].

    Bucket ids are 1-based; empty buckets are absent from the result.
    t == horizon lands in the last bucket. Out-of-range timestamps are
    rejected.
    """
    if horizon <= 0 or n_buckets < 1:
        raise MetricsError("horizon must be positive and n_buckets >= 1")
    out: dict[int, list[MetricRow]] = {}
    width = horizon / n_buckets
    for r in rows:
        if not (0.0 <= r.timestamp <= horizon):
            raise MetricsError(f"timestamp {r.timestamp} outside [0, {horizon}]")
        b = min(int(r.timestamp // width) + 1, n_buckets)
        out.setdefault(b, []).append(r)
    return {k: out[k] for k in sorted(out)}


_FIELDS = ["psnr_distorted", "psnr_enhanced", "ssim_distorted", "ssim_enhanced",
           "perceptual_distorted", "perceptual_enhanced"]
_LABELS = {"perceptual_distorted": "perceptual (proxy) distorted",
           "perceptual_enhanced": "perceptual (proxy) enhanced"}


def bucket_means(buckets: dict[int, list[MetricRow]]) -> dict[int, dict[str, float]]:
    return {b: {f: float(np.mean([getattr(r, f) for r in rows])) for f in _FIELDS}
            for b, rows in buckets.items()}


def report(rows: list[MetricRow], horizon: float, n_buckets: int = 5,
           fmt: str = "csv", plot_path=None) -> str:
    """Render bucketed means as csv, an aligned text table, or a plot file."""
    buckets = bucket_by_time(rows, horizon, n_buckets)
    means = bucket_means(buckets)
    headers = ["bucket", "n"] + [_LABELS.get(f, f.replace("_", " ")) for f in _FIELDS]
    table = [[str(b), str(len(buckets[b]))] + [f"{means[b][f]:.6f}" for f in _FIELDS]
             for b in means]
    if fmt == "csv":
        lines = [",".join(headers)] + [",".join(r) for r in table]
        return "\n".join(lines) + "\n"
    if fmt == "table":
        widths = [max(len(h), *(len(r[i]) for r in table)) if table else len(h)
                  for i, h in enumerate(headers)]
        def fmt_row(cells):
            return "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return "\n".join([fmt_row(headers)] + [fmt_row(r) for r in table]) + "\n"
    if fmt == "plot":
        if plot_path is None:
            raise MetricsError("plot format requires plot_path")
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        xs = sorted(means)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs, [means[b]["psnr_distorted"] for b in xs], "o-", label="distorted")
        ax.plot(xs, [means[b]["psnr_enhanced"] for b in xs], "s-", label="enhanced")
        ax.set_xlabel("time bucket")
        ax.set_ylabel("PSNR (dB)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(plot_path, dpi=100)
        plt.close(fig)
        return str(plot_path)
    raise MetricsError(f"unknown report format: {fmt!r}")
