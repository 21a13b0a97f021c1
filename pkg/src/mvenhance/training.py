"""End-to-end optimization of the enhancer.

Each step: v-prediction loss at the latent level on all target views, plus the
composite pixel loss on a randomly decoded subset of targets (memory
amortization: latent supervision stays dense, pixel supervision is sampled).
Condition dropout (independently for coordinate maps and pose rays) trains the
unconditional branch used by classifier-free guidance.

The encoder is frozen; the denoiser, condition encoder, null condition, and
decoder adapters are updated. All randomness flows through one replayable
numpy generator whose state is checkpointed, so an interrupted run resumed
from a checkpoint reproduces the uninterrupted run exactly.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .codec import LatentCodec
from .container import config_hash, load_container, save_container
from .denoiser import Enhancer, EnhancerConfig, packet_to_tensors, recover_z0
from .losses import latent_loss, pixel_loss
from .packet import Packet

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
METRICS_HEADER = "iteration,latent_loss,pixel_loss,total_loss,grad_norm,wall_time_s"


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr: float = 1e-4
    grad_clip: float = 1.0
    decode_subset_k: int = 2
    dropout_prob: float = 0.15
    tau: int = 200
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 500
    packet_size_range: tuple[int, int] = (8, 12)

    def __post_init__(self):
        if self.decode_subset_k < 1:
            raise TrainError("decode_subset_k must be >= 1")
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise TrainError("dropout_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations, "lr": self.lr, "grad_clip": self.grad_clip,
            "decode_subset_k": self.decode_subset_k, "dropout_prob": self.dropout_prob,
            "tau": self.tau, "seed": self.seed, "log_every": self.log_every,
            "checkpoint_every": self.checkpoint_every,
            "packet_size_range": list(self.packet_size_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["packet_size_range"] = tuple(d["packet_size_range"])
        return cls(**d)


def sample_decode_subset(n_targets: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct uniform target indices, ascending."""
    if not (1 <= k <= n_targets):
        raise TrainError(f"k={k} outside [1, n_targets={n_targets}]")
    return np.sort(rng.choice(n_targets, size=k, replace=False))


def train_step(enhancer: Enhancer, tensors: dict, optimizer: torch.optim.Optimizer,
               config: TrainConfig, rng: np.random.Generator) -> dict:
    """One optimization step on a prepared packet; returns loss metrics.

    A non-finite loss aborts the step (reported, parameters untouched).
    """
    if tensors["gt"] is None:
        raise TrainError("training packet carries no ground-truth target images")
    drop_cmap = bool(rng.random() < config.dropout_prob)
    drop_pose = bool(rng.random() < config.dropout_prob)

    latents = enhancer.codec.encode(tensors["images"])
    cond = enhancer.conditions(tensors["priors"], tensors["masks"],
                               drop_cmap=drop_cmap, drop_pose=drop_pose)
    v_pred = enhancer.denoise(latents, cond, tensors["is_target"])

    tau = enhancer.schedule.check_t(config.tau)
    a, b = enhancer.schedule.coeffs(tau)
    z_tau = latents[tensors["is_target"]]
    z0_clean = enhancer.codec.encode(tensors["gt"])
    v_tgt = (a * z_tau - z0_clean) / b

    l_latent = latent_loss(v_pred, v_tgt)

    n_targets = int(tensors["is_target"].sum())
    k = min(config.decode_subset_k, n_targets)
    subset = sample_decode_subset(n_targets, k, rng)
    z0_hat = recover_z0(z_tau[subset], v_pred[subset], tau, enhancer.schedule)
    decoded = enhancer.codec.decode(z0_hat, use_adapters=True)
    l_pixel = torch.stack(
        [pixel_loss(decoded[j], tensors["gt"][int(i)]) for j, i in enumerate(subset)]
    ).mean()

    total = l_latent + l_pixel
    if not torch.isfinite(total):
        log.warning("non-finite loss at this step; update skipped")
        return {"latent_loss": float(l_latent.detach()), "pixel_loss": float(l_pixel.detach()),
                "total_loss": float(total.detach()), "grad_norm": float("nan"),
                "skipped": True}

    optimizer.zero_grad()
    total.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(
        [p for g in optimizer.param_groups for p in g["params"]], config.grad_clip)
    optimizer.step()
    return {"latent_loss": float(l_latent.detach()), "pixel_loss": float(l_pixel.detach()),
            "total_loss": float(total.detach()), "grad_norm": float(grad_norm),
            "skipped": False}


# ---------------------------------------------------------------------------
# Checkpointing.

def _full_config(enhancer: Enhancer, train_config: TrainConfig | None) -> dict:
    return {"enhancer": enhancer.config.to_dict(),
            "train": train_config.to_dict() if train_config else None}


def save_checkpoint(path, enhancer: Enhancer, train_config: TrainConfig | None = None,
                    optimizer: torch.optim.Optimizer | None = None,
                    iteration: int = 0, rng: np.random.Generator | None = None) -> None:
    arrays = {f"model.{k}": v.detach().cpu().numpy()
              for k, v in enhancer.state_dict().items()}
    opt_groups = None
    if optimizer is not None:
        sd = optimizer.state_dict()
        for idx, state in sd["state"].items():
            for key, val in state.items():
                arrays[f"opt.{idx}.{key}"] = (val.detach().cpu().numpy()
                                              if torch.is_tensor(val) else np.asarray(val))
        opt_groups = sd["param_groups"]
    cfg = _full_config(enhancer, train_config)
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "iteration": iteration,
        "opt_param_groups": opt_groups,
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    save_container(path, arrays, meta)


def load_checkpoint(path, dtype: torch.dtype = torch.float32,
                    expected_config: dict | None = None, override: bool = False) -> dict:
    """Rebuild an Enhancer from a checkpoint container.

    When expected_config is given, its hash must match the stored one unless
    override=True.
    """
    arrays, meta = load_container(path)
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise TrainError(f"{path}: unsupported checkpoint format version "
                         f"{meta.get('format_version')}")
    if expected_config is not None and not override:
        if config_hash(expected_config) != meta["config_hash"]:
            raise TrainError(f"{path}: checkpoint config hash mismatch "
                             f"(stored {meta['config_hash'][:12]}...); pass override to force")

    econf = EnhancerConfig.from_dict(meta["config"]["enhancer"])
    codec = LatentCodec(d=econf.latent_d, rank=econf.lora_rank, dtype=dtype)
    enhancer = Enhancer(econf, codec, dtype=dtype)
    state = {k[len("model."):]: torch.from_numpy(v).to(dtype)
             for k, v in arrays.items() if k.startswith("model.")}
    enhancer.load_state_dict(state)
    codec.freeze_base()

    opt_state = {}
    for k, v in arrays.items():
        if k.startswith("opt."):
            _, idx, key = k.split(".", 2)
            opt_state.setdefault(int(idx), {})[key] = torch.from_numpy(v)
    return {
        "enhancer": enhancer,
        "meta": meta,
        "iteration": meta["iteration"],
        "opt_state": opt_state or None,
        "opt_param_groups": meta.get("opt_param_groups"),
        "rng_state": meta.get("rng_state"),
        "train_config": (TrainConfig.from_dict(meta["config"]["train"])
                         if meta["config"].get("train") else None),
    }


def _restore_optimizer(optimizer, opt_state, opt_param_groups) -> None:
    sd = optimizer.state_dict()
    sd["state"] = opt_state
    sd["param_groups"] = opt_param_groups
    optimizer.load_state_dict(sd)


def _fmt(x: float) -> str:
    return repr(float(x))


def train(packets: list[Packet], enhancer: Enhancer, config: TrainConfig,
          out_dir, resume_from=None) -> Path:
    """Training loop over a fixed packet dataset (cycled in order).

    Writes metrics.csv (one row per log_every steps) and periodic checkpoints
    to out_dir; returns the final checkpoint path. resume_from continues an
    interrupted run and reproduces the uninterrupted result bit-exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for p in packets:
        n = len(p.views)
        lo, hi = config.packet_size_range
        if not (2 <= n <= max(hi, 24)):
            raise TrainError(f"packet size {n} unusable")

    dtype = enhancer.null_cond.dtype
    tensors = [packet_to_tensors(p, dtype) for p in packets]
    optimizer = torch.optim.Adam(
        [p for p in enhancer.trainable_parameters()], lr=config.lr)
    rng = np.random.default_rng(config.seed)
    start_iter = 0

    if resume_from is not None:
        loaded = load_checkpoint(resume_from, dtype=dtype,
                                 expected_config=_full_config(enhancer, config))
        enhancer.load_state_dict(loaded["enhancer"].state_dict())
        if loaded["opt_state"] is not None:
            _restore_optimizer(optimizer, loaded["opt_state"], loaded["opt_param_groups"])
        if loaded["rng_state"] is not None:
            rng.bit_generator.state = loaded["rng_state"]
        start_iter = loaded["iteration"]

    csv_path = out_dir / "metrics.csv"
    if start_iter == 0 or not csv_path.exists():
        csv_path.write_text(METRICS_HEADER + "\n")

    t0 = time.monotonic()
    for it in range(start_iter, config.iterations):
        metrics = train_step(enhancer, tensors[it % len(tensors)], optimizer, config, rng)
        step = it + 1
        if step % config.log_every == 0:
            row = ",".join([str(step), _fmt(metrics["latent_loss"]),
                            _fmt(metrics["pixel_loss"]), _fmt(metrics["total_loss"]),
                            _fmt(metrics["grad_norm"]), _fmt(time.monotonic() - t0)])
            with open(csv_path, "a") as f:
                f.write(row + "\n")
        if step % config.checkpoint_every == 0 and step < config.iterations:
            save_checkpoint(out_dir / f"ckpt_{step:06d}.mvck", enhancer, config,
                            optimizer, iteration=step, rng=rng)

    final = out_dir / "ckpt_final.mvck"
    save_checkpoint(final, enhancer, config, optimizer,
                    iteration=config.iterations, rng=rng)
    return final
