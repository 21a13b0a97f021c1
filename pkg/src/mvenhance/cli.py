"""Command-line entry point: one subcommand per pipeline stage plus `demo`.

Every command takes a JSON config (versioned, unknown keys rejected), writes a
config echo next to its outputs, and is deterministic given (config, seed).
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import demo as demo_mod
from . import imgio, metrics
from .codec import CodecError
from .container import ContainerError, canonical_json
from .packet import PacketError, save_packet
from .render import render
from .scene import (SceneError, SceneSpec, TrajectorySpec, corrupt_scene,
                    generate_scene, sample_trajectory, save_scene)
from .training import TrainError, load_checkpoint

log = logging.getLogger(__name__)

CONFIG_FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


_DEFAULTS = {
    "format_version": CONFIG_FORMAT_VERSION,
    "seed": 7,
    "n_gaussians": 40,
    "image_size": 64,
    "ring_radius": 2.6,
    "n_views": 12,
    "severity": 0.6,
    "codec_steps": 1200,
    "train_iterations": 1200,
    "train_lr": 1e-3,
    "severities": [0.2, 0.4, 0.6, 0.8],
    "cfg_scale": 2.0,
    "n_buckets": 5,
    "horizon": 11.0,
}


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    cfg = dict(_DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        if user.get("format_version") != CONFIG_FORMAT_VERSION:
            raise ConfigError(f"{path}: format_version must be {CONFIG_FORMAT_VERSION}, "
                              f"got {user.get('format_version')!r}")
        unknown = sorted(set(user) - set(_DEFAULTS))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys: {unknown}")
        cfg.update(user)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    return cfg


def write_echo(out_dir: Path, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.json").write_text(canonical_json(cfg) + "\n")


def _demo_config(cfg: dict) -> demo_mod.DemoConfig:
    return demo_mod.DemoConfig(
        seed=int(cfg["seed"]), n_gaussians=int(cfg["n_gaussians"]),
        image_size=int(cfg["image_size"]), ring_radius=float(cfg["ring_radius"]),
        codec_steps=int(cfg["codec_steps"]),
        train_iterations=int(cfg["train_iterations"]),
        train_lr=float(cfg["train_lr"]),
        severities=tuple(float(s) for s in cfg["severities"]))


def _scene_and_cams(cfg: dict):
    scene = generate_scene(SceneSpec(count=int(cfg["n_gaussians"]), seed=int(cfg["seed"])))
    cams = sample_trajectory(TrajectorySpec(
        kind="ring", n_views=int(cfg["n_views"]), radius_or_step=float(cfg["ring_radius"]),
        width=int(cfg["image_size"]), height=int(cfg["image_size"])))
    return scene, cams


def cmd_gen(cfg: dict, out: Path) -> int:
    scene, cams = _scene_and_cams(cfg)
    write_echo(out, cfg)
    save_scene(out / "scene.txt", scene)
    cam_rows = [{"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                 "rotation": np.asarray(c.rotation).tolist(),
                 "translation": np.asarray(c.translation).tolist(),
                 "width": c.width, "height": c.height, "timestamp": c.timestamp}
                for c in cams]
    (out / "cameras.json").write_text(canonical_json(cam_rows) + "\n")
    print(f"wrote scene ({len(scene.primitives)} primitives) and {len(cams)} cameras to {out}")
    return EXIT_OK


def cmd_render(cfg: dict, out: Path) -> int:
    scene, cams = _scene_and_cams(cfg)
    corrupted = corrupt_scene(scene, float(cfg["severity"]), int(cfg["seed"]))
    write_echo(out, cfg)
    for i, cam in enumerate(cams):
        for tag, sc in (("clean", scene), ("corrupted", corrupted)):
            rgb = render(sc, cam, mode="rgb")
            cm = render(sc, cam, mode="cmap")
            imgio.save_image(out / f"{tag}_rgb_{i:03d}.npz", rgb.pixels)
            imgio.save_cmap(out / f"{tag}_cmap_{i:03d}.npz", cm.coords, cm.validity)
            imgio.export_png(out / f"{tag}_rgb_{i:03d}.png", rgb.pixels)
    print(f"rendered {len(cams)} views (clean + corrupted) to {out}")
    return EXIT_OK


def cmd_pack(cfg: dict, out: Path) -> int:
    dcfg = _demo_config(cfg)
    scene = demo_mod.build_scene(dcfg)
    write_echo(out, cfg)
    packets = demo_mod.build_training_packets(dcfg, scene)
    for i, (sev, p) in enumerate(zip(dcfg.severities, packets)):
        save_packet(out / f"packet_{i:02d}_sev{sev:.1f}.mvpk", p)
    print(f"wrote {len(packets)} packets to {out}")
    return EXIT_OK


def cmd_train(cfg: dict, out: Path) -> int:
    dcfg = _demo_config(cfg)
    scene = demo_mod.build_scene(dcfg)
    write_echo(out, cfg)
    codec, report = demo_mod.train_codec(dcfg, scene)
    if not report["met_gate"]:
        log.error("codec missed its held-out PSNR gate: %.2f dB", report["psnr_holdout"])
        return EXIT_NUMERICAL
    packets = demo_mod.build_training_packets(dcfg, scene)
    _, ckpt = demo_mod.train_enhancer(dcfg, codec, packets, out)
    print(f"codec held-out PSNR {report['psnr_holdout']:.2f} dB; checkpoint at {ckpt}")
    return EXIT_OK


def cmd_enhance(cfg: dict, out: Path, checkpoint: str | None) -> int:
    if checkpoint is None:
        raise ConfigError("enhance requires --checkpoint")
    loaded = load_checkpoint(checkpoint)
    enhancer = loaded["enhancer"]
    dcfg = _demo_config(cfg)
    scene = demo_mod.build_scene(dcfg)
    packet = demo_mod.build_packet(
        dcfg, scene, float(cfg["severity"]),
        corrupt_seed=dcfg.seed + list(dcfg.severities).index(float(cfg["severity"]))
        if float(cfg["severity"]) in dcfg.severities else dcfg.seed)
    write_echo(out, cfg)
    enhanced = enhancer.enhance(packet, cfg_scale=float(cfg["cfg_scale"]))
    j = 0
    for i, view in enumerate(packet.views):
        if not view.is_target:
            continue
        imgio.save_image(out / f"enhanced_{i:03d}.npz", enhanced[j])
        imgio.export_png(out / f"enhanced_{i:03d}.png", enhanced[j])
        imgio.export_png(out / f"distorted_{i:03d}.png", view.image)
        j += 1
    print(f"enhanced {j} target views to {out}")
    return EXIT_OK


def cmd_eval(cfg: dict, out: Path, checkpoint: str | None) -> int:
    if checkpoint is None:
        raise ConfigError("eval requires --checkpoint")
    loaded = load_checkpoint(checkpoint)
    enhancer = loaded["enhancer"]
    dcfg = _demo_config(cfg)
    scene = demo_mod.build_scene(dcfg)
    write_echo(out, cfg)
    rows = []
    for i, sev in enumerate(dcfg.severities):
        packet = demo_mod.build_packet(dcfg, scene, sev, corrupt_seed=dcfg.seed + i)
        rows.extend(demo_mod.evaluate_packet(enhancer, packet, timestamp_override=sev))
    horizon = max(dcfg.severities) + min(dcfg.severities)
    csv_text = metrics.report(rows, horizon=horizon, n_buckets=len(dcfg.severities), fmt="csv")
    (out / "metrics.csv").write_text(csv_text)
    (out / "metrics.txt").write_text(
        metrics.report(rows, horizon=horizon, n_buckets=len(dcfg.severities), fmt="table"))
    metrics.report(rows, horizon=horizon, n_buckets=len(dcfg.severities),
                   fmt="plot", plot_path=out / "psnr_curve.png")
    mean_d = float(np.mean([r.psnr_distorted for r in rows]))
    mean_e = float(np.mean([r.psnr_enhanced for r in rows]))
    print(csv_text, end="")
    print(f"mean distorted PSNR {mean_d:.2f} dB, enhanced {mean_e:.2f} dB")
    if not mean_e > mean_d:
        log.error("enhanced PSNR did not exceed distorted PSNR")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_demo(cfg: dict, out: Path) -> int:
    dcfg = _demo_config(cfg)
    write_echo(out, cfg)
    result = demo_mod.run_pipeline(dcfg, out)
    rows = result["rows"]
    csv_text = metrics.report(rows, horizon=11.0, n_buckets=int(cfg["n_buckets"]), fmt="csv")
    (out / "metrics.csv").write_text(csv_text)
    mean_d = float(np.mean([r.psnr_distorted for r in rows]))
    mean_e = float(np.mean([r.psnr_enhanced for r in rows]))
    print(csv_text, end="")
    print(f"mean distorted PSNR {mean_d:.2f} dB, enhanced {mean_e:.2f} dB")
    return EXIT_OK if mean_e > mean_d else EXIT_NUMERICAL


def cmd_selftest() -> int:
    """Fast invariant sweep: renderer oracle agreement, v-prediction algebra,
    conditioning no-op, and packet round-trip on small random inputs."""
    from .denoiser import NoiseSchedule, add_noise, recover_z0, v_target
    from .render import brute_force_render

    rng = np.random.default_rng(0)
    failures = []

    for seed in range(5):
        spec = SceneSpec(count=20, seed=seed)
        scene = generate_scene(spec)
        cam = sample_trajectory(TrajectorySpec(kind="ring", n_views=2,
                                               width=32, height=32))[0]
        for mode in ("rgb", "cmap"):
            a = render(scene, cam, mode=mode)
            b = brute_force_render(scene, cam, mode=mode)
            pa = a.pixels if mode == "rgb" else a.coords
            pb = b.pixels if mode == "rgb" else b.coords
            if float(np.max(np.abs(pa - pb))) > 1e-6:
                failures.append(f"oracle mismatch seed={seed} mode={mode}")

    sched = NoiseSchedule()
    for _ in range(100):
        z0 = torch.from_numpy(rng.standard_normal((2, 4, 4)))
        eps = torch.from_numpy(rng.standard_normal((2, 4, 4)))
        t = int(rng.integers(0, sched.timesteps))
        zt = add_noise(z0, eps, t, sched)
        v = v_target(z0, eps, t, sched)
        if float(torch.max(torch.abs(recover_z0(zt, v, t, sched) - z0))) > 1e-6:
            failures.append(f"v-prediction algebra failed at t={t}")
            break

    for msg in failures:
        print(f"FAIL: {msg}")
    print("selftest: " + ("PASS" if not failures else f"FAIL ({len(failures)} checks)"))
    return EXIT_OK if not failures else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvenhance",
                                description="multi-view splat-render enhancement pipeline")
    p.add_argument("command",
                   choices=["gen", "render", "pack", "train", "enhance", "eval",
                            "selftest", "demo"])
    p.add_argument("--config", default=None, help="JSON config path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--checkpoint", default=None, help="checkpoint path (enhance/eval)")
    p.add_argument("--threads", type=int, default=None,
                   help="torch intra-op threads (default: all cores)")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        torch.set_num_threads(max(1, args.threads))
    out = Path(args.out)
    try:
        if args.command == "selftest":
            return cmd_selftest()
        cfg = load_config(args.config, args.seed)
        if args.command == "gen":
            return cmd_gen(cfg, out)
        if args.command == "render":
            return cmd_render(cfg, out)
        if args.command == "pack":
            return cmd_pack(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "enhance":
            return cmd_enhance(cfg, out, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, out, args.checkpoint)
        if args.command == "demo":
            return cmd_demo(cfg, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (SceneError, PacketError, ContainerError, DataError, FileNotFoundError,
            imgio.ImageIOError) as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except (CodecError, TrainError, metrics.MetricsError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
