"""Compare the jit-compiled and pure-numpy compositing kernels.

Usage: python3 benchmarks/render_benchmark.py [--scenes N] [--size S]
The jit path warms up once before timing so compilation cost is reported
separately. Set MVENHANCE_NUMBA=0 to verify the fallback is what you measure.
"""
from __future__ import annotations

import argparse
import os
import time

import numpy as np

from mvenhance.render import numba_enabled, render
from mvenhance.scene import SceneSpec, TrajectorySpec, generate_scene, sample_trajectory


def time_renders(scenes, cams, repeats: int) -> float:
    t0 = time.perf_counter()
    for _ in range(repeats):
        for scene, cam in zip(scenes, cams):
            render(scene, cam, mode="rgb")
            render(scene, cam, mode="cmap")
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--primitives", type=int, default=80)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    scenes, cams = [], []
    for seed in range(args.scenes):
        scenes.append(generate_scene(SceneSpec(count=args.primitives, seed=seed)))
        cams.append(sample_trajectory(TrajectorySpec(
            kind="ring", n_views=2, width=args.size, height=args.size))[0])

    os.environ["MVENHANCE_NUMBA"] = "1"
    if not numba_enabled():
        print("jit kernel unavailable; only the numpy fallback will run")
    else:
        t0 = time.perf_counter()
        render(scenes[0], cams[0], mode="rgb")
        print(f"jit warmup (compile + first render): {time.perf_counter() - t0:.2f}s")
        jit = time_renders(scenes, cams, args.repeats)
        print(f"jit kernel:   {jit:.4f}s per pass "
              f"({args.scenes} scenes x rgb+cmap, {args.size}x{args.size})")

    os.environ["MVENHANCE_NUMBA"] = "0"
    ref = time_renders(scenes, cams, args.repeats)
    print(f"numpy kernel: {ref:.4f}s per pass")
    if "jit" in locals():
        print(f"speedup: {ref / jit:.1f}x")


if __name__ == "__main__":
    main()
