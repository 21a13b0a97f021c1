import numpy as np
import pytest
import torch

from mvenhance import demo


@pytest.fixture(scope="session")
def small_pipeline(tmp_path_factory):
    """A cheaply trained pipeline for plumbing-level tests (not quality gates):
    short codec pretrain + short enhancer training over the canonical packets."""
    cfg = demo.DemoConfig(seed=7, codec_steps=150, train_iterations=30)
    scene = demo.build_scene(cfg)
    codec, codec_report = demo.train_codec(cfg, scene)
    packets = demo.build_training_packets(cfg, scene)
    out = tmp_path_factory.mktemp("small_train")
    enhancer, ckpt = demo.train_enhancer(cfg, codec, packets, out)
    return {"config": cfg, "scene": scene, "codec": codec,
            "codec_report": codec_report, "packets": packets,
            "enhancer": enhancer, "checkpoint": ckpt, "out": out}


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
