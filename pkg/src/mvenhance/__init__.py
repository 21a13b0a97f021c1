"""Geometry-conditioned multi-view enhancement of degraded Gaussian-splat renders.

Pipeline: procedural Gaussian-blob scenes -> EWA splat renderer (RGB and
per-pixel 3D coordinate maps) -> view packets with pose-normalized geometric
priors -> tiny latent codec with decoder adapters -> multi-view v-prediction
denoiser with classifier-free guidance -> metrics and reports.
"""
from .scene import (CameraView, GaussianPrimitive, GaussianScene, SceneSpec,
                    TrajectorySpec, corrupt_scene, generate_scene, load_scene,
                    sample_trajectory, save_scene)
from .render import (CMap, RenderedImage, brute_force_render, composite_ray,
                     numba_enabled, render)
from .priors import ConditionEncoder, normalize_poses, plucker_field, transform_cmap
from .packet import (Packet, PacketView, assemble_packet, load_packet,
                     save_packet, select_references, view_overlap_score)
from .codec import CodecTrainConfig, LatentCodec, LoRAConv2d, pretrain_codec
from .denoiser import (Enhancer, EnhancerConfig, MultiViewDenoiser, NoiseSchedule,
                       add_noise, recover_z0, v_target)
from .losses import latent_loss, pixel_loss, ssim
from .metrics import MetricRow, bucket_by_time, evaluate_view, psnr, report
from .training import (TrainConfig, load_checkpoint, save_checkpoint, train,
                       train_step)

__version__ = "0.1.0"

__all__ = [
    "CameraView", "GaussianPrimitive", "GaussianScene", "SceneSpec",
    "TrajectorySpec", "corrupt_scene", "generate_scene", "load_scene",
    "sample_trajectory", "save_scene",
    "CMap", "RenderedImage", "brute_force_render", "composite_ray",
    "numba_enabled", "render",
    "ConditionEncoder", "normalize_poses", "plucker_field", "transform_cmap",
    "Packet", "PacketView", "assemble_packet", "load_packet", "save_packet",
    "select_references", "view_overlap_score",
    "CodecTrainConfig", "LatentCodec", "LoRAConv2d", "pretrain_codec",
    "Enhancer", "EnhancerConfig", "MultiViewDenoiser", "NoiseSchedule",
    "add_noise", "recover_z0", "v_target",
    "latent_loss", "pixel_loss", "ssim",
    "MetricRow", "bucket_by_time", "evaluate_view", "psnr", "report",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train", "train_step",
    "__version__",
]
