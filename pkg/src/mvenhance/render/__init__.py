from .kernels import composite_numpy, numba_enabled
from .oracle import brute_force_render
from .projection import ScreenGaussian, alpha_at, composite_ray, project_gaussian
from .raster import CMap, RenderedImage, render

__all__ = [
    "CMap",
    "RenderedImage",
    "ScreenGaussian",
    "alpha_at",
    "brute_force_render",
    "composite_numpy",
    "composite_ray",
    "numba_enabled",
    "project_gaussian",
    "render",
]
