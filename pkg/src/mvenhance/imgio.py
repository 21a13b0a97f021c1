"""Float image and coordinate-map persistence.

RGB images and 4-channel coordinate maps are stored as .npz archives carrying
the array plus channel-layout metadata, so files are self-describing. PNG
export quantizes to 8 bits and is for visual inspection only.
"""
from __future__ import annotations

import numpy as np

RGB_KIND = "rgb_float_v1"
CMAP_KIND = "cmap_float_v1"
CMAP_CHANNELS = "x,y,z,validity"


class ImageIOError(ValueError):
    pass


def save_image(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ImageIOError(f"expected (H, W, 3) image, got {pixels.shape}")
    np.savez(path, kind=RGB_KIND, channel_order="r,g,b", pixels=pixels)


def load_image(path) -> np.ndarray:
    with np.load(path) as z:
        if str(z["kind"]) != RGB_KIND:
            raise ImageIOError(f"{path}: not an RGB image container")
        return np.asarray(z["pixels"], dtype=np.float32)


def save_cmap(path, coords: np.ndarray, validity: np.ndarray) -> None:
    coords = np.asarray(coords, dtype=np.float32)
    validity = np.asarray(validity, dtype=np.float32)
    if coords.ndim != 3 or coords.shape[2] != 3 or validity.shape != coords.shape[:2]:
        raise ImageIOError(f"bad coordinate map shapes: {coords.shape}, {validity.shape}")
    data = np.concatenate([coords, validity[..., None]], axis=2)
    np.savez(path, kind=CMAP_KIND, channel_order=CMAP_CHANNELS, data=data)


def load_cmap(path) -> tuple[np.ndarray, np.ndarray]:
    with np.load(path) as z:
        if str(z["kind"]) != CMAP_KIND:
            raise ImageIOError(f"{path}: not a coordinate map container")
        if str(z["channel_order"]) != CMAP_CHANNELS:
            raise ImageIOError(f"{path}: unexpected channel order {z['channel_order']}")
        data = np.asarray(z["data"], dtype=np.float32)
    return data[..., :3], data[..., 3]


def export_png(path, pixels: np.ndarray) -> None:
    """8-bit PNG preview of a [0,1] float RGB image (lossy quantization)."""
    from PIL import Image

    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ImageIOError(f"expected (H, W, 3) image, got {pixels.shape}")
    q = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)
