"""Image rasters, PNG I/O, the blur degradation model and PSNR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .kernels import MotionKernel
from .tensor import correlate2d_direct, correlate2d_fft


class ImageIOError(OSError):
    pass


class DegradationError(ValueError):
    pass


@dataclass
class Image:
    """H x W x C float raster with values in [0, 1]; C is 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got {arr.shape}")
        self.data = np.clip(arr, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_batch(self) -> np.ndarray:
        """[1, C, H, W] array for the network."""
        return self.data.transpose(2, 0, 1)[None].copy()

    @classmethod
    def from_batch(cls, arr: np.ndarray, index: int = 0) -> "Image":
        return cls(np.asarray(arr)[index].transpose(1, 2, 0))

    def as_rgb(self) -> "Image":
        return self if self.channels == 3 else Image(np.repeat(self.data, 3, axis=2))


def load_png(path) -> Image:
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageIOError(f"{path}: not a PNG file")
            if im.mode not in ("L", "RGB"):
                raise ImageIOError(f"{path}: unsupported PNG mode {im.mode} (need 8-bit gray or RGB)")
            arr = np.asarray(im, dtype=np.float64)
    except (FileNotFoundError, PILImage.UnidentifiedImageError) as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    return Image(arr / 255.0)


def save_png(img: Image, path) -> None:
    q = np.clip(np.round(img.data * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if img.channels == 1 else "RGB"
    arr = q[:, :, 0] if img.channels == 1 else q
    PILImage.fromarray(arr, mode=mode).save(path, format="PNG")


def load_png_dir(directory) -> list[Image]:
    paths = sorted(Path(directory).glob("*.png"))
    return [load_png(p) for p in paths]


def convolve(data: np.ndarray, k: MotionKernel, method: str = "fft") -> np.ndarray:
    """Per-channel ``data * k`` with edge replication; no noise, no clamping.

    The kernel is flipped before correlation so this is a true convolution.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if k.canvas > data.shape[0] or k.canvas > data.shape[1]:
        raise DegradationError(f"kernel {k.canvas}px exceeds image {data.shape[:2]}")
    flipped = k.weights[::-1, ::-1]
    if method == "fft":
        plane = correlate2d_fft
    elif method == "direct":
        plane = correlate2d_direct
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    return np.stack([plane(data[:, :, c], flipped) for c in range(data.shape[2])], axis=2)


def blur(
    img: Image,
    k: MotionKernel,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    method: str = "fft",
) -> Image:
    """Degrade ``img``: convolve with ``k``, add Gaussian noise, clamp to [0, 1]."""
    if noise_sigma < 0:
        raise DegradationError("noise_sigma must be >= 0")
    out = convolve(img.data, k, method)
    if noise_sigma > 0:
        if rng is None:
            raise DegradationError("noise requires an rng")
        out = out + noise_sigma * rng.standard_normal(out.shape)
    return Image(out)


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB for peak 1; identical images give ``math.inf``."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
