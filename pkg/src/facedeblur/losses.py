"""Training objective: pixel L2, total variation and facial feature distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


@dataclass
class LossWeights:
    """Weights on the TV (alpha) and facial (beta) terms; the L2 weight is 1."""

    alpha: float = 1e-6
    beta: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")


def l2_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over C, H, W, averaged over the batch."""
    if pred.shape != target.shape:
        raise DimensionError(f"l2_loss: shape mismatch {pred.shape} vs {target.shape}")
    return T.mean_all(T.square(T.sub(pred, target)))


def tv_loss(pred: Tensor) -> Tensor:
    """Sum of squared forward differences (both axes, all channels), averaged over the batch.

    Not normalized by pixel count; the TV weight absorbs the scale.
    """
    if pred.data.ndim != 4:
        raise DimensionError(f"tv_loss expects NCHW, got {pred.shape}")
    n, _, h, w = pred.shape
    if h < 2 or w < 2:
        raise DimensionError(f"tv_loss needs at least 2x2 spatial size, got {h}x{w}")
    dx = T.sub(T.slice_axis(pred, 3, 1, w), T.slice_axis(pred, 3, 0, w - 1))
    dy = T.sub(T.slice_axis(pred, 2, 1, h), T.slice_axis(pred, 2, 0, h - 1))
    total = T.add(T.sum_all(T.square(dx)), T.sum_all(T.square(dy)))
    return T.scale(total, 1.0 / n)


class ProxyExtractor:
    """Fixed random convolutional encoder standing in for a face-recognition embedding.

    Two stride-2 3x3 convolutions with leaky ReLU, global average pooling
    and a linear map to ``feature_dim``. Weights never receive updates.
    """

    kind = "proxy-extractor"

    def __init__(self, params: dict[str, np.ndarray], slope: float = 0.01):
        self.params = {k: Tensor(v) for k, v in params.items()}
        self.slope = slope
        self.in_channels = self.params["conv1"].shape[1]
        self.feature_dim = self.params["fc"].shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(f"extractor expects [N, {self.in_channels}, H, W], got {x.shape}")
        if min(x.shape[2:]) < 8:
            raise DimensionError(f"extractor needs at least 8x8 inputs, got {x.shape[2:]}")
        h = T.leaky_relu(T.conv2d(x, self.params["conv1"], stride=2), self.slope)
        h = T.leaky_relu(T.conv2d(h, self.params["conv2"], stride=2), self.slope)
        return T.matmul(T.mean_spatial(h), self.params["fc"])


def proxy_extractor(seed: int = 0, feature_dim: int = 64, in_channels: int = 3,
                    widths: tuple[int, int] = (8, 16)) -> ProxyExtractor:
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    rng = np.random.default_rng(seed)
    c1, c2 = widths

    def draw(shape):
        fan_in = np.prod(shape[1:]) if len(shape) == 4 else shape[0]
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)

    return ProxyExtractor({
        "conv1": draw((c1, in_channels, 3, 3)),
        "conv2": draw((c2, c1, 3, 3)),
        "fc": draw((c2, feature_dim)),
    })


def facial_loss(pred: Tensor, target: Tensor, phi) -> Tensor:
    """Squared feature distance, averaged over the batch."""
    if pred.shape != target.shape:
        raise DimensionError(f"facial_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = T.sub(phi(pred), phi(target))
    return T.scale(T.sum_all(T.square(diff)), 1.0 / pred.shape[0])


def loss_terms(pred: Tensor, target: Tensor, w: LossWeights, phi) -> dict[str, Tensor]:
    """All three components plus their weighted total."""
    l2 = l2_loss(pred, target)
    tv = tv_loss(pred)
    face = facial_loss(pred, target, phi)
    total = T.add(T.add(l2, T.scale(tv, w.alpha)), T.scale(face, w.beta))
    return {"l2": l2, "tv": tv, "face": face, "total": total}


def total_loss(pred: Tensor, target: Tensor, w: LossWeights, phi) -> Tensor:
    return loss_terms(pred, target, w, phi)["total"]


def save_extractor(phi: ProxyExtractor, path) -> None:
    from .checkpoint import write_container

    write_container(path, {"kind": phi.kind, "slope": phi.slope},
                    [(k, v.data) for k, v in phi.params.items()])


def load_extractor(path) -> ProxyExtractor:
    from .checkpoint import CheckpointError, read_container

    header, tensors = read_container(path)
    if header.get("kind") != ProxyExtractor.kind:
        raise CheckpointError(f"{path}: expected kind {ProxyExtractor.kind!r}, got {header.get('kind')!r}")
    return ProxyExtractor(dict(tensors), header["slope"])
