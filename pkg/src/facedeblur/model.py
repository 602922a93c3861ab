"""Multi-scale inception-residual restoration network.

Topology (no biases, no normalization layers)::

    x -> 3x3 conv (base) -> leaky
      -> [inception module] x num_modules, each:
             for every scale k: [1x1 reduce to base/2 -> leaky] -> kxk conv -> leaky
             concat branches -> 1x1 merge to base -> + module input
      -> 1x1 conv to 3 channels
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .imaging import Image, save_png
from .tensor import DimensionError, Tensor


@dataclass
class NetworkConfig:
    num_modules: int = 6
    base_channels: int = 64
    scales: list[int] = field(default_factory=lambda: [1, 3, 5, 7, 14])
    leaky_slope: float = 0.01
    pointwise_reduction: bool = True
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        self.scales = [int(s) for s in self.scales]
        if self.num_modules < 1:
            raise ValueError("num_modules must be >= 1")
        if not self.scales or min(self.scales) < 1:
            raise ValueError(f"scales must be non-empty positive sizes, got {self.scales}")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ValueError("base_channels must be even and >= 2")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")

    @property
    def branch_channels(self) -> int:
        return self.base_channels // 2


def parameter_count(cfg: NetworkConfig) -> int:
    """Closed-form number of scalar weights for ``cfg``."""
    b, h = cfg.base_channels, cfg.branch_channels
    k2 = sum(k * k for k in cfg.scales)
    s = len(cfg.scales)
    if cfg.pointwise_reduction:
        branches = s * h * b + h * h * k2
    else:
        branches = h * b * k2
    per_module = branches + b * s * h
    return cfg.in_channels * b * 9 + cfg.num_modules * per_module + cfg.out_channels * b


def _param_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    b, h = cfg.base_channels, cfg.branch_channels
    shapes = [("stem", (b, cfg.in_channels, 3, 3))]
    for m in range(cfg.num_modules):
        for k in cfg.scales:
            if cfg.pointwise_reduction:
                shapes.append((f"m{m}.k{k}.reduce", (h, b, 1, 1)))
                shapes.append((f"m{m}.k{k}.conv", (h, h, k, k)))
            else:
                shapes.append((f"m{m}.k{k}.conv", (h, b, k, k)))
        shapes.append((f"m{m}.merge", (b, h * len(cfg.scales), 1, 1)))
    shapes.append(("out", (cfg.out_channels, b, 1, 1)))
    return shapes


class DeepDeblurNet:
    def __init__(self, config: NetworkConfig, params: dict[str, Tensor]):
        expected = _param_shapes(config)
        if [n for n, _ in expected] != list(params):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected:
            if params[name].shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: NetworkConfig, seed: int = 0) -> "DeepDeblurNet":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, deterministic per seed."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in _param_shapes(config):
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
            params[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
        return cls(config, params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def module_params(self, index: int) -> dict[str, Tensor]:
        prefix = f"m{index}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def forward(self, x: Tensor) -> Tensor:
        return self._run(x)[0]

    __call__ = forward

    def _run(self, x: Tensor, capture: int | None = None):
        cfg = self.config
        if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise DimensionError(f"expected [N, {cfg.in_channels}, H, W] input, got {x.shape}")
        if min(x.shape[2:]) < max(cfg.scales):
            raise DimensionError(
                f"spatial size {x.shape[2:]} is below the largest scale {max(cfg.scales)}"
            )
        h = T.leaky_relu(T.conv2d(x, self.params["stem"]), cfg.leaky_slope)
        branches = None
        for m in range(cfg.num_modules):
            h, outs = inception_module_forward(self.module_params(m), h, cfg)
            if m == capture:
                branches = outs
        return T.conv2d(h, self.params["out"]), branches

    def restore(self, img: Image) -> Image:
        """Deblur one image; the result is clamped to [0, 1] only here."""
        out = self.forward(Tensor(img.as_rgb().to_batch()))
        return Image.from_batch(out.data)


def inception_module_forward(module_params: dict[str, Tensor], x: Tensor, cfg: NetworkConfig):
    """One residual inception module; returns (output, per-scale branch outputs)."""
    if x.data.ndim != 4 or x.shape[1] != cfg.base_channels:
        raise DimensionError(f"module expects {cfg.base_channels} channels, got {x.shape}")
    slope = cfg.leaky_slope
    outs = []
    for k in cfg.scales:
        h = x
        if cfg.pointwise_reduction:
            h = T.leaky_relu(T.conv2d(h, module_params[f"k{k}.reduce"]), slope)
        outs.append(T.leaky_relu(T.conv2d(h, module_params[f"k{k}.conv"]), slope))
    merged = T.conv2d(T.concat_channels(outs), module_params["merge"])
    return T.add(merged, x), outs


class IdentityNet:
    """Stand-in network that returns its input; used to test evaluation plumbing."""

    config = None

    def forward(self, x: Tensor) -> Tensor:
        return x

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        return []

    def num_parameters(self) -> int:
        return 0

    def restore(self, img: Image) -> Image:
        return Image(img.data.copy())


def _tile(maps: np.ndarray) -> np.ndarray:
    """[C, H, W] maps, each min-max normalized, tiled into a near-square grid."""
    c, h, w = maps.shape
    cols = int(np.ceil(np.sqrt(c)))
    rows = int(np.ceil(c / cols))
    sheet = np.zeros((rows * h + rows - 1, cols * w + cols - 1))
    for i, m in enumerate(maps):
        lo, hi = m.min(), m.max()
        norm = np.full_like(m, 0.5) if hi - lo <= 1e-12 * max(1.0, abs(hi)) else (m - lo) / (hi - lo)
        r, q = divmod(i, cols)
        sheet[r * (h + 1): r * (h + 1) + h, q * (w + 1): q * (w + 1) + w] = norm
    return sheet


def feature_maps(net: DeepDeblurNet, img: Image, module_index: int) -> dict[int, np.ndarray]:
    """Per-scale branch activations [C, H, W] of one inception module."""
    if not 0 <= module_index < net.config.num_modules:
        raise IndexError(f"module index {module_index} out of range")
    _, outs = net._run(Tensor(img.as_rgb().to_batch()), capture=module_index)
    return {k: o.data[0] for k, o in zip(net.config.scales, outs)}


def dump_feature_maps(net: DeepDeblurNet, img: Image, module_index: int, out_dir) -> list[Path]:
    """Write one tiled PNG of branch responses per convolution scale."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, maps in feature_maps(net, img, module_index).items():
        path = out_dir / f"module{module_index}_scale{k}.png"
        save_png(Image(_tile(maps)), path)
        written.append(path)
    return written
