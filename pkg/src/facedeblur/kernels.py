"""Motion-blur kernel synthesis.

Camera trajectories are drawn from a Matérn-5/2 Gaussian process (x and y
independently), splatted bilinearly onto a fixed odd canvas, recentred on
their mass centre and normalized to unit sum. Straight-line kernels are
provided for generalization checks.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_JITTER = 1e-6
BASE_JITTER = 1e-10


class KernelError(ValueError):
    """Base class for kernel synthesis and parsing failures."""


class SynthesisError(KernelError):
    pass


class NormalizationError(KernelError):
    pass


class KernelFormatError(KernelError):
    pass


@dataclass
class GpConfig:
    sigma_f2: float = 1.0
    length_scale: float = 0.3
    step: float = 0.01
    traj_len_range: tuple[int, int] = (200, 1200)
    valid_size_range: tuple[int, int] = (8, 20)
    canvas: int = 27
    seed: int = 0

    def __post_init__(self):
        self.traj_len_range = tuple(int(v) for v in self.traj_len_range)
        self.valid_size_range = tuple(int(v) for v in self.valid_size_range)
        if self.sigma_f2 <= 0 or self.length_scale <= 0 or self.step <= 0:
            raise ValueError("sigma_f2, length_scale and step must be positive")
        lo, hi = self.traj_len_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad traj_len_range {self.traj_len_range}")
        if self.canvas % 2 == 0 or self.canvas < 3:
            raise ValueError(f"canvas must be odd and >= 3, got {self.canvas}")
        vlo, vhi = self.valid_size_range
        if not 3 <= vlo <= vhi <= self.canvas:
            raise ValueError(
                f"valid_size_range {self.valid_size_range} must lie within [3, {self.canvas}]"
            )


@dataclass
class MotionKernel:
    weights: np.ndarray
    valid_size: int
    canvas: int = field(init=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.weights.shape[1]:
            raise KernelError(f"kernel grid must be square, got {self.weights.shape}")
        self.canvas = self.weights.shape[0]
        if self.canvas % 2 == 0:
            raise KernelError(f"kernel canvas must be odd so it has a centre pixel, got {self.canvas}")

    def center_of_mass(self) -> tuple[float, float]:
        return _center_of_mass(self.weights)

    def check(self, tol: float = 1e-9) -> None:
        """Raise if any kernel invariant is violated."""
        if (self.weights < 0).any():
            raise KernelError("negative kernel weight")
        if abs(self.weights.sum() - 1.0) > tol:
            raise KernelError(f"kernel sum {self.weights.sum()!r} is not 1")
        c = (self.canvas - 1) / 2
        cy, cx = self.center_of_mass()
        if abs(cy - c) > 0.5 or abs(cx - c) > 0.5:
            raise KernelError(f"mass centre ({cy:.3f}, {cx:.3f}) is off-centre")


def _center_of_mass(grid: np.ndarray) -> tuple[float, float]:
    total = grid.sum()
    ys, xs = np.indices(grid.shape)
    return float((ys * grid).sum() / total), float((xs * grid).sum() / total)


def matern_cov(t1, t2, cfg: GpConfig):
    """Matérn-5/2 covariance between time stamps (scalars or broadcastable arrays)."""
    r = np.abs(np.asarray(t1, dtype=np.float64) - np.asarray(t2, dtype=np.float64))
    a = math.sqrt(5.0) * r / cfg.length_scale
    return cfg.sigma_f2 * (1.0 + a + a * a / 3.0) * np.exp(-a)


def gram_matrix(t: np.ndarray, cfg: GpConfig) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return matern_cov(t[:, None], t[None, :], cfg)


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    jitter = BASE_JITTER
    eye = np.eye(len(cov))
    while jitter <= MAX_JITTER * (1 + 1e-9):
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise SynthesisError(f"covariance not positive definite even with jitter {MAX_JITTER}")


@functools.lru_cache(maxsize=8)
def _cached_factor(sigma_f2: float, length_scale: float, step: float, n: int) -> np.ndarray:
    cfg = GpConfig(sigma_f2=sigma_f2, length_scale=length_scale, step=step)
    factor = _cholesky_with_jitter(gram_matrix(np.arange(n) * step, cfg))
    factor.setflags(write=False)
    return factor


def sample_trajectory(cfg: GpConfig, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw an [N, 2] trajectory; N comes from ``cfg.traj_len_range`` unless given.

    Both coordinates share one Cholesky factor of the Matérn Gram matrix on
    the grid ``t = 0, step, ..., (N-1)*step``. The factor for the longest
    configured length is cached; its leading N x N block is the factor of
    the shorter grid.
    """
    lo, hi = cfg.traj_len_range
    if n is None:
        n = int(rng.integers(lo, hi + 1))
    factor = _cached_factor(cfg.sigma_f2, cfg.length_scale, cfg.step, max(n, hi))
    return factor[:n, :n] @ rng.standard_normal((n, 2))


def _splat(grid: np.ndarray, ys: np.ndarray, xs: np.ndarray, mass: np.ndarray | None = None) -> None:
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    m = np.ones_like(ys) if mass is None else mass
    size = grid.shape[0]
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = np.clip(y0 + dy, 0, size - 1)
            xx = np.clip(x0 + dx, 0, size - 1)
            np.add.at(grid, (yy, xx), m * wy * wx)


def rasterize(traj: np.ndarray, valid_size: int, canvas: int) -> np.ndarray:
    """Splat trajectory points onto a canvas, scaled so the bounding box spans ``valid_size`` px.

    Aspect ratio is kept; the longer side of the bounding box covers
    ``valid_size`` pixel centres and the box is centred on the canvas. Each
    point deposits unit mass.
    """
    traj = np.asarray(traj, dtype=np.float64).reshape(-1, 2)
    if len(traj) == 0:
        raise KernelError("empty trajectory")
    if valid_size > canvas:
        raise KernelError(f"valid size {valid_size} exceeds canvas {canvas}")
    grid = np.zeros((canvas, canvas))
    c = (canvas - 1) / 2
    lo, hi = traj.min(axis=0), traj.max(axis=0)
    extent = float((hi - lo).max())
    n = len(traj)
    if extent <= 1e-12:
        grid[int(c), int(c)] = float(n)
        return grid
    s = (valid_size - 1) / extent
    mid = (lo + hi) / 2
    xs = c + (traj[:, 0] - mid[0]) * s
    ys = c + (traj[:, 1] - mid[1]) * s
    _splat(grid, ys, xs)
    return grid


def center_and_normalize(grid: np.ndarray, valid_size: int | None = None) -> MotionKernel:
    """Shift by the rounded offset to the canvas centre, then scale to unit sum.

    Raises :class:`NormalizationError` for a massless grid and
    :class:`SynthesisError` if the shift would push mass off the canvas.
    """
    grid = np.asarray(grid, dtype=np.float64)
    total = grid.sum()
    if not total > 0:
        raise NormalizationError("kernel grid has no mass")
    size = grid.shape[0]
    c = (size - 1) / 2
    cy, cx = _center_of_mass(grid)
    dy, dx = int(round(c - cy)), int(round(c - cx))
    rows, cols = np.nonzero(grid)
    if (rows.min() + dy < 0 or rows.max() + dy >= size
            or cols.min() + dx < 0 or cols.max() + dx >= size):
        raise SynthesisError("recentring would move kernel mass off the canvas")
    shifted = np.zeros_like(grid)
    shifted[rows + dy, cols + dx] = grid[rows, cols]
    if valid_size is None:
        valid_size = int(max(np.ptp(rows), np.ptp(cols)) + 1)
    return MotionKernel(shifted / shifted.sum(), valid_size)


def synth_kernel(cfg: GpConfig, rng: np.random.Generator, max_attempts: int = 100) -> MotionKernel:
    """Sample trajectory, rasterize at a random valid size, recentre and normalize.

    Draws whose recentred support would not fit on the canvas are discarded
    and redrawn from the same stream.
    """
    lo, hi = cfg.valid_size_range
    for _ in range(max_attempts):
        traj = sample_trajectory(cfg, rng)
        valid = int(rng.integers(lo, hi + 1))
        grid = rasterize(traj, valid, cfg.canvas)
        try:
            return center_and_normalize(grid, valid)
        except SynthesisError:
            continue
    raise SynthesisError(f"no kernel fit the canvas after {max_attempts} draws")


def linear_kernel(length_px: float, angle_deg: float, canvas: int = 27) -> MotionKernel:
    """Straight motion of ``length_px`` pixels through the canvas centre.

    ``angle_deg`` is measured from the +column axis towards +row (array
    coordinates, rows growing downward), so 45 degrees follows the main
    diagonal.
    """
    if not 0 < length_px <= canvas:
        raise KernelError(f"length must lie in (0, {canvas}], got {length_px}")
    c = (canvas - 1) / 2
    grid = np.zeros((canvas, canvas))
    span = length_px - 1.0
    if span <= 0:
        grid[int(c), int(c)] = 1.0
        return MotionKernel(grid, 1)
    n = max(2, int(math.ceil(span * 8)) + 1)
    r = np.linspace(-span / 2, span / 2, n)
    theta = math.radians(angle_deg)
    xs = c + r * math.cos(theta)
    ys = c + r * math.sin(theta)
    # snap float noise so axis-aligned segments stay on one row/column
    xs = np.round(xs, 12)
    ys = np.round(ys, 12)
    _splat(grid, ys, xs)
    return MotionKernel(grid / grid.sum(), int(math.ceil(length_px)))


def save_kernel(k: MotionKernel, path) -> None:
    lines = [f"MKERN 1 {k.canvas} {k.valid_size}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in k.weights]
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel(path) -> MotionKernel:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise KernelFormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "MKERN" or head[1] != "1":
        raise KernelFormatError(f"{path}: malformed header {lines[0]!r}")
    try:
        canvas, valid = int(head[2]), int(head[3])
    except ValueError:
        raise KernelFormatError(f"{path}: malformed header {lines[0]!r}") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if canvas < 1 or len(rows) != canvas:
        raise KernelFormatError(f"{path}: expected {canvas} rows, found {len(rows)}")
    try:
        weights = np.array([[float(v) for v in ln.split()] for ln in rows])
    except ValueError as exc:
        raise KernelFormatError(f"{path}: {exc}") from None
    if weights.shape != (canvas, canvas):
        raise KernelFormatError(f"{path}: ragged rows, expected {canvas} values per row")
    if not np.isfinite(weights).all() or (weights < 0).any():
        raise KernelFormatError(f"{path}: weights must be finite and nonnegative")
    total = weights.sum()
    if abs(total - 1.0) > 1e-9:
        if abs(total - 1.0) <= 1e-3:
            warnings.warn(f"{path}: kernel sum {total!r} renormalized to 1", stacklevel=2)
            weights = weights / total
        else:
            raise KernelFormatError(f"{path}: kernel sum {total!r} is not 1")
    return MotionKernel(weights, valid)
