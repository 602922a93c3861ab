"""PSNR sweeps over kernel sets, inference timing and the pointwise-reduction ablation."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .imaging import Image, blur, load_png_dir, psnr
from .kernels import MotionKernel, load_kernel
from .model import DeepDeblurNet, NetworkConfig, parameter_count
from .tensor import Tensor
from .training import TrainConfig, train


class EvalError(ValueError):
    pass


@dataclass
class TimingStats:
    mean: float
    std: float
    n: int


@dataclass
class EvalRow:
    kernel_id: str
    blurry_psnr: float
    restored_psnr: float
    image_count: int
    inf_count: int = 0


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    timing: TimingStats | None = None

    @property
    def mean_blurry(self) -> float:
        return _mean([r.blurry_psnr for r in self.rows])

    @property
    def mean_restored(self) -> float:
        return _mean([r.restored_psnr for r in self.rows])

    @property
    def inf_count(self) -> int:
        return sum(r.inf_count for r in self.rows)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kernel_id", "blurry_psnr", "restored_psnr", "image_count", "inf_count"])
        for r in self.rows:
            w.writerow([r.kernel_id, repr(r.blurry_psnr), repr(r.restored_psnr),
                        r.image_count, r.inf_count])
        w.writerow(["mean", repr(self.mean_blurry), repr(self.mean_restored),
                    sum(r.image_count for r in self.rows), self.inf_count])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def format_table(self) -> str:
        lines = [f"{'kernel':<24}{'blurry dB':>12}{'restored dB':>13}{'images':>8}{'inf':>5}"]
        for r in self.rows + [EvalRow("mean", self.mean_blurry, self.mean_restored,
                                      sum(r.image_count for r in self.rows), self.inf_count)]:
            lines.append(f"{r.kernel_id:<24}{r.blurry_psnr:>12.3f}{r.restored_psnr:>13.3f}"
                         f"{r.image_count:>8d}{r.inf_count:>5d}")
        if self.timing is not None:
            t = self.timing
            lines.append(f"forward latency: {t.mean:.4f} s +/- {t.std:.4f} s (n={t.n})")
        return "\n".join(lines)


def _mean(values) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.nan


def _load_images(images) -> list[Image]:
    if isinstance(images, (str, Path)):
        images = load_png_dir(images)
    images = [im.as_rgb() for im in images]
    if not images:
        raise EvalError("no images to evaluate")
    return images


def _load_kernels(kernels) -> list[tuple[str, MotionKernel]]:
    out = []
    for k in kernels:
        if isinstance(k, MotionKernel):
            out.append((f"k{len(out)}", k))
        elif isinstance(k, tuple):
            out.append(k)
        else:
            out.append((Path(k).stem, load_kernel(k)))
    if not out:
        raise EvalError("no kernels to evaluate")
    return out


def psnr_sweep(net, images, kernels, noise_sigma: float = 0.0, seed: int = 0,
               threads: int = 1, method: str = "fft") -> EvalReport:
    """Blur every image with every kernel, restore, and average both PSNRs per kernel.

    Pairs whose PSNR is infinite (a perfect reconstruction) are left out of
    the means and counted in ``inf_count``. Noise for pair (kernel i, image
    j) is drawn from ``default_rng([seed, i, j])``, so results do not depend
    on ``threads``. ``method`` picks the blur path (see :func:`imaging.convolve`).
    """
    images = _load_images(images)
    kernels = _load_kernels(kernels)

    def evaluate(ij):
        i, j = ij
        rng = np.random.default_rng([seed, i, j])
        blurry = blur(images[j], kernels[i][1], noise_sigma, rng, method=method)
        return psnr(blurry, images[j]), psnr(net.restore(blurry), images[j])

    jobs = [(i, j) for i in range(len(kernels)) for j in range(len(images))]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(evaluate, jobs))
    else:
        results = [evaluate(ij) for ij in jobs]

    report = EvalReport()
    for i, (name, _) in enumerate(kernels):
        pairs = results[i * len(images): (i + 1) * len(images)]
        finite = [(b, r) for b, r in pairs if math.isfinite(b) and math.isfinite(r)]
        report.rows.append(EvalRow(
            kernel_id=name,
            blurry_psnr=_mean([b for b, _ in finite]),
            restored_psnr=_mean([r for _, r in finite]),
            image_count=len(pairs),
            inf_count=len(pairs) - len(finite),
        ))
    return report


def time_inference(net, image: Image, warmup: int = 1, reps: int = 5) -> TimingStats:
    """Wall-clock seconds of the forward pass alone (no I/O), after discarded warmup runs.

    BLAS is limited to one thread for the duration so numbers are comparable
    across machines with different core counts.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    x = Tensor(image.as_rgb().to_batch())
    times = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            net.forward(x)
        for _ in range(reps):
            t0 = time.perf_counter()
            net.forward(x)
            times.append(time.perf_counter() - t0)
    return TimingStats(float(np.mean(times)), float(np.std(times)), reps)


@dataclass
class AblationReport:
    reports: dict[str, EvalReport]
    param_counts: dict[str, int]

    def format_table(self) -> str:
        out = []
        for name, rep in self.reports.items():
            out.append(f"[{name}] parameters: {self.param_counts[name]}")
            out.append(rep.format_table())
        return "\n".join(out)


def ablation_compare(image_dir, kernel_files, cfg_a: NetworkConfig, cfg_b: NetworkConfig,
                     train_cfg: TrainConfig, work_dir, init_seed: int = 0,
                     names=("reduction_on", "reduction_off")) -> AblationReport:
    """Train both topologies with identical data and seeds, then evaluate each.

    The two configs may differ only in ``pointwise_reduction``.
    """
    if dataclasses.replace(cfg_a, pointwise_reduction=cfg_b.pointwise_reduction) != cfg_b:
        raise EvalError("ablation configs must differ only in pointwise_reduction")
    work = Path(work_dir)
    reports, counts = {}, {}
    for name, cfg in zip(names, (cfg_a, cfg_b)):
        net = DeepDeblurNet.init(cfg, init_seed)
        train(net, image_dir, train_cfg, work / name)
        reports[name] = psnr_sweep(net, image_dir, kernel_files, train_cfg.noise_sigma,
                                   train_cfg.seed)
        counts[name] = parameter_count(cfg)
    return AblationReport(reports, counts)
