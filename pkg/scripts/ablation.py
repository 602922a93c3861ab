"""Pointwise-reduction ablation at desk scale: train with and without the 1x1 reduce, then sweep PSNR.

    python scripts/ablation.py --steps 200 --kernels 8
"""

import argparse
import shutil
from pathlib import Path

import numpy as np

from facedeblur.evalbench import ablation_compare
from facedeblur.kernels import GpConfig, linear_kernel, save_kernel, synth_kernel
from facedeblur.model import NetworkConfig
from facedeblur.training import TrainConfig

FACE = Path(__file__).resolve().parent.parent / "tests" / "data" / "face_112x96.png"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", type=Path, default=None, help="directory of 112x96 PNGs")
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--kernels", type=int, default=8, help="held-out GP kernels for evaluation")
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--modules", type=int, default=2)
    args = ap.parse_args()

    data = args.data
    if data is None:
        data = args.out / "data"
        data.mkdir(parents=True, exist_ok=True)
        shutil.copy(FACE, data / FACE.name)
    kdir = args.out / "kernels"
    kdir.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(args.kernels):
        # seeds disjoint from the per-step training streams
        path = kdir / f"gp_{i:03d}.mkern"
        save_kernel(synth_kernel(GpConfig(), np.random.default_rng([10_000, i])), path)
        files.append(path)
    save_kernel(linear_kernel(15, 45), kdir / "linear_L15_45.mkern")
    files.append(kdir / "linear_L15_45.mkern")

    on = NetworkConfig(num_modules=args.modules, base_channels=args.channels)
    off = NetworkConfig(num_modules=args.modules, base_channels=args.channels, pointwise_reduction=False)
    cfg = TrainConfig(batch_size=1, max_steps=args.steps, checkpoint_every=0)
    report = ablation_compare(data, files, on, off, cfg, args.out / "work")
    print(report.format_table())
    for name, rep in report.reports.items():
        rep.to_csv(args.out / f"{name}.csv")


if __name__ == "__main__":
    main()
