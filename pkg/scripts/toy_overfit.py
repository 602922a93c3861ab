"""Overfit a tiny network on one face under one fixed synthetic kernel.

    python scripts/toy_overfit.py --steps 2000 --out runs/toy

Prints the loss drop (first-10-step mean against the last step) and the
blurry/restored PSNR on the training pair.
"""

import argparse
import json
import shutil
import time
from pathlib import Path

import numpy as np

from facedeblur.imaging import blur, load_png, psnr
from facedeblur.kernels import synth_kernel
from facedeblur.losses import LossWeights
from facedeblur.model import DeepDeblurNet, NetworkConfig
from facedeblur.training import TrainConfig, train

FACE = Path(__file__).resolve().parent.parent / "tests" / "data" / "face_112x96.png"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--image", type=Path, default=FACE)
    ap.add_argument("--out", type=Path, default=Path("runs/toy"))
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--kernel-seed", type=int, default=0)
    ap.add_argument("--alpha", type=float, default=1e-6)
    ap.add_argument("--beta", type=float, default=1e-6)
    args = ap.parse_args()

    data = args.out / "data"
    data.mkdir(parents=True, exist_ok=True)
    shutil.copy(args.image, data / args.image.name)
    net_cfg = NetworkConfig(num_modules=2, base_channels=16, scales=[1, 3, 5, 7])
    cfg = TrainConfig(batch_size=1, max_steps=args.steps, fixed_kernel_seed=args.kernel_seed,
                      loss_weights=LossWeights(args.alpha, args.beta), checkpoint_every=500)
    net = DeepDeblurNet.init(net_cfg, 0)

    t0 = time.perf_counter()
    result = train(net, data, cfg, args.out / "ckpt")
    elapsed = time.perf_counter() - t0

    totals = [row["total"] for row in result.log]
    sharp = load_png(args.image).as_rgb()
    blurry = blur(sharp, synth_kernel(cfg.gp, np.random.default_rng(args.kernel_seed)))
    summary = {
        "steps": args.steps,
        "seconds": elapsed,
        "loss_first10": float(np.mean(totals[:10])),
        "loss_last": totals[-1],
        "psnr_blurry": psnr(blurry, sharp),
        "psnr_restored": psnr(net.restore(blurry), sharp),
    }
    summary["loss_drop"] = 1 - summary["loss_last"] / summary["loss_first10"]
    summary["psnr_gain"] = summary["psnr_restored"] - summary["psnr_blurry"]
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for k, v in summary.items():
        print(f"{k:>14}: {v:.6g}" if isinstance(v, float) else f"{k:>14}: {v}")


if __name__ == "__main__":
    main()
