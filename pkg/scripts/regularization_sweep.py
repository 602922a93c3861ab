"""Vary the TV-to-facial weight ratio (0.2, 1, 5) on the toy problem and compare PSNR.

    python scripts/regularization_sweep.py --steps 500 --beta 1e-6
"""

import argparse
import shutil
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
    ap.add_argument("--out", type=Path, default=Path("runs/reg_sweep"))
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--beta", type=float, default=1e-6, help="facial weight; alpha = ratio * beta")
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.2, 1.0, 5.0])
    args = ap.parse_args()

    data = args.out / "data"
    data.mkdir(parents=True, exist_ok=True)
    shutil.copy(FACE, data / FACE.name)
    sharp = load_png(FACE)
    net_cfg = NetworkConfig(num_modules=2, base_channels=16, scales=[1, 3, 5, 7])

    print(f"{'alpha/beta':>10} {'alpha':>10} {'final loss':>12} {'blurry dB':>10} {'restored dB':>12}")
    for ratio in args.ratios:
        w = LossWeights(ratio * args.beta, args.beta)
        cfg = TrainConfig(batch_size=1, max_steps=args.steps, fixed_kernel_seed=0, loss_weights=w,
                          checkpoint_every=0)
        net = DeepDeblurNet.init(net_cfg, 0)
        result = train(net, data, cfg, args.out / f"ratio_{ratio:g}")
        blurry = blur(sharp, synth_kernel(cfg.gp, np.random.default_rng(0)))
        print(f"{ratio:>10g} {w.alpha:>10.2e} {result.log[-1]['total']:>12.5g} "
              f"{psnr(blurry, sharp):>10.3f} {psnr(net.restore(blurry), sharp):>12.3f}")


if __name__ == "__main__":
    main()
