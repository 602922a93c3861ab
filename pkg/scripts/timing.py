"""Per-image forward latency of the default network (and the ablated one) on a 112x96 face."""

import argparse
from pathlib import Path

from facedeblur.evalbench import time_inference
from facedeblur.imaging import load_png
from facedeblur.model import DeepDeblurNet, NetworkConfig, parameter_count

FACE = Path(__file__).resolve().parent.parent / "tests" / "data" / "face_112x96.png"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--warmup", type=int, default=2)
    args = ap.parse_args()
    img = load_png(FACE)
    for label, cfg in [("default", NetworkConfig()),
                       ("no reduction", NetworkConfig(pointwise_reduction=False))]:
        stats = time_inference(DeepDeblurNet.init(cfg, 0), img, args.warmup, args.reps)
        print(f"{label:>14}: {stats.mean * 1e3:8.1f} +/- {stats.std * 1e3:6.1f} ms "
              f"(n={stats.n}, {parameter_count(cfg)} params)")


if __name__ == "__main__":
    main()
