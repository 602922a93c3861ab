"""``facedeblur`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .checkpoint import IDENTITY_STUB, Checkpoint, load_network, save_checkpoint
from .evalbench import psnr_sweep, time_inference
from .imaging import Image, blur, load_png, save_png
from .kernels import GpConfig, load_kernel, save_kernel, synth_kernel
from .model import DeepDeblurNet, IdentityNet, NetworkConfig, dump_feature_maps
from .training import TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _print_resolved(pairs: dict) -> None:
    print("# resolved config")
    for k, v in pairs.items():
        print(f"{k} = {v}")


def _default_threads() -> int:
    return os.cpu_count() or 1


# subcommands

def cmd_synth_kernels(a) -> None:
    gp = GpConfig(canvas=a.canvas, valid_size_range=(a.valid_min, a.valid_max), seed=a.seed)
    _print_resolved({"gp.seed": gp.seed, "gp.canvas": gp.canvas,
                     "gp.valid_size_range": f"{a.valid_min},{a.valid_max}", "count": a.count,
                     "out": a.out, "threads": a.threads})
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    def make(i):
        return synth_kernel(gp, np.random.default_rng([gp.seed, i]))

    with ThreadPoolExecutor(max(1, a.threads)) as pool:
        kernels = list(pool.map(make, range(a.count)))
    for i, k in enumerate(kernels):
        save_kernel(k, out / f"kernel_{i:04d}.mkern")
    if a.preview and kernels:
        cols = int(np.ceil(np.sqrt(len(kernels))))
        rows = int(np.ceil(len(kernels) / cols))
        c = gp.canvas
        sheet = np.zeros((rows * (c + 2), cols * (c + 2)))
        for i, k in enumerate(kernels):
            r, q = divmod(i, cols)
            sheet[r * (c + 2) + 1: r * (c + 2) + 1 + c,
                  q * (c + 2) + 1: q * (c + 2) + 1 + c] = k.weights / k.weights.max()
        save_png(Image(sheet), out / "preview.png")
    print(f"wrote {len(kernels)} kernels to {out}")


def cmd_blur(a) -> None:
    _print_resolved({"in": a.inp, "kernel": a.kernel, "out": a.out,
                     "train.noise_sigma": a.noise, "train.seed": a.seed})
    img = load_png(a.inp)
    k = load_kernel(a.kernel)
    save_png(blur(img, k, a.noise, np.random.default_rng(a.seed)), a.out)


def cmd_init(a) -> None:
    _, net_cfg = _resolve_configs(a)
    if a.identity_stub:
        ckpt = Checkpoint(IDENTITY_STUB)
    else:
        ckpt = Checkpoint.from_net(DeepDeblurNet.init(net_cfg, a.seed))
    _print_resolved({"identity_stub": a.identity_stub, "seed": a.seed, "out": a.out})
    save_checkpoint(ckpt, a.out)


def _resolve_configs(a):
    train_cfg, net_cfg = TrainConfig(), NetworkConfig()
    if getattr(a, "config", None):
        train_cfg, net_cfg = C.load_config(a.config)
    overrides = {}
    for item in getattr(a, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects section.field=value, got {item!r}")
        overrides[key.strip()] = value
    for flag, key in (("max_steps", "train.max_steps"), ("seed", "train.seed")):
        if getattr(a, flag, None) is not None:
            overrides[key] = str(getattr(a, flag))
    return C.apply_overrides(train_cfg, net_cfg, overrides)


def cmd_train(a) -> None:
    train_cfg, net_cfg = _resolve_configs(a)
    print(C.dump_config(train_cfg, net_cfg), end="")
    net = DeepDeblurNet.init(net_cfg, train_cfg.seed)
    result = train(net, a.data, train_cfg, a.out, resume=a.resume)
    last = result.log[-1] if result.log else None
    print(f"finished at step {result.checkpoint.step}"
          + (f", total loss {last['total']:.6g}" if last else ""))


def cmd_deblur(a) -> None:
    _print_resolved({"ckpt": a.ckpt, "in": a.inp, "out": a.out})
    net = load_network(a.ckpt)
    save_png(net.restore(load_png(a.inp)), a.out)


def cmd_eval(a) -> None:
    kernels = sorted(Path(a.kernels).glob("*.mkern"))
    _print_resolved({"ckpt": a.ckpt, "data": a.data, "kernels": a.kernels, "report": a.report,
                     "train.noise_sigma": a.noise, "train.seed": a.seed, "threads": a.threads})
    report = psnr_sweep(load_network(a.ckpt), a.data, kernels, a.noise, a.seed, a.threads)
    report.to_csv(a.report)
    print(report.format_table())


def cmd_bench(a) -> None:
    _print_resolved({"ckpt": a.ckpt, "in": a.inp, "reps": a.reps, "warmup": a.warmup})
    stats = time_inference(load_network(a.ckpt), load_png(a.inp), a.warmup, a.reps)
    print(f"mean {stats.mean:.6f} s  std {stats.std:.6f} s  n {stats.n}")


def cmd_dump_features(a) -> None:
    _print_resolved({"ckpt": a.ckpt, "in": a.inp, "module": a.module, "out": a.out})
    net = load_network(a.ckpt)
    if isinstance(net, IdentityNet):
        raise ValueError("identity-stub checkpoints have no feature maps")
    for p in dump_feature_maps(net, load_png(a.inp), a.module, a.out):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="facedeblur", description="One-step blind face deblurring toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-kernels", help="sample GP motion kernels to MKERN files")
    s.add_argument("--count", type=int, required=True, help="number of kernels")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0, help="base RNG seed (gp.seed)")
    s.add_argument("--canvas", type=int, default=27, help="kernel side length (gp.canvas)")
    s.add_argument("--valid-min", type=int, default=8, help="smallest valid size (gp.valid_size_range[0])")
    s.add_argument("--valid-max", type=int, default=20, help="largest valid size (gp.valid_size_range[1])")
    s.add_argument("--preview", action="store_true", help="also write preview.png contact sheet")
    s.add_argument("--threads", type=int, default=_default_threads(), help="worker threads")
    s.set_defaults(func=cmd_synth_kernels)

    s = sub.add_parser("blur", help="degrade an image with a kernel (y = x*k + n)")
    s.add_argument("--in", dest="inp", required=True, help="input PNG")
    s.add_argument("--kernel", required=True, help="MKERN kernel file")
    s.add_argument("--out", required=True, help="output PNG")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std (train.noise_sigma)")
    s.add_argument("--seed", type=int, default=0, help="noise RNG seed (train.seed)")
    s.set_defaults(func=cmd_blur)

    s = sub.add_parser("init", help="write an untrained (or identity-stub) checkpoint")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--config", help="key=value config file (net.* keys are used)")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--seed", type=int, default=0, help="initialization seed")
    s.add_argument("--identity-stub", action="store_true", help="write an identity-stub checkpoint")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("train", help="train the restoration network")
    s.add_argument("--data", required=True, help="directory of sharp PNGs of train.image_size")
    s.add_argument("--config", help="key=value config file (train.*, gp.*, loss.*, net.*)")
    s.add_argument("--out", required=True, help="checkpoint/log directory")
    s.add_argument("--max-steps", type=int, help="total optimization steps (train.max_steps)")
    s.add_argument("--seed", type=int, help="training and init seed (train.seed)")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. loss.alpha=1e-3")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("deblur", help="restore one blurry image")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--in", dest="inp", required=True, help="blurry PNG")
    s.add_argument("--out", required=True, help="restored PNG")
    s.set_defaults(func=cmd_deblur)

    s = sub.add_parser("eval", help="PSNR sweep over a kernel directory")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--data", required=True, help="directory of sharp PNGs")
    s.add_argument("--kernels", required=True, help="directory of .mkern files")
    s.add_argument("--report", required=True, help="CSV report path")
    s.add_argument("--noise", type=float, default=0.0, help="noise std (train.noise_sigma)")
    s.add_argument("--seed", type=int, default=0, help="noise seed (train.seed)")
    s.add_argument("--threads", type=int, default=_default_threads(), help="worker threads")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time the forward pass")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--in", dest="inp", required=True, help="input PNG")
    s.add_argument("--reps", type=int, default=5, help="timed repetitions")
    s.add_argument("--warmup", type=int, default=1, help="discarded warmup runs")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("dump-features", help="write per-scale branch responses of one module")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--in", dest="inp", required=True, help="input PNG")
    s.add_argument("--module", type=int, default=0, help="inception module index")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_dump_features)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
