"""RMSProp training with exponential + plateau learning-rate decay.

Blurry/sharp pairs are synthesized on the fly. All randomness for step ``s``
comes from ``default_rng([seed, s])``, so batches depend only on the seed
and step index and a resumed run replays exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, load_into_net, save_checkpoint
from .imaging import Image, blur, load_png_dir
from .kernels import GpConfig, MotionKernel, synth_kernel
from .losses import LossWeights, load_extractor, loss_terms, proxy_extractor
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "l2", "tv", "face", "total")


class OptimizerError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay_rate: float = 0.9
    decay_steps: int = 1000
    plateau_window: int = 100
    plateau_patience: int = 500
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    batch_size: int = 4
    max_steps: int = 1000
    seed: int = 0
    noise_sigma: float = 0.0
    image_size: tuple[int, int] = (112, 96)
    checkpoint_every: int = 500
    fixed_kernel_seed: int | None = None
    weight_schedule: str | None = None
    feature_dim: int = 64
    extractor_seed: int = 0
    extractor_path: str | None = None
    loss_weights: LossWeights = field(default_factory=LossWeights)
    gp: GpConfig = field(default_factory=GpConfig)

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.rms_decay < 1.0:
            raise ValueError("rms_decay must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.decay_rate <= 1.0 or self.decay_steps < 1:
            raise ValueError("decay_rate must lie in (0, 1] and decay_steps be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def digest(self) -> str:
        """Hash of every field that affects the optimization trajectory."""
        d = asdict(self)
        d.pop("max_steps")
        d.pop("checkpoint_every")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# optimizer

@dataclass
class RmsState:
    acc: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "RmsState":
        return cls({k: np.zeros_like(v.data) for k, v in params.items()})


def rmsprop_step(params: dict[str, Tensor], state: RmsState, lr: float,
                 decay: float = 0.9, eps: float = 1e-8) -> None:
    """In-place update: acc = decay*acc + (1-decay)*g^2; p -= lr*g/sqrt(acc+eps)."""
    missing = [k for k, p in params.items() if p.grad is None]
    if missing:
        raise OptimizerError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    for name, p in params.items():
        g = p.grad
        acc = state.acc.get(name)
        if acc is None:
            acc = np.zeros_like(p.data)
        acc = decay * acc + (1.0 - decay) * g * g
        state.acc[name] = acc
        p.data = p.data - lr * g / np.sqrt(acc + eps)
    state.step += 1


# learning-rate schedule

class PlateauTracker:
    """Counts halvings: one whenever the windowed mean loss has not improved for ``patience`` steps."""

    def __init__(self, window: int = 100, patience: int = 500):
        self.window = window
        self.patience = patience
        self.recent: deque[float] = deque(maxlen=window)
        self.best = math.inf
        self.since_best = 0
        self.halvings = 0

    def update(self, loss: float) -> None:
        self.recent.append(float(loss))
        if len(self.recent) < self.window:
            return
        mean = math.fsum(self.recent) / self.window
        if mean < self.best:
            self.best = mean
            self.since_best = 0
            return
        self.since_best += 1
        if self.since_best >= self.patience:
            self.halvings += 1
            self.since_best = 0

    def state(self) -> dict:
        return {"recent": list(self.recent), "best": self.best,
                "since_best": self.since_best, "halvings": self.halvings}

    @classmethod
    def from_state(cls, state: dict, window: int, patience: int) -> "PlateauTracker":
        t = cls(window, patience)
        t.recent.extend(state.get("recent", []))
        t.best = state.get("best", math.inf)
        t.since_best = state.get("since_best", 0)
        t.halvings = state.get("halvings", 0)
        return t


def count_halvings(losses, window: int, patience: int) -> int:
    t = PlateauTracker(window, patience)
    for v in losses:
        t.update(v)
    return t.halvings


def lr_at(step: int, halvings: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.decay_rate ** (step / cfg.decay_steps) * 0.5 ** halvings


def lr_schedule(step: int, recent_losses, cfg: TrainConfig) -> float:
    """Learning rate for ``step`` given the losses of all earlier steps."""
    return lr_at(step, count_halvings(recent_losses, cfg.plateau_window, cfg.plateau_patience), cfg)


class WeightSchedule:
    """Piecewise-constant (alpha, beta) by step, read from ``step alpha beta`` lines."""

    def __init__(self, entries: list[tuple[int, float, float]], default: LossWeights):
        self.entries = sorted(entries)
        self.default = default

    @classmethod
    def load(cls, path, default: LossWeights) -> "WeightSchedule":
        entries = []
        for ln in Path(path).read_text().splitlines():
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            step, alpha, beta = ln.split()
            entries.append((int(step), float(alpha), float(beta)))
        return cls(entries, default)

    def at(self, step: int) -> LossWeights:
        current = self.default
        for s, a, b in self.entries:
            if s <= step:
                current = LossWeights(a, b)
        return current


# data

def make_pair(sharp: Image, gp: GpConfig, noise_sigma: float, rng: np.random.Generator,
              kernel: MotionKernel | None = None):
    """(blurry, sharp, kernel); a fresh kernel is synthesized unless one is given."""
    if kernel is None:
        kernel = synth_kernel(gp, rng)
    return blur(sharp, kernel, noise_sigma, rng), sharp, kernel


def load_dataset(dataset_dir, image_size) -> list[Image]:
    images = [im.as_rgb() for im in load_png_dir(dataset_dir)]
    if not images:
        raise TrainingError(f"no PNG images in {dataset_dir}")
    for im in images:
        if (im.height, im.width) != tuple(image_size):
            raise TrainingError(f"image of size {im.height}x{im.width}, expected {image_size}")
    return images


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]


def _make_checkpoint(net, rms: RmsState, step: int, cfg: TrainConfig, tracker: PlateauTracker):
    return Checkpoint.from_net(
        net,
        rms={k: v.copy() for k, v in rms.acc.items()},
        step=step,
        config_digest=cfg.digest(),
        schedule_state=tracker.state(),
    )


def train(net, dataset_dir, cfg: TrainConfig, checkpoint_dir, resume=None, phi=None) -> TrainResult:
    """Run the optimization loop up to ``cfg.max_steps`` total steps.

    Writes ``loss_log.csv``, periodic ``ckpt_<step>.ddblr`` files and
    ``final.ddblr`` into ``checkpoint_dir``. ``resume`` is a checkpoint path
    whose directory must also hold the log of the interrupted run.
    """
    out = Path(checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = load_dataset(dataset_dir, cfg.image_size)
    if phi is None:
        phi = load_extractor(cfg.extractor_path) if cfg.extractor_path else \
            proxy_extractor(cfg.extractor_seed, cfg.feature_dim)
    schedule = WeightSchedule.load(cfg.weight_schedule, cfg.loss_weights) if cfg.weight_schedule \
        else WeightSchedule([], cfg.loss_weights)
    fixed_kernel = None
    if cfg.fixed_kernel_seed is not None:
        fixed_kernel = synth_kernel(cfg.gp, np.random.default_rng(cfg.fixed_kernel_seed))

    rms = RmsState.zeros_like(net.params)
    tracker = PlateauTracker(cfg.plateau_window, cfg.plateau_patience)
    rows: list[dict] = []
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config_digest != cfg.digest():
            raise TrainingError("checkpoint was produced with a different training config")
        load_into_net(ckpt, net)
        rms = RmsState({k: v.copy() for k, v in ckpt.rms.items()}, ckpt.step)
        tracker = PlateauTracker.from_state(ckpt.schedule_state, cfg.plateau_window,
                                            cfg.plateau_patience)
        start = ckpt.step
        prior = Path(resume).parent / "loss_log.csv"
        if prior.exists():
            rows = [r for r in read_log(prior) if r["step"] < start]

    params = net.params
    for step in range(start, cfg.max_steps):
        rng = np.random.default_rng([cfg.seed, step])
        picks = rng.integers(0, len(images), cfg.batch_size)
        blurry, sharp = [], []
        for i in picks:
            b, s, _ = make_pair(images[i], cfg.gp, cfg.noise_sigma, rng, fixed_kernel)
            blurry.append(b.to_batch()[0])
            sharp.append(s.to_batch()[0])
        x, y = Tensor(np.stack(blurry)), Tensor(np.stack(sharp))
        weights = schedule.at(step)
        for p in params.values():
            p.grad = None
        with Tape():
            terms = loss_terms(net(x), y, weights, phi)
            values = {k: t.item() for k, t in terms.items()}
            if not all(math.isfinite(v) for v in values.values()):
                diag = {"step": step, "seed": cfg.seed, "batch": picks.tolist(), **values}
                (out / "diagnostics.json").write_text(json.dumps(diag, indent=2))
                raise TrainingError(f"non-finite loss at step {step}: {values}")
            backward(terms["total"])
        lr = lr_at(step, tracker.halvings, cfg)
        rmsprop_step(params, rms, lr, cfg.rms_decay, cfg.rms_eps)
        tracker.update(values["total"])
        rows.append({"step": step, "lr": lr, **values})
        if step % 50 == 0:
            log.info("step %d lr %.3g total %.6g", step, lr, values["total"])
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(_make_checkpoint(net, rms, step + 1, cfg, tracker),
                            out / f"ckpt_{step + 1:07d}.ddblr")
            write_log(rows, out / "loss_log.csv")

    final = _make_checkpoint(net, rms, max(start, cfg.max_steps), cfg, tracker)
    save_checkpoint(final, out / "final.ddblr")
    write_log(rows, out / "loss_log.csv")
    return TrainResult(final, rows)
