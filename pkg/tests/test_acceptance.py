"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

The toy-training criteria share one module-scoped set of runs (about 14 min on
one CPU core): run A and run B are identical 2000-step trainings; run C
resumes from A's step-1000 checkpoint.
"""

import math
import time

import numpy as np
import pytest

from facedeblur import tensor as T
from facedeblur.evalbench import psnr_sweep, time_inference
from facedeblur.imaging import blur, convolve, load_png, psnr
from facedeblur.kernels import GpConfig, MotionKernel, gram_matrix, linear_kernel, synth_kernel
from facedeblur.losses import LossWeights, facial_loss, l2_loss, loss_terms, proxy_extractor, tv_loss
from facedeblur.model import (
    DeepDeblurNet, NetworkConfig, _param_shapes, inception_module_forward, parameter_count,
)
from facedeblur.tensor import Tensor, finite_diff_check
from facedeblur.training import TrainConfig, read_log, train

from conftest import FACE, naive_conv2d, naive_convolve_plane
from test_tensor import _op_cases

pytestmark = pytest.mark.slow

TOY_NET = NetworkConfig(num_modules=2, base_channels=16, scales=[1, 3, 5, 7])
TOY_STEPS = 2000


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail=""):
        with capsys.disabled():
            print(f"\nACCEPTANCE {'PASS' if ok else 'FAIL'} | {name} | {detail}")
        return ok
    return emit


def test_gradient_suite(report):
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        for name, (f, at) in _op_cases(np.random.default_rng(seed)).items():
            worst[name] = max(worst.get(name, 0.0), finite_diff_check(f, Tensor(at), h=1e-5))

    phi = proxy_extractor(0, 16)
    w = LossWeights(0.3, 0.2)
    for seed in range(20):
        r = np.random.default_rng(seed)
        target = Tensor(r.random((2, 3, 10, 9)))
        at = r.random((2, 3, 10, 9))
        losses = {
            "loss_l2": lambda t: l2_loss(t, target),
            "loss_tv": tv_loss,
            "loss_face": lambda t: facial_loss(t, target, phi),
            "loss_total": lambda t: loss_terms(t, target, w, phi)["total"],
        }
        for name, f in losses.items():
            worst[name] = max(worst.get(name, 0.0), finite_diff_check(f, Tensor(at), h=1e-5))

    # end to end: whole network w.r.t. sampled coordinates of every parameter and the input
    nets = [NetworkConfig(num_modules=2, base_channels=4, scales=[1, 3, 14]),
            NetworkConfig(num_modules=1, base_channels=4, scales=[1, 3, 5, 7],
                          pointwise_reduction=False)]
    for seed in range(20):
        cfg = nets[seed % 2]
        net = DeepDeblurNet.init(cfg, seed)
        r = np.random.default_rng(100 + seed)
        x = Tensor(r.random((1, 3, 14, 15)))
        probe = Tensor(r.normal(size=(1, 3, 14, 15)))
        for name, p in net.params.items():
            idx = r.choice(p.data.size, min(3, p.data.size), replace=False)

            def f(t, name=name):
                saved = net.params[name]
                net.params[name] = t
                try:
                    return T.sum_all(T.square(T.sub(net(x), probe)))
                finally:
                    net.params[name] = saved

            worst["network"] = max(worst.get("network", 0.0),
                                   finite_diff_check(f, p, h=1e-5, indices=idx))
        worst["network_input"] = max(
            worst.get("network_input", 0.0),
            finite_diff_check(lambda t: T.sum_all(T.square(T.sub(net(t), probe))), x, h=1e-5,
                              indices=r.choice(x.data.size, 10, replace=False)))
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= 1e-4 and elapsed <= 300
    report("gradient suite", ok, f"{len(worst)} ops x 20 seeds, max rel err {top:.2e}, {elapsed:.1f}s")
    assert ok, worst


def test_kernel_suite(report):
    t0 = time.perf_counter()
    cfg = GpConfig()
    failures = 0
    for i in range(1000):
        k = synth_kernel(cfg, np.random.default_rng([7, i]))
        w = k.weights
        ys, xs = np.mgrid[: w.shape[0], : w.shape[1]]
        c = (k.canvas - 1) / 2
        good = (w.min() >= 0 and abs(w.sum() - 1) <= 1e-9
                and abs((w * ys).sum() / w.sum() - c) <= 0.5
                and abs((w * xs).sum() / w.sum() - c) <= 0.5
                and 8 <= k.valid_size <= 20)
        failures += not good
    r = np.random.default_rng(3)
    min_eig = min(
        np.linalg.eigvalsh(gram_matrix(np.sort(r.uniform(0, 5, n)), cfg)).min()
        for n in r.integers(2, 201, size=50)
    )
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and min_eig >= -1e-8 * cfg.sigma_f2 and elapsed <= 60
    report("kernel suite", ok, f"1000 kernels, {failures} invalid, min Gram eig {min_eig:.2e}, "
                               f"{elapsed:.1f}s")
    assert ok


def test_convolution_oracle(report):
    r = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        kc = 2 * int(r.integers(0, 6)) + 1
        h, w = (int(v) for v in r.integers(max(kc, 6), 24, size=2))
        img = r.random((h, w, 3))
        kw = r.random((kc, kc))
        k = MotionKernel(kw / kw.sum(), kc)
        ref = np.stack([naive_convolve_plane(img[:, :, c], k.weights) for c in range(3)], axis=2)
        for method in ("fft", "direct"):
            worst = max(worst, np.abs(convolve(img, k, method) - ref).max())
        # optimized network convolution against the seven-loop nest (even sizes too)
        x = r.normal(size=(1, 2, h, w))
        wt = r.normal(size=(2, 2, kc, kc + int(r.integers(0, 2))))
        worst = max(worst, np.abs(T.conv2d(Tensor(x), Tensor(wt)).data - naive_conv2d(x, wt)).max())
    face = load_png(FACE)
    delta = np.zeros((27, 27))
    delta[13, 13] = 1.0
    d = MotionKernel(delta, 1)
    delta_err = max(np.abs(convolve(face.data, d, m) - face.data).max() for m in ("fft", "direct"))
    ok = worst <= 1e-6 and delta_err <= 1e-12
    report("convolution oracle", ok, f"50 pairs max err {worst:.2e}, delta identity err {delta_err:.2e}")
    assert ok


def test_loss_correctness(report):
    phi = proxy_extractor(0, 16)
    r = np.random.default_rng(5)
    a = Tensor(np.full((2, 3, 8, 8), 0.75))
    b = Tensor(np.full((2, 3, 8, 8), 0.25))
    p, t = Tensor(r.random((2, 3, 12, 10))), Tensor(r.random((2, 3, 12, 10)))
    exact = [
        l2_loss(a, b).item() == 0.25,
        l2_loss(p, p).item() == 0.0,
        tv_loss(a).item() == 0.0,
        tv_loss(Tensor(np.array([[[[0.0, 1.0], [0.0, 1.0]]]]))).item() == 2.0,
        facial_loss(p, p, phi).item() == 0.0,
    ]
    decomp = 0.0
    for alpha, beta in [(0.0, 0.0), (1e-6, 1e-6), (0.3, 2.0), (5.0, 0.1)]:
        terms = loss_terms(p, t, LossWeights(alpha, beta), phi)
        manual = terms["l2"].item() + alpha * terms["tv"].item() + beta * terms["face"].item()
        decomp = max(decomp, abs(terms["total"].item() - manual))
    ok = all(exact) and decomp <= 1e-10
    report("loss correctness", ok, f"exact cases {sum(exact)}/{len(exact)}, decomposition err {decomp:.1e}")
    assert ok


def test_architecture_contract(report):
    r = np.random.default_rng(9)
    checks = {}

    cfg = NetworkConfig(num_modules=2, base_channels=8, scales=[1, 3, 5, 7, 14])
    net = DeepDeblurNet.init(cfg, 0)
    for name, p in net.params.items():
        if name.startswith("m"):
            p.data = np.zeros_like(p.data)
    x = Tensor(r.normal(size=(1, 8, 18, 16)))
    checks["residual identity"] = all(
        np.abs(inception_module_forward(net.module_params(m), x, cfg)[0].data - x.data).max() <= 1e-12
        for m in range(cfg.num_modules))

    small = DeepDeblurNet.init(NetworkConfig(num_modules=1, base_channels=4, scales=[1, 3, 14]), 1)
    sizes = r.integers(14, 40, size=(12, 2))
    checks["shape preservation"] = all(
        small(Tensor(r.random((1, 3, int(h), int(w))))).shape == (1, 3, int(h), int(w))
        for h, w in sizes)

    # hand count for the default net: stem + 6 modules + output, no biases
    b, half = 64, 32
    per_module = sum(half * b + half * half * k * k for k in [1, 3, 5, 7, 14]) + b * 5 * half
    hand = 3 * b * 9 + 6 * per_module + b * 3
    enumerated = sum(int(np.prod(s)) for _, s in _param_shapes(NetworkConfig()))
    built = DeepDeblurNet.init(NetworkConfig(), 0).num_parameters()
    checks["parameter audit"] = hand == parameter_count(NetworkConfig()) == enumerated == built == 1845120

    on = DeepDeblurNet.init(NetworkConfig(), 0).module_params(0)
    off_cfg = NetworkConfig(pointwise_reduction=False)
    off = DeepDeblurNet.init(off_cfg, 0).module_params(0)
    checks["ablation topology"] = all(
        off[f"k{k}.conv"].data.size > on[f"k{k}.conv"].data.size and f"k{k}.reduce" not in off
        for k in off_cfg.scales) and parameter_count(off_cfg) > parameter_count(NetworkConfig())

    ok = all(checks.values())
    report("architecture contract", ok,
           ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
           + f"; default params {built}, ablated {parameter_count(off_cfg)}")
    assert ok, checks


# toy-scale training


def _toy_cfg(**kw):
    return TrainConfig(batch_size=1, max_steps=TOY_STEPS, fixed_kernel_seed=0,
                       loss_weights=LossWeights(1e-6, 1e-6), checkpoint_every=1000, seed=0, **kw)


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    data = root / "data"
    data.mkdir()
    (data / FACE.name).write_bytes(FACE.read_bytes())
    cfg = _toy_cfg()
    out = {"data": data, "cfg": cfg}
    for name in ("a", "b"):
        net = DeepDeblurNet.init(TOY_NET, 0)
        t0 = time.perf_counter()
        result = train(net, data, cfg, root / name)
        out[name] = (net, result, time.perf_counter() - t0, root / name)
    net = DeepDeblurNet.init(TOY_NET, 0)
    train(net, data, cfg, root / "c", resume=root / "a" / "ckpt_0001000.ddblr")
    out["c"] = (net, None, None, root / "c")
    return out


def test_toy_overfit(report, toy_runs):
    net, result, elapsed, _ = toy_runs["a"]
    totals = [row["total"] for row in result.log]
    first = float(np.mean(totals[:10]))
    last = totals[-1]
    drop = 1 - last / first
    sharp = load_png(FACE)
    kernel = synth_kernel(toy_runs["cfg"].gp, np.random.default_rng(0))
    blurry = blur(sharp, kernel)
    p_blurry, p_restored = psnr(blurry, sharp), psnr(net.restore(blurry), sharp)
    gain = p_restored - p_blurry
    ok = len(totals) == TOY_STEPS and drop >= 0.8 and gain >= 2.0 and elapsed <= 900
    report("toy overfit", ok,
           f"loss {first:.4g} -> {last:.4g} (drop {100 * drop:.1f}%), PSNR {p_blurry:.2f} -> "
           f"{p_restored:.2f} dB (+{gain:.2f}), {elapsed:.0f}s")
    assert ok


def test_determinism(report, toy_runs):
    log_a = (toy_runs["a"][3] / "loss_log.csv").read_bytes()
    log_b = (toy_runs["b"][3] / "loss_log.csv").read_bytes()
    log_c = (toy_runs["c"][3] / "loss_log.csv").read_bytes()
    params_same = all(
        np.array_equal(p.data, toy_runs["b"][0].params[k].data)
        and np.array_equal(p.data, toy_runs["c"][0].params[k].data)
        for k, p in toy_runs["a"][0].params.items())
    rows = len(read_log(toy_runs["a"][3] / "loss_log.csv"))
    ok = log_a == log_b and log_a == log_c and params_same
    report("determinism", ok, f"runs A/B logs equal {log_a == log_b}, resume log equal {log_a == log_c}, "
                              f"final params equal {params_same}, {rows} rows")
    assert ok


def test_linear_kernel_smoke(report, toy_runs, tmp_path):
    net = toy_runs["a"][0]
    rep = psnr_sweep(net, [load_png(FACE)], [("linear_L15_45", linear_kernel(15, 45))])
    header = rep.to_csv(tmp_path / "linear.csv").splitlines()[0].split(",")
    row = rep.rows[0]
    ok = ("blurry_psnr" in header and "restored_psnr" in header
          and math.isfinite(row.blurry_psnr) and math.isfinite(row.restored_psnr))
    report("linear-kernel smoke", ok,
           f"L=15 angle=45: blurry {row.blurry_psnr:.2f} dB, restored {row.restored_psnr:.2f} dB")
    assert ok


def test_timing_harness(report):
    net = DeepDeblurNet.init(NetworkConfig(), 0)
    stats = time_inference(net, load_png(FACE), warmup=1, reps=5)
    ok = stats.n == 5 and math.isfinite(stats.mean) and math.isfinite(stats.std)
    report("timing harness", ok, f"default net 112x96: {stats.mean:.3f} +/- {stats.std:.3f} s "
                                 f"per image (n={stats.n})")
    assert ok
