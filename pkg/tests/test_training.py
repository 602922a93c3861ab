import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facedeblur.checkpoint import load_checkpoint
from facedeblur.imaging import psnr, save_png, Image
from facedeblur.kernels import GpConfig
from facedeblur.model import DeepDeblurNet, NetworkConfig
from facedeblur.training import (
    OptimizerError, PlateauTracker, RmsState, TrainConfig, TrainingError, WeightSchedule,
    count_halvings, lr_at, lr_schedule, make_pair, read_log, rmsprop_step, train,
)
from facedeblur.losses import LossWeights
from facedeblur.tensor import Tensor


def test_rmsprop_zero_gradient():
    p = {"w": Tensor([1.5, -2.0])}
    p["w"].grad = np.zeros(2)
    state = RmsState({"w": np.array([0.4, 1.0])})
    rmsprop_step(p, state, 0.1)
    np.testing.assert_array_equal(p["w"].data, [1.5, -2.0])
    np.testing.assert_allclose(state.acc["w"], [0.36, 0.9])


def test_rmsprop_one_step_by_hand():
    p = {"p": Tensor([0.0])}
    p["p"].grad = np.array([1.0])
    state = RmsState({"p": np.array([0.0])})
    rmsprop_step(p, state, 0.001, 0.9, 1e-8)
    assert state.acc["p"][0] == pytest.approx(0.1, abs=1e-15)
    assert p["p"].data[0] == pytest.approx(-0.001 / math.sqrt(0.1 + 1e-8), rel=1e-15)


def test_rmsprop_quadratic_converges():
    p = {"p": Tensor([5.0])}
    state = RmsState()
    for _ in range(200):
        p["p"].grad = 2 * p["p"].data
        rmsprop_step(p, state, 0.05)
    assert abs(p["p"].data[0]) < 0.5


def test_rmsprop_missing_grad():
    with pytest.raises(OptimizerError):
        rmsprop_step({"w": Tensor([1.0])}, RmsState(), 0.1)


def test_lr_schedule_closed_forms():
    cfg = TrainConfig()
    assert lr_schedule(0, [], cfg) == cfg.lr0
    cfg = TrainConfig(decay_rate=0.5, decay_steps=1000)
    assert lr_schedule(2000, [1.0] * 50, cfg) == pytest.approx(cfg.lr0 / 4, rel=1e-15)


def test_plateau_halving():
    t = PlateauTracker(window=2, patience=3)
    for v in [5, 4, 3, 3, 3, 3, 3]:
        t.update(v)
    # window means: 4.5, 3.5, 3, 3, 3, 3 -> three stalls after the best at 3
    assert t.halvings == 1
    assert count_halvings([5, 4, 3, 3, 3, 3, 3], 2, 3) == 1


@settings(max_examples=30, deadline=None)
@given(losses=st.lists(st.floats(0, 10), min_size=1, max_size=80),
       rate=st.floats(0.1, 1.0), window=st.integers(1, 5), patience=st.integers(1, 5))
def test_lr_non_increasing(losses, rate, window, patience):
    cfg = TrainConfig(decay_rate=rate, decay_steps=7, plateau_window=window, plateau_patience=patience)
    lrs = [lr_schedule(s, losses[:s], cfg) for s in range(len(losses) + 1)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    t = PlateauTracker(window, patience)
    for s, v in enumerate(losses):
        t.update(v)
        assert lr_at(s + 1, t.halvings, cfg) == lrs[s + 1]


def test_weight_schedule(tmp_path):
    p = tmp_path / "w.txt"
    p.write_text("# step alpha beta\n0 1e-6 1e-6\n100 2e-6 1e-6\n")
    s = WeightSchedule.load(p, LossWeights())
    assert s.at(50) == LossWeights(1e-6, 1e-6)
    assert s.at(100) == LossWeights(2e-6, 1e-6)


def test_make_pair(face):
    gp = GpConfig()
    a = make_pair(face, gp, 0.0, np.random.default_rng(3))
    b = make_pair(face, gp, 0.0, np.random.default_rng(3))
    assert np.array_equal(a[0].data, b[0].data)
    assert np.array_equal(a[2].weights, b[2].weights)
    assert psnr(a[0], face) < math.inf


def test_make_pair_fresh_kernels(face):
    rng = np.random.default_rng(0)
    grids = [make_pair(face, GpConfig(), 0.0, rng)[2].weights for _ in range(100)]
    flat = np.stack([g.ravel() for g in grids])
    for i in range(100):
        for j in range(i + 1, 100):
            assert not np.array_equal(flat[i], flat[j])


def _tiny_train_cfg(**kw):
    base = dict(batch_size=1, max_steps=4, checkpoint_every=2, fixed_kernel_seed=0,
                image_size=(112, 96))
    base.update(kw)
    return TrainConfig(**base)


TINY_NET = NetworkConfig(num_modules=1, base_channels=4, scales=[1, 3])


def test_train_zero_steps_is_init(face_dir, tmp_path):
    net = DeepDeblurNet.init(TINY_NET, 0)
    res = train(net, face_dir, _tiny_train_cfg(max_steps=0), tmp_path / "ck")
    init = DeepDeblurNet.init(TINY_NET, 0)
    for k, v in res.checkpoint.params.items():
        assert np.array_equal(v, init.params[k].data)
    assert res.log == []
    assert load_checkpoint(tmp_path / "ck" / "final.ddblr").step == 0


def test_train_writes_log_and_checkpoints(face_dir, tmp_path):
    net = DeepDeblurNet.init(TINY_NET, 0)
    res = train(net, face_dir, _tiny_train_cfg(), tmp_path / "ck")
    out = tmp_path / "ck"
    assert (out / "ckpt_0000002.ddblr").exists() and (out / "ckpt_0000004.ddblr").exists()
    rows = read_log(out / "loss_log.csv")
    assert [r["step"] for r in rows] == [0, 1, 2, 3]
    assert list(rows[0]) == ["step", "lr", "l2", "tv", "face", "total"]
    w = LossWeights()
    for r, mem in zip(rows, res.log):
        assert r == mem
        assert abs(r["total"] - (r["l2"] + w.alpha * r["tv"] + w.beta * r["face"])) <= 1e-10


def test_resume_reproduces_log(face_dir, tmp_path):
    cfg = _tiny_train_cfg(max_steps=6, checkpoint_every=3, fixed_kernel_seed=None, batch_size=2)
    full = train(DeepDeblurNet.init(TINY_NET, 0), face_dir, cfg, tmp_path / "a")
    train(DeepDeblurNet.init(TINY_NET, 0), face_dir, _tiny_train_cfg(
        max_steps=3, checkpoint_every=3, fixed_kernel_seed=None, batch_size=2), tmp_path / "b")
    resumed = train(DeepDeblurNet.init(TINY_NET, 99), face_dir, cfg, tmp_path / "b",
                    resume=tmp_path / "b" / "ckpt_0000003.ddblr")
    assert resumed.log == full.log
    for k in full.checkpoint.params:
        assert np.array_equal(full.checkpoint.params[k], resumed.checkpoint.params[k])


def test_resume_rejects_different_config(face_dir, tmp_path):
    train(DeepDeblurNet.init(TINY_NET, 0), face_dir, _tiny_train_cfg(max_steps=2), tmp_path / "a")
    with pytest.raises(TrainingError):
        train(DeepDeblurNet.init(TINY_NET, 0), face_dir, _tiny_train_cfg(max_steps=4, lr0=0.01),
              tmp_path / "a", resume=tmp_path / "a" / "final.ddblr")


def test_train_empty_dataset(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(TrainingError):
        train(DeepDeblurNet.init(TINY_NET, 0), tmp_path / "empty", _tiny_train_cfg(), tmp_path / "o")


def test_train_wrong_image_size(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    save_png(Image(np.zeros((20, 20, 3))), d / "x.png")
    with pytest.raises(TrainingError):
        train(DeepDeblurNet.init(TINY_NET, 0), d, _tiny_train_cfg(), tmp_path / "o")


def test_non_finite_loss_dumps_diagnostics(face_dir, tmp_path):
    net = DeepDeblurNet.init(TINY_NET, 0)
    net.params["out"].data = net.params["out"].data * 1e300
    with pytest.raises(TrainingError):
        train(net, face_dir, _tiny_train_cfg(), tmp_path / "o")
    assert (tmp_path / "o" / "diagnostics.json").exists()


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        TrainConfig(rms_decay=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
