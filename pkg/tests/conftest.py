from pathlib import Path

import numpy as np
import pytest

from facedeblur.imaging import load_png
from facedeblur.model import NetworkConfig

DATA = Path(__file__).parent / "data"
FACE = DATA / "face_112x96.png"


def naive_conv2d(x, w):
    """Seven-loop "same" cross-correlation with edge replication, pure Python indexing."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    top, left = kh // 2, kw // 2
    out = np.zeros((n, o, h, wd))
    for b in range(n):
        for f in range(o):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                ii = min(max(i + u - top, 0), h - 1)
                                jj = min(max(j + v - left, 0), wd - 1)
                                acc += x[b, ch, ii, jj] * w[f, ch, u, v]
                    out[b, f, i, j] = acc
    return out


def naive_convolve_plane(x, k):
    """True 2-d convolution (flipped kernel) of one plane, edge replicated, by loops."""
    h, w = x.shape
    kh, kw = k.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for u in range(kh):
                for v in range(kw):
                    ii = min(max(i - (u - ch), 0), h - 1)
                    jj = min(max(j - (v - cw), 0), w - 1)
                    acc += x[ii, jj] * k[u, v]
            out[i, j] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def face():
    return load_png(FACE)


@pytest.fixture
def face_dir(tmp_path):
    d = tmp_path / "faces"
    d.mkdir()
    (d / FACE.name).write_bytes(FACE.read_bytes())
    return d


@pytest.fixture
def tiny_cfg():
    return NetworkConfig(num_modules=2, base_channels=4, scales=[1, 3])


@pytest.fixture
def toy_cfg():
    return NetworkConfig(num_modules=2, base_channels=16, scales=[1, 3, 5, 7])
