"""DDBLR1 binary container for network checkpoints and extractor weights.

Layout::

    b"DDBLR1"
    u32 header length, UTF-8 JSON header (sorted keys)
    per tensor: u16 name length, name, u8 ndim, u32 dims..., float64 LE values

The header records the tensor count and a SHA-256 of the tensor section so
truncation and corruption are both detected on read.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import DeepDeblurNet, IdentityNet, NetworkConfig
from .tensor import Tensor

MAGIC = b"DDBLR1"
FORMAT_VERSION = 1
IDENTITY_STUB = "identity-stub"
NETWORK = "network"


class CheckpointError(ValueError):
    pass


def _encode_tensors(tensors) -> bytes:
    buf = io.BytesIO()
    for name, arr in tensors:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def write_container(path, header: dict, tensors) -> None:
    payload = _encode_tensors(tensors)
    header = dict(header, format_version=FORMAT_VERSION, tensor_count=len(tensors),
                  payload_sha256=hashlib.sha256(payload).hexdigest())
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(head)) + head + payload)


def read_container(path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a DDBLR1 file")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated file")
        chunk = blob[pos: pos + n]
        pos += n
        return chunk

    (hlen,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('format_version')!r}")
    payload_start = pos
    tensors = []
    for _ in range(header["tensor_count"]):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        tensors.append((name, arr))
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    if hashlib.sha256(blob[payload_start:]).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload digest mismatch")
    return header, tensors


@dataclass
class Checkpoint:
    kind: str
    network_config: NetworkConfig | None = None
    params: dict[str, np.ndarray] = field(default_factory=dict)
    rms: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    config_digest: str = ""
    schedule_state: dict = field(default_factory=dict)

    @classmethod
    def from_net(cls, net, **kw) -> "Checkpoint":
        if isinstance(net, IdentityNet):
            return cls(IDENTITY_STUB, **kw)
        params = {k: v.data.copy() for k, v in net.params.items()}
        return cls(NETWORK, net.config, params, **kw)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "kind": ckpt.kind,
        "network_config": asdict(ckpt.network_config) if ckpt.network_config else None,
        "step": ckpt.step,
        "config_digest": ckpt.config_digest,
        "schedule_state": ckpt.schedule_state,
        "param_names": list(ckpt.params),
        "rms_names": list(ckpt.rms),
    }
    tensors = list(ckpt.params.items()) + [("rms/" + k, v) for k, v in ckpt.rms.items()]
    write_container(path, header, tensors)


def load_checkpoint(path) -> Checkpoint:
    header, tensors = read_container(path)
    kind = header.get("kind")
    if kind not in (NETWORK, IDENTITY_STUB):
        raise CheckpointError(f"{path}: not a network checkpoint (kind {kind!r})")
    named = dict(tensors)
    try:
        params = {k: named[k] for k in header["param_names"]}
        rms = {k: named["rms/" + k] for k in header["rms_names"]}
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from None
    cfg = header["network_config"]
    return Checkpoint(
        kind=kind,
        network_config=NetworkConfig(**cfg) if cfg else None,
        params=params,
        rms=rms,
        step=header["step"],
        config_digest=header["config_digest"],
        schedule_state=header["schedule_state"],
    )


def load_into_net(ckpt: Checkpoint, net: DeepDeblurNet) -> None:
    """Copy checkpoint parameters into ``net``, rejecting any config or shape mismatch."""
    if ckpt.kind != NETWORK:
        raise CheckpointError(f"cannot load a {ckpt.kind!r} checkpoint into a network")
    if ckpt.network_config != net.config:
        raise CheckpointError(f"checkpoint config {ckpt.network_config} differs from {net.config}")
    if list(ckpt.params) != list(net.params):
        raise CheckpointError("parameter names differ from the network")
    for name, arr in ckpt.params.items():
        if arr.shape != net.params[name].shape:
            raise CheckpointError(f"{name}: shape {arr.shape} vs {net.params[name].shape}")
    for name, arr in ckpt.params.items():
        net.params[name].data = arr.copy()


def network_from_checkpoint(ckpt: Checkpoint):
    if ckpt.kind == IDENTITY_STUB:
        return IdentityNet()
    params = {k: Tensor(v, requires_grad=True) for k, v in ckpt.params.items()}
    return DeepDeblurNet(ckpt.network_config, params)


def load_network(path):
    return network_from_checkpoint(load_checkpoint(path))
