"""Bit-exact checkpoint container for network and optimizer state.

Layout, all integers little-endian:

  8 bytes   magic "B2UCKPT1"
  u32       format version
  u32       entry count
  entries   u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
            raw float32 payload (little-endian)
  u64       checksum (blake2b-8 of every preceding byte)

Scalar fields travel as one-element tensors under reserved double
underscore names; the trainer config digest travels as eight byte-valued
floats. save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError
from .network import NetConfig, NetworkParams
from .tensor import Tensor

MAGIC = b"B2UCKPT1"
FORMAT_VERSION = 1

_PARAM_PREFIX = "param/"
_ADAM_M_PREFIX = "adam/m/"
_ADAM_V_PREFIX = "adam/v/"


@dataclass
class AdamState:
    """Adaptive-moment accumulators mirroring the parameter map."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initialize(cls, params: NetworkParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
            step=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


@dataclass
class Checkpoint:
    format_version: int
    net_config: NetConfig
    params: NetworkParams
    adam: AdamState
    epoch: int
    trainer_config_digest: bytes = b"\x00" * 8


def _scalar_entry(value: float) -> np.ndarray:
    return np.asarray([value], dtype=np.float32)


def _entries_from_checkpoint(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    cfg = ckpt.net_config
    entries: list[tuple[str, np.ndarray]] = [
        ("__epoch__", _scalar_entry(ckpt.epoch)),
        ("__adam_step__", _scalar_entry(ckpt.adam.step)),
        ("__adam_beta1__", _scalar_entry(ckpt.adam.beta1)),
        ("__adam_beta2__", _scalar_entry(ckpt.adam.beta2)),
        ("__adam_eps__", _scalar_entry(ckpt.adam.eps)),
        ("__net_in_channels__", _scalar_entry(cfg.in_channels)),
        ("__net_base_channels__", _scalar_entry(cfg.base_channels)),
        ("__net_depth__", _scalar_entry(cfg.depth)),
        ("__net_leaky_slope__", _scalar_entry(cfg.leaky_slope)),
        ("__config_digest__", np.frombuffer(ckpt.trainer_config_digest, dtype=np.uint8)
                                .astype(np.float32)),
    ]
    for name, tensor in ckpt.params.items():
        entries.append((_PARAM_PREFIX + name, tensor.data))
    for name in ckpt.params:
        entries.append((_ADAM_M_PREFIX + name, ckpt.adam.m[name]))
        entries.append((_ADAM_V_PREFIX + name, ckpt.adam.v[name]))
    return entries


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    chunks = [MAGIC, struct.pack("<I", ckpt.format_version)]
    entries = _entries_from_checkpoint(ckpt)
    chunks.append(struct.pack("<I", len(entries)))
    for name, array in entries:
        encoded = name.encode("utf-8")
        payload = np.ascontiguousarray(array, dtype="<f4")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", payload.ndim))
        chunks.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        chunks.append(payload.tobytes())
    body = b"".join(chunks)
    checksum = hashlib.blake2b(body, digest_size=8).digest()
    return body + checksum


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    from pathlib import Path

    Path(path).write_bytes(serialize_checkpoint(ckpt))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint while reading {what}", offset=self.pos
            )
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def deserialize_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointError("file too small to be a checkpoint", offset=len(blob))
    body, checksum = blob[:-8], blob[-8:]
    expected = hashlib.blake2b(body, digest_size=8).digest()
    if checksum != expected:
        raise CheckpointError("checksum mismatch, checkpoint is corrupt", offset=len(body))

    reader = _Reader(body)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = reader.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {version}, expected {FORMAT_VERSION}", offset=8
        )
    count = reader.u32("entry count")
    arrays: dict[str, np.ndarray] = {}
    order: list[str] = []
    for _ in range(count):
        name_len = reader.u32("name length")
        name = reader.take(name_len, "entry name").decode("utf-8")
        rank = reader.u32("rank")
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank, "dims"))
        size = int(np.prod(dims)) if rank else 1
        payload = reader.take(4 * size, f"payload of {name}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        order.append(name)
    if reader.pos != len(body):
        raise CheckpointError("trailing bytes after final entry", offset=reader.pos)

    def scalar(name: str) -> float:
        if name not in arrays:
            raise CheckpointError(f"missing reserved entry {name}")
        return float(arrays[name].reshape(-1)[0])

    cfg = NetConfig(
        in_channels=int(scalar("__net_in_channels__")),
        base_channels=int(scalar("__net_base_channels__")),
        depth=int(scalar("__net_depth__")),
        leaky_slope=scalar("__net_leaky_slope__"),
    )
    digest = arrays.get("__config_digest__", np.zeros(8, np.float32))
    tensors = {
        name[len(_PARAM_PREFIX):]: Tensor(arrays[name], requires_grad=True)
        for name in order
        if name.startswith(_PARAM_PREFIX)
    }
    params = NetworkParams(cfg, tensors)
    for k in tensors:
        if _ADAM_M_PREFIX + k not in arrays or _ADAM_V_PREFIX + k not in arrays:
            raise CheckpointError(f"missing optimizer moments for parameter {k!r}")
    adam = AdamState(
        m={k: arrays[_ADAM_M_PREFIX + k].copy() for k in tensors},
        v={k: arrays[_ADAM_V_PREFIX + k].copy() for k in tensors},
        step=int(scalar("__adam_step__")),
        beta1=scalar("__adam_beta1__"),
        beta2=scalar("__adam_beta2__"),
        eps=scalar("__adam_eps__"),
    )
    return Checkpoint(
        format_version=version,
        net_config=cfg,
        params=params,
        adam=adam,
        epoch=int(scalar("__epoch__")),
        trainer_config_digest=bytes(digest.astype(np.uint8).tobytes()),
    )


def load_checkpoint(path) -> Checkpoint:
    from pathlib import Path

    return deserialize_checkpoint(Path(path).read_bytes())


def checkpoint_digest(ckpt: Checkpoint) -> str:
    """Short content digest of a checkpoint, for report headers."""
    return hashlib.blake2b(serialize_checkpoint(ckpt), digest_size=8).hexdigest()
