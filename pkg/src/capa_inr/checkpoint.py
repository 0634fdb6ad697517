"""Binary checkpoint files and the training-state sidecar used for resume.

Checkpoint layout (all integers little-endian)::

    b"CAPAINR1"                 magic
    u32 version
    u8  kind                    0 = BeaINR, 1 = CoefINR
    u32 N                       streams
    u32 K                       encoding frequencies
    u32 L, then L x u32         layer widths
    f64 x P                     parameters: per layer W (row-major, fan_in x fan_out) then b
    u64                         FNV-1a checksum of the parameter bytes
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError
from .inr import BEAINR, COEFINR
from .nn import AdamState, MLPParams

MAGIC = b"CAPAINR1"
VERSION = 1
KIND_CODES = {BEAINR: 0, COEFINR: 1}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

STATE_MAGIC = b"CAPASTA1"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class Checkpoint:
    kind: str
    num_streams: int
    num_frequencies: int
    params: MLPParams

    @property
    def widths(self) -> list[int]:
        return self.params.widths


def _param_blob(params: MLPParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    if ckpt.kind not in KIND_CODES:
        raise ValueError(f"unknown model kind {ckpt.kind!r}")
    widths = ckpt.widths
    if widths[-1] != 2 * ckpt.num_streams:
        raise ValueError(f"output width {widths[-1]} does not match N={ckpt.num_streams}")
    blob = _param_blob(ckpt.params)
    header = MAGIC + struct.pack("<IBIII", VERSION, KIND_CODES[ckpt.kind], ckpt.num_streams,
                                 ckpt.num_frequencies, len(widths))
    header += struct.pack(f"<{len(widths)}I", *widths)
    return header + blob + struct.pack("<Q", fnv1a64(blob))


def decode_checkpoint(data: bytes, activation: str = "relu") -> Checkpoint:
    """Parse checkpoint bytes; raises :class:`CorruptCheckpointError` on any
    structural problem or checksum mismatch."""
    fixed = len(MAGIC) + struct.calcsize("<IBIII")
    if len(data) < fixed or data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint (bad magic)")
    version, kind_code, n, k, n_widths = struct.unpack_from("<IBIII", data, len(MAGIC))
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    if kind_code not in KIND_NAMES:
        raise CorruptCheckpointError(f"unknown model kind code {kind_code}")
    if n_widths < 2 or len(data) < fixed + 4 * n_widths:
        raise CorruptCheckpointError("truncated layer-width list")
    widths = list(struct.unpack_from(f"<{n_widths}I", data, fixed))
    if min(widths) < 1 or widths[-1] != 2 * n:
        raise CorruptCheckpointError(f"inconsistent layer widths {widths} for N={n}")
    n_params = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    start = fixed + 4 * n_widths
    end = start + 8 * n_params
    if len(data) != end + 8:
        raise CorruptCheckpointError(f"expected {end + 8} bytes, found {len(data)}")
    blob = data[start:end]
    (stored,) = struct.unpack_from("<Q", data, end)
    if fnv1a64(blob) != stored:
        raise CorruptCheckpointError("checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    ws, bs, pos = [], [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        ws.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        bs.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    return Checkpoint(KIND_NAMES[kind_code], n, k, MLPParams(ws, bs, activation))


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    _atomic_write(Path(path), encode_checkpoint(ckpt))


def load_checkpoint(path, activation: str = "relu") -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), activation)


# --- resume sidecar -----------------------------------------------------------------

@dataclass
class ResumeState:
    epoch: int
    log: list[dict]
    adam: AdamState


def encode_state(state: ResumeState) -> bytes:
    """Optimizer moments, step count, epoch and log rows."""
    adam = state.adam
    meta = {"epoch": state.epoch, "log": state.log, "step": adam.step, "lr": adam.lr, "beta1": adam.beta1,
            "beta2": adam.beta2, "eps": adam.eps, "has_moments": adam.m is not None}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob = b""
    if adam.m is not None:
        blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in list(adam.m) + list(adam.v))
    return STATE_MAGIC + struct.pack("<I", len(meta_bytes)) + meta_bytes + blob + struct.pack("<Q", fnv1a64(blob))


def decode_state(data: bytes, params: MLPParams) -> ResumeState:
    if data[:len(STATE_MAGIC)] != STATE_MAGIC or len(data) < len(STATE_MAGIC) + 12:
        raise CorruptCheckpointError("not a training-state file")
    (meta_len,) = struct.unpack_from("<I", data, len(STATE_MAGIC))
    start = len(STATE_MAGIC) + 4
    try:
        meta = json.loads(data[start:start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptCheckpointError("corrupt training-state header") from None
    blob = data[start + meta_len:-8]
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    if fnv1a64(blob) != stored:
        raise CorruptCheckpointError("training-state checksum mismatch")
    adam = AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"], step=meta["step"])
    if meta["has_moments"]:
        shapes = [a.shape for a in params.arrays()]
        total = 2 * sum(int(np.prod(s)) for s in shapes)
        if len(blob) != 8 * total:
            raise CorruptCheckpointError("training-state moments do not match the network")
        flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
        arrays, pos = [], 0
        for shape in shapes + shapes:
            size = int(np.prod(shape))
            arrays.append(flat[pos:pos + size].reshape(shape).copy())
            pos += size
        adam.m, adam.v = arrays[:len(shapes)], arrays[len(shapes):]
    return ResumeState(meta["epoch"], meta["log"], adam)


def save_state(path, state: ResumeState) -> None:
    _atomic_write(Path(path), encode_state(state))


def load_state(path, params: MLPParams) -> ResumeState:
    return decode_state(Path(path).read_bytes(), params)
