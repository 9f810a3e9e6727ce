"""EBCK0001 checkpoint container.

Layout (little-endian)::

    b"EBCK0001"
    u32 header_len, header JSON (model config, tokenizer config, metadata)
    u32 n_tensors
    per tensor: u16 name_len, name (utf-8), u8 dtype code, u8 ndim,
                u64 dims[ndim], row-major data

Optimizer moments are stored as ordinary tensors named ``opt.m.<param>`` and
``opt.v.<param>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, Params
from .optim import OptimizerState
from .tokenizer import TokenizerConfig

MAGIC = b"EBCK0001"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    tokenizer_cfg: TokenizerConfig
    params: Params
    opt_state: OptimizerState | None = None
    meta: dict = field(default_factory=dict)


def _tensor_bytes(name: str, arr: np.ndarray) -> bytes:
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", _CODES[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = dict(ckpt.params)
    header = {
        "model_config": ckpt.model_cfg.to_dict(),
        "tokenizer_config": asdict(ckpt.tokenizer_cfg),
        "meta": ckpt.meta,
    }
    if ckpt.opt_state is not None:
        header["optimizer"] = ckpt.opt_state.hyper()
        for n in sorted(ckpt.opt_state.m):
            tensors[f"opt.m.{n}"] = ckpt.opt_state.m[n]
            tensors[f"opt.v.{n}"] = ckpt.opt_state.v[n]
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(hbytes)), hbytes, struct.pack("<I", len(tensors))]
    parts += [_tensor_bytes(n, tensors[n]) for n in tensors]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not an EBCK0001 checkpoint")
    off = 8
    (hlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    header = json.loads(buf[off : off + hlen])
    off += hlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    mc = header["model_config"]
    model_cfg = ModelConfig(**{**mc, "conv_channels": tuple(mc["conv_channels"])})
    tok_cfg = TokenizerConfig(**header["tokenizer_config"])
    params = {n: v for n, v in tensors.items() if not n.startswith("opt.")}
    opt = None
    if "optimizer" in header:
        opt = OptimizerState(**header["optimizer"])
        opt.m = {n[6:]: v for n, v in tensors.items() if n.startswith("opt.m.")}
        opt.v = {n[6:]: v for n, v in tensors.items() if n.startswith("opt.v.")}
    return Checkpoint(model_cfg, tok_cfg, params, opt, header.get("meta", {}))
