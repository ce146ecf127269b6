"""Versioned binary checkpoint format.

Layout (little-endian)::

    b"ECGC" | version u16 | config_len u32 | config (UTF-8 JSON)
    n_blocks u32
    per block: name_len u16 | name | dtype_code u8 (4 = f32, 8 = f64)
               | ndim u8 | dims u32 * ndim | row-major payload
    crc32 u32 over everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ecgc.errors import CorruptCheckpoint, ShapeMismatch
from ecgc.nn.encoder import Encoder, EncoderConfig

MAGIC = b"ECGC"
VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def encode(params: "OrderedDict[str, np.ndarray]", config: dict) -> bytes:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        code = arr.dtype.itemsize
        if arr.dtype.kind != "f" or code not in _DTYPES:
            raise ShapeMismatch(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise CorruptCheckpoint("bad magic or file too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch (truncated or modified file)")
    try:
        version, cfg_len = struct.unpack_from("<HI", body, 4)
        if version != VERSION:
            raise CorruptCheckpoint(f"unsupported version {version} (expected {VERSION})")
        pos = 10
        config = json.loads(body[pos : pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (n_blocks,) = struct.unpack_from("<I", body, pos)
        pos += 4
        params: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(n_blocks):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + name_len].decode("utf-8")
            pos += name_len
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            dtype = _DTYPES.get(code)
            if dtype is None:
                raise CorruptCheckpoint(f"{name}: unknown dtype code {code}")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(body):
                raise CorruptCheckpoint(f"{name}: payload runs past end of file")
            params[name] = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
        if pos != len(body):
            raise CorruptCheckpoint(f"{len(body) - pos} trailing bytes")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(str(exc)) from exc
    return config, params


def save_checkpoint(encoder: Encoder, path, extra: dict | None = None) -> Path:
    """Write the encoder (and optional extra named arrays) to ``path``."""
    path = Path(path)
    params = OrderedDict((name, t.data) for name, t in encoder.params.items())
    for name, arr in (extra or {}).items():
        params[f"extra.{name}"] = np.asarray(arr)
    path.write_bytes(encode(params, encoder.config.to_dict()))
    return path


def load_checkpoint(path, with_extra: bool = False):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        from ecgc.errors import MissingFile

        raise MissingFile(str(path)) from exc
    config, params = decode(blob)
    try:
        encoder = Encoder(EncoderConfig(**config))
    except TypeError as exc:
        raise CorruptCheckpoint(f"config block: {exc}") from exc
    extra = OrderedDict((k[len("extra.") :], params.pop(k)) for k in list(params) if k.startswith("extra."))
    try:
        encoder.load_state_dict(params)
    except ShapeMismatch as exc:
        raise CorruptCheckpoint(f"parameter/config mismatch: {exc}") from exc
    return (encoder, extra) if with_extra else encoder
