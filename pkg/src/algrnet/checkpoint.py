"""Versioned binary checkpoint container.

Layout (little endian)::

    magic    8 bytes  b"ALGRNETC"
    version  u32
    hash     32 bytes sha256 of the model section of the config
    count    u32
    count x entry:
        name_len u16, name utf-8
        dtype    u8   (see _DTYPES)
        ndim     u8, dims u32 * ndim
        nbytes   u64, raw data

Two reserved entries carry the full config text (``__config__``) and a
JSON metadata blob (``__meta__``), both as uint8 arrays.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import parse_config
from .errors import ConfigError, InputError, MissingFileError

MAGIC = b"ALGRNETC"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.uint8}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def _entries_bytes(entries):
    out = bytearray()
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise InputError(f"unsupported dtype {arr.dtype} for {name}")
        raw_name = name.encode()
        out += struct.pack("<H", len(raw_name)) + raw_name
        out += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        out += struct.pack("<Q", len(data)) + data
    return bytes(out)


def save_checkpoint(path, model, cfg, meta=None):
    entries = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    entries["__config__"] = np.frombuffer(cfg.to_text().encode(), dtype=np.uint8)
    entries["__meta__"] = np.frombuffer(json.dumps(meta or {}).encode(), dtype=np.uint8)
    digest = bytes.fromhex(cfg.model_hash())
    blob = MAGIC + struct.pack("<I", VERSION) + digest + struct.pack("<I", len(entries))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob + _entries_bytes(entries))
    tmp.replace(path)


def read_checkpoint(path, expected_cfg=None):
    """Returns (state_dict, config, meta). Rejects config-hash mismatches."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:8] != MAGIC:
        raise InputError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    digest = buf[12:44].hex()
    (count,) = struct.unpack_from("<I", buf, 44)
    pos = 48
    entries = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
        entries[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=pos).reshape(shape)
        pos += nbytes
    cfg = parse_config(entries.pop("__config__").tobytes().decode())
    meta = json.loads(entries.pop("__meta__").tobytes().decode())
    if cfg.model_hash() != digest:
        raise ConfigError("checkpoint header hash does not match its stored config")
    if expected_cfg is not None and expected_cfg.model_hash() != digest:
        raise ConfigError("checkpoint was written for a different model configuration")
    state = {k: torch.from_numpy(v.astype(v.dtype.newbyteorder("="))) for k, v in entries.items()}
    return state, cfg, meta


def load_model(path, expected_cfg=None):
    from .model import ALGRNet

    state, cfg, meta = read_checkpoint(path, expected_cfg)
    model = ALGRNet(cfg.model)
    model.load_state_dict(state)
    model.eval()
    return model, cfg, meta
