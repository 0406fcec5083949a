"""Binary checkpoint: named little-endian tensors plus a JSON metadata block.

Layout::

    b"WCAMCKPT"  uint16 version  uint8 scalar_bytes (4 or 8)
    uint32 meta_len  meta (UTF-8 JSON, sorted keys)
    uint32 n_records
    n_records x [ uint16 name_len  name  uint8 ndim  uint32 dims[ndim]  payload ]

Records are the model parameters (``param/<name>``) in model order followed
by the optimizer moments (``adam.m/<name>``, ``adam.v/<name>``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import NetConfig
from .optim import RAdamState
from .tensor import Tensor

MAGIC = b"WCAMCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


def _records(params: dict, state: RAdamState | None):
    for name, t in params.items():
        yield f"param/{name}", t.data
    if state is not None:
        for name in params:
            if name in state.m:
                yield f"adam.m/{name}", state.m[name]
                yield f"adam.v/{name}", state.v[name]


def save_checkpoint(path, config: NetConfig, params: dict, state: RAdamState | None = None,
                    meta: dict | None = None) -> None:
    dt = np.dtype(config.precision).newbyteorder("<")
    info = {"net": config.to_dict(), "extra": meta or {}}
    if state is not None:
        info["optimizer"] = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                             "eps": state.eps, "t": state.t}
    blob = json.dumps(info, sort_keys=True).encode()
    records = list(_records(params, state))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HB", VERSION, dt.itemsize))
        fh.write(struct.pack("<I", len(blob)) + blob)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    tmp.replace(path)


def load_checkpoint(path):
    """Returns ``(NetConfig, params, RAdamState | None, extra_meta)``."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    try:
        return _parse(buf)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse(buf: bytes):
    if buf[:8] != MAGIC:
        raise ValueError("bad magic")
    version, width = struct.unpack_from("<HB", buf, 8)
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    dt = np.dtype({4: "<f4", 8: "<f8"}[width])
    pos = 11
    (n,) = struct.unpack_from("<I", buf, pos)
    info = json.loads(buf[pos + 4:pos + 4 + n])
    pos += 4 + n
    config = NetConfig.from_dict(info["net"])
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params, moments = {}, {"adam.m": {}, "adam.v": {}}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + ln].decode()
        pos += 2 + ln
        (ndim,) = struct.unpack_from("<B", buf, pos)
        shape = struct.unpack_from(f"<{ndim}I", buf, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape)) * dt.itemsize
        if pos + size > len(buf):
            raise ValueError(f"truncated record {name}")
        arr = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape)
        arr = arr.astype(dt.newbyteorder("="))
        pos += size
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = Tensor(arr, requires_grad=True, name=key)
        else:
            moments[kind][key] = arr
    if pos != len(buf):
        raise ValueError("trailing bytes")
    state = None
    if "optimizer" in info:
        o = info["optimizer"]
        state = RAdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"],
                           m=moments["adam.m"], v=moments["adam.v"])
    return config, params, state, info.get("extra", {})
