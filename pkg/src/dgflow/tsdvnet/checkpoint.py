"""Self-describing checkpoint container.

Layout::

    DGFLOW-CKPT\\n
    <one line of JSON: {"version", "config", "tensors": [[name, shape], ...], "meta"}>\\n
    <little-endian float64 payload of every tensor, in header order>

The header is written with sorted keys and fixed separators, so saving the
same model twice produces identical bytes.
"""

import json

import numpy as np

from .. import numerics as nx
from .model import NetConfig, TSDVNet

MAGIC = b"DGFLOW-CKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model, meta=None):
    header = {
        "version": VERSION,
        "config": model.config.to_dict(),
        "tensors": [[name, list(t.data.shape)] for name, t in model.params.items()],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes()
                       for t in model.params.values())
    return MAGIC + head + payload


def loads(blob):
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a dgflow checkpoint")
    rest = blob[len(MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    cfg = NetConfig(**header["config"])
    data = rest[nl + 1:]
    params, off = {}, 0
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(data):
            raise CheckpointError(f"truncated payload at tensor {name!r}")
        arr = np.frombuffer(data[off:off + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = nx.Tensor(arr.copy(), requires_grad=True)
        off += nbytes
    if off != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    try:
        model = TSDVNet(cfg, params=params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return model, header.get("meta", {})


def save(path, model, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(model, meta))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
