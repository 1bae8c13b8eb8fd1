"""``BDCC`` checkpoint container.

Layout (little-endian)::

    b"BDCC"            magic
    u32                format version (currently 1)
    records until EOF, each:
        u32            name length in bytes
        bytes          UTF-8 name
        u8             dtype tag (0 = float32 tensor, 1 = UTF-8 JSON blob)
        u32            rank
        u32 * rank     dims
        bytes          raw data (float32 values, or the blob)

Estimator hyper-parameters travel in a JSON blob named ``__meta__``.
"""

import json
import struct

import numpy as np

MAGIC = b"BDCC"
VERSION = 1
DTYPE_F32 = 0
DTYPE_JSON = 1
META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, meta=None):
    """Write a mapping of name -> array (cast to float32) plus optional metadata."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        if meta is not None:
            blob = json.dumps(meta, sort_keys=True).encode("utf-8")
            _write_record(fh, META_KEY, DTYPE_JSON, (len(blob),), blob)
        for name, value in tensors.items():
            arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
            _write_record(fh, name, DTYPE_F32, arr.shape, arr.tobytes())


def _write_record(fh, name, tag, dims, payload):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<BI", tag, len(dims)))
    fh.write(struct.pack(f"<{len(dims)}I", *dims))
    fh.write(payload)


def load_checkpoint(path):
    """Return ``(tensors, meta)``; tensors are float32 arrays keyed by name."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a BDCC checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos, tensors, meta = 8, {}, None
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            tag, rank = struct.unpack_from("<BI", data, pos)
            pos += 5
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            if tag == DTYPE_F32:
                size = 4 * int(np.prod(dims, dtype=np.int64))
            elif tag == DTYPE_JSON:
                size = dims[0]
            else:
                raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
            if pos + size > len(data):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            if tag == DTYPE_F32:
                tensors[name] = np.frombuffer(data[pos:pos + size], dtype="<f4").reshape(dims).copy()
            else:
                meta = json.loads(data[pos:pos + size].decode("utf-8"))
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return tensors, meta


def state_dict_to_arrays(module):
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_arrays_into(module, arrays, prefix=""):
    import torch

    state = module.state_dict()
    for key, current in state.items():
        arr = arrays[prefix + key]
        state[key] = torch.as_tensor(arr).to(current.dtype).reshape(current.shape)
    module.load_state_dict(state)
