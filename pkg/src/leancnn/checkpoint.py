"""Binary checkpoint serialization.

Layout (all integers little endian):

    offset  size  field
    0       4     magic  b"LCNN"
    4       2     format version (currently 1)
    6       4     header_len
    10      var   JSON header (utf-8): kind, in_channels, num_classes,
                  input_size, seed, dtype, meta
    ..      4     tensor_count
    per tensor:
            2     name_len
            var   name (utf-8)
            4     rank
            4*r   dims
            var   raw '<f4' tensor bytes, C order

Tensors appear in model state order (learnable params, then batchnorm
running stats per layer).  Loading rebuilds the model from the header's
(spec, seed) and overwrites every state tensor, so a save/load round trip is
bit exact.
"""

import json
import struct

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .models import ModelSpec, build

MAGIC = b"LCNN"
VERSION = 1


def save(model, path, meta=None):
    """Write a checkpoint; only float32 models are serializable."""
    if model.dtype != np.dtype(np.float32):
        raise ConfigError(
            f"checkpoints store '<f4' tensors; model dtype is {model.dtype}. "
            "float64 models exist for gradient checking only")
    header = dict(model.spec.to_dict())
    header["seed"] = model.seed
    header["dtype"] = "float32"
    header["meta"] = dict(meta) if meta else {}
    hjson = json.dumps(header, sort_keys=True).encode()
    tensors = model.state_tensors()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(hjson)))
        f.write(hjson)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated checkpoint while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have "
                f"{len(self.data) - self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_header(path):
    """Parse and return the JSON header without materializing a model."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise DataError(f"path not found: {path}") from None
    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}, "
                          f"this build reads version {VERSION}")
    (hlen,) = r.unpack("<I", "header length")
    try:
        header = json.loads(r.take(hlen, "header").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable checkpoint header: {e}") from e
    return header, r


def load(path):
    """Read a checkpoint and return the reconstructed model."""
    header, r = read_header(path)
    for key in ("kind", "in_channels", "num_classes", "input_size", "seed", "dtype"):
        if key not in header:
            raise FormatError(f"{path}: checkpoint header missing {key!r}")
    if header["dtype"] != "float32":
        raise FormatError(f"{path}: unsupported tensor dtype {header['dtype']!r}")
    try:
        spec = ModelSpec.from_dict(header)
    except ConfigError as e:
        raise FormatError(f"{path}: invalid architecture in header: {e}") from e
    model = build(spec, int(header["seed"]), dtype=np.float32)

    (count,) = r.unpack("<I", "tensor count")
    expected = model.state_tensors()
    if count != len(expected):
        raise FormatError(
            f"{path}: checkpoint holds {count} tensors, architecture "
            f"{spec.kind} has {len(expected)}")
    for name, arr in expected:
        (nlen,) = r.unpack("<H", "tensor name length")
        fname = r.take(nlen, "tensor name").decode()
        if fname != name:
            raise FormatError(
                f"{path}: tensor order mismatch, found {fname!r} where "
                f"{name!r} was expected")
        (rank,) = r.unpack("<I", "tensor rank")
        if rank != arr.ndim:
            raise FormatError(f"{path}: tensor {name!r} has rank {rank}, "
                              f"expected {arr.ndim}")
        dims = r.unpack(f"<{rank}I", "tensor dims")
        if tuple(dims) != arr.shape:
            raise FormatError(f"{path}: tensor {name!r} has shape {tuple(dims)}, "
                              f"expected {arr.shape}")
        nbytes = int(np.prod(dims, dtype=np.int64)) * 4
        raw = r.take(nbytes, f"tensor {name!r} data")
        arr[...] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape)
    if r.pos != len(r.data):
        raise FormatError(
            f"{path}: {len(r.data) - r.pos} trailing bytes after the last tensor")
    model.checkpoint_meta = header.get("meta", {})
    return model
