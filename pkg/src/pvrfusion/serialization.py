"""Binary tensor-record format shared by checkpoints and dataset files.

Checkpoint layout (all integers little-endian):

    magic    4 bytes   b"PVRF"
    version  u32       currently 1
    record*            until end of file

Each record is

    path_len u32 | path utf-8 bytes | rank u32 | dims u32[rank] | values f64[prod(dims)]

Dataset blobs reuse the record encoding with a different header (see
``data.py``). Writers go through ``atomic_write_bytes`` so interrupted runs
never leave a partially written artifact behind.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

CHECKPOINT_MAGIC = b"PVRF"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


def atomic_write_bytes(path, payload):
    """Write bytes to ``path`` via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack_record(path, values):
    arr = np.ascontiguousarray(values, dtype="<f8")
    encoded_path = path.encode("utf-8")
    parts = [_U32.pack(len(encoded_path)), encoded_path, _U32.pack(arr.ndim)]
    parts.extend(_U32.pack(d) for d in arr.shape)
    parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf, what):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    @property
    def exhausted(self):
        return self.pos >= len(self.buf)


def read_record(reader):
    path_len = reader.u32()
    path = bytes(reader.take(path_len)).decode("utf-8")
    rank = reader.u32()
    dims = tuple(reader.u32() for _ in range(rank))
    count = 1
    for d in dims:
        count *= d
    raw = reader.take(8 * count)
    values = np.frombuffer(raw, dtype="<f8", count=count).reshape(dims).copy()
    return path, values


def dump_checkpoint_bytes(arrays):
    parts = [CHECKPOINT_MAGIC, _U32.pack(FORMAT_VERSION)]
    parts.extend(pack_record(path, values) for path, values in arrays.items())
    return b"".join(parts)


def parse_checkpoint_bytes(payload):
    reader = _Reader(payload, "checkpoint")
    if bytes(reader.take(4)) != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    arrays = {}
    while not reader.exhausted:
        path, values = read_record(reader)
        if path in arrays:
            raise FormatError(f"duplicate record '{path}' in checkpoint")
        arrays[path] = values
    return arrays


def save_checkpoint(arrays, path):
    atomic_write_bytes(path, dump_checkpoint_bytes(arrays))


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint '{path}': {exc}") from exc
    return parse_checkpoint_bytes(payload)
