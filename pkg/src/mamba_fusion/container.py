"""Binary tensor container and plain-text manifests.

Each tensor record is a fixed 16-byte header (magic, version, dtype code,
rank as little-endian uint32), followed by the extents as little-endian
uint64 and the raw little-endian payload. A directory pairs one
``tensors.bin`` with a ``manifest.txt`` of ``key value`` lines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFTN"
VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype("float64"): 1, np.dtype("float32"): 2}


class ContainerError(Exception):
    """Base class for container format problems."""


class HeaderError(ContainerError):
    """Bad magic, version, or dtype code in a tensor header."""


class TruncatedPayloadError(ContainerError):
    """The file ended before a declared tensor payload was complete."""


class ManifestShapeError(ContainerError):
    """Stored tensor shapes disagree with the manifest."""


def write_tensor(fh, array):
    arr = np.ascontiguousarray(array)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    fh.write(struct.pack("<4sIII", MAGIC, VERSION, code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def read_tensor(fh):
    header = fh.read(16)
    if len(header) < 16:
        raise TruncatedPayloadError("file ended inside a tensor header")
    magic, version, code, rank = struct.unpack("<4sIII", header)
    if magic != MAGIC:
        raise HeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise HeaderError(f"unsupported container version {version}")
    if code not in _DTYPES:
        raise HeaderError(f"unknown dtype code {code}")
    if rank > 32:
        raise HeaderError(f"implausible rank {rank}")
    dims_raw = fh.read(8 * rank)
    if len(dims_raw) < 8 * rank:
        raise TruncatedPayloadError("file ended inside tensor extents")
    shape = struct.unpack(f"<{rank}Q", dims_raw)
    dtype = _DTYPES[code]
    n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = fh.read(n_bytes)
    if len(payload) < n_bytes:
        raise TruncatedPayloadError(
            f"payload truncated: expected {n_bytes} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_manifest(path, entries):
    lines = [f"{k} {v}" for k, v in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    entries = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        entries[key] = value
    return entries


def save_named(directory, named_arrays, extra_manifest=()):
    """Write named tensors plus a manifest into a directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = list(extra_manifest)
    entries.append(("tensor_count", len(named_arrays)))
    for i, (name, arr) in enumerate(named_arrays):
        shape = "x".join(str(s) for s in np.asarray(arr).shape) or "scalar"
        entries.append((f"tensor_{i}", f"{name}:{shape}"))
    write_manifest(d / "manifest.txt", entries)
    with open(d / "tensors.bin", "wb") as fh:
        for _, arr in named_arrays:
            write_tensor(fh, np.asarray(arr, dtype=np.float64))


def load_named(directory):
    """Read back (manifest dict, list of (name, array))."""
    d = Path(directory)
    manifest = read_manifest(d / "manifest.txt")
    count = int(manifest["tensor_count"])
    named = []
    with open(d / "tensors.bin", "rb") as fh:
        for i in range(count):
            name, _, shape_s = manifest[f"tensor_{i}"].partition(":")
            arr = read_tensor(fh)
            declared = () if shape_s == "scalar" else \
                tuple(int(s) for s in shape_s.split("x"))
            if arr.shape != declared:
                raise ManifestShapeError(
                    f"tensor {name}: manifest says {declared}, "
                    f"file holds {arr.shape}")
            named.append((name, arr))
    return manifest, named
