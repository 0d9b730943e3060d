"""On-disk formats: MMTF tensor files, MMCK checkpoints, binary PGM masks.

MMTF is a minimal little-endian container for one float32 array:

    bytes 0..3   magic b"MMTF"
    u32          format version (1)
    u32          rank
    u32 * rank   dims, outermost first
    f32 * prod   payload, row-major

MMCK packs a JSON index plus concatenated MMTF blobs into one file:

    bytes 0..3   magic b"MMCK"
    u32          format version (1)
    u32          length of the JSON index in bytes
    bytes        UTF-8 JSON index
    bytes        MMTF blobs back to back

The index carries run metadata (config echo, step and epoch counters)
and, per tensor, its name, byte offset into the blob region, and shape.
Round-trips are bit-exact for float32 data.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

MMTF_MAGIC = b"MMTF"
MMCK_MAGIC = b"MMCK"
MMTF_VERSION = 1
MMCK_VERSION = 1


class FormatError(ValueError):
    """File contents do not match the declared format."""


def _mmtf_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MMTF_MAGIC + struct.pack("<II", MMTF_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return header + arr.tobytes()


def _mmtf_from(buf, offset=0):
    if buf[offset : offset + 4] != MMTF_MAGIC:
        raise FormatError(f"bad tensor magic {buf[offset:offset + 4]!r}")
    try:
        version, rank = struct.unpack_from("<II", buf, offset + 4)
        if version != MMTF_VERSION:
            raise FormatError(f"unsupported tensor format version {version}")
        dims = struct.unpack_from(f"<{rank}I", buf, offset + 12) if rank else ()
    except struct.error:
        raise FormatError("tensor header truncated") from None
    start = offset + 12 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = start + 4 * count
    if end > len(buf):
        raise FormatError("tensor payload truncated")
    arr = np.frombuffer(buf[start:end], dtype="<f4").reshape(dims)
    return arr.copy(), end


def write_tensor(path, arr):
    """Write one array as float32 MMTF."""
    with open(path, "wb") as f:
        f.write(_mmtf_bytes(arr))


def read_tensor(path):
    """Read an MMTF file back as a float32 array."""
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = _mmtf_from(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor payload")
    return arr


def write_checkpoint(path, tensors, meta):
    """Write named arrays plus a JSON-serializable metadata dict as MMCK.

    `tensors` is an ordered mapping name -> array. Iteration order is
    preserved in the file, so identical inputs produce identical bytes.
    """
    blobs = io.BytesIO()
    index_tensors = []
    for name, arr in tensors.items():
        offset = blobs.tell()
        blobs.write(_mmtf_bytes(arr))
        index_tensors.append({"name": name, "offset": offset, "shape": list(np.shape(arr))})
    index = dict(meta)
    index["tensors"] = index_tensors
    payload = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MMCK_MAGIC)
        f.write(struct.pack("<II", MMCK_VERSION, len(payload)))
        f.write(payload)
        f.write(blobs.getvalue())


def read_checkpoint(path):
    """Read an MMCK file; returns (tensors dict, metadata dict)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MMCK_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}")
    version, jlen = struct.unpack_from("<II", buf, 4)
    if version != MMCK_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}")
    index = json.loads(buf[12 : 12 + jlen].decode("utf-8"))
    base = 12 + jlen
    tensors = {}
    for entry in index.pop("tensors"):
        arr, _ = _mmtf_from(buf, base + entry["offset"])
        if list(arr.shape) != entry["shape"]:
            raise FormatError(f"tensor {entry['name']}: shape {arr.shape} vs index {entry['shape']}")
        tensors[entry["name"]] = arr
    return tensors, index


def write_pgm(path, mask):
    """Write a binary mask as 8-bit binary PGM (P5), 0 or 255."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {mask.shape}")
    data = np.where(mask > 0, 255, 0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_pgm_gray(path, values):
    """Write values in [0,1] as 8-bit PGM, rounded to the nearest level."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {values.shape}")
    if values.min() < 0 or values.max() > 1:
        raise ValueError("grayscale values must lie in [0, 1]")
    data = np.rint(values * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path):
    """Read a binary PGM; returns a float32 array of 0.0 / 1.0."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P5":
        raise FormatError("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"expected maxval 255, got {maxval}")
    if len(buf) - pos != w * h:
        raise FormatError("pixel payload truncated")
    data = np.frombuffer(buf[pos:], dtype=np.uint8).reshape(h, w)
    return (data > 127).astype(np.float32)
