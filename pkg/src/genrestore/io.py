"""Tensor files (``GTN1``) and binary PGM/PPM images.

Tensor layout: ``b"GTN1"``, u32 rank, u64 dims[rank], then float64 payload in
C order, everything little-endian.

Images map to reals as ``pixel / 255``; writing clamps to [0, 1] and rounds.
"""

import struct

import numpy as np

from .errors import MalformedFile, VersionMismatch

TENSOR_MAGIC = b"GTN1"


def dumps_tensor(array):
    a = np.asarray(array, dtype=np.float64)  # ascontiguousarray would promote 0-d to 1-d
    header = TENSOR_MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.astype("<f8").tobytes()


def loads_tensor(data):
    data = bytes(data)
    if len(data) < 8:
        raise MalformedFile("truncated tensor header", len(data))
    if data[:4] != TENSOR_MAGIC:
        if data[:3] == TENSOR_MAGIC[:3]:
            raise VersionMismatch(f"tensor file version {data[3:4]!r}, expected b'1'")
        raise MalformedFile(f"bad magic {data[:4]!r}", 0)
    (rank,) = struct.unpack_from("<I", data, 4)
    end = 8 + 8 * rank
    if len(data) < end:
        raise MalformedFile("truncated tensor dims", len(data))
    dims = struct.unpack_from(f"<{rank}Q", data, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(data) != end + 8 * count:
        raise MalformedFile(
            f"payload has {len(data) - end} bytes, dims {dims} need {8 * count}", end)
    return np.frombuffer(data, dtype="<f8", offset=end).astype(np.float64).reshape(dims)


def save_tensor(array, path):
    with open(path, "wb") as fh:
        fh.write(dumps_tensor(array))


def load_tensor(path):
    with open(path, "rb") as fh:
        return loads_tensor(fh.read())


def write_image(path, img):
    """Write an ``(h, w)`` / ``(h, w, 1)`` array as PGM or ``(h, w, 3)`` as PPM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {img.shape}")
    h, w = img.shape[:2]
    pixels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def _header_tokens(data, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise MalformedFile("truncated image header", pos)
        if data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise MalformedFile("unterminated header comment", pos)
            pos = nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_image(path):
    """Read P5/P6 into an ``(h, w, channels)`` float array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise MalformedFile(f"unsupported image magic {magic!r}", 0)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedFile(f"bad image header: {exc}", 0) from exc
    if maxval != 255:
        raise MalformedFile(f"only maxval 255 is supported, got {maxval}", 0)
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise MalformedFile(f"raster has {len(raster)} bytes, expected {need}", pos)
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, channels) / 255.0


def load_vector(path):
    """Observation from a tensor or image file, flattened."""
    path = str(path)
    if path.endswith((".pgm", ".ppm")):
        return read_image(path).reshape(-1)
    return load_tensor(path).reshape(-1)
