"""Image file formats: VTEN (canonical float tensor) and 8-bit binary PPM.

VTEN layout: one ASCII header line ``VTEN v1 <H> <W> <C>\\n`` followed by
H*W*C little-endian IEEE-754 float32 values in row-major order.  PPM (P6)
is the only human-viewable format; single-channel images are replicated to
gray RGB on write.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .core import ImageTensor
from .errors import VordError

__all__ = ["write_vten", "read_vten", "write_ppm", "read_ppm", "load_image", "atomic_write_bytes"]

_VTEN_MAGIC = b"VTEN v1"


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write a file atomically: temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def vten_bytes(image: ImageTensor) -> bytes:
    h, w, c = image.shape
    header = f"VTEN v1 {h} {w} {c}\n".encode("ascii")
    return header + image.data.astype("<f4").tobytes()


def write_vten(image: ImageTensor, path: str | Path) -> None:
    atomic_write_bytes(path, vten_bytes(image))


def read_vten(path: str | Path) -> ImageTensor:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0 or not raw.startswith(_VTEN_MAGIC):
        raise VordError("bad-vten", f"{path}: not a VTEN v1 file")
    fields = raw[:nl].split()
    if len(fields) != 5:
        raise VordError("bad-vten", f"{path}: malformed VTEN header")
    try:
        h, w, c = (int(x) for x in fields[2:5])
    except ValueError:
        raise VordError("bad-vten", f"{path}: malformed VTEN header") from None
    body = raw[nl + 1 :]
    expected = h * w * c * 4
    if h <= 0 or w <= 0 or c <= 0 or len(body) != expected:
        raise VordError("bad-vten", f"{path}: expected {expected} payload bytes, got {len(body)}")
    data = np.frombuffer(body, dtype="<f4").reshape(h, w, c)
    return ImageTensor(data)


def ppm_bytes(image: ImageTensor) -> bytes:
    h, w, c = image.shape
    if c == 1:
        rgb = np.repeat(image.data, 3, axis=2)
    elif c == 3:
        rgb = image.data
    else:
        raise VordError("bad-ppm", f"PPM preview needs 1 or 3 channels, image has {c}")
    quantized = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + quantized.tobytes()


def write_ppm(image: ImageTensor, path: str | Path) -> None:
    atomic_write_bytes(path, ppm_bytes(image))


def read_ppm(path: str | Path) -> ImageTensor:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise VordError("bad-ppm", f"{path}: only binary P6 PPM is supported")
    # Header: magic, width, height, maxval; separated by whitespace, with
    # optional '#' comment lines.  A single whitespace byte ends the header.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise VordError("bad-ppm", f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise VordError("bad-ppm", f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise VordError("bad-ppm", f"{path}: only maxval 255 is supported")
    body = raw[pos : pos + h * w * 3]
    if len(body) != h * w * 3:
        raise VordError("bad-ppm", f"{path}: truncated PPM payload")
    data = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0
    return ImageTensor(data)


def load_image(path: str | Path) -> ImageTensor:
    """Read VTEN or PPM, dispatching on the file's magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic.startswith(b"VTEN"):
        return read_vten(path)
    if magic.startswith(b"P6"):
        return read_ppm(path)
    raise VordError("bad-image", f"{path}: unrecognized image format (want VTEN or P6 PPM)")
