"""Raster containers and pixel-level operations.

Frames are RGB with intensities normalized to [0, 1] (so the SSIM dynamic
range is 1 regardless of the capture bit depth).  Segmentation maps carry
the three ocular-surface classes; eyelid pixels are excluded from every
loss and evaluation.  All containers freeze their backing array after
construction, which keeps sampling and gradient ops safely shareable
across threads.

File formats:

* Frame  -> binary PPM (P6), 8 bits per channel.
* SegMap -> binary PGM (P5) holding raw label indices.
* DepthMap -> little-endian float32 raster with an 8-byte header:
  magic ``ODPH``, then uint16 width, uint16 height.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

LABEL_EYELID = 0
LABEL_SCLERA = 1
LABEL_CORNEA = 2
LABELS = (LABEL_EYELID, LABEL_SCLERA, LABEL_CORNEA)
LABEL_NAMES = {LABEL_EYELID: "eyelid", LABEL_SCLERA: "sclera", LABEL_CORNEA: "cornea"}

DEPTH_MAGIC = b"ODPH"


class ParseError(ValueError):
    """A raster file failed to parse; the message names the bad field/offset."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Frame:
    """RGB raster, float64 in [0, 1], shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"frame data must be (H, W, 3), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("frame contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError(f"frame values outside [0, 1]: min={d.min()}, max={d.max()}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in millimeters, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth data must be (H, W), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("depth map contains non-finite values")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SegMap:
    """Per-pixel label raster: 0 = eyelid, 1 = sclera, 2 = cornea."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise ValueError(f"segmap data must be (H, W), got {d.shape}")
        d = d.astype(np.uint8)
        if d.max(initial=0) > LABEL_CORNEA:
            bad = int(d.max())
            raise ValueError(f"segmap contains label {bad} outside {{0, 1, 2}}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def onehot(self) -> np.ndarray:
        """(H, W, 3) hard one-hot encoding; channels sum to 1 per pixel."""
        out = np.zeros((*self.data.shape, 3))
        for c in LABELS:
            out[:, :, c] = self.data == c
        return out


@dataclass(frozen=True)
class PixelMask:
    """Boolean raster; True marks pixels that participate."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=bool)
        if d.ndim != 2:
            raise ValueError(f"mask data must be (H, W), got {d.shape}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count(self) -> int:
        return int(self.data.sum())


def _raster_array(raster) -> np.ndarray:
    return np.asarray(getattr(raster, "data", raster), dtype=np.float64)


def bilinear_sample(raster, u: float, v: float):
    """Bilinearly interpolate a raster at a continuous location.

    Returns ``(value, in_bounds)``.  The in-bounds domain is the closed box
    [0, width-1] x [0, height-1]; outside it the value is 0 (per channel)
    and the flag False.
    """
    a = _raster_array(raster)
    h, w = a.shape[:2]
    nch = 1 if a.ndim == 2 else a.shape[2]
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        zero = 0.0 if a.ndim == 2 else np.zeros(nch)
        return zero, False
    u0 = min(int(np.floor(u)), w - 2) if w > 1 else 0
    v0 = min(int(np.floor(v)), h - 2) if h > 1 else 0
    u1 = min(u0 + 1, w - 1)
    v1 = min(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    val = (
        a[v0, u0] * (1 - fu) * (1 - fv)
        + a[v0, u1] * fu * (1 - fv)
        + a[v1, u0] * (1 - fu) * fv
        + a[v1, u1] * fu * fv
    )
    return val, True


def gradients(raster) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference gradients (d/du, d/dv) of a 2-D or 3-D raster.

    The last column of the u-gradient and last row of the v-gradient are 0.
    """
    a = _raster_array(raster)
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError(f"raster must be at least 2x2 to differentiate, got {a.shape[:2]}")
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[:, :-1] = a[:, 1:] - a[:, :-1]
    gy[:-1, :] = a[1:, :] - a[:-1, :]
    return gx, gy


def eyelid_mask(seg: SegMap) -> PixelMask:
    """Mask that is True exactly where the label is not eyelid."""
    return PixelMask(seg.data != LABEL_EYELID)


def label_mask(seg: SegMap, label: int) -> PixelMask:
    return PixelMask(seg.data == label)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def write_image(path, frame: Frame) -> None:
    """Write a frame as binary PPM (P6), quantized to 8 bits."""
    q = np.round(frame.data * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (frame.width, frame.height))
        f.write(q.tobytes())


def read_image(path) -> Frame:
    """Read a binary PPM (P6) frame written by :func:`write_image`."""
    with open(path, "rb") as f:
        raw = f.read()
    magic, w, h, maxval, pixel_off = _parse_pnm_header(raw, path)
    if magic != b"P6":
        raise ParseError(f"{path}: expected PPM magic 'P6', found {magic.decode(errors='replace')!r}")
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval} (only 255)")
    need = w * h * 3
    body = raw[pixel_off : pixel_off + need]
    if len(body) < need:
        raise ParseError(
            f"{path}: truncated pixel data at offset {pixel_off + len(body)} "
            f"(expected {need} bytes, found {len(body)})"
        )
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return Frame(arr / 255.0)


def write_segmap(path, seg: SegMap) -> None:
    """Write a segmentation map as binary PGM (P5) of raw label indices."""
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (seg.width, seg.height))
        f.write(seg.data.tobytes())


def read_segmap(path) -> SegMap:
    with open(path, "rb") as f:
        raw = f.read()
    magic, w, h, maxval, pixel_off = _parse_pnm_header(raw, path)
    if magic != b"P5":
        raise ParseError(f"{path}: expected PGM magic 'P5', found {magic.decode(errors='replace')!r}")
    need = w * h
    body = raw[pixel_off : pixel_off + need]
    if len(body) < need:
        raise ParseError(
            f"{path}: truncated pixel data at offset {pixel_off + len(body)} "
            f"(expected {need} bytes, found {len(body)})"
        )
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    if arr.max(initial=0) > LABEL_CORNEA:
        raise ParseError(f"{path}: pixel value {int(arr.max())} is not a valid label (0..2)")
    return SegMap(arr)


def _parse_pnm_header(raw: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse 'P6\\n<w> <h>\\n<maxval>\\n' allowing arbitrary whitespace."""
    if len(raw) < 2:
        raise ParseError(f"{path}: file too short for a PNM header ({len(raw)} bytes)")
    magic = raw[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tok = raw[start:pos]
        if not tok:
            raise ParseError(f"{path}: header ended at offset {start} before field {len(fields) + 1}")
        if not tok.isdigit():
            raise ParseError(f"{path}: header field {len(fields) + 1} at offset {start} is not numeric: {tok!r}")
        fields.append(int(tok))
    pos += 1  # single whitespace byte separates header from pixels
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise ParseError(f"{path}: non-positive image size {w}x{h} in header")
    return magic, w, h, maxval, pos


def write_depth(path, depth: DepthMap) -> None:
    """Write a depth raster: ODPH header + row-major little-endian float32."""
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<HH", depth.width, depth.height))
        f.write(depth.data.astype("<f4").tobytes())


def read_depth(path) -> DepthMap:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise ParseError(f"{path}: file too short for depth header ({len(raw)} bytes, need 8)")
    if raw[:4] != DEPTH_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r} at offset 0 (expected {DEPTH_MAGIC!r})")
    w, h = struct.unpack("<HH", raw[4:8])
    if w == 0 or h == 0:
        raise ParseError(f"{path}: zero image dimension in header ({w}x{h})")
    need = w * h * 4
    body = raw[8 : 8 + need]
    if len(body) < need:
        raise ParseError(
            f"{path}: truncated float data at offset {8 + len(body)} (expected {need} bytes, found {len(body)})"
        )
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{path}: non-finite depth values in payload")
    return DepthMap(arr)
