"""Raster types, sRGB -> CIELAB conversion and file I/O.

File formats handled here:

* FMAP: little-endian float32 maps, ``b"FMAP0001"`` + u32 width + u32 height
  + row-major payload + trailing version byte ``0x01``.
* Label maps: 8-bit paletted PNG where palette index == class index.
* Class tables: UTF-8 text, one ``index<TAB>name`` line per class.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import (
    BadMagic,
    ClassTableError,
    DimensionMismatch,
    DimensionOverflow,
    DoubleNormalize,
    IndexOutOfTable,
    NonIndexedImage,
    TruncatedPayload,
    ValueOutOfRange,
)

# D65 reference white (2 degree observer), X/Y/Z with Y = 1.
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

# Linear sRGB -> XYZ, IEC 61966-2-1.
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

# (offset, scale) per channel: normalized = (value + offset) / scale.
# L in [0, 100]; a, b in [-128, 127].
LAB_NORMALIZATION = ((0.0, 100.0), (128.0, 255.0), (128.0, 255.0))

FMAP_MAGIC = b"FMAP0001"
FMAP_VERSION = 1
# Keeps width * height * 4 addressable and rejects garbage headers early.
FMAP_MAX_PIXELS = 1 << 30

_DELTA = 6.0 / 29.0


def _freeze(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawImage:
    """H x W x 3 uint8 sRGB raster."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionMismatch(f"expected HxWx3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch("image must be at least 1x1")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueOutOfRange("sRGB channels must lie in [0, 255]")
            arr = np.round(arr).astype(np.uint8)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class LabImage:
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionMismatch(f"expected HxWx3 array, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class FloatMap:
    """H x W float32 map with every value in [0, 1].

    Used both for the class-agnostic segmentation map and for per-class
    activation maps.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected HxW array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionOverflow("map must be at least 1x1")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
            raise ValueOutOfRange("map values must be finite and within [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelMap:
    """H x W class-index raster; index 0 is background.

    ``ignore_index`` marks void pixels (ground truth only) and is exempt from
    the class-table bound.
    """

    data: np.ndarray
    class_table: tuple = field(default=((0, "background"),))
    ignore_index: int | None = None

    def __post_init__(self):
        table = validate_class_table(self.class_table)
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected HxW array, got shape {arr.shape}")
        if np.any(arr < 0) or np.any(arr > 255):
            raise IndexOutOfTable("label indices must fit in 8 bits")
        arr = arr.astype(np.uint8)
        bad = arr >= len(table)
        if self.ignore_index is not None:
            bad &= arr != self.ignore_index
        if np.any(bad):
            raise IndexOutOfTable(
                f"label {int(arr[bad].max())} outside class table of size {len(table)}"
            )
        object.__setattr__(self, "class_table", table)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# colour conversion


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(
        c <= 0.0031308, 12.92 * c, 1.055 * np.power(np.maximum(c, 0), 1 / 2.4) - 0.055
    )


def _lab_f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(t):
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def rgb_to_lab(img):
    """Convert an sRGB image to CIELAB (D65).

    Parameters
    ----------
    img : RawImage

    Returns
    -------
    LabImage
        Unnormalized: L in [0, 100], a and b roughly in [-128, 127].
    """
    rgb = srgb_to_linear(img.data.astype(np.float64) / 255.0)
    xyz = rgb @ SRGB_TO_XYZ.T
    f = _lab_f(xyz / D65_WHITE)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    lab = np.stack([L, a, b], axis=-1)
    # cbrt rounding leaves ~1e-14 residue at black/white
    lab[np.abs(lab) < 1e-12] = 0.0
    return LabImage(lab, normalized=False)


def lab_to_rgb(lab):
    """Inverse of :func:`rgb_to_lab`; returns float sRGB in [0, 255].

    Out-of-gamut values are clipped.
    """
    data = lab.data
    if lab.normalized:
        data = denormalize_lab_array(data)
    fy = (data[..., 0] + 16.0) / 116.0
    fx = fy + data[..., 1] / 500.0
    fz = fy - data[..., 2] / 200.0
    xyz = _lab_f_inv(np.stack([fx, fy, fz], axis=-1)) * D65_WHITE
    rgb = linear_to_srgb(xyz @ XYZ_TO_SRGB.T)
    return np.clip(rgb, 0.0, 1.0) * 255.0


def normalize_lab(img):
    """Map L, a, b onto [0, 1] using :data:`LAB_NORMALIZATION`."""
    if img.normalized:
        raise DoubleNormalize("LabImage is already normalized")
    out = np.empty_like(img.data)
    for ch, (offset, scale) in enumerate(LAB_NORMALIZATION):
        out[..., ch] = (img.data[..., ch] + offset) / scale
    # a/b of real sRGB colours stay inside [-128, 127] but clip for safety
    np.clip(out, 0.0, 1.0, out=out)
    return LabImage(out, normalized=True)


def denormalize_lab_array(data):
    out = np.empty_like(np.asarray(data, dtype=np.float64))
    for ch, (offset, scale) in enumerate(LAB_NORMALIZATION):
        out[..., ch] = data[..., ch] * scale - offset
    return out


# ---------------------------------------------------------------------------
# file I/O


def atomic_write_bytes(path, payload):
    """Write ``payload`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_fmap(fmap):
    h, w = fmap.data.shape
    header = FMAP_MAGIC + struct.pack("<II", w, h)
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    return header + payload + bytes([FMAP_VERSION])


def decode_fmap(raw):
    if raw[:8] != FMAP_MAGIC:
        raise BadMagic(f"bad FMAP magic {raw[:8]!r}")
    if len(raw) < 16:
        raise TruncatedPayload("FMAP header truncated")
    w, h = struct.unpack_from("<II", raw, 8)
    if w == 0 or h == 0 or w * h > FMAP_MAX_PIXELS:
        raise DimensionOverflow(f"invalid FMAP dimensions {w}x{h}")
    n_bytes = 4 * w * h
    if len(raw) < 16 + n_bytes + 1:
        raise TruncatedPayload(
            f"expected {16 + n_bytes + 1} bytes for {w}x{h} map, got {len(raw)}"
        )
    if len(raw) > 16 + n_bytes + 1:
        raise BadMagic("trailing bytes after FMAP version byte")
    if raw[16 + n_bytes] != FMAP_VERSION:
        raise BadMagic(f"unsupported FMAP version byte {raw[16 + n_bytes]}")
    data = np.frombuffer(raw, dtype="<f4", count=w * h, offset=16).reshape(h, w)
    if not np.all(np.isfinite(data)) or np.any(data < 0) or np.any(data > 1):
        raise ValueOutOfRange("FMAP contains values outside [0, 1]")
    return FloatMap(data.astype(np.float32))


def save_fmap(fmap, path):
    atomic_write_bytes(path, encode_fmap(fmap))


def load_fmap(path):
    with open(path, "rb") as fh:
        return decode_fmap(fh.read())


def load_image(path):
    """Read a PNG (or anything Pillow decodes to RGB) as a RawImage."""
    with Image.open(path) as im:
        return RawImage(np.asarray(im.convert("RGB")))


def save_image(img, path):
    im = Image.fromarray(np.asarray(img.data, dtype=np.uint8), mode="RGB")
    _atomic_save_png(im, path)


def voc_palette(n=256):
    """The PASCAL VOC bit-interleaved colour map, flattened to 3*n bytes."""
    palette = []
    for i in range(n):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette.extend((r, g, b))
    return palette


def _atomic_save_png(im, path):
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_label_png(label_map, path):
    im = Image.fromarray(np.asarray(label_map.data, dtype=np.uint8), mode="P")
    im.putpalette(voc_palette())
    _atomic_save_png(im, path)


def load_label_png(path, class_table, ignore_index=None):
    """Read an 8-bit paletted PNG as a LabelMap.

    Palette index ``i`` is class ``i``. Pixels equal to ``ignore_index``
    (e.g. 255 for VOC void) are allowed beyond the class table.
    """
    with Image.open(path) as im:
        if im.mode != "P":
            raise NonIndexedImage(f"{path}: expected paletted PNG, got mode {im.mode}")
        data = np.array(im, dtype=np.uint8)
    return LabelMap(data, class_table=class_table, ignore_index=ignore_index)


def validate_class_table(entries):
    table = tuple((int(i), str(name)) for i, name in entries)
    if not table:
        raise ClassTableError("class table is empty")
    for expected, (idx, _) in enumerate(table):
        if idx != expected:
            raise ClassTableError(f"class indices must be 0..K-1 in order, saw {idx}")
    if table[0][1] != "background":
        raise ClassTableError("class 0 must be 'background'")
    if len(table) > 255:
        raise ClassTableError("at most 255 classes fit an 8-bit label map")
    return table


def parse_class_table(text):
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 2:
            raise ClassTableError(f"line {lineno}: expected 'index<TAB>name'")
        try:
            idx = int(parts[0])
        except ValueError:
            raise ClassTableError(f"line {lineno}: bad index {parts[0]!r}") from None
        entries.append((idx, parts[1].strip()))
    entries.sort()
    return validate_class_table(entries)


def load_class_table(path):
    with open(path, encoding="utf-8") as fh:
        return parse_class_table(fh.read())


def format_class_table(table):
    return "".join(f"{i}\t{name}\n" for i, name in table)


def save_class_table(table, path):
    atomic_write_bytes(path, format_class_table(validate_class_table(table)).encode("utf-8"))
