"""Tensor file formats and resampling shared by the whole pipeline.

Every numeric array crossing a module boundary is a float64 numpy array in
C order; this module owns the byte-level codecs that get them on and off
disk. Feature maps travel as a strict NPY v1.0 subset (little-endian
floats, C order, header padded to a 64-byte multiple). Images travel as
binary PGM/PPM with maxval 255 or 65535 (16-bit samples big-endian per the
netpbm convention). Instance label maps are 16-bit PGM holding raw label
values. Image samples are normalized to [0, 1] when converted to tensors.
"""

from __future__ import annotations

import ast
import os
import tempfile
from dataclasses import dataclass

import numpy as np


class FormatError(ValueError):
    """Malformed container: bad magic, header, or payload size."""


class UnsupportedFormatError(FormatError):
    """Well-formed container using a feature outside the supported subset."""


_NPY_MAGIC = b"\x93NUMPY"


# ---------------------------------------------------------------------------
# NPY v1.0 subset


def read_npy(data: bytes) -> np.ndarray:
    """Decode a version-1.0 NPY container into a float64 tensor.

    Accepts C-order little-endian float32/float64 payloads only; anything
    else raises UnsupportedFormatError, malformed bytes raise FormatError.
    """
    if len(data) < 10 or data[:6] != _NPY_MAGIC:
        raise FormatError("not an NPY container (bad magic)")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise UnsupportedFormatError(f"NPY version {major}.{minor} unsupported (need 1.0)")
    header_len = int.from_bytes(data[8:10], "little")
    header_end = 10 + header_len
    if len(data) < header_end:
        raise FormatError("truncated NPY header")
    try:
        header = ast.literal_eval(data[10:header_end].decode("latin1").strip())
    except (ValueError, SyntaxError):
        raise FormatError("unparseable NPY header") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError("NPY header must carry exactly descr/fortran_order/shape")
    if header["fortran_order"] is not False:
        raise UnsupportedFormatError("fortran-order NPY unsupported")
    descr = header["descr"]
    if descr not in ("<f4", "<f8"):
        raise UnsupportedFormatError(f"NPY dtype {descr!r} unsupported (need <f4 or <f8)")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"bad NPY shape {shape!r}")
    count = 1
    for dim in shape:
        count *= dim
    itemsize = 4 if descr == "<f4" else 8
    payload = data[header_end:]
    if len(payload) != count * itemsize:
        raise FormatError(f"NPY payload holds {len(payload)} bytes, expected {count * itemsize}")
    values = np.frombuffer(payload, dtype=descr).astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(values)):
        raise FormatError("NPY payload contains non-finite values")
    return values


def write_npy(t: np.ndarray) -> bytes:
    """Encode a tensor as NPY v1.0: '<f8', C order, header padded to 64 bytes."""
    arr = np.asarray(t, dtype="<f8", order="C")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    header = "{'descr': '<f8', 'fortran_order': False, 'shape': %s, }" % repr(arr.shape)
    unpadded = len(_NPY_MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * ((64 - unpadded % 64) % 64) + "\n"
    out = bytearray(_NPY_MAGIC)
    out += bytes((1, 0))
    out += len(header).to_bytes(2, "little")
    out += header.encode("latin1")
    out += arr.tobytes()
    return bytes(out)


# ---------------------------------------------------------------------------
# Binary PGM / PPM


@dataclass(frozen=True)
class ImageBuffer:
    """Raster of unsigned samples, shape (height, width, channels).

    channels is 1 (PGM) or 3 (PPM); dtype uint8 maps to maxval 255 and
    uint16 to maxval 65535.
    """

    samples: np.ndarray

    def __post_init__(self):
        s = self.samples
        if s.ndim != 3 or s.shape[2] not in (1, 3):
            raise ValueError(f"samples must be (h, w, 1|3), got {s.shape}")
        if s.dtype not in (np.uint8, np.uint16):
            raise ValueError(f"samples must be uint8 or uint16, got {s.dtype}")
        if s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    @property
    def maxval(self) -> int:
        return 255 if self.samples.dtype == np.uint8 else 65535


def _pnm_header(data: bytes, n_tokens: int) -> tuple[list[bytes], int]:
    # whitespace-separated tokens, '#' comments to end of line; returns the
    # tokens plus the offset just past the single separator before the raster
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < n_tokens:
        if i >= len(data):
            raise FormatError("truncated PNM header")
        b = data[i]
        if b in b" \t\r\n":
            i += 1
            continue
        if b == ord("#"):
            nl = data.find(b"\n", i)
            if nl < 0:
                raise FormatError("unterminated PNM comment")
            i = nl + 1
            continue
        j = i
        while j < len(data) and data[j] not in b" \t\r\n#":
            j += 1
        tokens.append(data[i:j])
        i = j
    if i >= len(data) or data[i] not in b" \t\r\n":
        raise FormatError("missing separator before PNM raster")
    return tokens, i + 1


def read_pnm(data: bytes) -> ImageBuffer:
    """Decode binary PGM (P5) or PPM (P6) bytes, maxval 255 or 65535."""
    if len(data) < 2:
        raise FormatError("not a PNM file")
    magic = bytes(data[:2])
    if magic in (b"P2", b"P3"):
        raise UnsupportedFormatError("ASCII PNM (P2/P3) unsupported; use binary P5/P6")
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM (magic {magic!r})")
    channels = 1 if magic == b"P5" else 3
    tokens, start = _pnm_header(data, 4)
    try:
        width, height, maxval = (int(tok) for tok in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PNM dimensions") from None
    if width < 1 or height < 1:
        raise FormatError("PNM dimensions must be positive")
    if maxval not in (255, 65535):
        raise UnsupportedFormatError(f"PNM maxval {maxval} unsupported (need 255 or 65535)")
    dtype = np.dtype(np.uint8) if maxval == 255 else np.dtype(">u2")
    expected = height * width * channels * dtype.itemsize
    payload = data[start:]
    if len(payload) != expected:
        raise FormatError(f"PNM raster holds {len(payload)} bytes, expected {expected}")
    samples = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    return ImageBuffer(samples.astype(np.uint16 if maxval == 65535 else np.uint8))


def write_pnm(img: ImageBuffer) -> bytes:
    """Encode an ImageBuffer as binary PGM/PPM; read_pnm inverts it."""
    magic = "P5" if img.channels == 1 else "P6"
    header = f"{magic}\n{img.width} {img.height}\n{img.maxval}\n".encode("ascii")
    if img.maxval == 65535:
        payload = img.samples.astype(">u2").tobytes()
    else:
        payload = img.samples.astype(np.uint8).tobytes()
    return header + payload


# ---------------------------------------------------------------------------
# Conversions


def image_to_tensor(img: ImageBuffer) -> np.ndarray:
    """Samples normalized to [0, 1] as float64, shape (h, w, c)."""
    return img.samples.astype(np.float64) / float(img.maxval)


def tensor_to_image(t: np.ndarray, bits: int = 8) -> ImageBuffer:
    """Quantize a [0, 1] tensor to an 8- or 16-bit image buffer."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(arr, 0.0, 1.0) * maxval)
    return ImageBuffer(q.astype(np.uint8 if bits == 8 else np.uint16))


def labels_to_buffer(labels: np.ndarray) -> ImageBuffer:
    """Instance/superpixel label map as 16-bit PGM samples (raw values)."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("label map must be integer-valued")
    if arr.min() < 0 or arr.max() > 65535:
        raise ValueError("labels out of uint16 range")
    return ImageBuffer(arr.astype(np.uint16)[:, :, None])


def buffer_to_labels(img: ImageBuffer) -> np.ndarray:
    """Inverse of labels_to_buffer: (h, w) int64 array of raw sample values."""
    if img.channels != 1:
        raise ValueError("label maps are single-channel PGM")
    return img.samples[:, :, 0].astype(np.int64)


# ---------------------------------------------------------------------------
# Resampling


def resize_bilinear(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample (align-corners-false) to (out_h, out_w).

    Accepts (h, w) or (h, w, c); output values are clamped to the input's
    per-channel range so interpolation never overshoots.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("target dimensions must be positive")
    arr = np.asarray(t, dtype=np.float64)
    flat = arr.ndim == 2
    if flat:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected (h, w) or (h, w, c) tensor, got shape {arr.shape}")
    h, w, _ = arr.shape
    if h == out_h and w == out_w:
        return arr[:, :, 0].copy() if flat else arr.copy()

    src_y = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(np.intp)
    x0 = np.floor(src_x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0)[:, None, None]
    wx = (src_x - x0)[None, :, None]

    top = arr[y0][:, x0] * (1.0 - wx) + arr[y0][:, x1] * wx
    bot = arr[y1][:, x0] * (1.0 - wx) + arr[y1][:, x1] * wx
    out = top * (1.0 - wy) + bot * wy

    lo = arr.min(axis=(0, 1))
    hi = arr.max(axis=(0, 1))
    out = np.clip(out, lo, hi)
    return out[:, :, 0] if flat else out


# ---------------------------------------------------------------------------
# Path-level helpers (atomic writes)


def write_bytes_atomic(path: str, data: bytes) -> None:
    """Write via a temp file and rename so failures never leave partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_npy(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_npy(fh.read())


def save_npy(path: str, t: np.ndarray) -> None:
    write_bytes_atomic(path, write_npy(t))


def load_pnm(path: str) -> ImageBuffer:
    with open(path, "rb") as fh:
        return read_pnm(fh.read())


def save_pnm(path: str, img: ImageBuffer) -> None:
    write_bytes_atomic(path, write_pnm(img))
