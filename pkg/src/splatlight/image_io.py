"""Radiance RGBE (.hdr) codec and 8-bit sRGB PNG I/O.

RGBE stores linear RGB with a shared 8-bit exponent per pixel. Encoding
rounds the dominant channel's mantissa byte into [128, 256) half-up, so a
decode -> encode -> decode cycle is exact and the dominant-channel error of
a float -> file -> float trip stays within 1/256 of the shared-exponent
scale. Both RLE (new-style, per-component) and flat scanlines are read;
writing uses RLE whenever the width allows it.
"""

import math
import re
import struct

import numpy as np
from PIL import Image


class HdrFormatError(ValueError):
    """Malformed .hdr content; message carries the byte offset."""


_RES_RE = re.compile(rb"^-Y (\d+) \+X (\d+)\s*$")


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """(..., 4) uint8 -> (..., 3) float32 linear radiance."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.where(exp == 0, 0.0, np.ldexp(1.0, exp - 136)).astype(np.float64)
    return (rgbe[..., :3].astype(np.float64) * scale[..., None]).astype(np.float32)


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """(..., 3) nonnegative finite floats -> (..., 4) uint8 RGBE."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if not np.all(np.isfinite(rgb)):
        raise ValueError("radiance must be finite to encode as RGBE")
    if np.any(rgb < 0):
        raise ValueError("radiance must be nonnegative to encode as RGBE")
    v = rgb.max(axis=-1)
    _, exp = np.frexp(v)
    exp = np.clip(exp, -127, 127)
    # byte = round-half-up(channel * 2^(8 - e)); dominant channel lands in [128, 256)
    scale = np.ldexp(1.0, 8 - exp)
    bytes_ = np.floor(rgb * scale[..., None] + 0.5)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    live = v >= 1e-38
    out[..., :3] = np.where(live[..., None], np.clip(bytes_, 0, 255), 0).astype(np.uint8)
    out[..., 3] = np.where(live, exp + 128, 0).astype(np.uint8)
    return out


def _read_header(data: bytes):
    if not data.startswith(b"#?"):
        raise HdrFormatError("byte 0: missing #? magic; not a Radiance HDR file")
    pos = 0
    fmt_ok = False
    while True:
        eol = data.find(b"\n", pos)
        if eol < 0:
            raise HdrFormatError(f"byte {pos}: header not terminated")
        line = data[pos:eol]
        if line.startswith(b"FORMAT="):
            if line.strip() != b"FORMAT=32-bit_rle_rgbe":
                raise HdrFormatError(f"byte {pos}: unsupported {line.decode(errors='replace')}")
            fmt_ok = True
        if line == b"":
            pos = eol + 1
            break
        pos = eol + 1
    if not fmt_ok:
        raise HdrFormatError(f"byte {pos}: FORMAT=32-bit_rle_rgbe line missing")
    eol = data.find(b"\n", pos)
    if eol < 0:
        raise HdrFormatError(f"byte {pos}: missing resolution line")
    m = _RES_RE.match(data[pos:eol])
    if not m:
        raise HdrFormatError(
            f"byte {pos}: unsupported resolution line "
            f"{data[pos:eol].decode(errors='replace')!r} (only -Y h +X w)")
    return int(m.group(1)), int(m.group(2)), eol + 1


def _decode_rle_component(data: bytes, pos: int, width: int, out: np.ndarray) -> int:
    filled = 0
    while filled < width:
        if pos >= len(data):
            raise HdrFormatError(f"byte {pos}: truncated RLE scanline")
        count = data[pos]
        pos += 1
        if count > 128:
            run = count - 128
            if pos >= len(data) or filled + run > width:
                raise HdrFormatError(f"byte {pos}: RLE run overflows scanline")
            out[filled:filled + run] = data[pos]
            pos += 1
            filled += run
        else:
            if count == 0:
                raise HdrFormatError(f"byte {pos - 1}: zero-length RLE literal")
            if pos + count > len(data) or filled + count > width:
                raise HdrFormatError(f"byte {pos}: RLE literal overflows scanline")
            out[filled:filled + count] = np.frombuffer(data[pos:pos + count], np.uint8)
            pos += count
            filled += count
    return pos


def read_hdr(path) -> np.ndarray:
    """Read a Radiance .hdr file into (h, w, 3) float32 linear radiance."""
    with open(path, "rb") as fh:
        data = fh.read()
    height, width, pos = _read_header(data)
    rgbe = np.zeros((height, width, 4), dtype=np.uint8)
    for row in range(height):
        if pos + 4 > len(data):
            raise HdrFormatError(f"byte {pos}: truncated at scanline {row}")
        head = data[pos:pos + 4]
        if head[0] == 2 and head[1] == 2 and (head[2] << 8 | head[3]) == width and width >= 8:
            pos += 4
            comps = np.zeros((4, width), dtype=np.uint8)
            for c in range(4):
                pos = _decode_rle_component(data, pos, width, comps[c])
            rgbe[row] = comps.T
        else:
            # flat scanline, with legacy (1,1,1,n) repeat codes
            col = 0
            prev = None
            while col < width:
                if pos + 4 > len(data):
                    raise HdrFormatError(f"byte {pos}: truncated flat scanline {row}")
                px = data[pos:pos + 4]
                pos += 4
                if px[0] == 1 and px[1] == 1 and px[2] == 1:
                    if prev is None:
                        raise HdrFormatError(f"byte {pos - 4}: repeat code with no prior pixel")
                    n = px[3]
                    if col + n > width:
                        raise HdrFormatError(f"byte {pos - 4}: repeat overflows scanline")
                    rgbe[row, col:col + n] = prev
                    col += n
                else:
                    rgbe[row, col] = np.frombuffer(px, np.uint8)
                    prev = rgbe[row, col]
                    col += 1
    return _rgbe_to_float(rgbe)


def _encode_rle_component(comp: np.ndarray, out: bytearray) -> None:
    width = len(comp)
    boundaries = np.flatnonzero(np.diff(comp)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [width]))
    lit_start = None
    for s, e in zip(starts, ends):
        if e - s >= 4:
            if lit_start is not None:
                for ls in range(lit_start, s, 128):
                    chunk = comp[ls:min(ls + 128, s)]
                    out.append(len(chunk))
                    out.extend(chunk.tobytes())
                lit_start = None
            run = e - s
            value = int(comp[s])
            while run > 0:
                step = min(run, 127)
                out.append(128 + step)
                out.append(value)
                run -= step
        elif lit_start is None:
            lit_start = s
    if lit_start is not None:
        for ls in range(lit_start, width, 128):
            chunk = comp[ls:min(ls + 128, width)]
            out.append(len(chunk))
            out.extend(chunk.tobytes())


def write_hdr(path, pixels: np.ndarray) -> None:
    """Write (h, w, 3) linear radiance as a Radiance .hdr file."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) pixels, got {pixels.shape}")
    height, width = pixels.shape[:2]
    rgbe = _float_to_rgbe(pixels)
    out = bytearray()
    out.extend(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
    out.extend(f"-Y {height} +X {width}\n".encode())
    rle = 8 <= width <= 32767
    for row in range(height):
        if rle:
            out.extend(struct.pack(">BBH", 2, 2, width))
            for c in range(4):
                _encode_rle_component(rgbe[row, :, c], out)
        else:
            out.extend(rgbe[row].tobytes())
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def linear_to_srgb(linear: np.ndarray) -> np.ndarray:
    """Standard piecewise sRGB encoding of linear values in [0, 1]."""
    linear = np.clip(linear, 0.0, 1.0)
    return np.where(linear <= 0.0031308,
                    12.92 * linear,
                    1.055 * np.power(linear, 1.0 / 2.4) - 0.055)


def srgb_to_linear(srgb: np.ndarray) -> np.ndarray:
    srgb = np.clip(srgb, 0.0, 1.0)
    return np.where(srgb <= 0.04045,
                    srgb / 12.92,
                    np.power((srgb + 0.055) / 1.055, 2.4))


def write_png(path, linear: np.ndarray) -> None:
    """Write linear RGB (clamped to [0,1]) as an 8-bit sRGB PNG."""
    srgb = linear_to_srgb(np.asarray(linear, dtype=np.float64))
    data = np.round(srgb * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    """Read an 8-bit PNG into (h, w, 3) linear RGB floats."""
    img = Image.open(path).convert("RGB")
    return srgb_to_linear(np.asarray(img, dtype=np.float64) / 255.0)


def read_mask_png(path) -> np.ndarray:
    """Read a PNG as a boolean mask (any nonzero channel counts)."""
    img = Image.open(path).convert("L")
    return np.asarray(img) > 0


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = None) -> float:
    """Peak signal-to-noise ratio in dB; peak defaults to the reference max.

    Identical inputs return inf.
    """
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError("psnr inputs must share a shape")
    if peak is None:
        peak = float(reference.max())
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
