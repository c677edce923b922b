"""Readers and writers for images, flow, disparity, configs and loss histories.

PNG is decoded and encoded here directly (non-interlaced, non-paletted,
8/16 bit) so that 16-bit three-channel KITTI flow files round-trip exactly.
"""
from __future__ import annotations

import ast
import csv
import os
import struct
import zlib
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np
from numba import njit


class FormatError(ValueError):
    """Malformed, truncated or unsupported file."""


# ---------------------------------------------------------------- PNG

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_PNG_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


@njit(cache=True)
def _unfilter(raw, height, stride, bpp):
    out = np.empty((height, stride), dtype=np.uint8)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        pos += 1
        for x in range(stride):
            a = np.int32(out[y, x - bpp]) if x >= bpp else np.int32(0)
            b = np.int32(out[y - 1, x]) if y > 0 else np.int32(0)
            c = np.int32(out[y - 1, x - bpp]) if (x >= bpp and y > 0) else np.int32(0)
            v = np.int32(raw[pos + x])
            if ftype == 0:
                r = v
            elif ftype == 1:
                r = v + a
            elif ftype == 2:
                r = v + b
            elif ftype == 3:
                r = v + (a + b) // 2
            elif ftype == 4:
                p = a + b - c
                pa = abs(p - a)
                pb = abs(p - b)
                pc = abs(p - c)
                if pa <= pb and pa <= pc:
                    pr = a
                elif pb <= pc:
                    pr = b
                else:
                    pr = c
                r = v + pr
            else:
                return out, y
            out[y, x] = r & 0xFF
        pos += stride
    return out, -1


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a uint8/uint16 array of shape (H, W, C)."""
    if not data.startswith(_PNG_SIG):
        raise FormatError("not a PNG file")
    pos = len(_PNG_SIG)
    header = None
    idat = []
    while True:
        if pos + 8 > len(data):
            raise FormatError("truncated PNG")
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length or pos + 12 + length > len(data):
            raise FormatError("truncated PNG chunk")
        (crc,) = struct.unpack(">I", data[pos + 8 + length:pos + 12 + length])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise FormatError(f"CRC mismatch in {ctype!r} chunk")
        pos += 12 + length
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if header is None:
        raise FormatError("PNG without IHDR")
    width, height, depth, color, comp, filt, interlace = header
    if color == 3:
        raise FormatError("paletted PNG is not supported")
    if color not in _PNG_CHANNELS:
        raise FormatError(f"unknown PNG colour type {color}")
    if interlace != 0:
        raise FormatError("interlaced PNG is not supported")
    if depth not in (8, 16):
        raise FormatError(f"unsupported PNG bit depth {depth}")
    if comp != 0 or filt != 0:
        raise FormatError("unknown PNG compression or filter method")
    if width == 0 or height == 0:
        raise FormatError("empty PNG")
    channels = _PNG_CHANNELS[color]
    bpp = channels * depth // 8
    stride = width * bpp
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise FormatError(f"corrupt PNG data: {exc}") from None
    if len(raw) != height * (stride + 1):
        raise FormatError("PNG image data has the wrong length")
    rows, bad = _unfilter(np.frombuffer(raw, dtype=np.uint8), height, stride, bpp)
    if bad >= 0:
        raise FormatError(f"invalid PNG filter type on row {bad}")
    if depth == 16:
        img = rows.view(">u2").astype(np.uint16)
    else:
        img = rows
    return img.reshape(height, width, channels)


def encode_png(img: np.ndarray) -> bytes:
    """Encode a uint8 or uint16 array with 1-4 channels (no row filtering)."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[..., None]
    if a.dtype == np.uint8:
        depth = 8
    elif a.dtype == np.uint16:
        depth = 16
    else:
        raise FormatError(f"PNG needs uint8 or uint16 data, got {a.dtype}")
    h, w, c = a.shape
    color = {1: 0, 2: 4, 3: 2, 4: 6}.get(c)
    if color is None:
        raise FormatError(f"cannot store {c} channels in PNG")
    body = a.astype(">u2" if depth == 16 else np.uint8).reshape(h, -1).view(np.uint8)
    raw = np.concatenate([np.zeros((h, 1), np.uint8), body], axis=1).tobytes()

    def chunk(tag, payload):
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))

    return (_PNG_SIG
            + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, depth, color, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 6))
            + chunk(b"IEND", b""))


def read_png(path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())


def write_png(path, img) -> None:
    Path(path).write_bytes(encode_png(img))


# ---------------------------------------------------------------- PGM / PPM

def _pnm_tokens(data: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte ends the header


def decode_pnm(data: bytes):
    """Binary PGM (P5) or PPM (P6). Returns (array (H, W, C), maxval)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError("only binary PGM (P5) and PPM (P6) are supported")
    tokens, pos = _pnm_tokens(data, 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("malformed PNM header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError("invalid PNM dimensions or maxval")
    c = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * c * dtype.itemsize
    payload = data[pos:pos + n]
    if len(payload) != n:
        raise FormatError("truncated PNM payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w, c)
    return arr.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def encode_pnm(img: np.ndarray, maxval: int = 255) -> bytes:
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[..., None]
    h, w, c = a.shape
    if c not in (1, 3):
        raise FormatError("PNM stores 1 or 3 channels")
    dtype = ">u2" if maxval > 255 else np.uint8
    head = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n{maxval}\n".encode()
    return head + a.astype(dtype).tobytes()


# ---------------------------------------------------------------- images

def _ext(path):
    return os.path.splitext(str(path))[1].lower()


def read_image(path) -> np.ndarray:
    """Read PNG/PGM/PPM as float64 (H, W, C) in [0, 1]; alpha is dropped."""
    ext = _ext(path)
    if ext not in (".png", ".pgm", ".ppm", ".pnm"):
        raise FormatError(f"unsupported image format {ext!r}")
    data = Path(path).read_bytes()
    if ext == ".png":
        arr = decode_png(data)
        scale = 65535.0 if arr.dtype == np.uint16 else 255.0
        if arr.shape[-1] in (2, 4):
            arr = arr[..., :-1]
    else:
        arr, scale = decode_pnm(data)
    return arr.astype(np.float64) / float(scale)


def write_image(img, path, bit_depth: int = 8) -> None:
    """Write a [0, 1] image as PNG or PGM/PPM; values are rounded to the nearest level."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    top = 255 if bit_depth == 8 else 65535
    q = np.rint(np.clip(a, 0.0, 1.0) * top).astype(np.uint8 if bit_depth == 8 else np.uint16)
    ext = _ext(path)
    if ext == ".png":
        write_png(path, q)
    elif ext in (".pgm", ".ppm", ".pnm"):
        Path(path).write_bytes(encode_pnm(q, top))
    else:
        raise FormatError(f"unsupported image format {ext!r}")


def write_mask(mask, path) -> None:
    """Binary mask as an 8-bit grayscale PNG (255 = visible)."""
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[..., 0]
    write_png(path, np.where(m > 0.5, 255, 0).astype(np.uint8))


# ---------------------------------------------------------------- .flo

FLO_MAGIC = 202021.25
_FLO_UNKNOWN = 1e9


def decode_flo(data: bytes) -> np.ndarray:
    if len(data) < 12:
        raise FormatError("truncated .flo header")
    magic, = struct.unpack("<f", data[:4])
    if magic != FLO_MAGIC:
        raise FormatError("bad .flo magic number")
    w, h = struct.unpack("<ii", data[4:12])
    if w <= 0 or h <= 0:
        raise FormatError(f"implausible .flo dimensions {w}x{h}")
    if len(data) != 12 + 8 * w * h:
        raise FormatError(".flo payload size does not match its dimensions")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float32)


def encode_flo(flow) -> bytes:
    f = np.asarray(flow)
    if f.ndim != 3 or f.shape[-1] != 2:
        raise FormatError("flow must have shape (H, W, 2)")
    h, w = f.shape[:2]
    return struct.pack("<fii", FLO_MAGIC, w, h) + f.astype("<f4").tobytes()


# ---------------------------------------------------------------- KITTI PNG

def decode_kitti_flow(img: np.ndarray):
    if img.dtype != np.uint16 or img.shape[-1] != 3:
        raise FormatError("KITTI flow PNG must be 16-bit with 3 channels")
    uv = (img[..., :2].astype(np.float64) - 32768.0) / 64.0
    return uv, img[..., 2] > 0


def encode_kitti_flow(flow, valid=None) -> np.ndarray:
    f = np.asarray(flow, dtype=np.float64)
    if f.ndim != 3 or f.shape[-1] != 2:
        raise FormatError("flow must have shape (H, W, 2)")
    out = np.empty(f.shape[:2] + (3,), dtype=np.uint16)
    out[..., :2] = np.clip(np.rint(f * 64.0 + 32768.0), 0, 65535)
    out[..., 2] = 1 if valid is None else (np.asarray(valid).reshape(f.shape[:2]) > 0)
    return out


def decode_kitti_disparity(img: np.ndarray):
    if img.dtype != np.uint16 or img.shape[-1] != 1:
        raise FormatError("KITTI disparity PNG must be 16-bit single channel")
    v = img[..., 0]
    return v.astype(np.float64) / 256.0, v > 0


def encode_kitti_disparity(disp, valid=None) -> np.ndarray:
    d = np.asarray(disp, dtype=np.float64)
    ok = np.isfinite(d) if valid is None else (np.asarray(valid).reshape(d.shape) > 0)
    q = np.clip(np.rint(np.where(ok, d, 0.0) * 256.0), 1, 65535)
    return np.where(ok, q, 0).astype(np.uint16)


# ---------------------------------------------------------------- PFM

def decode_pfm(data: bytes) -> np.ndarray:
    lines, pos = [], 0
    for _ in range(3):
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated PFM header")
        lines.append(data[pos:end].strip())
        pos = end + 1
    kind = lines[0]
    if kind not in (b"Pf", b"PF"):
        raise FormatError("bad PFM identifier")
    try:
        w, h = (int(t) for t in lines[1].split())
        scale = float(lines[2])
    except ValueError:
        raise FormatError("malformed PFM header") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise FormatError("invalid PFM dimensions or scale")
    c = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * c * 4
    if len(data) - pos != n:
        raise FormatError("PFM payload size does not match its dimensions")
    arr = np.frombuffer(data, dtype=dtype, offset=pos).reshape(h, w, c)[::-1]
    arr = arr.astype(np.float32)
    return arr[..., 0] if c == 1 else arr


def encode_pfm(arr, little_endian: bool = True) -> bytes:
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[..., None]
    h, w, c = a.shape
    if c not in (1, 3):
        raise FormatError("PFM stores 1 or 3 channels")
    head = f"{'Pf' if c == 1 else 'PF'}\n{w} {h}\n{-1.0 if little_endian else 1.0}\n".encode()
    return head + a[::-1].astype("<f4" if little_endian else ">f4").tobytes()


# ---------------------------------------------------------------- flow / disparity API

def _format(path, fmt, table):
    if fmt is None:
        fmt = table.get(_ext(path))
    if fmt not in table.values():
        raise FormatError(f"cannot infer a supported format for {path}")
    return fmt


_FLOW_FORMATS = {".flo": "flo", ".png": "kitti_png"}
_DISP_FORMATS = {".png": "kitti_png", ".pfm": "pfm"}


def read_flow(path, format: str | None = None):
    """Return (flow (H, W, 2), valid (H, W) bool)."""
    fmt = _format(path, format, _FLOW_FORMATS)
    data = Path(path).read_bytes()
    if fmt == "flo":
        flow = decode_flo(data)
        valid = np.all(np.abs(flow) < _FLO_UNKNOWN, axis=-1)
        return flow, valid
    return decode_kitti_flow(decode_png(data))


def write_flow(path, flow, valid=None, format: str | None = None) -> None:
    fmt = _format(path, format, _FLOW_FORMATS)
    if fmt == "flo":
        f = np.asarray(flow)
        if valid is not None:
            f = np.where(np.asarray(valid)[..., None] > 0, f, np.float32(_FLO_UNKNOWN * 10))
        Path(path).write_bytes(encode_flo(f))
    else:
        write_png(path, encode_kitti_flow(flow, valid))


def read_disparity(path, format: str | None = None):
    """Return (disparity (H, W), valid (H, W) bool); PFM invalids are non-finite."""
    fmt = _format(path, format, _DISP_FORMATS)
    data = Path(path).read_bytes()
    if fmt == "pfm":
        d = decode_pfm(data)
        if d.ndim == 3:
            raise FormatError("disparity PFM must have one channel")
        return d, np.isfinite(d)
    return decode_kitti_disparity(decode_png(data))


def write_disparity(path, disp, valid=None, format: str | None = None) -> None:
    fmt = _format(path, format, _DISP_FORMATS)
    if fmt == "pfm":
        d = np.asarray(disp)
        if valid is not None:
            d = np.where(np.asarray(valid) > 0, d, np.inf)
        Path(path).write_bytes(encode_pfm(d))
    else:
        write_png(path, encode_kitti_disparity(disp, valid))


# ---------------------------------------------------------------- colour wheel

def color_wheel() -> np.ndarray:
    """The 55-entry Middlebury wheel (RY, YG, GC, CB, BM, MR segments), values 0-255."""
    segs = (15, 6, 4, 11, 13, 6)
    rows = []
    for i, n in enumerate(segs):
        ramp = np.floor(255.0 * np.arange(n) / n)
        c = np.zeros((n, 3))
        lead, trail = i // 2, (i // 2 + 1) % 3
        if i % 2 == 0:   # primary stays full, next rises
            c[:, lead] = 255
            c[:, trail] = ramp
        else:            # previous primary falls, next stays full
            c[:, lead] = 255 - ramp
            c[:, trail] = 255
        rows.append(c)
    return np.concatenate(rows)


def flow_to_color(flow, max_magnitude: float | None = None) -> np.ndarray:
    """Middlebury colour coding of a flow field, float (H, W, 3) in [0, 1].

    Saturation follows magnitude / ``max_magnitude`` (default: the 99th
    percentile of the field's magnitudes); beyond it colours are dimmed.
    """
    f = np.asarray(flow, dtype=np.float64)
    u, v = f[..., 0], f[..., 1]
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, 99)) if mag.size else 0.0
    rad = mag / max(max_magnitude, np.finfo(float).eps)
    wheel = color_wheel() / 255.0
    ncols = len(wheel)
    a = np.arctan2(-v, -u) / np.pi
    a = np.where(a == 1.0, -1.0, a)  # +u maps to the first entry whatever the sign of a zero v
    fk = (a + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    frac = (fk - k0)[..., None]
    col = (1.0 - frac) * wheel[k0] + frac * wheel[k1]
    inside = (rad <= 1.0)[..., None]
    r = rad[..., None]
    return np.where(inside, 1.0 - r * (1.0 - col), col * 0.75)


# ---------------------------------------------------------------- config & history

def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"config line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def read_config(path) -> dict:
    return parse_config(Path(path).read_text())


def build_configs(values: dict, seed: int | None = None):
    """Split a flat key/value dict into (LossWeights, OptimizerConfig)."""
    from .losses import LossWeights
    from .optimize import OptimizerConfig

    wk = {f.name for f in dc_fields(LossWeights)}
    ok = {f.name for f in dc_fields(OptimizerConfig)}
    unknown = set(values) - wk - ok
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    opt = {k: v for k, v in values.items() if k in ok}
    if seed is not None:
        opt["seed"] = seed
    return (LossWeights(**{k: v for k, v in values.items() if k in wk}),
            OptimizerConfig(**opt))


HISTORY_COLUMNS = ("iter", "level", "rec", "sm", "lr", "twowarp", "total")


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["iter"], row["level"]]
                       + [repr(float(row[k])) for k in HISTORY_COLUMNS[2:]])


def read_history(path) -> list:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != HISTORY_COLUMNS:
            raise FormatError("unexpected loss-history header")
        return [{"iter": int(x["iter"]), "level": int(x["level"]),
                 **{k: float(x[k]) for k in HISTORY_COLUMNS[2:]}} for x in r]
