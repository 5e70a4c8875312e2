"""Image, point cloud and report I/O with byte-stable output.

Depth and label images are 16-bit single channel: binary PGM (P5, big
endian for maxval > 255) or PNG. Point clouds are ASCII PLY with per-vertex
RGB. JSON is written with sorted keys and a fixed float repr so repeated
runs produce identical bytes.
"""

from __future__ import annotations

import colorsys
import csv
import hashlib
import io
import json
import math
import os
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

PALETTE_STEPS = 16
OUTLIER_RGB = (128, 128, 128)


class FormatError(ValueError):
    pass


# 16-bit images

_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if not m:
        raise FormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = data[m.end():]
    need = w * h * dtype.itemsize
    if len(body) < need:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:need], dtype=dtype).reshape(h, w).astype(np.uint16)


def write_pgm(path, img: np.ndarray) -> None:
    img = _as_u16(img)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(img.astype(">u2").tobytes())


def read_png16(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I", "L"):
            raise FormatError(f"{path}: expected single-channel PNG, got mode {im.mode}")
        arr = np.asarray(im)
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 65535:
        raise FormatError(f"{path}: values outside 16-bit range")
    return arr.astype(np.uint16)


def write_png16(path, img: np.ndarray) -> None:
    img = _as_u16(img)
    Image.fromarray(img.astype("<u2")).save(path, format="PNG")


def _as_u16(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError("expected a 2-D image")
    if a.size and (a.min() < 0 or a.max() > 65535):
        raise ValueError("values do not fit in 16 bits")
    return a.astype(np.uint16)


def read_image16(path) -> np.ndarray:
    """Read a PGM or PNG by its magic bytes."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head.startswith(b"P5"):
        return read_pgm(path)
    if head.startswith(b"\x89PNG"):
        return read_png16(path)
    raise FormatError(f"{path}: unsupported image format (need P5 PGM or PNG)")


def write_image16(path, img: np.ndarray) -> None:
    if str(path).lower().endswith(".png"):
        write_png16(path, img)
    else:
        write_pgm(path, img)


# colours and PLY

def rank_color(rank: int) -> tuple:
    """RGB for a plane rank: rank 1 is red, later ranks step around the hue wheel.

    Hue advances by 1/16 turn per rank (red, orange, yellow, ...), wrapping
    after 16 ranks. Rank 0 (outliers) is grey.
    """
    if rank <= 0:
        return OUTLIER_RGB
    h = ((rank - 1) % PALETTE_STEPS) / PALETTE_STEPS
    r, g, b = colorsys.hsv_to_rgb(h, 1.0, 1.0)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def write_ply(path, points: np.ndarray, labels: np.ndarray) -> None:
    """ASCII PLY, one vertex per point coloured by its plane rank."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    lut = np.array([rank_color(r) for r in range(int(labels.max(initial=0)) + 1)], dtype=np.int64)
    rgb = lut[labels] if labels.size else np.zeros((0, 3), dtype=np.int64)
    buf = io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"element vertex {points.shape[0]}\n")
    buf.write("property float x\nproperty float y\nproperty float z\n")
    buf.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    for (x, y, z), (r, g, b) in zip(points, rgb):
        buf.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
    Path(path).write_text(buf.getvalue(), encoding="ascii")


def read_ply(path):
    """Parse an ASCII PLY written by :func:`write_ply`; returns (points, rgb)."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError(f"{path}: not a PLY file")
    n = None
    end = None
    for i, ln in enumerate(lines):
        if ln.startswith("element vertex"):
            n = int(ln.split()[-1])
        if ln == "end_header":
            end = i + 1
            break
    if n is None or end is None:
        raise FormatError(f"{path}: malformed PLY header")
    rows = [ln.split() for ln in lines[end:end + n]]
    arr = np.array(rows, dtype=np.float64).reshape(n, 6)
    return arr[:, :3], arr[:, 3:].astype(np.int64)


# reports

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps_json(obj) -> str:
    """Deterministic JSON: sorted keys, repr floats, non-finite as null."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None


def write_csv(path, rows: Iterable[dict], fields: Sequence[str]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in fields})
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def replace_dir(tmp: str, final: str) -> None:
    """Move finished outputs from ``tmp`` into ``final`` file by file."""
    os.makedirs(final, exist_ok=True)
    for name in sorted(os.listdir(tmp)):
        os.replace(os.path.join(tmp, name), os.path.join(final, name))
