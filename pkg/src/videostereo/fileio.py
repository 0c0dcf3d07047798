"""File formats: PFM float maps, 16-bit disparity PNGs, PGM masks, camera text.

All writers go through a write-temp-then-rename so concurrent writers of
distinct files never expose half-written content, and identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import os
import struct
import tempfile
from contextlib import contextmanager

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DomainError, ParseError
from .geometry import CameraModel

PNG16_SCALE = 256.0  # KITTI disparity encoding: stored = round(d * 256)


@contextmanager
def _atomic_write(path, mode="wb"):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# ------------------------------------------------------------------------ PFM

def write_pfm(path, data: np.ndarray) -> None:
    """Write a single-channel float map (grayscale PFM, little-endian)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ConfigurationError("PFM writer takes an HxW map")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("PFM payload must be finite")
    with _atomic_write(path) as fh:
        fh.write(b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].astype("<f4").tobytes())  # bottom-to-top rows


def _pfm_token(blob: bytes, offset: int, path):
    """Next whitespace-delimited header token and the offset past it."""
    while offset < len(blob) and blob[offset:offset + 1].isspace():
        offset += 1
    start = offset
    while offset < len(blob) and not blob[offset:offset + 1].isspace():
        offset += 1
    if start == offset:
        raise ParseError(path, "truncated header", offset=start)
    return blob[start:offset], offset


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM; returns float64 HxW in top-to-bottom order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, offset = _pfm_token(blob, 0, path)
    if magic == b"PF":
        raise ParseError(path, "color PFM (PF) is not supported, expected Pf",
                         offset=0)
    if magic != b"Pf":
        raise ParseError(path, f"bad magic {magic!r}, expected Pf", offset=0)
    try:
        tok, offset = _pfm_token(blob, offset, path)
        width = int(tok)
        tok, offset = _pfm_token(blob, offset, path)
        height = int(tok)
        tok, offset = _pfm_token(blob, offset, path)
        scale = float(tok)
    except ValueError:
        raise ParseError(path, "non-numeric header field", offset=offset) from None
    if width < 1 or height < 1:
        raise ParseError(path, f"bad dimensions {width}x{height}", offset=3)
    if scale == 0:
        raise ParseError(path, "zero scale", offset=offset)
    offset += 1  # single whitespace byte after the scale token
    need = width * height * 4
    if len(blob) - offset != need:
        raise ParseError(path, f"expected {need} payload bytes, "
                               f"found {len(blob) - offset}", offset=offset)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(blob, dtype=dtype, count=width * height, offset=offset)
    return data.reshape(height, width)[::-1].astype(np.float64)


# ------------------------------------------------------------ 16-bit PNG maps

def write_disp_png16(path, disparity: np.ndarray, valid: np.ndarray) -> None:
    """KITTI-style disparity PNG: stored = round(d*256), 0 marks invalid."""
    disp = np.asarray(disparity, dtype=np.float64)
    mask = np.asarray(valid, dtype=bool)
    if disp.shape != mask.shape or disp.ndim != 2:
        raise ConfigurationError("disparity and mask must be matching HxW")
    if np.any(disp[mask] < 0):
        raise DomainError("negative disparity cannot be encoded")
    if np.any(disp[mask] >= 256.0):
        raise DomainError("disparity >= 256 px overflows the 16-bit encoding")
    stored = np.where(mask, np.rint(disp * PNG16_SCALE), 0.0).astype(np.uint16)
    with _atomic_write(path) as fh:
        Image.fromarray(stored).save(fh, format="PNG")


def read_disp_png16(path):
    """Inverse of write_disp_png16; returns (disparity, valid)."""
    with Image.open(path) as img:
        if img.format != "PNG":
            raise ParseError(path, f"expected PNG, found {img.format}")
        if img.mode not in ("I;16", "I;16B", "I"):
            raise ParseError(path, f"expected 16-bit grayscale, found mode {img.mode}")
        arr = np.array(img, dtype=np.uint32)
    if arr.ndim != 2:
        raise ParseError(path, "expected single-channel image")
    valid = arr > 0
    return np.where(valid, arr / PNG16_SCALE, 0.0), valid


def write_gray_png16(path, image: np.ndarray) -> None:
    """Store an intensity map in [0,1] as full-range 16-bit grayscale."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigurationError("image must be HxW")
    if np.any(img < 0) or np.any(img > 1) or not np.all(np.isfinite(img)):
        raise ConfigurationError("image must lie in [0, 1]")
    stored = np.rint(img * 65535.0).astype(np.uint16)
    with _atomic_write(path) as fh:
        Image.fromarray(stored).save(fh, format="PNG")


def read_gray_image(path) -> np.ndarray:
    """Load PNG or PGM as grayscale in [0,1]; RGB uses 0.299/0.587/0.114."""
    path = os.fspath(path)
    if path.endswith(".pgm"):
        mask = read_pgm_mask(path)
        return mask.astype(np.float64)
    with Image.open(path) as img:
        mode = img.mode
        arr = np.array(img)
    if mode in ("I;16", "I;16B"):
        return arr.astype(np.float64) / 65535.0
    if mode == "I":
        return arr.astype(np.float64) / 65535.0
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64) / 255.0
        return rgb @ np.array([0.299, 0.587, 0.114])
    raise ParseError(path, f"unsupported image mode {mode}")


# ------------------------------------------------------------------ PGM masks

def write_pgm_mask(path, mask: np.ndarray) -> None:
    """Binary mask as binary PGM (P5): 255 where true, 0 elsewhere."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ConfigurationError("mask must be HxW")
    with _atomic_write(path) as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write((m.astype(np.uint8) * 255).tobytes())


def read_pgm_mask(path) -> np.ndarray:
    """Read a P5 PGM; nonzero means true."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, offset = _pfm_token(blob, 0, path)
    if magic != b"P5":
        raise ParseError(path, f"bad magic {magic!r}, expected P5", offset=0)
    fields = []
    while len(fields) < 3:
        # PGM allows '#' comments between header fields
        while offset < len(blob) and blob[offset:offset + 1].isspace():
            offset += 1
        if blob[offset:offset + 1] == b"#":
            end = blob.find(b"\n", offset)
            if end < 0:
                raise ParseError(path, "unterminated comment", offset=offset)
            offset = end + 1
            continue
        tok, offset = _pfm_token(blob, offset, path)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ParseError(path, f"non-numeric header field {tok!r}",
                             offset=offset) from None
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(path, f"unsupported maxval {maxval}", offset=offset)
    offset += 1
    if len(blob) - offset != width * height:
        raise ParseError(path, "payload size mismatch", offset=offset)
    data = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=offset)
    return data.reshape(height, width) > 0


# --------------------------------------------------------------- camera files

_CAMERA_KEYS = ("fx", "fy", "cx", "cy", "baseline", "width", "height")


def write_camera_file(path, cam: CameraModel) -> None:
    with _atomic_write(path, "w") as fh:
        fh.write("# rectified stereo intrinsics\n")
        for key in _CAMERA_KEYS:
            value = getattr(cam, key)
            fh.write(f"{key} = {value!r}\n")


def read_camera_file(path) -> CameraModel:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ParseError(path, "expected key = value", line=line_no)
            key, _, raw = body.partition("=")
            key = key.strip()
            if key not in _CAMERA_KEYS:
                raise ParseError(path, f"unknown camera key {key!r}; accepted: "
                                       f"{', '.join(_CAMERA_KEYS)}", line=line_no)
            try:
                values[key] = float(raw.strip())
            except ValueError:
                raise ParseError(path, f"non-numeric value for {key}",
                                 line=line_no) from None
    missing = [k for k in _CAMERA_KEYS if k not in values]
    if missing:
        raise ParseError(path, f"missing camera keys: {', '.join(missing)}")
    return CameraModel(fx=values["fx"], fy=values["fy"], cx=values["cx"],
                       cy=values["cy"], baseline=values["baseline"],
                       width=int(values["width"]), height=int(values["height"]))
