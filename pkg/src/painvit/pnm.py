"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedFileError


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError("PNM header ended early")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Return uint8 pixels: H x W for P5, H x W x 3 for P6."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if buf[:2] == b"P5" else 3
    try:
        (_, w, h, maxval), offset = _header_tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    need = w * h * channels
    raster = buf[offset:offset + need]
    if len(raster) < need:
        raise TruncatedFileError(f"{path}: expected {need} pixel bytes, found {len(raster)}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape((h, w, channels) if channels == 3 else (h, w))
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img


def read_image(path) -> np.ndarray:
    """C x H x W float64 image in [0, 1]."""
    img = read_pnm(path).astype(np.float64) / 255.0
    return img[None] if img.ndim == 2 else img.transpose(2, 0, 1)


def write_pnm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise FormatError(f"expected uint8 pixels, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot store array of shape {pixels.shape} as PGM/PPM")
    h, w = pixels.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes())


write_ppm = write_pnm
write_pgm = write_pnm


def write_image(path, image: np.ndarray) -> None:
    """Store a C x H x W image in [0, 1] (C = 1 -> PGM, C = 3 -> PPM)."""
    image = np.asarray(image)
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    write_pnm(path, pixels[0] if pixels.shape[0] == 1 else pixels.transpose(1, 2, 0))
