"""Netpbm encoding for sensor frames.

RGB exports as binary PPM (P6, maxval 255); depth as 16-bit PGM (P5,
millimeter-quantized); the object mask as 16-bit PGM holding raw ids.
"""

import os

import numpy as np


def ppm_bytes(rgb: np.ndarray) -> bytes:
    h, w = rgb.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.astype(np.uint8).tobytes()


def pgm16_bytes(gray: np.ndarray) -> bytes:
    h, w = gray.shape
    if gray.min() < 0 or gray.max() > 65535:
        raise ValueError("PGM values must fit in 16 bits")
    return b"P5\n%d %d\n65535\n" % (w, h) + gray.astype(">u2").tobytes()


def depth_to_mm(depth_m: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(depth_m * 1000.0), 0, 65535).astype(np.uint16)


def _parse_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"expected {magic.decode()} header")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def parse_ppm(data: bytes) -> np.ndarray:
    w, h, maxval, offset = _parse_header(data, b"P6")
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    return pixels.reshape(h, w, 3).copy()


def parse_pgm(data: bytes) -> np.ndarray:
    w, h, maxval, offset = _parse_header(data, b"P5")
    if maxval > 255:
        pixels = np.frombuffer(data, dtype=">u2", count=w * h, offset=offset)
        return pixels.reshape(h, w).astype(np.uint16)
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    return pixels.reshape(h, w).astype(np.uint16)


def write_frame(frame, prefix: str) -> dict:
    """Write the rgb/depth/mask triple next to `prefix`; returns the paths."""
    paths = {
        "rgb": prefix + ".rgb.ppm",
        "depth": prefix + ".depth.pgm",
        "mask": prefix + ".mask.pgm",
    }
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    with open(paths["rgb"], "wb") as f:
        f.write(ppm_bytes(frame.rgb))
    with open(paths["depth"], "wb") as f:
        f.write(pgm16_bytes(depth_to_mm(frame.depth)))
    with open(paths["mask"], "wb") as f:
        f.write(pgm16_bytes(frame.mask))
    return paths


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_ppm(f.read())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_pgm(f.read())
