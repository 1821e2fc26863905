"""8-bit binary PGM/PPM export of [0, 1] float images, for inspection."""

import numpy as np


def _to_u8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)


def write_pgm(data: np.ndarray, path) -> None:
    """data: (H, W) or (H, W, 1) floats in [0, 1]."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3:
        if data.shape[2] != 1:
            raise ValueError("PGM export needs a single channel")
        data = data[:, :, 0]
    if data.ndim != 2:
        raise ValueError("PGM export needs a 2D image")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(_to_u8(data).tobytes())


def write_ppm(data: np.ndarray, path) -> None:
    """data: (H, W, 3) floats in [0, 1]."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError("PPM export needs an (H, W, 3) image")
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(_to_u8(data).tobytes())


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos] in b" \t\r\n":
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos] not in b" \t\r\n":
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != magic:
        raise ValueError(f"expected {magic!r} file, got {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pos += 1  # single whitespace byte ends the header
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h * channels, offset=pos)
    return pixels.reshape(h, w, channels).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    """Returns (H, W) floats in [0, 1]."""
    return _read_netpbm(path, b"P5", 1)[:, :, 0]


def read_ppm(path) -> np.ndarray:
    """Returns (H, W, 3) floats in [0, 1]."""
    return _read_netpbm(path, b"P6", 3)
