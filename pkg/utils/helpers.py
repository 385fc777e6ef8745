"""
AugRL Bench - Helper Utilities
Formatting, CSV export and 8-bit PGM (P5) image I/O
"""

import io
import re
import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from core.errors import PGMFormatError

PathLike = Union[str, Path]

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def format_number(number: float, decimals: int = 4) -> str:
    """Format number for reports; NaN shown as N/A"""
    if number is None or pd.isna(number):
        return "N/A"
    if number != 0 and (abs(number) < 10 ** -decimals or abs(number) >= 1e6):
        return f"{number:.{decimals}e}"
    return f"{number:,.{decimals}f}"


def format_duration(seconds: float) -> str:
    """Format seconds as h/m/s"""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(seconds, 60)
    if minutes < 60:
        return f"{int(minutes)}m {secs:.0f}s"
    hours, minutes = divmod(minutes, 60)
    return f"{int(hours)}h {int(minutes)}m"


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def run_timestamp() -> str:
    """Directory-safe timestamp used for default run directories"""
    return datetime.now().strftime("%Y%m%d_%H%M%S")


def git_describe(cwd: PathLike = None) -> str:
    """`git describe --always --dirty`, or "unknown" outside a checkout"""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=cwd,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    if result.returncode != 0:
        return "unknown"
    return result.stdout.strip() or "unknown"


def export_dataframe(df: pd.DataFrame, path: PathLike = None) -> bytes:
    """Serialize a DataFrame as CSV; also writes it when a path is given"""
    buffer = io.StringIO()
    df.to_csv(buffer, index=False)
    data = buffer.getvalue().encode("utf-8")
    if path is not None:
        Path(path).write_bytes(data)
    return data


# ==================== PGM ====================

def read_pgm(path: PathLike) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) as a uint8 array of shape (h, w)"""
    data = Path(path).read_bytes()
    return decode_pgm(data)


def decode_pgm(data: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    for _ in range(4):
        match = _PGM_TOKEN.match(data, pos)
        if match is None:
            raise PGMFormatError("truncated PGM header")
        tokens.append(match.group(1))
        pos = match.end()

    magic, width, height, maxval = tokens
    if magic != b"P5":
        raise PGMFormatError(f"unsupported PGM magic {magic!r} (only P5)")
    try:
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError as e:
        raise PGMFormatError(f"non-numeric PGM header field: {e}")
    if width <= 0 or height <= 0:
        raise PGMFormatError(f"invalid PGM size {width}x{height}")
    if maxval != 255:
        raise PGMFormatError(f"only 8-bit PGM supported (maxval {maxval})")

    # exactly one whitespace byte separates the header from the raster
    pos += 1
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise PGMFormatError(
            f"PGM raster has {len(raster)} bytes, expected {width * height}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(image: np.ndarray) -> bytes:
    """Binary PGM with the canonical header b"P5\\n<w> <h>\\n255\\n"; input comments are not kept"""
    image = np.asarray(image)
    if image.ndim != 2:
        raise PGMFormatError(f"PGM needs a 2-D image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise PGMFormatError(f"PGM needs uint8 pixels, got {image.dtype}")
    height, width = image.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image).tobytes()


def write_pgm(path: PathLike, image: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_pgm(image))
    return path


def to_unit_range(image: np.ndarray) -> np.ndarray:
    """uint8 pixels → float64 in [0, 1]"""
    return np.asarray(image, dtype=np.float64) / 255.0


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """[0, 1] float pixels → uint8; inverse of to_unit_range on its image"""
    return np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def frames_to_image(frames: np.ndarray) -> np.ndarray:
    """Tile a (c, h, w) frame stack left to right into one uint8 image"""
    frames = np.asarray(frames)
    if frames.ndim == 2:
        return to_uint8(frames)
    return to_uint8(np.concatenate(list(frames), axis=1))
