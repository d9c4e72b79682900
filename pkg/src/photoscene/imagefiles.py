"""Image readers/writers: PFM floats, 8/16-bit PNG, sRGB transfer functions."""
from __future__ import annotations

import re
from pathlib import Path

import cv2
import numpy as np

from .errors import IoFailure, MissingAsset


def srgb_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def tonemap(x, exposure=1.0, gamma=2.2):
    """Display transform used for PNG previews and SSIM: clip((e*x)^(1/gamma))."""
    return np.clip(np.maximum(np.asarray(x) * exposure, 0.0) ** (1.0 / gamma), 0.0, 1.0)


def read_pfm(path):
    """Read a PFM file into a float32 array of shape (H, W) or (H, W, 3), top row first."""
    path = Path(path)
    if not path.exists():
        raise MissingAsset(str(path))
    with open(path, "rb") as fh:
        header = fh.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise IoFailure(f"{path}: not a PFM file")
        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", fh.readline())
        if not dims:
            raise IoFailure(f"{path}: malformed PFM header")
        width, height = int(dims.group(1)), int(dims.group(2))
        scale = float(fh.readline().rstrip())
        endian = "<" if scale < 0 else ">"
        data = np.fromfile(fh, dtype=endian + "f4")
    expected = width * height * channels
    if data.size != expected:
        raise IoFailure(f"{path}: expected {expected} floats, found {data.size}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    # PFM stores scanlines bottom-to-top
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path, image):
    """Write (H, W), (H, W, 1) or (H, W, 3) data as little-endian PFM (float32)."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if image.ndim == 3 and image.shape[2] == 3:
        header = b"PF\n"
    elif image.ndim == 2:
        header = b"Pf\n"
    else:
        raise IoFailure(f"cannot store image of shape {image.shape} as PFM")
    data = np.flipud(image).astype("<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(b"%d %d\n" % (image.shape[1], image.shape[0]))
            fh.write(b"-1.0\n")
            fh.write(data.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_png(path):
    """Read a PNG as floats in [0, 1] (RGB order), without any transfer function."""
    path = Path(path)
    if not path.exists():
        raise MissingAsset(str(path))
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IoFailure(f"{path}: unreadable PNG")
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    img = img.astype(np.float64) / scale
    if img.ndim == 3:
        img = img[..., :3][..., ::-1]
    return img


def write_png(path, image, bits=8):
    """Write [0, 1] data to an 8- or 16-bit PNG (values are clipped and rounded)."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if bits == 16:
        q = np.round(image * 65535.0).astype(np.uint16)
    else:
        q = np.round(image * 255.0).astype(np.uint8)
    if q.ndim == 3:
        q = np.ascontiguousarray(q[..., ::-1])
    if not cv2.imwrite(str(path), q):
        raise IoFailure(f"failed to write {path}")


def read_mask(path):
    img = read_png(path)
    if img.ndim == 3:
        img = img.mean(axis=2)
    return img > 0.5


def write_mask(path, mask):
    write_png(path, np.asarray(mask, dtype=np.float64), bits=8)


def read_photo(path):
    """Photos: sRGB-encoded PNG is linearised; PFM is taken as linear already."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path).astype(np.float64)
    img = read_png(path)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return srgb_to_linear(img)
