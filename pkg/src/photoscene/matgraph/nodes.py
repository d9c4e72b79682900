"""Node kinds of the procedural material graphs.

Generators are plain numpy functions of the texel grid (no parameters, so they
are cached and never differentiated). Filters operate on :class:`ad.Tensor`
images of shape (R, R, C) and take their tunable slots as scalars or scalar
tensors.
"""
from __future__ import annotations

import numpy as np

from .. import ad

GENERATORS = ("valueNoise", "cellularNoise", "brick", "checker", "stripes", "constant")
FILTERS = ("levels", "blend", "colorizeRamp", "hsvAdjust", "scalarRemap", "tile", "invert")

# slot defaults per filter kind; colorizeRamp slots are generated from its knots
SLOT_DEFAULTS = {
    "levels": {"inLow": 0.0, "inHigh": 1.0, "outLow": 0.0, "outHigh": 1.0, "gamma": 0.0},
    "blend": {"opacity": 1.0},
    "hsvAdjust": {"hue": 0.0, "saturation": 1.0, "value": 1.0},
    "scalarRemap": {"lo": 0.0, "hi": 1.0},
    "colorizeRamp": {},
    "tile": {},
    "invert": {},
}


def texel_grid(res):
    c = (np.arange(res) + 0.5) / res
    u, v = np.meshgrid(c, c)
    return u, v


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(res, seed=0, scaleU=4, scaleV=4, octaves=1, persistence=0.5):
    """Periodic lattice noise summed over octaves, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    u, v = texel_grid(res)
    total = np.zeros((res, res))
    amp, norm = 1.0, 0.0
    for o in range(int(octaves)):
        su, sv = int(scaleU) * 2 ** o, int(scaleV) * 2 ** o
        lattice = rng.random((sv, su))
        x, y = u * su, v * sv
        x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
        fx, fy = _fade(x - x0), _fade(y - y0)
        x0 %= su
        y0 %= sv
        x1, y1 = (x0 + 1) % su, (y0 + 1) % sv
        top = lattice[y0, x0] * (1 - fx) + lattice[y0, x1] * fx
        bot = lattice[y1, x0] * (1 - fx) + lattice[y1, x1] * fx
        total += amp * (top * (1 - fy) + bot * fy)
        norm += amp
        amp *= persistence
    return (total / norm)[..., None]


def cellular_noise(res, seed=0, cells=8, jitter=0.8):
    """Distance to the nearest jittered feature point on a torus (F1), in cell units."""
    rng = np.random.default_rng(seed)
    cells = int(cells)
    pts = 0.5 + jitter * (rng.random((cells, cells, 2)) - 0.5)
    u, v = texel_grid(res)
    x, y = u * cells, v * cells
    cx, cy = np.floor(x).astype(int), np.floor(y).astype(int)
    best = np.full((res, res), np.inf)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            nx, ny = cx + dx, cy + dy
            p = pts[ny % cells, nx % cells]
            px = nx + p[..., 0]
            py = ny + p[..., 1]
            best = np.minimum(best, np.hypot(px - x, py - y))
    return np.clip(best, 0.0, 1.0)[..., None]


def _smoothstep(e0, e1, x):
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def brick(res, rows=8, cols=4, offset=0.5, mortar=0.02, bevel=0.01):
    """1 on brick faces, 0 in mortar joints, bevelled edges; widths in UV units."""
    if offset and int(rows) % 2:
        raise ValueError("offset brick rows must be even to tile")
    # phase keeps the wrap seam off mortar joints in both directions
    u, v = texel_grid(res)
    y = v * rows + 0.5
    r = np.floor(y)
    fy = y - r
    x = u * cols + 0.25 + offset * (r % 2)
    fx = x - np.floor(x)
    d = np.minimum(np.minimum(fx, 1 - fx) / cols, np.minimum(fy, 1 - fy) / rows)
    return _smoothstep(0.5 * mortar, 0.5 * mortar + bevel, d)[..., None]


def checker(res, count=4, sharpness=6.0):
    # cosine phase keeps colour edges off the wrap seam
    u, v = texel_grid(res)
    s = np.cos(2 * np.pi * count * u) * np.cos(2 * np.pi * count * v)
    return (0.5 + 0.5 * np.clip(sharpness * s, -1, 1))[..., None]


def stripes(res, count=8, axis="u", sharpness=4.0):
    u, v = texel_grid(res)
    t = u if axis == "u" else v
    return (0.5 + 0.5 * np.clip(sharpness * np.cos(2 * np.pi * count * t), -1, 1))[..., None]


def constant(res, value=0.0):
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return np.broadcast_to(value, (res, res, len(value))).copy()


GENERATOR_FUNCS = {
    "valueNoise": value_noise,
    "cellularNoise": cellular_noise,
    "brick": brick,
    "checker": checker,
    "stripes": stripes,
    "constant": constant,
}


# ---------------------------------------------------------------- filters

def levels(x, inLow, inHigh, outLow, outHigh, gamma):
    """Input window, gamma (given as log2 gamma), then output window."""
    span = ad.maximum(ad.as_tensor(inHigh) - inLow, 1e-3)
    t = ad.clamp((x - inLow) / span, 0.0, 1.0)
    if isinstance(gamma, ad.Tensor) or gamma != 0.0:
        t = ad.pow(t, ad.exp(ad.as_tensor(gamma) * -np.log(2.0)))
    return outLow + (ad.as_tensor(outHigh) - outLow) * t


def blend(a, b, mask=None, opacity=1.0, mode="mix"):
    if mode == "mix":
        top = b
    elif mode == "multiply":
        top = a * b
    elif mode == "add":
        top = ad.clamp(a + b, 0.0, 1.0)
    elif mode == "screen":
        top = 1.0 - (1.0 - a) * (1.0 - b)
    else:
        raise ValueError(f"unknown blend mode {mode!r}")
    t = ad.as_tensor(opacity)
    if mask is not None:
        t = t * mask
    return ad.lerp(a, top, t)


def colorize_ramp(x, positions, colors):
    """Piecewise-linear gradient map of a grey input to RGB.

    ``colors`` is a list of 3-element tensors, one per knot in ``positions``.
    """
    n = len(positions)
    if n == 1:
        return x * 0.0 + ad.reshape(colors[0], (1, 1, 3))
    out = None
    for i in range(n):
        if i > 0:
            left = (x - positions[i - 1]) * (1.0 / (positions[i] - positions[i - 1]))
        if i < n - 1:
            right = (positions[i + 1] - x) * (1.0 / (positions[i + 1] - positions[i]))
        if i == 0:
            hat = right
        elif i == n - 1:
            hat = left
        else:
            hat = ad.minimum(left, right)
        term = ad.clamp(hat, 0.0, 1.0) * ad.reshape(colors[i], (1, 1, 3))
        out = term if out is None else out + term
    return out


def hsv_adjust(x, hue=0.0, saturation=1.0, value=1.0):
    """Hue rotation about the grey axis, saturation about grey, value gain."""
    gray = ad.mean(x, axis=2, keepdims=True)
    out = x
    if isinstance(hue, ad.Tensor) or hue != 0.0:
        hue = ad.as_tensor(hue)
        cross = (ad.take(x, [2, 0, 1], axis=2) - ad.take(x, [1, 2, 0], axis=2)) * (1.0 / np.sqrt(3.0))
        c = ad.cos(hue)
        out = x * c + cross * ad.sin(hue) + gray * (1.0 - c)
    out = gray + (out - gray) * saturation
    return out * value


def scalar_remap(x, lo=0.0, hi=1.0):
    return lo + (ad.as_tensor(hi) - lo) * x


def tile(x, countU=2, countV=2):
    """Repeat a box-filtered copy of the input countU x countV times."""
    res, _, c = x.shape
    cu, cv = int(countU), int(countV)
    if res % cu or res % cv:
        raise ValueError(f"tile counts {cu}x{cv} must divide resolution {res}")
    small = ad.mean(ad.reshape(x, (res // cv, cv, res // cu, cu, c)), axis=(1, 3))
    rows = np.arange(res) % (res // cv)
    cols = np.arange(res) % (res // cu)
    return ad.take(ad.take(small, rows, axis=0), cols, axis=1)


def invert(x):
    return 1.0 - x
