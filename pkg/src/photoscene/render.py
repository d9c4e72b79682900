"""Material-part rendering: UV transforms, texture sampling, normal frames and
GGX shading under a spatially-varying grid of incoming-light environment maps.

Everything per pixel is handled in compact form: the P masked pixels of an
image as rows of (P, C) arrays. :func:`render_part` wraps the compact path for
whole images.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import ad
from .errors import EmptyMask, GridMismatch

F0 = 0.05
ROUGHNESS_FLOOR = 0.01


@dataclass(frozen=True)
class UVTransformParams:
    """Scale by 2**log_scale, rotate by ``rotation``, then translate."""

    rotation: float = 0.0
    log_scale: float = 0.0
    translation: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", float(self.rotation) % (2 * np.pi))
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))
        if not -3.0 <= self.log_scale <= 3.0:
            raise ValueError(f"log_scale {self.log_scale} outside [-3, 3]")

    def as_dict(self):
        return {"rotation": self.rotation, "logScale": self.log_scale,
                "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rotation"], d["logScale"], tuple(d["translation"]))


def uv_transform(uv0, phi):
    uv0 = np.asarray(uv0, dtype=np.float64)
    if phi.rotation == 0.0 and phi.log_scale == 0.0 and phi.translation == (0.0, 0.0):
        return uv0.copy()
    c, s = np.cos(phi.rotation), np.sin(phi.rotation)
    k = 2.0 ** phi.log_scale
    u = k * uv0[..., 0]
    v = k * uv0[..., 1]
    return np.stack([c * u - s * v + phi.translation[0],
                     s * u + c * v + phi.translation[1]], axis=-1)


def sample_texture(texture, uv, mask=None):
    """Bilinear, wrap-addressed lookup of an (R, R, C) map.

    ``uv`` is either compact (P, 2) or an (H, W, 2) image with ``mask``;
    returns a (P, C) tensor of the selected pixels.
    """
    uv = np.asarray(uv, dtype=np.float64)
    if mask is not None:
        uv = uv[np.asarray(mask, dtype=bool)]
    return ad.bilinear_sample(texture, uv.reshape(-1, 2))


def tangent_frame(n_geo):
    n_geo = np.asarray(n_geo, dtype=np.float64)
    up = np.zeros_like(n_geo)
    degenerate = np.abs(n_geo[..., 1]) > 0.999
    up[..., 1] = np.where(degenerate, 0.0, 1.0)
    up[..., 0] = np.where(degenerate, 1.0, 0.0)
    t = np.cross(up, n_geo)
    t /= np.maximum(np.linalg.norm(t, axis=-1, keepdims=True), ad.EPS)
    b = np.cross(n_geo, t)
    return t, b


def rotate_normals(n_tangent, n_geo):
    """Map tangent-space normals (P, 3) into the frame of geometric normals (P, 3)."""
    n_geo = np.asarray(n_geo, dtype=np.float64)
    t, b = tangent_frame(n_geo)
    nt = ad.as_tensor(n_tangent)
    out = nt[:, 0:1] * t + nt[:, 1:2] * b + nt[:, 2:3] * n_geo
    return ad.normalize3(out)


@lru_cache(maxsize=16)
def hemisphere_directions(env_h, env_w):
    """Camera-facing hemisphere (+z toward the camera), uniform in (theta, phi).

    Returns read-only (J, 3) unit directions and (J,) solid angles
    ``sin(theta) * dtheta * dphi``, row-major over (env_h, env_w).
    """
    dtheta = 0.5 * np.pi / env_h
    dphi = 2.0 * np.pi / env_w
    theta = (np.arange(env_h) + 0.5) * dtheta
    phi = (np.arange(env_w) + 0.5) * dphi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1).reshape(-1, 3)
    domega = (np.sin(th) * dtheta * dphi).reshape(-1)
    dirs.flags.writeable = False
    domega.flags.writeable = False
    return dirs, domega


@dataclass
class LightingGrid:
    """Incoming radiance, shape (cells_h, cells_w, env_h, env_w, 3)."""

    radiance: np.ndarray
    frame: str = "cameraHemisphere"

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if self.radiance.ndim != 5 or self.radiance.shape[-1] != 3:
            raise GridMismatch(f"radiance must be (cH, cW, eH, eW, 3), got {self.radiance.shape}")
        if not np.isfinite(self.radiance).all() or (self.radiance < 0).any():
            raise ValueError("lighting radiance must be finite and nonnegative")

    @property
    def cells(self):
        return self.radiance.shape[:2]

    @property
    def env(self):
        return self.radiance.shape[2:4]

    def scaled(self, factor):
        return LightingGrid(self.radiance * np.asarray(factor, dtype=np.float64), self.frame)

    def to_tiled(self):
        """(cH*eH, cW*eW, 3) image: cell (i, j) occupies block row i, block column j."""
        ch, cw, eh, ew, _ = self.radiance.shape
        return self.radiance.transpose(0, 2, 1, 3, 4).reshape(ch * eh, cw * ew, 3)

    @classmethod
    def from_tiled(cls, image, env_h, env_w):
        image = np.asarray(image, dtype=np.float64)
        h, w = image.shape[:2]
        if h % env_h or w % env_w:
            raise GridMismatch(f"tiled lighting {h}x{w} not divisible by env {env_h}x{env_w}")
        ch, cw = h // env_h, w // env_w
        return cls(image.reshape(ch, env_h, cw, env_w, 3).transpose(0, 2, 1, 3, 4))


def view_directions(height, width, fov):
    """Unit vectors from each pixel toward a pinhole camera; ``fov`` is horizontal."""
    f = 0.5 * width / np.tan(0.5 * fov)
    xs = (np.arange(width) + 0.5) - 0.5 * width
    ys = 0.5 * height - (np.arange(height) + 0.5)
    X, Y = np.meshgrid(xs, ys)
    d = np.stack([X, Y, -np.full_like(X, f)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return -d


@dataclass
class ShadingInputs:
    """Per-pixel view vectors, region mask and base (geometric) normals."""

    view_dirs: np.ndarray
    mask: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)


def cell_index(ys, xs, image_shape, cells):
    h, w = image_shape
    ch, cw = cells
    if ch < 1 or cw < 1 or ch > h or cw > w:
        raise GridMismatch(f"{ch}x{cw} lighting cells cannot be mapped onto a {h}x{w} image")
    return (np.asarray(ys) * ch) // h, (np.asarray(xs) * cw) // w


@dataclass
class ShadingContext:
    """Per-pixel constants for one (region, view, lighting) triple."""

    lighting: LightingGrid
    view_dirs: np.ndarray   # (P, 3)
    pixels: tuple           # (ys, xs) absolute image coordinates
    image_shape: tuple
    f0: float = F0
    diffuse_only: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ys, xs = (np.asarray(a) for a in self.pixels)
        if len(ys) == 0:
            raise EmptyMask("no pixels to shade")
        cy, cx = cell_index(ys, xs, self.image_shape, self.lighting.cells)
        eh, ew = self.lighting.env
        self.dirs, self.domega = hemisphere_directions(eh, ew)
        self.light = self.lighting.radiance[cy, cx].reshape(len(ys), eh * ew, 3)
        v = np.asarray(self.view_dirs, dtype=np.float64)
        self.view_dirs = v
        if not self.diffuse_only:
            vdotl = v @ self.dirs.T
            inv_len = 1.0 / np.sqrt(np.maximum(2.0 + 2.0 * vdotl, ad.EPS))
            vdoth = np.clip((vdotl + 1.0) * inv_len, 0.0, 1.0)
            fresnel = self.f0 + (1.0 - self.f0) * (1.0 - vdoth) ** 5
            self.inv_len = inv_len
            self.spec_const = fresnel * self.domega * 0.25

    @classmethod
    def from_image(cls, lighting, view, **kw):
        ys, xs = np.nonzero(view.mask)
        return cls(lighting, view.view_dirs[ys, xs], (ys, xs), view.mask.shape, **kw)

    @property
    def n_pixels(self):
        return len(self.light)

    def with_lighting(self, lighting):
        return ShadingContext(lighting, self.view_dirs, self.pixels, self.image_shape,
                              self.f0, self.diffuse_only)

    def shade(self, albedo, normals, roughness):
        """Outgoing radiance (P, 3) for compact albedo (P, 3), normals (P, 3) and
        roughness (P, 1) or a scalar-shaped tensor."""
        if not any(isinstance(x, ad.Tensor) and x.requires_grad for x in (albedo, normals, roughness)):
            return ad.Tensor(self._shade_values(albedo, normals, roughness), check=False)
        albedo = ad.as_tensor(albedo)
        normals = ad.as_tensor(normals)
        nl = ad.matmul(normals, self.dirs.T)
        cos = ad.maximum(nl, 0.0)
        w_diff = cos * self.domega
        if self.diffuse_only:
            irr = ad.matmul(ad.reshape(w_diff, (-1, 1, w_diff.shape[1])), self.light)
            return albedo * (1.0 / np.pi) * ad.reshape(irr, (-1, 3))
        r = ad.clamp(ad.as_tensor(roughness), ROUGHNESS_FLOOR, 1.0 + 1e-9)
        if r.ndim == 0:
            r = ad.reshape(r, (1, 1))
        alpha = r * r
        a2 = alpha * alpha
        k = (r + 1.0) * (r + 1.0) * 0.125
        nv = ad.maximum(ad.dot3(normals, self.view_dirs), 0.0)
        nh = ad.maximum((nl + nv) * self.inv_len, 0.0)
        d = nh * nh * (a2 - 1.0) + 1.0
        ndf = a2 / (d * d * np.pi)
        g_light = cos * (1.0 - k) + k
        g_view = nv * (1.0 - k) + k
        w_spec = ndf * cos * self.spec_const / (g_light * g_view)
        weights = ad.stack([w_diff, w_spec], axis=1)
        both = ad.matmul(weights, self.light)
        return albedo * (1.0 / np.pi) * both[:, 0, :] + both[:, 1, :]


    def _shade_values(self, albedo, normals, roughness):
        """Forward-only shading in plain numpy with reused buffers."""
        def arr(x):
            return x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)

        albedo, normals, roughness = arr(albedo), arr(normals), arr(roughness)
        nl = normals @ self.dirs.T
        cos = np.maximum(nl, 0.0)
        w_diff = cos * self.domega
        if self.diffuse_only:
            irr = np.matmul(w_diff[:, None, :], self.light)[:, 0, :]
            return albedo * (1.0 / np.pi) * irr
        r = np.clip(roughness, ROUGHNESS_FLOOR, 1.0 + 1e-9)
        if r.ndim == 0:
            r = r.reshape(1, 1)
        a2 = (r * r) ** 2
        k = (r + 1.0) ** 2 * 0.125
        nv = np.maximum((normals * self.view_dirs).sum(axis=-1, keepdims=True), 0.0)
        # nh, then the GGX denominator, built in place
        t = nl + nv
        t *= self.inv_len
        np.maximum(t, 0.0, out=t)
        t *= t
        t *= a2 - 1.0
        t += 1.0
        t *= t
        t *= np.pi
        np.divide(a2, t, out=t)
        t *= cos
        t *= self.spec_const
        g = cos * (1.0 - k)
        g += k
        t /= g
        t /= nv * (1.0 - k) + k
        both = np.matmul(np.stack([w_diff, t], axis=1), self.light)
        return albedo * (1.0 / np.pi) * both[:, 0, :] + both[:, 1, :]


def render_part(albedo, normals, roughness, lighting, view, f0=F0, diffuse_only=False):
    """Render an (H, W, 3) image of the masked region; zero elsewhere.

    ``albedo``/``normals`` are (H, W, 3) and ``roughness`` (H, W, 1) or a scalar;
    each may be a tensor. ``normals`` are final camera-space shading normals.
    """
    mask = view.mask
    if not mask.any():
        raise EmptyMask("render mask is empty")
    h, w = mask.shape
    ctx = ShadingContext.from_image(lighting, view, f0=f0, diffuse_only=diffuse_only)
    flat_idx = np.flatnonzero(mask)

    def gather(x, channels):
        x = ad.as_tensor(x)
        if x.ndim <= 1 or x.shape[:2] != (h, w):
            return x
        return ad.take(ad.reshape(x, (h * w, channels)), flat_idx, axis=0)

    rough = ad.as_tensor(roughness)
    rough = gather(rough, 1) if rough.ndim >= 2 else rough
    out = ctx.shade(gather(albedo, 3), gather(normals, 3), rough)
    return ad.reshape(ad.scatter_rows(out, flat_idx, h * w), (h, w, 3))
