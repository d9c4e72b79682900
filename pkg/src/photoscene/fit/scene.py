"""Per-part render context: the pixels of one part in one view, their shading
constants, a photo crop around them and the loss target built on that crop."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .. import ad
from ..errors import EmptyMask
from ..render import ShadingContext, rotate_normals, uv_transform
from .losses import LossTarget, LossWeights, default_bank


def final_roughness(roughness_map, roughness_mean):
    """Graph roughness rescaled so its mean equals ``roughness_mean``."""
    r = np.asarray(roughness_map, dtype=np.float64)
    if roughness_mean is None:
        return r
    m = r.mean()
    return np.clip(r * (roughness_mean / m), 0.01, 1.0) if m > 0 else np.full_like(r, roughness_mean)


def shade_textures(ctx, weights, base_normals, albedo, normal, roughness, albedo_scale=None):
    """Sample texture maps with precomputed bilinear ``weights`` and shade them.

    ``roughness`` is an (R, R, 1) map or a scalar that replaces it.
    """
    a = ad.bilinear_sample(albedo, weights=weights)
    if albedo_scale is not None:
        a = a * ad.reshape(ad.as_tensor(albedo_scale), (1, 3))
    n = rotate_normals(ad.bilinear_sample(normal, weights=weights), base_normals)
    r = ad.as_tensor(roughness)
    if r.ndim == 3:
        r = ad.bilinear_sample(r, weights=weights)
    return ctx.shade(a, n, r)


class PartScene:
    """Render and score one material part against a photo.

    ``mask`` selects the pixels to render and ``weight`` weights them in the
    losses; ``uv``, ``base_normals`` and ``view_dirs`` are (H, W, .) images.
    """

    def __init__(self, photo, mask, weight, uv, base_normals, lighting, view_dirs,
                 exposure=1.0, loss_weights=LossWeights(), bank=None, tex_res=256,
                 diffuse_only=False, cache_size=64):
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise EmptyMask("part has no pixels to render")
        self._args = (photo, mask, weight, uv, base_normals, lighting, view_dirs)
        self._kwargs = dict(exposure=exposure, loss_weights=loss_weights, bank=bank, tex_res=tex_res,
                            diffuse_only=diffuse_only, cache_size=cache_size)
        self.image_shape = mask.shape
        self.tex_res = tex_res
        self.exposure = float(exposure)
        self.bank = bank or default_bank()
        ys, xs = np.nonzero(mask)
        self.pixels = (ys, xs)
        self.flat_index = ys * mask.shape[1] + xs
        m = self.bank.multiple
        self.y0, self.x0 = ys.min(), xs.min()
        ch = ys.max() - self.y0 + 1
        cw = xs.max() - self.x0 + 1
        self.crop_shape = (ch + (-ch % m), cw + (-cw % m))
        self.local_index = (ys - self.y0) * self.crop_shape[1] + (xs - self.x0)
        self.ctx = ShadingContext(lighting, np.asarray(view_dirs)[ys, xs], (ys, xs), mask.shape,
                                  diffuse_only=diffuse_only)
        self.uv0 = np.asarray(uv, dtype=np.float64)[ys, xs]
        self.base_normals = np.asarray(base_normals, dtype=np.float64)[ys, xs]
        weight = np.where(mask, np.asarray(weight, dtype=np.float64), 0.0)
        self.row_weights = weight[ys, xs]
        self.photo = np.asarray(photo, dtype=np.float64)
        self.photo_crop = self.crop(self.photo)
        self.weight_crop = self.crop(weight[..., None])[..., 0]
        self.target = LossTarget(self.photo_crop, self.weight_crop, loss_weights, self.bank)
        self._samplers = OrderedDict()
        self._cache_size = cache_size

    def coarse(self, stride=2, min_pixels=256):
        """The same part on an image subsampled by ``stride``, or None if too small."""
        sub = (slice(None, None, stride), slice(None, None, stride))
        photo, mask, weight, uv, normals, lighting, view_dirs = self._args
        mask = mask[sub]
        if np.count_nonzero(mask) < min_pixels or (np.asarray(weight)[sub] * mask).sum() <= 0:
            return None
        return PartScene(np.asarray(photo)[sub], mask, np.asarray(weight)[sub], np.asarray(uv)[sub],
                         np.asarray(normals)[sub], lighting, np.asarray(view_dirs)[sub], **self._kwargs)

    def with_lighting(self, lighting):
        photo, mask, weight, uv, normals, _, view_dirs = self._args
        return PartScene(photo, mask, weight, uv, normals, lighting, view_dirs, **self._kwargs)

    @property
    def n_pixels(self):
        return len(self.flat_index)

    def crop(self, image):
        """Crop window of an (H, W, C) array, zero outside the image and the part."""
        image = np.asarray(image, dtype=np.float64)
        out = np.zeros(self.crop_shape + image.shape[2:])
        flat = out.reshape((-1,) + image.shape[2:])
        flat[self.local_index] = image[self.pixels]
        return out

    def sampler(self, phi):
        key = (phi.rotation, phi.log_scale, phi.translation)
        s = self._samplers.get(key)
        if s is None:
            s = ad.bilinear_weights(uv_transform(self.uv0, phi), self.tex_res, self.tex_res)
            self._samplers[key] = s
            if len(self._samplers) > self._cache_size:
                self._samplers.popitem(last=False)
        else:
            self._samplers.move_to_end(key)
        return s

    def shade(self, albedo, normal, roughness, phi, albedo_scale=None):
        """Radiance rows (P, 3) for texture maps; ``roughness`` is an (R, R, 1)
        map or a scalar that replaces it."""
        rows = shade_textures(self.ctx, self.sampler(phi), self.base_normals, albedo, normal, roughness,
                              albedo_scale)
        return rows * self.exposure

    def to_crop(self, rows):
        ch, cw = self.crop_shape
        return ad.reshape(ad.scatter_rows(rows, self.local_index, ch * cw), (ch, cw, 3))

    def loss(self, rows):
        return self.target.loss(self.to_crop(rows))

    def feature_distance(self, rows):
        return self.target.feature(self.to_crop(rows))

    def to_image(self, rows):
        h, w = self.image_shape
        rows = rows.numpy() if isinstance(rows, ad.Tensor) else np.asarray(rows)
        out = np.zeros((h * w, 3))
        out[self.flat_index] = rows
        return out.reshape(h, w, 3)
