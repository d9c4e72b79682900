"""Appearance losses between a photo region and a rendering of it.

The statistics loss compares weighted per-channel means and variances; the
feature loss compares normalized multi-scale filter responses, the role a
pretrained perceptual network would otherwise play.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ad
from ..errors import EmptyMask

FEATURE_SEED = 20220611
FEATURE_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("loss weights must be nonnegative with a positive sum")


def _rows(x):
    x = ad.as_tensor(x)
    return x if x.ndim == 2 else ad.reshape(x, (-1, x.shape[-1]))


def _weights(mask):
    w = np.asarray(mask, dtype=np.float64).reshape(-1)
    if w.sum() <= 0:
        raise EmptyMask("weighted mask has zero total weight")
    return w


def masked_stats(x, weights):
    """Weighted per-channel mean and variance of an image or row matrix."""
    x = _rows(x)
    w = _weights(weights)
    return ad.reduce_mean_masked(x, w), ad.reduce_var_masked(x, w)


def stat_loss(photo, rendered, weights):
    """Mean over channels of |mean difference| + |variance difference|."""
    mu_p, var_p = masked_stats(photo, weights)
    mu_r, var_r = masked_stats(rendered, weights)
    return ad.mean(ad.abs(mu_p - mu_r) + ad.abs(var_p - var_r))


class FeatureBank:
    """Fixed random multi-scale filters with per-location normalization.

    Level ``l`` filters the image box-downsampled by ``2**l`` with
    ``n_kernels`` zero-mean ``size`` x ``size`` kernels.
    """

    def __init__(self, levels=5, n_kernels=16, size=5, channels=3, seed=FEATURE_SEED):
        rng = np.random.default_rng(seed)
        self.levels = levels
        self.kernels = []
        for _ in range(levels):
            k = rng.standard_normal((size, size, channels, n_kernels))
            k -= k.mean(axis=(0, 1), keepdims=True)
            k /= np.sqrt((k ** 2).sum(axis=(0, 1, 2), keepdims=True))
            k.flags.writeable = False
            self.kernels.append(k)

    @property
    def multiple(self):
        return 2 ** (self.levels - 1)

    def features(self, image):
        """List of normalized (h_l, w_l, n_kernels) feature maps."""
        x = ad.as_tensor(image)
        out = []
        for level, k in enumerate(self.kernels):
            if level:
                x = ad.avg_pool(x, 2)
            f = ad.conv2d_fixed(x, k)
            norm = ad.sqrt(ad.sum(f * f, axis=2, keepdims=True) + FEATURE_EPS)
            out.append(f / norm)
        return out


_DEFAULT_BANK = None


def default_bank():
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = FeatureBank()
    return _DEFAULT_BANK


def pad_to_multiple(image, m):
    """Zero-pad an (h, w, C) array or tensor at the bottom/right to multiples of m."""
    x = ad.as_tensor(image)
    h, w = x.shape[:2]
    ph, pw = -h % m, -w % m
    if ph:
        x = ad.concat([x, ad.constant(np.zeros((ph,) + x.shape[1:]))], axis=0)
    if pw:
        x = ad.concat([x, ad.constant(np.zeros((x.shape[0], pw) + x.shape[2:]))], axis=1)
    return x


def _feature_distance(feats_a, feats_b, size):
    total = None
    for fa, fb in zip(feats_a, feats_b):
        d = fa - fb
        d = ad.upsample_bilinear(ad.sum(d * d, axis=2, keepdims=True), size)
        total = d if total is None else total + d
    return total


def _masked_mean(dist, weights, size):
    h, w = weights.shape
    padded = np.zeros(size)
    padded[:h, :w] = weights
    flat = ad.reshape(dist, (-1, 1))
    return ad.reshape(ad.reduce_mean_masked(flat, padded.reshape(-1)), ())


def feature_loss(photo, rendered, weights, bank=None):
    """Weighted mean over pixels of the summed, upsampled squared feature differences.

    Both images are multiplied by the binary support of ``weights`` first, so
    content outside the region never reaches the filters.
    """
    bank = bank or default_bank()
    weights = np.asarray(weights, dtype=np.float64)
    _weights(weights)
    support = (weights > 0).astype(np.float64)[..., None]
    a = pad_to_multiple(ad.as_tensor(photo) * support, bank.multiple)
    b = pad_to_multiple(ad.as_tensor(rendered) * support, bank.multiple)
    size = a.shape[:2]
    dist = _feature_distance(bank.features(a), bank.features(b), size)
    return _masked_mean(dist, weights, size)


def total_loss(photo, rendered, weights, loss_weights=LossWeights(), bank=None):
    out = None
    if loss_weights.alpha:
        out = stat_loss(photo, rendered, weights) * loss_weights.alpha
    if loss_weights.beta:
        f = feature_loss(photo, rendered, weights, bank) * loss_weights.beta
        out = f if out is None else out + f
    return out


class LossTarget:
    """A fixed photo crop and weight map with precomputed statistics and features.

    ``loss(rendered)`` equals ``total_loss(photo, rendered, weights)`` but only
    the rendered side is recomputed.
    """

    def __init__(self, photo, weights, loss_weights=LossWeights(), bank=None):
        self.bank = bank or default_bank()
        self.weights = np.asarray(weights, dtype=np.float64)
        self.flat_weights = _weights(self.weights)
        self.loss_weights = loss_weights
        self.support = (self.weights > 0).astype(np.float64)[..., None]
        self.photo = np.asarray(photo, dtype=np.float64)
        w = self.flat_weights
        rows = self.photo.reshape(-1, 3)
        self.mu = (w[:, None] * rows).sum(axis=0) / w.sum()
        self.var = (w[:, None] * (rows - self.mu) ** 2).sum(axis=0) / w.sum()
        if loss_weights.beta:
            padded = pad_to_multiple(self.photo * self.support, self.bank.multiple)
            self.size = padded.shape[:2]
            self.feats = [ad.constant(f.numpy()) for f in self.bank.features(padded)]

    def stat(self, rendered):
        mu, var = masked_stats(rendered, self.flat_weights)
        return ad.mean(ad.abs(mu - self.mu) + ad.abs(var - self.var))

    def feature(self, rendered):
        b = pad_to_multiple(ad.as_tensor(rendered) * self.support, self.bank.multiple)
        dist = _feature_distance(self.feats, self.bank.features(b), self.size)
        return _masked_mean(dist, self.weights, self.size)

    def loss(self, rendered):
        out = None
        if self.loss_weights.alpha:
            out = self.stat(rendered) * self.loss_weights.alpha
        if self.loss_weights.beta:
            f = self.feature(rendered) * self.loss_weights.beta
            out = f if out is None else out + f
        return out
