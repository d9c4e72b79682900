"""Mask matching, box warps between geometry and photo space, validity
weighting and view selection.

Pixel coordinates are (row, col) pairs. A box is described by its center and
its size in pixels, measured on the continuous pixel grid: a mask spanning
rows r0..r1 has center (r0 + r1) / 2 and extent r1 - r0 + 1, so the box edges
sit at center +- extent / 2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, PartNotVisible

WEIGHT_THRESHOLD = 0.95
MIN_VALID_PIXELS = 500
SOFT_IOU_REJECT = 0.05
CONSENSUS_TAU = 0.2

OPTIMIZE = "optimize"
MEDIAN_FALLBACK = "medianFallback"
GEO_MEDIAN_FALLBACK = "geoMedianFallback"


@dataclass(frozen=True)
class WarpBoxes:
    c_g: np.ndarray
    l_g: np.ndarray
    c_p: np.ndarray
    l_p: np.ndarray

    def __post_init__(self):
        for name in ("c_g", "l_g", "c_p", "l_p"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(2))
        if (self.l_g < 1).any() or (self.l_p < 1).any():
            raise ValueError("warp box sizes must be at least one pixel")

    def as_dict(self):
        return {k: getattr(self, k).tolist() for k in ("c_g", "l_g", "c_p", "l_p")}

    @classmethod
    def from_dict(cls, d):
        return cls(d["c_g"], d["l_g"], d["c_p"], d["l_p"])

    def replace(self, c_g=None, l_g=None):
        return WarpBoxes(self.c_g if c_g is None else c_g, self.l_g if l_g is None else l_g, self.c_p, self.l_p)


@dataclass
class AlignResult:
    """A part warped into photo space.

    ``mask`` is the binary aligned mask, ``weight`` the normal-agreement map;
    their product is the weighted mask used by the losses.
    """

    mask: np.ndarray
    uv: np.ndarray
    normals_geo: np.ndarray
    weight: np.ndarray
    valid_count: int
    mode: str
    boxes: WarpBoxes = None
    iou: float = 0.0

    @property
    def weighted_mask(self):
        return self.mask * self.weight

    @property
    def valid(self):
        return self.mask & (self.weight > WEIGHT_THRESHOLD)


# ---------------------------------------------------------------- boxes and IoU

def bounding_box(mask):
    """(center, size) of the axis-aligned box around a nonempty mask."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise EmptyMask("bounding box of an empty mask")
    lo = np.array([ys.min(), xs.min()], dtype=np.float64)
    hi = np.array([ys.max(), xs.max()], dtype=np.float64)
    return 0.5 * (lo + hi), hi - lo + 1.0


def initial_boxes(mask_geo, mask_photo):
    c_g, l_g = bounding_box(mask_geo)
    c_p, l_p = bounding_box(mask_photo)
    return WarpBoxes(c_g, l_g, c_p, l_p)


def iou(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def _gaussian_weight(shape, center, sigma):
    ys = np.arange(shape[0])[:, None]
    xs = np.arange(shape[1])[None, :]
    return np.exp(-0.5 * (((ys - center[0]) / sigma[0]) ** 2 + ((xs - center[1]) / sigma[1]) ** 2))


def soft_mask(mask):
    """Mask times a Gaussian at its box center with sigma = half the box extents."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape)
    c, l = bounding_box(mask)
    return mask * _gaussian_weight(mask.shape, c, 0.5 * l)


def soft_iou(a, b):
    sa, sb = soft_mask(a), soft_mask(b)
    union = np.maximum(sa, sb).sum()
    return float(np.minimum(sa, sb).sum() / union) if union > 0 else 0.0


@dataclass(frozen=True)
class InstanceMatch:
    geo_index: int
    photo_index: int      # None when no candidate is available
    soft_iou: float
    matched: bool


def match_instances(geo_submasks, photo_candidates, geo_labels=None, photo_labels=None,
                    reject_below=SOFT_IOU_REJECT):
    """Pair every geometry submask with its best photo candidate by soft IoU."""
    if not len(geo_submasks):
        raise ValueError("at least one geometry submask is required")
    out = []
    for gi, g in enumerate(geo_submasks):
        best, best_score = None, -1.0
        for pj, p in enumerate(photo_candidates):
            if geo_labels is not None and photo_labels is not None and geo_labels[gi] != photo_labels[pj]:
                continue
            s = soft_iou(g, p)
            if s > best_score:
                best, best_score = pj, s
        if best is None:
            out.append(InstanceMatch(gi, None, 0.0, False))
        else:
            out.append(InstanceMatch(gi, best, best_score, best_score >= reject_below))
    return out


# ---------------------------------------------------------------- warps

def warp_points(x_t, c_from, l_from, c_to, l_to):
    """Affine box-to-box map; with equal boxes the points come back unchanged."""
    x_t = np.asarray(x_t, dtype=np.float64)
    return c_to + (x_t - c_from) * (np.asarray(l_to) / np.asarray(l_from))


def _sources(shape, c_from, l_from, c_to, l_to):
    """Nearest source pixel for every target pixel and whether it is in bounds."""
    h, w = shape
    ys = warp_points(np.arange(h, dtype=np.float64), c_from[0], l_from[0], c_to[0], l_to[0])
    xs = warp_points(np.arange(w, dtype=np.float64), c_from[1], l_from[1], c_to[1], l_to[1])
    sy = np.floor(ys + 0.5).astype(np.int64)
    sx = np.floor(xs + 0.5).astype(np.int64)
    iny = (sy >= 0) & (sy < h)
    inx = (sx >= 0) & (sx < w)
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    return np.ix_(sy, sx), iny[:, None] & inx[None, :]


def warp_mask_geo(mask_geo, boxes):
    """Geometry mask resampled into photo space (no photo-mask intersection)."""
    idx, inb = _sources(mask_geo.shape, boxes.c_p, boxes.l_p, boxes.c_g, boxes.l_g)
    return np.asarray(mask_geo, dtype=bool)[idx] & inb


def warp_geo_to_photo(uv_geo, mask_geo, mask_photo, boxes, normals_geo=None):
    """Resample geometry-space fields into photo space.

    Returns an :class:`AlignResult` with unit weight; :func:`weight_map`
    fills in the normal-agreement weights.
    """
    mask_geo = np.asarray(mask_geo, dtype=bool)
    idx, inb = _sources(mask_geo.shape, boxes.c_p, boxes.l_p, boxes.c_g, boxes.l_g)
    mask = mask_geo[idx] & inb & np.asarray(mask_photo, dtype=bool)
    uv = np.where(mask[..., None], np.asarray(uv_geo)[idx], 0.0)
    normals = None
    if normals_geo is not None:
        normals = np.where(mask[..., None], np.asarray(normals_geo)[idx], 0.0)
    weight = mask.astype(np.float64)
    return AlignResult(mask, uv, normals, weight, int(mask.sum()), OPTIMIZE, boxes, iou(mask_photo, mask_geo[idx] & inb))


def warp_photo_to_geo(photo, mask_photo, mask_geo, boxes):
    """Photo pixels resampled into geometry space: (warped image, mask)."""
    mask_photo = np.asarray(mask_photo, dtype=bool)
    idx, inb = _sources(mask_photo.shape, boxes.c_g, boxes.l_g, boxes.c_p, boxes.l_p)
    mask = mask_photo[idx] & inb & np.asarray(mask_geo, dtype=bool)
    photo = np.asarray(photo)
    warped = np.where(mask[..., None] if photo.ndim == 3 else mask, photo[idx], 0.0)
    return warped, mask


def optimize_warp(mask_geo, mask_photo, span=0.25, steps=5, rounds=3, init=None):
    """Refine the geometry box (center and size) to maximise IoU with the photo mask.

    Coordinate descent over the four geometry-box scalars, starting from
    ``init`` or the two bounding boxes; each round searches ``steps`` values
    within +-``span`` of the box extent around the current value, and the span
    halves every round. Returns (boxes, iou, per-round iou history).
    """
    mask_geo = np.asarray(mask_geo, dtype=bool)
    mask_photo = np.asarray(mask_photo, dtype=bool)
    boxes = initial_boxes(mask_geo, mask_photo) if init is None else init
    best = iou(mask_photo, warp_mask_geo(mask_geo, boxes))
    history = [best]
    offsets = np.linspace(-1.0, 1.0, steps)
    for r in range(rounds):
        scale = span / 2 ** r
        for which in ("c_g", "l_g"):
            for axis in (0, 1):
                base = getattr(boxes, which).copy()
                extent = boxes.l_g[axis]
                for o in offsets:
                    if o == 0.0:
                        continue
                    trial = base.copy()
                    trial[axis] += o * scale * extent
                    if which == "l_g" and trial[axis] < 1.0:
                        continue
                    cand = boxes.replace(**{which: trial})
                    score = iou(mask_photo, warp_mask_geo(mask_geo, cand))
                    if score > best:
                        best, boxes = score, cand
        history.append(best)
    return boxes, best, history


# ---------------------------------------------------------------- weights and gating

def classify(matched, valid_count):
    if not matched:
        return GEO_MEDIAN_FALLBACK
    return OPTIMIZE if valid_count >= MIN_VALID_PIXELS else MEDIAN_FALLBACK


def weight_map(normals_inv, normals_geo, mask, matched=True):
    """Normal-agreement weights, valid-pixel count and mode."""
    mask = np.asarray(mask, dtype=bool)
    dot = np.sum(np.asarray(normals_inv) * np.asarray(normals_geo), axis=-1)
    weight = np.where(mask, np.clip(dot, 0.0, 1.0), 0.0)
    j = int(np.count_nonzero(weight > WEIGHT_THRESHOLD))
    return weight, j, classify(matched, j)


def align_part(part_view, normals_inv, candidates=None, refine=True):
    """Full alignment of one part in one view: match, refine, warp, weight."""
    cands = list(part_view.mask_photo_candidates if candidates is None else candidates)
    matched = False
    mask_photo = None
    if cands:
        m = match_instances([part_view.mask_geo], cands)[0]
        matched = m.matched
        if matched:
            mask_photo = cands[m.photo_index]
    if not matched:
        mask = np.asarray(part_view.mask_geo, dtype=bool)
        return AlignResult(mask, np.where(mask[..., None], part_view.uv_geo, 0.0),
                           np.where(mask[..., None], part_view.normals_geo, 0.0),
                           mask.astype(np.float64), 0, GEO_MEDIAN_FALLBACK, None, 0.0)
    if refine:
        boxes, score, _ = optimize_warp(part_view.mask_geo, mask_photo)
    else:
        boxes = initial_boxes(part_view.mask_geo, mask_photo)
    res = warp_geo_to_photo(part_view.uv_geo, part_view.mask_geo, mask_photo, boxes, part_view.normals_geo)
    res.weight, res.valid_count, res.mode = weight_map(normals_inv, res.normals_geo, res.mask, True)
    return res


def photo_mask_for(part_view):
    """Best photo candidate for a part view, or its geometry mask when none match."""
    cands = part_view.mask_photo_candidates
    if cands:
        m = match_instances([part_view.mask_geo], cands)[0]
        if m.matched:
            return cands[m.photo_index]
    return part_view.mask_geo


# ---------------------------------------------------------------- view selection

def pose_distance(a, b):
    """(rotation angle in radians, translation distance) between two 4x4 poses."""
    a, b = np.asarray(a), np.asarray(b)
    r = a[:3, :3].T @ b[:3, :3]
    angle = np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0))
    return angle, float(np.linalg.norm(a[:3, 3] - b[:3, 3]))


def subsample_views(poses, candidates, min_angle=np.deg2rad(30.0), min_dist=1.0):
    kept = []
    for i in candidates:
        if all((lambda d: d[0] >= min_angle or d[1] >= min_dist)(pose_distance(poses[i], poses[k])) for k in kept):
            kept.append(i)
    return kept


def coverage(mask):
    h, w = mask.shape
    g = _gaussian_weight((h, w), ((h - 1) / 2.0, (w - 1) / 2.0), (h / 4.0, w / 4.0))
    return float((g * mask).sum())


def part_statistics(albedo, roughness, mask):
    """Mean and standard deviation of masked albedo (3) and roughness (1)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("statistics of an empty mask")
    a = np.asarray(albedo)[mask].reshape(-1, 3)
    r = np.asarray(roughness)[mask].reshape(-1, 1)
    x = np.concatenate([a, r], axis=1)
    return np.concatenate([x.mean(axis=0), x.std(axis=0)])


@dataclass(frozen=True)
class ViewScore:
    view_index: int
    consensus: int
    coverage: float

    @property
    def score(self):
        return self.consensus * self.coverage


def score_views(masks, stats, candidates, tau=CONSENSUS_TAU):
    out = []
    for i in candidates:
        n = sum(1 for k in candidates if k != i and np.linalg.norm(stats[i] - stats[k]) <= tau)
        out.append(ViewScore(i, n, coverage(masks[i])))
    return out


def select_view(poses, masks, stats, tau=CONSENSUS_TAU):
    """Pick a view for a part.

    ``poses``, ``masks`` and ``stats`` are dicts keyed by view index holding
    the camera pose, the part's photo mask and its statistic vector; views
    missing from ``masks`` or with empty masks do not show the part.
    """
    visible = sorted(i for i, m in masks.items() if np.asarray(m).any())
    if not visible:
        raise PartNotVisible("part is not visible in any view")
    cands = subsample_views(poses, visible)
    scores = score_views(masks, stats, cands, tau)
    best = max(scores, key=lambda s: (s.score, -s.view_index))
    return best.view_index, scores
