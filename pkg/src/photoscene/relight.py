"""Globally consistent lighting: nonnegative per-light RGB intensities shared by
all views, per-view exposures, and composition of the refined lighting grid.

Per-light renders are arrays of shape (S, ..., 3): the S = N + 1 sources (area
lights first, the environment last) each rendered at unit intensity. The
trailing axes only need to agree with the matching photo and mask.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import DegenerateSystem, GridMismatch, InvalidBounds
from .render import LightingGrid

CEILING_SPACING = 3.0
MIN_EXPOSURE = 1e-6


@dataclass(frozen=True)
class LightCoeffs:
    """(S, 3) nonnegative RGB intensities, one row per source."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(v).all() or (v < 0).any():
            raise ValueError("light coefficients must be finite and nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def ones(cls, n_sources):
        return cls(np.ones((n_sources, 3)))

    @property
    def n_sources(self):
        return len(self.values)


@dataclass(frozen=True)
class ExposureSet:
    values: tuple
    anchor: int = 0

    def __post_init__(self):
        v = tuple(float(e) for e in self.values)
        if any(not e > 0 for e in v):
            raise ValueError("exposures must be positive")
        if v[self.anchor] != 1.0:
            raise ValueError("the anchor view has exposure 1")
        object.__setattr__(self, "values", v)

    @classmethod
    def ones(cls, n_views, anchor=0):
        return cls((1.0,) * n_views, anchor)

    def __getitem__(self, v):
        return self.values[v]

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class LightingSolution:
    coeffs: LightCoeffs
    exposures: ExposureSet
    residuals: tuple     # total squared residual after each round, starting with the initial one


def place_ceiling_lights(bounds_min, bounds_max, spacing=CEILING_SPACING):
    """Light positions on the ceiling (y = max) at the centers of a grid with
    ceil(extent / spacing) cells along x and z."""
    lo = np.asarray(bounds_min, dtype=np.float64)
    hi = np.asarray(bounds_max, dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,) or not (hi > lo).all():
        raise InvalidBounds(f"room bounds {lo.tolist()} .. {hi.tolist()} are not a valid box")
    if not spacing > 0:
        raise InvalidBounds("light spacing must be positive")
    axes = []
    for a in (0, 2):
        n = max(1, math.ceil((hi[a] - lo[a]) / spacing - 1e-9))
        axes.append(lo[a] + (np.arange(n) + 0.5) * (hi[a] - lo[a]) / n)
    return [(float(x), float(hi[1]), float(z)) for x in axes[0] for z in axes[1]]


def _system(renders, photos, masks, exposures, c):
    """Stacked design matrix and target of one channel over all views."""
    rows, target = [], []
    for v, (r, p, m) in enumerate(zip(renders, photos, masks)):
        r = np.asarray(r, dtype=np.float64)
        m = np.asarray(m, dtype=bool)
        rows.append(exposures[v] * r[:, m, c].T)
        target.append(np.asarray(p, dtype=np.float64)[m, c])
    return np.concatenate(rows), np.concatenate(target)


def solve_light_coeffs(renders, photos, masks, exposures=None):
    """Per-channel nonnegative least squares for the source intensities.

    Returns (coeffs, residual) with the residual summed over channels. Sources
    whose renders vanish on every valid pixel get intensity 0 and a warning.
    """
    if not len(renders):
        raise ValueError("at least one view is required")
    exposures = ExposureSet.ones(len(renders)) if exposures is None else exposures
    n_src = np.asarray(renders[0]).shape[0]
    x = np.zeros((n_src, 3))
    residual = 0.0
    for c in range(3):
        a, b = _system(renders, photos, masks, exposures, c)
        live = np.abs(a).sum(axis=0) > 0
        if not live.all():
            warnings.warn(f"channel {c}: sources {np.flatnonzero(~live).tolist()} never reach a valid pixel",
                          DegenerateSystem, stacklevel=2)
        if live.any():
            x[live, c], _ = nnls(a[:, live], b, maxiter=50 * n_src)
        residual += float(np.sum((a @ x[:, c] - b) ** 2))
    return LightCoeffs(x), residual


def model_image(render, coeffs):
    """Sum over sources of intensity times unit render: (S, ..., 3) -> (..., 3)."""
    return np.einsum("s...c,sc->...c", np.asarray(render, dtype=np.float64), coeffs.values)


def solve_exposures(renders, photos, masks, coeffs, anchor=0):
    """Closed-form least-squares exposure of every non-anchor view."""
    out = []
    for v, (r, p, m) in enumerate(zip(renders, photos, masks)):
        if v == anchor:
            out.append(1.0)
            continue
        m = np.asarray(m, dtype=bool)
        model = model_image(r, coeffs)[m]
        photo = np.asarray(p, dtype=np.float64)[m]
        mm = float(np.sum(model * model))
        if mm <= 0:
            warnings.warn(f"view {v}: model image is zero, exposure left at 1", DegenerateSystem, stacklevel=2)
            out.append(1.0)
        else:
            out.append(max(float(np.sum(model * photo)) / mm, MIN_EXPOSURE))
    return ExposureSet(tuple(out), anchor)


def total_residual(renders, photos, masks, coeffs, exposures):
    total = 0.0
    for v, (r, p, m) in enumerate(zip(renders, photos, masks)):
        m = np.asarray(m, dtype=bool)
        d = exposures[v] * model_image(r, coeffs)[m] - np.asarray(p, dtype=np.float64)[m]
        total += float(np.sum(d * d))
    return total


def refine_lighting(renders, photos, masks, rounds=2, anchor=0):
    """Alternate the coefficient and exposure solves, starting from all ones.

    Each half-step minimizes the same objective over one block, so the
    recorded residuals never increase.
    """
    n_src = np.asarray(renders[0]).shape[0]
    coeffs = LightCoeffs.ones(n_src)
    exposures = ExposureSet.ones(len(renders), anchor)
    history = [total_residual(renders, photos, masks, coeffs, exposures)]
    for _ in range(rounds):
        coeffs, _ = solve_light_coeffs(renders, photos, masks, exposures)
        exposures = solve_exposures(renders, photos, masks, coeffs, anchor)
        history.append(total_residual(renders, photos, masks, coeffs, exposures))
    return LightingSolution(coeffs, exposures, tuple(history))


def combine_grids(grids, coeffs):
    """Coefficient-weighted sum of per-source lighting grids."""
    if len(grids) != coeffs.n_sources:
        raise GridMismatch(f"{len(grids)} lighting grids for {coeffs.n_sources} coefficients")
    shape = grids[0].radiance.shape
    total = np.zeros(shape)
    for g, c in zip(grids, coeffs.values):
        if g.radiance.shape != shape:
            raise GridMismatch("per-source lighting grids differ in shape")
        total += g.radiance * c
    return LightingGrid(total, grids[0].frame)


def compose_global_lighting(records, coeffs, view):
    """Global lighting grid of one view from the bundle's per-light records,
    given in the same order as the coefficient rows."""
    try:
        grids = [r.per_view[view] for r in records]
    except KeyError as exc:
        raise GridMismatch(f"a light record has no grid for view {view}") from exc
    return combine_grids(grids, coeffs)
