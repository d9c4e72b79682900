"""Synthetic ground-truth bundles: known materials, UV transforms, lights and
exposures rendered through the render layer, for recovery experiments."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ad
from .bundle import write_manifest, write_uv
from .fit.optimize import PhiGrid
from .fit.scene import shade_textures
from .imagefiles import linear_to_srgb, write_mask, write_pfm, write_png
from .matgraph import eval_graph, get_template, list_collection, sample_random_params
from .relight import LightCoeffs, combine_grids, place_ceiling_lights
from .render import LightingGrid, ShadingContext, UVTransformParams, hemisphere_directions, uv_transform, \
    view_directions

GROUND_TRUTH = "groundtruth.json"
# broad lobes keep the lighting resolvable by the coarse environment quadrature;
# intensities put the photos roughly in display range
LOBE_WIDTH = 0.5
LOBE_PEAK = 1.5
SKY = (0.08, 0.12)


@dataclass(frozen=True)
class PartSpec:
    part_id: str
    rect: tuple                      # (y0, x0, y1, x1), end exclusive
    graph_id: str = None             # None draws a textured template
    normal: tuple = (0.0, 0.0, 1.0)
    uv_pixels: float = 96.0          # pixels per UV unit
    theta: tuple = None
    phi: dict = None

    @classmethod
    def from_dict(cls, d):
        return cls(str(d["id"]), tuple(int(v) for v in d["rect"]), d.get("graphId"),
                   tuple(d.get("normal", (0.0, 0.0, 1.0))), float(d.get("uvPixels", 96.0)),
                   None if d.get("theta") is None else tuple(d["theta"]), d.get("phi"))

    def as_dict(self):
        return {"id": self.part_id, "rect": list(self.rect), "graphId": self.graph_id, "normal": list(self.normal),
                "uvPixels": self.uv_pixels, "theta": None if self.theta is None else list(self.theta),
                "phi": self.phi}


DEFAULT_PARTS = (PartSpec("wall", (64, 48, 192, 208)),)


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    image_size: tuple = (256, 256)
    fov_degrees: float = 60.0
    env_shape: tuple = (8, 16)
    cell_size: int = 8
    views: int = 1
    view_shift: int = 12             # pixels the parts move between consecutive views
    exposures: tuple = None          # per view; None means all 1
    noise: float = 0.0
    misalign: tuple = (0, 0)         # (rows, cols) shift of geometry buffers against the photo
    lighting_scale: float = 1.0      # initial lighting estimate = truth times this
    room_min: tuple = (0.0, 0.0, 0.0)
    room_max: tuple = (6.0, 3.0, 3.0)
    parts: tuple = DEFAULT_PARTS
    phi_grid: PhiGrid = field(default_factory=PhiGrid)
    texture_resolution: int = 256
    predictions: bool = True
    distractor: bool = False
    photo_format: str = "pfm"

    def as_dict(self):
        return {
            "seed": self.seed, "imageSize": list(self.image_size), "fov": self.fov_degrees,
            "envShape": list(self.env_shape), "cellSize": self.cell_size, "views": self.views,
            "viewShift": self.view_shift, "exposures": None if self.exposures is None else list(self.exposures),
            "noise": self.noise, "misalign": list(self.misalign), "lightingScale": self.lighting_scale,
            "roomBounds": {"min": list(self.room_min), "max": list(self.room_max)},
            "parts": [p.as_dict() for p in self.parts], "phiGrid": self.phi_grid.as_dict(),
            "textureResolution": self.texture_resolution, "predictions": self.predictions,
            "distractor": self.distractor, "photoFormat": self.photo_format,
        }

    @classmethod
    def from_dict(cls, d):
        base = cls()
        rb = d.get("roomBounds", {})
        mis = d.get("misalign", base.misalign)
        mis = (int(mis), 0) if np.isscalar(mis) else tuple(int(v) for v in mis)
        return cls(
            seed=int(d.get("seed", base.seed)),
            image_size=tuple(d.get("imageSize", base.image_size)),
            fov_degrees=float(d.get("fov", base.fov_degrees)),
            env_shape=tuple(d.get("envShape", base.env_shape)),
            cell_size=int(d.get("cellSize", base.cell_size)),
            views=int(d.get("views", base.views)),
            view_shift=int(d.get("viewShift", base.view_shift)),
            exposures=None if d.get("exposures") is None else tuple(d["exposures"]),
            noise=float(d.get("noise", base.noise)),
            misalign=mis,
            lighting_scale=float(d.get("lightingScale", base.lighting_scale)),
            room_min=tuple(rb.get("min", base.room_min)),
            room_max=tuple(rb.get("max", base.room_max)),
            parts=tuple(PartSpec.from_dict(p) for p in d["parts"]) if "parts" in d else base.parts,
            phi_grid=PhiGrid.from_dict(d["phiGrid"]) if "phiGrid" in d else base.phi_grid,
            texture_resolution=int(d.get("textureResolution", base.texture_resolution)),
            predictions=bool(d.get("predictions", base.predictions)),
            distractor=bool(d.get("distractor", base.distractor)),
            photo_format=str(d.get("photoFormat", base.photo_format)),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- lighting

def _lobe_grid(cells, env, anchor, peak, width=LOBE_WIDTH):
    """Per cell, a radiance lobe pointing from the cell toward an image-plane anchor."""
    ch, cw = cells
    dirs, _ = hemisphere_directions(*env)
    cy = (np.arange(ch) + 0.5) / ch
    cx = (np.arange(cw) + 0.5) / cw
    Y, X = np.meshgrid(cy, cx, indexing="ij")
    d = np.stack([anchor[1] - X, Y - anchor[0], np.full_like(X, 0.8)], axis=-1)
    dist2 = (d ** 2).sum(axis=-1, keepdims=True)
    d /= np.sqrt(dist2)
    cos = d @ dirs.T                                     # (ch, cw, J)
    falloff = 1.0 / (0.5 + dist2)
    rad = np.exp((cos - 1.0) / width) * falloff
    rad = rad.reshape(ch, cw, env[0], env[1], 1) * np.asarray(peak)
    return LightingGrid(rad)


def _env_grid(cells, env, color):
    dirs, _ = hemisphere_directions(*env)
    sky = SKY[0] + SKY[1] * np.clip(dirs[:, 1], 0.0, None)
    rad = np.broadcast_to(sky.reshape(1, 1, env[0], env[1], 1) * np.asarray(color), cells + tuple(env) + (3,))
    return LightingGrid(np.array(rad))


def light_grids(cfg, view):
    """Per-source unit-intensity grids of one view (area lights, then the environment)."""
    h, w = cfg.image_size
    cells = (h // cfg.cell_size, w // cfg.cell_size)
    positions = place_ceiling_lights(cfg.room_min, cfg.room_max)
    lo, hi = np.asarray(cfg.room_min), np.asarray(cfg.room_max)
    grids = []
    for x, _, z in positions:
        col = (x - lo[0]) / (hi[0] - lo[0]) - view * cfg.view_shift / w
        depth = (z - lo[2]) / (hi[2] - lo[2])
        grids.append(_lobe_grid(cells, cfg.env_shape, (-0.25 - 0.2 * depth, col), (LOBE_PEAK,) * 3))
    grids.append(_env_grid(cells, cfg.env_shape, (1.0, 1.0, 1.0)))
    return positions, grids


# ---------------------------------------------------------------- generation

def _shift(a, dy, dx, fill=0.0):
    out = np.full_like(a, fill)
    h, w = a.shape[:2]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = a[ys, xs]
    return out


def _rect_mask(shape, rect, dx=0):
    y0, x0, y1, x1 = rect
    m = np.zeros(shape, dtype=bool)
    m[max(y0, 0):min(y1, shape[0]), max(x0 + dx, 0):min(x1 + dx, shape[1])] = True
    return m


def _textured_templates():
    return [t for t in list_collection() if t.graph_id != "homogeneous"]


def draw_parts(cfg, rng):
    """Ground-truth (spec, template, theta, phi) for every part."""
    textured = _textured_templates()
    grid = list(cfg.phi_grid.points())
    out = []
    for spec in cfg.parts:
        template = get_template(spec.graph_id) if spec.graph_id else textured[rng.integers(len(textured))]
        theta = np.asarray(spec.theta, dtype=np.float64) if spec.theta is not None else \
            sample_random_params(template, int(rng.integers(2 ** 31)))
        phi = UVTransformParams.from_dict(spec.phi) if spec.phi else grid[rng.integers(len(grid))]
        out.append((spec, template, theta, phi))
    return out


def generate(cfg, out):
    """Write a ground-truth bundle for ``cfg`` into directory ``out``; returns the ground truth."""
    out = Path(out)
    (out / "views").mkdir(parents=True, exist_ok=True)
    (out / "parts").mkdir(exist_ok=True)
    (out / "lights").mkdir(exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.image_size
    fov = np.deg2rad(cfg.fov_degrees)
    dirs = view_directions(h, w, fov)
    drawn = draw_parts(cfg, rng)
    n_area = len(place_ceiling_lights(cfg.room_min, cfg.room_max))
    coeffs = LightCoeffs(rng.uniform(0.6, 1.4, size=(n_area + 1, 3)))
    exposures = tuple(cfg.exposures) if cfg.exposures is not None else (1.0,) * cfg.views
    light_ids = [f"area{i}" for i in range(n_area)] + ["env"]
    manifest = {"lighting": {"envH": cfg.env_shape[0], "envW": cfg.env_shape[1]}, "views": [],
                "parts": [{"id": s.part_id, "views": {}} for s, *_ in drawn],
                "lights": [{"id": lid, "kind": "envWindow" if lid == "env" else "area", "views": {}}
                           for lid in light_ids],
                "cameraFov": float(fov),
                "roomBounds": {"min": list(cfg.room_min), "max": list(cfg.room_max)}}
    maps = [tuple(a for a in eval_graph(t, th, cfg.texture_resolution).arrays()) for _, t, th, _ in drawn]

    for v in range(cfg.views):
        dx = v * cfg.view_shift
        positions, grids = light_grids(cfg, v)
        for li, g in enumerate(grids):
            path = f"lights/{light_ids[li]}_v{v}.pfm"
            write_pfm(out / path, g.to_tiled())
            manifest["lights"][li]["views"][str(v)] = path
            if li < n_area:
                manifest["lights"][li]["position"] = list(positions[li])
        truth_light = combine_grids(grids, coeffs)
        photo = np.zeros((h, w, 3))
        normals_inv = np.zeros((h, w, 3))
        normals_inv[..., 2] = 1.0
        albedo_pred = np.zeros((h, w, 3))
        rough_pred = np.zeros((h, w, 1))
        for pi, (spec, template, theta, phi) in enumerate(drawn):
            mask = _rect_mask((h, w), spec.rect, dx)
            ys, xs = np.nonzero(mask)
            y0, x0 = spec.rect[0], spec.rect[1]
            uv = np.zeros((h, w, 2))
            uv[..., 0] = (np.arange(w)[None, :] - x0 - dx) / spec.uv_pixels
            uv[..., 1] = (np.arange(h)[:, None] - y0) / spec.uv_pixels
            n = np.asarray(spec.normal, dtype=np.float64)
            n = n / np.linalg.norm(n)
            normals = np.zeros((h, w, 3))
            normals[...] = (0.0, 0.0, 1.0)
            normals[mask] = n
            normals_inv[mask] = n
            albedo, normal_map, rough = maps[pi]
            weights = ad.bilinear_weights(uv_transform(uv[ys, xs], phi), albedo.shape[0], albedo.shape[1])
            ctx = ShadingContext(truth_light, dirs[ys, xs], (ys, xs), (h, w))
            photo[ys, xs] = shade_textures(ctx, weights, normals[ys, xs], albedo, normal_map, rough).numpy()
            albedo_pred[ys, xs] = ad.bilinear_sample(albedo, weights=weights).numpy()
            rough_pred[ys, xs] = ad.bilinear_sample(rough, weights=weights).numpy()

            my, mx = cfg.misalign
            stem = f"parts/{spec.part_id}_v{v}"
            geo_mask = _shift(mask, my, mx, False)
            write_mask(out / f"{stem}_maskgeo.png", geo_mask)
            write_uv(out / f"{stem}_uv.pfm", np.where(geo_mask[..., None], _shift(uv, my, mx), 0.0))
            geo_n = _shift(normals, my, mx)
            geo_n[~geo_mask] = (0.0, 0.0, 1.0)
            write_pfm(out / f"{stem}_normals.pfm", geo_n)
            write_mask(out / f"{stem}_cand0.png", mask)
            cands = [f"{stem}_cand0.png"]
            if cfg.distractor:
                far = np.zeros((h, w), dtype=bool)
                far[: h // 8, : w // 8] = True
                write_mask(out / f"{stem}_cand1.png", far & ~mask)
                cands.append(f"{stem}_cand1.png")
            manifest["parts"][pi]["views"][str(v)] = {"maskGeo": f"{stem}_maskgeo.png", "uvGeo": f"{stem}_uv.pfm",
                                                      "normalsGeo": f"{stem}_normals.pfm",
                                                      "maskPhotoCandidates": cands}
        photo *= exposures[v]
        if cfg.noise > 0:
            photo = np.clip(photo + rng.normal(0.0, cfg.noise, photo.shape), 0.0, None)
        view = {"normals": f"views/v{v}_normals.pfm", "lighting": f"views/v{v}_lighting.pfm",
                "pose": _pose(v, cfg).tolist(), "exposure": 1.0}
        if cfg.photo_format == "png":
            write_png(out / f"views/v{v}_photo.png", linear_to_srgb(photo))
            view["photo"] = f"views/v{v}_photo.png"
        else:
            write_pfm(out / f"views/v{v}_photo.pfm", photo)
            view["photo"] = f"views/v{v}_photo.pfm"
        write_pfm(out / view["normals"], normals_inv)
        write_pfm(out / view["lighting"], truth_light.scaled(cfg.lighting_scale).to_tiled())
        if cfg.predictions:
            view["albedoPred"] = f"views/v{v}_albedo.pfm"
            view["roughnessPred"] = f"views/v{v}_roughness.pfm"
            write_pfm(out / view["albedoPred"], albedo_pred)
            write_pfm(out / view["roughnessPred"], rough_pred[..., 0])
        manifest["views"].append(view)
    write_manifest(out, manifest)
    truth = {
        "config": cfg.as_dict(),
        "parts": [{"id": s.part_id, "graphId": t.graph_id, "theta": th.tolist(), "phi": p.as_dict(),
                   "symmetry": t.symmetry} for s, t, th, p in drawn],
        "lights": light_ids,
        "lightCoefficients": coeffs.values.tolist(),
        "exposures": list(exposures),
        "rotationStep": cfg.phi_grid.rotation_step,
    }
    (out / GROUND_TRUTH).write_text(json.dumps(truth, indent=1, sort_keys=True))
    return truth


def _pose(v, cfg):
    pose = np.eye(4)
    pose[0, 3] = 1.5 * v
    return pose


def load_ground_truth(path):
    path = Path(path)
    return json.loads((path / GROUND_TRUTH if path.is_dir() else path).read_text())


def rotation_error(fitted, truth, symmetry):
    """Angle between two rotations modulo the pattern's symmetry period (0 = any)."""
    if symmetry <= 0:
        return 0.0
    d = (fitted - truth) % symmetry
    return float(min(d, symmetry - d))


def compare(truth, report):
    """Per-part recovery summary of a fit report against the ground truth."""
    fitted = {p["partId"]: p for p in report.get("parts", [])}
    step = truth["rotationStep"]
    parts = {}
    for gt in truth["parts"]:
        fp = fitted.get(gt["id"])
        if fp is None:
            parts[gt["id"]] = {"found": False}
            continue
        err = rotation_error(fp["phi"]["rotation"], gt["phi"]["rotation"], gt["symmetry"])
        parts[gt["id"]] = {"found": True, "graphCorrect": fp["graphId"] == gt["graphId"], "rotationError": err,
                           "rotationWithinStep": err <= step + 1e-9, "mode": fp["mode"]}
    out = {"parts": parts}
    coeffs = report.get("lightCoefficients")
    if coeffs is not None and report.get("lights") == truth["lights"]:
        gt_c = np.asarray(truth["lightCoefficients"])
        out["coefficientRelError"] = float(np.abs(np.asarray(coeffs) - gt_c).max() / np.abs(gt_c).max())
    return out


def truth_report(truth):
    """A report whose fitted values are the ground truth itself."""
    return {
        "parts": [{"partId": p["id"], "graphId": p["graphId"], "phi": p["phi"], "mode": "optimize",
                   "theta": p["theta"]} for p in truth["parts"]],
        "lights": truth["lights"],
        "lightCoefficients": truth["lightCoefficients"],
    }
