"""The fitting pipeline: alignment, per-part material optimization, global
lighting, material reoptimization; plus the median baselines and the shared
renderer used for every output image."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import ad
from .align import (
    GEO_MEDIAN_FALLBACK,
    MIN_VALID_PIXELS,
    OPTIMIZE,
    WEIGHT_THRESHOLD,
    AlignResult,
    WarpBoxes,
    align_part,
    part_statistics,
    photo_mask_for,
    select_view,
    warp_geo_to_photo,
    warp_photo_to_geo,
    weight_map,
)
from .bundle import FittedAssets, FittedPart, save_fitted_assets
from .errors import MissingPredictions, PhotosceneError, UnknownView
from .fit.baselines import BASELINE_ROUGHNESS, INV_RENDER_MEDIAN, PIXEL_MEDIAN, homogeneous_theta, median_material
from .fit.losses import LossWeights
from .fit.optimize import FitResult, MaterialOptConfig, optimize_material, reoptimize_material
from .fit.scene import PartScene, final_roughness, shade_textures
from .fit.selection import HOMOGENEOUS, GraphSelectionConfig, select_graph
from .imagefiles import tonemap, write_pfm, write_png
from .matgraph import eval_graph, get_template, list_collection
from .metrics import evaluate
from .relight import LightCoeffs, compose_global_lighting, refine_lighting
from .render import ShadingContext, UVTransformParams, uv_transform, view_directions

log = logging.getLogger(__name__)

STAGES = ("init_align", "material_opt", "lighting_opt", "material_reopt")


class StageError(PhotosceneError):
    """A pipeline failure tagged with the stage (and part) it happened in."""

    def __init__(self, stage, part, cause):
        self.stage, self.part, self.cause = stage, part, cause
        where = stage if part is None else f"{stage} [{part}]"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class PipelineConfig:
    loss_weights: LossWeights = LossWeights()
    material: MaterialOptConfig = MaterialOptConfig()
    selection: GraphSelectionConfig = GraphSelectionConfig()
    reopt_iterations: int = 100
    reopt_learning_rate: float = 0.02
    reopt_final_lr_fraction: float = 0.05
    lighting_rounds: int = 2
    env_shape: tuple = (8, 16)
    cell_size: int = 8
    texture_resolution: int = 256
    diffuse_only: bool = False
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.texture_resolution != self.selection.exemplar_resolution:
            raise ValueError("texture resolution and exemplar resolution must agree")
        if self.jobs < 1 or self.lighting_rounds < 0 or self.reopt_iterations < 0:
            raise ValueError("jobs must be positive; rounds and iterations nonnegative")

    def as_dict(self):
        return {
            "lossWeights": {"alpha": self.loss_weights.alpha, "beta": self.loss_weights.beta},
            "material": self.material.as_dict(),
            "selection": self.selection.as_dict(),
            "reopt": {"iterations": self.reopt_iterations, "learningRate": self.reopt_learning_rate,
                      "finalLrFraction": self.reopt_final_lr_fraction},
            "lightingRounds": self.lighting_rounds,
            "envShape": list(self.env_shape),
            "cellSize": self.cell_size,
            "textureResolution": self.texture_resolution,
            "diffuseOnly": self.diffuse_only,
            "seed": self.seed,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, d):
        base = cls()
        lw = d.get("lossWeights")
        reopt = d.get("reopt", {})
        return cls(
            loss_weights=LossWeights(float(lw["alpha"]), float(lw["beta"])) if lw else base.loss_weights,
            material=MaterialOptConfig.from_dict(d["material"]) if "material" in d else base.material,
            selection=GraphSelectionConfig.from_dict(d["selection"]) if "selection" in d else base.selection,
            reopt_iterations=int(reopt.get("iterations", base.reopt_iterations)),
            reopt_learning_rate=float(reopt.get("learningRate", base.reopt_learning_rate)),
            reopt_final_lr_fraction=float(reopt.get("finalLrFraction", base.reopt_final_lr_fraction)),
            lighting_rounds=int(d.get("lightingRounds", base.lighting_rounds)),
            env_shape=tuple(d.get("envShape", base.env_shape)),
            cell_size=int(d.get("cellSize", base.cell_size)),
            texture_resolution=int(d.get("textureResolution", base.texture_resolution)),
            diffuse_only=bool(d.get("diffuseOnly", base.diffuse_only)),
            seed=int(d.get("seed", base.seed)),
            jobs=int(d.get("jobs", base.jobs)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


# ---------------------------------------------------------------- rendering

@lru_cache(maxsize=64)
def _maps(graph_id, theta_bytes, roughness_mean, albedo_scale, roughness_scale, resolution):
    theta = np.frombuffer(theta_bytes, dtype=np.float64)
    albedo, normal, rough = eval_graph(get_template(graph_id), theta, resolution).arrays()
    rough = np.clip(final_roughness(rough, roughness_mean) * roughness_scale, 0.01, 1.0)
    out = (albedo * np.asarray(albedo_scale), normal, rough)
    for a in out:
        a.flags.writeable = False
    return out


def part_maps(part, resolution):
    """(albedo, normal, roughness) texture maps of a fitted part with its scales applied."""
    return _maps(part.graph_id, np.asarray(part.theta, dtype=np.float64).tobytes(),
                 None if part.roughness_mean is None else float(part.roughness_mean),
                 tuple(float(a) for a in part.albedo_scale), float(part.roughness_scale), resolution)


def alignment_record(res):
    return {"mode": res.mode, "validCount": int(res.valid_count), "iou": float(res.iou),
            "boxes": None if res.boxes is None else res.boxes.as_dict()}


def realign(part_view, normals_inv, record):
    """Rebuild an alignment from its stored record without re-running the search."""
    if record["boxes"] is None:
        mask = np.asarray(part_view.mask_geo, dtype=bool)
        return AlignResult(mask, np.where(mask[..., None], part_view.uv_geo, 0.0),
                           np.where(mask[..., None], part_view.normals_geo, 0.0),
                           mask.astype(np.float64), 0, GEO_MEDIAN_FALLBACK, None, 0.0)
    boxes = WarpBoxes.from_dict(record["boxes"])
    res = warp_geo_to_photo(part_view.uv_geo, part_view.mask_geo, photo_mask_for(part_view), boxes,
                            part_view.normals_geo)
    res.weight, res.valid_count, res.mode = weight_map(normals_inv, res.normals_geo, res.mask, True)
    return res


def shade_part(maps, align, lighting, view_dirs, phi, diffuse_only=False):
    """Compact rows (P, 3) of a part shaded on its aligned mask, exposure 1."""
    ys, xs = np.nonzero(align.mask)
    ctx = ShadingContext(lighting, view_dirs[ys, xs], (ys, xs), align.mask.shape, diffuse_only=diffuse_only)
    albedo, normal, rough = maps
    weights = ad.bilinear_weights(uv_transform(align.uv[ys, xs], phi), albedo.shape[0], albedo.shape[1])
    rows = shade_textures(ctx, weights, align.normals_geo[ys, xs], albedo, normal, rough)
    return (ys, xs), rows.numpy()


def view_lighting(bundle, assets, view):
    if assets.coeffs is None:
        return bundle.views[view].lighting_inv
    return compose_global_lighting(bundle.light_order(), LightCoeffs(assets.coeffs), view)


def view_exposure(bundle, assets, view):
    return float(assets.exposures[view]) if assets.exposures else bundle.views[view].exposure


def render_view(bundle, assets, view, resolution=None, diffuse_only=None):
    """Linear RGB render of every fitted part in ``view`` (zero elsewhere).

    Uses the assets' light coefficients and exposures when present, else the
    bundle's per-view lighting and exposure. This is the single code path for
    all pipeline, baseline and command-line renders.
    """
    if not 0 <= view < len(bundle.views):
        raise UnknownView(f"view {view} not in bundle with {len(bundle.views)} views")
    cfg = assets.report.get("config", {})
    resolution = resolution or int(cfg.get("textureResolution", 256))
    diffuse_only = bool(cfg.get("diffuseOnly", False)) if diffuse_only is None else diffuse_only
    v = bundle.views[view]
    h, w = v.shape
    dirs = view_directions(h, w, bundle.camera_fov)
    lighting = view_lighting(bundle, assets, view)
    image = np.zeros((h, w, 3))
    for fp in assets.parts:
        rec = fp.info.get("alignment", {}).get(str(view))
        record = bundle.part(fp.part_id)
        if rec is None or view not in record.per_view:
            continue
        align = realign(record.per_view[view], v.normals_inv, rec)
        if not align.mask.any():
            continue
        (ys, xs), rows = shade_part(part_maps(fp, resolution), align, lighting, dirs, fp.phi, diffuse_only)
        image[ys, xs] = rows
    return image * view_exposure(bundle, assets, view)


def write_image_pair(stem, image, exposure=1.0):
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_pfm(stem.with_suffix(".pfm"), image)
    write_png(stem.with_suffix(".png"), tonemap(image, exposure))


# ---------------------------------------------------------------- stage 1 and 2: per part

@dataclass
class PartOutcome:
    fitted: FittedPart
    aligns: dict = field(default_factory=dict)       # view -> AlignResult
    mask_photo: dict = field(default_factory=dict)   # view -> photo mask used for alignment
    fit: FitResult = None


def _view_stats(view, mask):
    if view.albedo_pred is not None and view.roughness_pred is not None:
        return part_statistics(view.albedo_pred, view.roughness_pred, mask)
    # no predictions: photo color statistics stand in for the albedo terms
    return part_statistics(np.clip(view.photo, 0.0, 1.0), np.zeros(view.shape), mask)


def choose_view(bundle, part):
    masks, stats, poses = {}, {}, {}
    for v, pv in sorted(part.per_view.items()):
        m = photo_mask_for(pv)
        if not m.any():
            continue
        masks[v] = m
        stats[v] = _view_stats(bundle.views[v], m)
        poses[v] = bundle.views[v].camera_pose
    return select_view(poses, masks, stats)


def median_part(bundle, part, view, align, source=PIXEL_MEDIAN):
    """Homogeneous material from medians: valid pixels when there are some,
    the geometry mask otherwise."""
    v = bundle.views[view]
    mask = align.valid if align.mode != GEO_MEDIAN_FALLBACK and align.valid_count > 0 else \
        np.asarray(part.per_view[view].mask_geo, dtype=bool)
    albedo, rough = median_material(mask, source, photo=v.photo, albedo_pred=v.albedo_pred,
                                    roughness_pred=v.roughness_pred)
    return homogeneous_theta(albedo, rough), albedo, rough


def part_scene(bundle, view, align, config, lighting=None, exposure=None):
    v = bundle.views[view]
    return PartScene(v.photo, align.mask, align.weighted_mask, align.uv, align.normals_geo,
                     v.lighting_inv if lighting is None else lighting,
                     view_directions(*v.shape, bundle.camera_fov),
                     exposure=v.exposure if exposure is None else exposure,
                     loss_weights=config.loss_weights, tex_res=config.texture_resolution,
                     diffuse_only=config.diffuse_only)


def fit_part(bundle, part_id, config):
    """Alignment, view choice and the first material fit of one part."""
    part = bundle.part(part_id)
    stage = STAGES[0]
    try:
        best_view, scores = choose_view(bundle, part)
        aligns, photo_masks = {}, {}
        for v, pv in sorted(part.per_view.items()):
            if not np.asarray(pv.mask_geo).any():
                continue
            aligns[v] = align_part(pv, bundle.views[v].normals_inv)
            photo_masks[v] = photo_mask_for(pv)
        align = aligns[best_view]
        info = {
            "selectedView": best_view,
            "viewScores": [{"view": s.view_index, "consensus": s.consensus, "coverage": s.coverage}
                           for s in scores],
            "alignment": {str(v): alignment_record(a) for v, a in aligns.items()},
            "validCount": int(align.valid_count),
            "stagesRun": [stage],
        }
        stage = STAGES[1]
        if align.mode != OPTIMIZE:
            theta, albedo, rough = median_part(bundle, part, best_view, align)
            info["median"] = {"albedo": [float(a) for a in albedo], "roughness": float(rough)}
            info["stagesRun"].append("median")
            fp = FittedPart(part_id, align.mode, HOMOGENEOUS, theta, UVTransformParams(), None,
                            view=best_view, info=info)
            return PartOutcome(fp, aligns, photo_masks)
        scene = part_scene(bundle, best_view, align, config)
        sel = select_graph(scene, list_collection(), config.selection, config.seed, config.material.phi_grid)
        template = get_template(sel.graph_id)
        fit = optimize_material(scene, template, config.material, sel.nearest(sel.graph_id).theta,
                                sel.phis[sel.graph_id])
        info["selection"] = {"graphId": sel.graph_id, "tally": dict(sorted(sel.tally.items())), "k": sel.k,
                             "nearest": [{"graphId": e.graph_id, "sample": e.sample, "distance": e.distance}
                                         for e in sel.ranking[:sel.k]]}
        info["materialLoss"] = {"initial": fit.loss_trace[0], "final": fit.final_loss,
                                "accepted": len(fit.loss_trace)}
        info["stagesRun"].append(stage)
        fp = FittedPart(part_id, OPTIMIZE, fit.graph_id, fit.theta, fit.phi, fit.roughness_mean,
                        view=best_view, info=info)
        return PartOutcome(fp, aligns, photo_masks, fit)
    except PhotosceneError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, part_id, exc) from exc


def _fit_part_job(args):
    return fit_part(*args)


# ---------------------------------------------------------------- stage 3: lighting

def per_light_renders(bundle, outcomes, view, config):
    """(S, H, W, 3) unit-intensity renders of all fitted parts, and the valid mask."""
    v = bundle.views[view]
    h, w = v.shape
    sources = bundle.light_order()
    dirs = view_directions(h, w, bundle.camera_fov)
    renders = np.zeros((len(sources), h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    for o in outcomes:
        align = o.aligns.get(view)
        if align is None or align.mode == GEO_MEDIAN_FALLBACK or not align.mask.any():
            continue
        maps = part_maps(o.fitted, config.texture_resolution)
        for s, light in enumerate(sources):
            (ys, xs), rows = shade_part(maps, align, light.per_view[view], dirs, o.fitted.phi, config.diffuse_only)
            renders[s, ys, xs] = rows
        valid |= align.valid
    return renders, valid


def solve_lighting(bundle, outcomes, config):
    sources = bundle.light_order()
    views, renders, photos, masks = [], [], [], []
    for view in range(len(bundle.views)):
        if not all(view in l.per_view for l in sources):
            continue
        r, m = per_light_renders(bundle, outcomes, view, config)
        if m.any():
            views.append(view)
            renders.append(r)
            photos.append(bundle.views[view].photo)
            masks.append(m)
    if not views:
        return None
    sol = refine_lighting(renders, photos, masks, config.lighting_rounds, anchor=0)
    exposures = [1.0] * len(bundle.views)
    for i, v in enumerate(views):
        exposures[v] = sol.exposures[i]
    return sol, views, exposures


# ---------------------------------------------------------------- stage 4: reoptimization

def reoptimize_part(bundle, outcome, coeffs, exposures, config):
    fp = outcome.fitted
    view = fp.view
    align = outcome.aligns[view]
    v = bundle.views[view]
    pv = bundle.part(fp.part_id).per_view[view]
    photo_g, mask_g = warp_photo_to_geo(v.photo, outcome.mask_photo[view], pv.mask_geo, align.boxes)
    normals_g, _ = warp_photo_to_geo(v.normals_inv, outcome.mask_photo[view], pv.mask_geo, align.boxes)
    weight = np.where(mask_g, np.clip(np.sum(normals_g * pv.normals_geo, axis=-1), 0.0, 1.0), 0.0)
    if not mask_g.any() or weight.sum() <= 0:
        return None
    lighting = compose_global_lighting(bundle.light_order(), coeffs, view)
    scene = PartScene(photo_g, mask_g, weight, pv.uv_geo, pv.normals_geo, lighting,
                      view_directions(*v.shape, bundle.camera_fov), exposure=exposures[view],
                      loss_weights=config.loss_weights, tex_res=config.texture_resolution,
                      diffuse_only=config.diffuse_only)
    return reoptimize_material(scene, get_template(fp.graph_id), outcome.fit, config.reopt_iterations,
                               config.reopt_learning_rate, config.reopt_final_lr_fraction, config.material.betas)


# ---------------------------------------------------------------- driver

def export_textures(part, resolution):
    albedo, normal, rough = part_maps(part, resolution)
    return np.clip(albedo, 0.0, 1.0), normal, rough


def _report_base(config, method):
    return {
        "method": method,
        "config": config.as_dict(),
        "constants": {"weightThreshold": WEIGHT_THRESHOLD, "minValidPixels": MIN_VALID_PIXELS,
                      "pixelMedianRoughness": BASELINE_ROUGHNESS},
    }


def part_masks(bundle, parts):
    """Photo-space region of each part in its view, used for the RMSE."""
    out = {}
    for fp in parts:
        pv = bundle.part(fp.part_id).per_view[fp.view]
        out[fp.part_id] = (fp.view, photo_mask_for(pv))
    return out


def _finish(bundle, assets, out, views):
    """Final renders, metrics and files shared by the pipeline and the baselines."""
    renders = {v: render_view(bundle, assets, v) for v in views}
    metrics = evaluate({v: bundle.views[v].photo for v in views}, renders,
                       part_masks(bundle, assets.parts), assets.report.get("method", ""))
    assets.report["metrics"] = metrics.as_dict()
    if out is not None:
        save_fitted_assets(bundle, assets, out)
        for v, img in renders.items():
            write_image_pair(Path(out) / "renders" / f"view{v}", img)
    return renders, metrics


def run_pipeline(bundle, config=PipelineConfig(), out=None):
    """All four stages on every part; writes assets, report and images to ``out``."""
    ids = [p.part_id for p in bundle.parts]
    jobs = [(bundle, pid, config) for pid in ids]
    if config.jobs > 1 and len(ids) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(_fit_part_job, jobs))
    else:
        outcomes = [fit_part(*j) for j in jobs]
    report = _report_base(config, "photoscene")
    report["stages"] = list(STAGES)
    views = sorted({o.fitted.view for o in outcomes})
    stage_images = {}

    def snapshot(name, assets):
        for v in views:
            stage_images[(name, v)] = render_view(bundle, assets, v, config.texture_resolution, config.diffuse_only)

    parts = [o.fitted for o in outcomes]
    assets = FittedAssets(parts, [l.light_id for l in bundle.light_order()], None, [], report)
    snapshot(STAGES[1], assets)

    try:
        solved = solve_lighting(bundle, outcomes, config)
    except PhotosceneError as exc:
        raise StageError(STAGES[2], None, exc) from exc
    if solved is None:
        coeffs = LightCoeffs.ones(len(bundle.light_order()))
        exposures = [v.exposure for v in bundle.views]
        report["lighting"] = {"solved": False, "residuals": [], "views": []}
    else:
        sol, used, exposures = solved
        coeffs = sol.coeffs
        report["lighting"] = {"solved": True, "residuals": list(sol.residuals), "views": used,
                              "rounds": config.lighting_rounds}
    assets.coeffs = np.array(coeffs.values)
    assets.exposures = [float(e) for e in exposures]
    snapshot(STAGES[2], assets)
    if solved is not None:
        for o in outcomes:
            if any(a.mode != GEO_MEDIAN_FALLBACK and a.valid_count for a in o.aligns.values()):
                o.fitted.info["stagesRun"].append(STAGES[2])

    for o in outcomes:
        if o.fit is None:
            continue
        try:
            re = reoptimize_part(bundle, o, coeffs, exposures, config)
        except PhotosceneError as exc:
            raise StageError(STAGES[3], o.fitted.part_id, exc) from exc
        if re is None:
            continue
        o.fitted.albedo_scale = re.albedo_scale
        o.fitted.roughness_scale = re.roughness_scale
        o.fitted.info["reoptLoss"] = {"initial": re.loss_trace[0], "final": re.final_loss}
        o.fitted.info["stagesRun"].append(STAGES[3])
    for o in outcomes:
        o.fitted.textures = export_textures(o.fitted, config.texture_resolution)
        o.fitted.info = _jsonable(o.fitted.info)
    assets.report = _jsonable(report)
    renders, metrics = _finish(bundle, assets, out, views)
    if out is not None:
        for (name, v), img in stage_images.items():
            write_image_pair(Path(out) / "stages" / f"{name}_view{v}", img)
        for v in views:
            write_image_pair(Path(out) / "stages" / f"photo_view{v}", bundle.views[v].photo)
    return assets, renders, metrics


def run_baseline(bundle, method=PIXEL_MEDIAN, config=PipelineConfig(), out=None):
    """Homogeneous median material per part, rendered under the bundle lighting."""
    if method not in (PIXEL_MEDIAN, INV_RENDER_MEDIAN):
        raise ValueError(f"unknown baseline {method!r}")
    if method == INV_RENDER_MEDIAN and any(v.albedo_pred is None or v.roughness_pred is None
                                           for v in bundle.views):
        raise MissingPredictions("invRenderMedian needs albedo and roughness predictions in every view")
    parts = []
    for part in bundle.parts:
        try:
            view, _ = choose_view(bundle, part)
            aligns = {v: align_part(pv, bundle.views[v].normals_inv) for v, pv in sorted(part.per_view.items())
                      if np.asarray(pv.mask_geo).any()}
            theta, albedo, rough = median_part(bundle, part, view, aligns[view], method)
        except PhotosceneError as exc:
            raise StageError("baseline", part.part_id, exc) from exc
        info = {"selectedView": view, "alignment": {str(v): alignment_record(a) for v, a in aligns.items()},
                "median": {"albedo": [float(a) for a in albedo], "roughness": float(rough)},
                "stagesRun": ["init_align", "baseline"]}
        fp = FittedPart(part.part_id, method, HOMOGENEOUS, theta, UVTransformParams(), None, view=view,
                        info=_jsonable(info))
        fp.textures = export_textures(fp, config.texture_resolution)
        parts.append(fp)
    report = _jsonable(_report_base(config, method))
    assets = FittedAssets(parts, [l.light_id for l in bundle.light_order()], None,
                          [v.exposure for v in bundle.views], report)
    views = sorted({p.view for p in parts})
    renders, metrics = _finish(bundle, assets, out, views)
    return assets, renders, metrics
