"""Scene bundles: the on-disk input format, its in-memory model, and the
fitted-asset outputs.

A bundle is a directory holding ``bundle.json`` plus image assets referenced by
relative path. Photos and masks are PNG; normals, UVs and lighting are PFM.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidManifest,
    IoFailure,
    MissingAsset,
    UnknownPart,
    UnknownView,
)
from .imagefiles import read_mask, read_pfm, read_photo, read_png, write_pfm, write_png
from .render import LightingGrid, UVTransformParams

MANIFEST = "bundle.json"
NORMAL_TOL = 1e-4
LIGHT_KINDS = ("area", "envWindow")


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ViewRecord:
    photo: np.ndarray            # (H, W, 3) linear RGB
    normals_inv: np.ndarray      # (H, W, 3) camera-space unit normals
    lighting_inv: LightingGrid
    camera_pose: np.ndarray      # (4, 4) camera-to-world
    exposure: float = 1.0
    albedo_pred: np.ndarray = None
    roughness_pred: np.ndarray = None

    @property
    def shape(self):
        return self.photo.shape[:2]


@dataclass(frozen=True)
class PartView:
    mask_geo: np.ndarray
    mask_photo_candidates: tuple
    uv_geo: np.ndarray           # (H, W, 2)
    normals_geo: np.ndarray      # (H, W, 3)


@dataclass(frozen=True)
class PartRecord:
    part_id: str
    per_view: dict               # view index -> PartView
    semantic_label: str = None

    def visible_views(self):
        return sorted(v for v, pv in self.per_view.items() if pv.mask_geo.any())


@dataclass(frozen=True)
class LightRecord:
    light_id: str
    kind: str
    per_view: dict               # view index -> LightingGrid
    position: tuple = None


@dataclass(frozen=True)
class SceneBundle:
    views: tuple
    parts: tuple
    lights: tuple
    camera_fov: float
    room_bounds_min: tuple
    room_bounds_max: tuple
    env_shape: tuple = (8, 16)
    root: str = None

    @property
    def image_shape(self):
        return self.views[0].shape

    def part(self, part_id):
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise UnknownPart(part_id)

    def view(self, index):
        if not 0 <= index < len(self.views):
            raise UnknownView(f"view {index} not in bundle with {len(self.views)} views")
        return self.views[index]

    def light_order(self):
        """Area lights first, the environment light last."""
        return sorted(self.lights, key=lambda l: (l.kind == "envWindow", l.light_id))


def validate_bundle(b):
    """Raise if ``b`` violates any type invariant; return it unchanged otherwise."""
    if not b.views or not b.parts:
        raise InvalidManifest("a bundle needs at least one view and one part")
    h, w = b.image_shape
    n_views = len(b.views)

    def same_shape(a, what):
        if a.shape[:2] != (h, w):
            raise DimensionMismatch(f"{what} is {a.shape[0]}x{a.shape[1]}, expected {h}x{w}")

    for i, v in enumerate(b.views):
        same_shape(v.photo, f"view {i} photo")
        same_shape(v.normals_inv, f"view {i} normals")
        if (v.photo < 0).any() or not np.isfinite(v.photo).all():
            raise InvalidManifest(f"view {i} photo has negative or non-finite values")
        if np.abs(np.linalg.norm(v.normals_inv, axis=-1) - 1).max() > NORMAL_TOL:
            raise InvalidManifest(f"view {i} normals are not unit length")
        if tuple(v.lighting_inv.env) != tuple(b.env_shape):
            raise InvalidManifest(f"view {i} lighting env {v.lighting_inv.env} != {b.env_shape}")
        if not v.exposure > 0:
            raise InvalidManifest(f"view {i} exposure must be positive")
        for name in ("albedo_pred", "roughness_pred"):
            pred = getattr(v, name)
            if pred is not None:
                same_shape(pred, f"view {i} {name}")
    ids = set()
    for p in b.parts:
        if p.part_id in ids:
            raise InvalidManifest(f"duplicate part id {p.part_id}")
        ids.add(p.part_id)
        for vi, pv in p.per_view.items():
            if not 0 <= vi < n_views:
                raise InvalidManifest(f"part {p.part_id} references missing view {vi}")
            for name in ("mask_geo", "uv_geo", "normals_geo"):
                same_shape(getattr(pv, name), f"part {p.part_id} view {vi} {name}")
            for c in pv.mask_photo_candidates:
                same_shape(c, f"part {p.part_id} view {vi} mask candidate")
            if not np.isfinite(pv.uv_geo[pv.mask_geo]).all():
                raise InvalidManifest(f"part {p.part_id} view {vi} has non-finite UVs inside its mask")
            n = np.linalg.norm(pv.normals_geo[pv.mask_geo], axis=-1)
            if n.size and np.abs(n - 1).max() > NORMAL_TOL:
                raise InvalidManifest(f"part {p.part_id} view {vi} geometric normals are not unit length")
        if not p.visible_views():
            raise InvalidManifest(f"part {p.part_id} has an empty geometry mask in every view")
    env_count = sum(l.kind == "envWindow" for l in b.lights)
    if env_count != 1:
        raise InvalidManifest(f"expected exactly one envWindow light, found {env_count}")
    for l in b.lights:
        if l.kind not in LIGHT_KINDS:
            raise InvalidManifest(f"light {l.light_id} has unknown kind {l.kind}")
        for vi, grid in l.per_view.items():
            if not 0 <= vi < n_views:
                raise InvalidManifest(f"light {l.light_id} references missing view {vi}")
            if grid.radiance.shape != b.views[vi].lighting_inv.radiance.shape:
                raise InvalidManifest(f"light {l.light_id} grid shape differs from view {vi} lighting")
    return b


# ---------------------------------------------------------------- loading

def _load_lighting(path, env_shape):
    try:
        return LightingGrid.from_tiled(read_pfm(path), *env_shape)
    except ValueError as exc:
        raise InvalidManifest(f"{path}: {exc}") from exc


def _load_uv(path):
    uv = read_pfm(path)
    if uv.ndim != 3:
        raise InvalidManifest(f"{path}: UV maps need at least two channels")
    return uv[..., :2]


def load_bundle(path):
    """Read and validate the bundle in directory ``path``."""
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise MissingAsset(str(manifest))
    try:
        m = json.loads(manifest.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InvalidManifest(f"{manifest}: {exc}") from exc
    try:
        return _build(root, m)
    except (KeyError, TypeError, IndexError) as exc:
        raise InvalidManifest(f"{manifest}: missing or malformed field {exc}") from exc


def _build(root, m):
    env_shape = (int(m["lighting"]["envH"]), int(m["lighting"]["envW"]))
    first = None
    views = []
    for i, v in enumerate(m["views"]):
        photo = read_photo(root / v["photo"])
        if first is None:
            first = photo.shape[:2]
        elif photo.shape[:2] != first:
            raise DimensionMismatch(f"view {i} photo is {photo.shape[:2]}, expected {first}")
        albedo_pred = roughness_pred = None
        if v.get("albedoPred"):
            albedo_pred = _frozen(read_pfm(root / v["albedoPred"]))
        if v.get("roughnessPred"):
            roughness_pred = _frozen(read_pfm(root / v["roughnessPred"]))
        views.append(ViewRecord(
            photo=_frozen(photo),
            normals_inv=_frozen(read_pfm(root / v["normals"])),
            lighting_inv=_load_lighting(root / v["lighting"], env_shape),
            camera_pose=_frozen(v.get("pose", np.eye(4))),
            exposure=float(v.get("exposure", 1.0)),
            albedo_pred=albedo_pred,
            roughness_pred=roughness_pred,
        ))
    parts = []
    for p in m["parts"]:
        per_view = {}
        for key, pv in p["views"].items():
            per_view[int(key)] = PartView(
                mask_geo=_frozen(read_mask(root / pv["maskGeo"]), bool),
                mask_photo_candidates=tuple(_frozen(read_mask(root / c), bool)
                                            for c in pv.get("maskPhotoCandidates", [])),
                uv_geo=_frozen(_load_uv(root / pv["uvGeo"])),
                normals_geo=_frozen(read_pfm(root / pv["normalsGeo"])),
            )
        parts.append(PartRecord(str(p["id"]), per_view, p.get("semantic")))
    lights = []
    for l in m["lights"]:
        grids = {int(k): _load_lighting(root / f, env_shape) for k, f in l["views"].items()}
        pos = tuple(l["position"]) if l.get("position") is not None else None
        lights.append(LightRecord(str(l["id"]), l["kind"], grids, pos))
    rb = m["roomBounds"]
    b = SceneBundle(tuple(views), tuple(parts), tuple(lights), float(m["cameraFov"]),
                    tuple(map(float, rb["min"])), tuple(map(float, rb["max"])), env_shape, str(root))
    return validate_bundle(b)


def write_manifest(path, manifest):
    Path(path).mkdir(parents=True, exist_ok=True)
    with open(Path(path) / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def write_uv(path, uv):
    uv = np.asarray(uv)
    write_pfm(path, np.concatenate([uv, np.zeros(uv.shape[:2] + (1,))], axis=-1))


# ---------------------------------------------------------------- fitted assets

@dataclass
class FittedPart:
    """Final material of one part. Homogeneous results use the homogeneous
    template so every part renders through the same code path."""

    part_id: str
    mode: str
    graph_id: str
    theta: np.ndarray
    phi: UVTransformParams = field(default_factory=UVTransformParams)
    roughness_mean: float = None
    albedo_scale: tuple = (1.0, 1.0, 1.0)
    roughness_scale: float = 1.0
    view: int = 0
    textures: tuple = None       # (albedo, normal, roughness) arrays, for export only
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "partId": self.part_id,
            "mode": self.mode,
            "graphId": self.graph_id,
            "theta": [float(x) for x in self.theta],
            "phi": self.phi.as_dict(),
            "roughnessMean": None if self.roughness_mean is None else float(self.roughness_mean),
            "albedoScale": [float(x) for x in self.albedo_scale],
            "roughnessScale": float(self.roughness_scale),
            "view": int(self.view),
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["partId"], d["mode"], d["graphId"], np.asarray(d["theta"], dtype=np.float64),
                   UVTransformParams.from_dict(d["phi"]), d.get("roughnessMean"),
                   tuple(d.get("albedoScale", (1.0, 1.0, 1.0))), float(d.get("roughnessScale", 1.0)),
                   int(d.get("view", 0)), None, d.get("info", {}))


@dataclass
class FittedAssets:
    parts: list
    light_ids: list = field(default_factory=list)
    coeffs: np.ndarray = None    # (N+1, 3)
    exposures: list = field(default_factory=list)
    report: dict = field(default_factory=dict)

    def part(self, part_id):
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise UnknownPart(part_id)


REPORT = "report.json"


def save_fitted_assets(bundle, assets, path):
    out = Path(path)
    known = {p.part_id for p in bundle.parts}
    for p in assets.parts:
        if p.part_id not in known:
            raise UnknownPart(p.part_id)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for p in assets.parts:
            if p.textures is None:
                continue
            pdir = out / "parts" / p.part_id
            pdir.mkdir(parents=True, exist_ok=True)
            albedo, normal, rough = p.textures
            write_png(pdir / "albedo.png", albedo, bits=16)
            write_png(pdir / "roughness.png", rough, bits=16)
            write_pfm(pdir / "normal.pfm", normal)
        coeffs = None if assets.coeffs is None else np.asarray(assets.coeffs).tolist()
        report = dict(assets.report)
        report.update({
            "parts": [p.to_dict() for p in assets.parts],
            "lights": list(assets.light_ids),
            "lightCoefficients": coeffs,
            "exposures": [float(e) for e in assets.exposures],
        })
        with open(out / REPORT, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        with open(out / "light_coefficients.json", "w") as fh:
            json.dump({"lights": list(assets.light_ids), "rgb": coeffs}, fh, indent=1)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_fitted_assets(path):
    root = Path(path)
    if not (root / REPORT).exists():
        raise MissingAsset(str(root / REPORT))
    report = json.loads((root / REPORT).read_text())
    parts = []
    for d in report.get("parts", []):
        p = FittedPart.from_dict(d)
        pdir = root / "parts" / p.part_id
        if (pdir / "albedo.png").exists():
            rough = read_png(pdir / "roughness.png")
            p.textures = (read_png(pdir / "albedo.png"), read_pfm(pdir / "normal.pfm").astype(np.float64),
                          rough[..., None] if rough.ndim == 2 else rough)
        parts.append(p)
    coeffs = report.get("lightCoefficients")
    return FittedAssets(parts, list(report.get("lights", [])),
                        None if coeffs is None else np.asarray(coeffs, dtype=np.float64),
                        list(report.get("exposures", [])), report)
