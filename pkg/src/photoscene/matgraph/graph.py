"""Graph templates, parameter vectors and graph evaluation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .. import ad
from ..errors import ParamLengthMismatch, UnsupportedResolution
from . import nodes

N_OFFSET = 3
OFFSET_RANGE = 0.25
MIN_RES, MAX_RES = 64, 2048
# normal strength is specified for 256-texel maps; rescaled so other
# resolutions see the same slopes per unit of UV
REFERENCE_RES = 256


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    attrs: dict
    inputs: tuple = ()


@dataclass(frozen=True)
class ParamSpec:
    name: str
    node: str
    slot: str
    lower: float
    upper: float


@dataclass(frozen=True)
class GraphTemplate:
    graph_id: str
    nodes: tuple
    params: tuple
    outputs: dict
    normal_strength: float = 1.0
    symmetry: float = 2 * np.pi
    description: str = ""

    @property
    def n_params(self):
        """Length of a parameter vector, albedo offset included."""
        return len(self.params) + N_OFFSET

    def midpoint(self):
        return np.full(self.n_params, 0.5)

    @classmethod
    def from_dict(cls, d):
        node_list = tuple(NodeSpec(n["id"], n["kind"], dict(n.get("attrs", {})), tuple(n.get("inputs", ())))
                          for n in d["nodes"])
        params = tuple(ParamSpec(p["name"], p["node"], p["slot"], float(p["lower"]), float(p["upper"]))
                       for p in d.get("params", []))
        t = cls(d["graphId"], node_list, params, dict(d["outputs"]),
                float(d.get("normalStrength", 1.0)), float(d.get("symmetry", 2 * np.pi)),
                d.get("description", ""))
        t.validate()
        return t

    def validate(self):
        seen = set()
        for n in self.nodes:
            if n.kind in nodes.GENERATORS:
                if n.inputs:
                    raise ValueError(f"{self.graph_id}: generator {n.id} cannot have inputs")
            elif n.kind in nodes.FILTERS:
                if not n.inputs:
                    raise ValueError(f"{self.graph_id}: filter {n.id} needs an input")
            else:
                raise ValueError(f"{self.graph_id}: unknown node kind {n.kind}")
            for i in n.inputs:
                if i not in seen:
                    raise ValueError(f"{self.graph_id}: node {n.id} input {i} is not an earlier node")
            if n.id in seen:
                raise ValueError(f"{self.graph_id}: duplicate node id {n.id}")
            seen.add(n.id)
        for p in self.params:
            if p.node not in seen:
                raise ValueError(f"{self.graph_id}: parameter {p.name} targets unknown node {p.node}")
            if not p.lower < p.upper:
                raise ValueError(f"{self.graph_id}: parameter {p.name} has empty range")
        if set(self.outputs) != {"albedo", "roughness", "height"}:
            raise ValueError(f"{self.graph_id}: outputs must be exactly albedo, roughness and height")
        for ref in self.outputs.values():
            if ref not in seen:
                raise ValueError(f"{self.graph_id}: output references unknown node {ref}")


@dataclass
class TextureSet:
    """Tileable maps: albedo (R, R, 3), tangent normals (R, R, 3), roughness (R, R, 1)."""

    albedo: ad.Tensor
    normal: ad.Tensor
    roughness: ad.Tensor

    @property
    def resolution(self):
        return self.albedo.shape[0]

    def arrays(self):
        return self.albedo.numpy(), self.normal.numpy(), self.roughness.numpy()


def normal_from_height(height, strength):
    """Tangent-space normals from a height map, in texel units with wrap-around
    central differences."""
    h = ad.as_tensor(height)
    if h.ndim == 2:
        h = ad.reshape(h, h.shape + (1,))
    dx = (ad.roll(h, -1, axis=1) - ad.roll(h, 1, axis=1)) * 0.5
    dy = (ad.roll(h, -1, axis=0) - ad.roll(h, 1, axis=0)) * 0.5
    ones = ad.constant(np.ones(h.shape))
    return ad.normalize3(ad.concat([dx * -strength, dy * -strength, ones], axis=2))


@lru_cache(maxsize=256)
def _generator_output(kind, attrs_json, res):
    out = nodes.GENERATOR_FUNCS[kind](res, **json.loads(attrs_json))
    out.flags.writeable = False
    return out


def _check_resolution(res):
    if not (MIN_RES <= res <= MAX_RES) or res & (res - 1):
        raise UnsupportedResolution(f"resolution {res} is not a power of two in [{MIN_RES}, {MAX_RES}]")


def eval_graph(template, theta, resolution=256):
    """Evaluate ``template`` at normalized parameters ``theta`` (array or tensor)."""
    _check_resolution(resolution)
    theta = ad.as_tensor(theta)
    if theta.shape != (template.n_params,):
        raise ParamLengthMismatch(f"{template.graph_id} expects {template.n_params} parameters, got {theta.shape}")

    slots = {}
    for k, p in enumerate(template.params):
        slots.setdefault(p.node, {})[p.slot] = theta[k] * (p.upper - p.lower) + p.lower

    values = {}
    for n in template.nodes:
        if n.kind in nodes.GENERATORS:
            arr = _generator_output(n.kind, json.dumps(n.attrs, sort_keys=True), resolution)
            values[n.id] = ad.Tensor(arr, check=False)
            continue
        args = [values[i] for i in n.inputs]
        s = slots.get(n.id, {})
        if n.kind == "colorizeRamp":
            colors = []
            for i, fixed in enumerate(n.attrs["colors"]):
                chans = [s.get(f"color{i}.{c}", fixed[j]) for j, c in enumerate("rgb")]
                colors.append(ad.stack([ad.as_tensor(c) for c in chans], axis=0))
            values[n.id] = nodes.colorize_ramp(args[0], n.attrs["positions"], colors)
            continue
        kw = dict(nodes.SLOT_DEFAULTS[n.kind])
        kw.update({k: v for k, v in n.attrs.items() if k in kw})
        kw.update(s)
        if n.kind == "levels":
            values[n.id] = nodes.levels(args[0], **kw)
        elif n.kind == "blend":
            mask = args[2] if len(args) > 2 else None
            values[n.id] = nodes.blend(args[0], args[1], mask, mode=n.attrs.get("mode", "mix"), **kw)
        elif n.kind == "hsvAdjust":
            values[n.id] = nodes.hsv_adjust(args[0], **kw)
        elif n.kind == "scalarRemap":
            values[n.id] = nodes.scalar_remap(args[0], **kw)
        elif n.kind == "tile":
            values[n.id] = nodes.tile(args[0], n.attrs.get("countU", 2), n.attrs.get("countV", 2))
        elif n.kind == "invert":
            values[n.id] = nodes.invert(args[0])

    albedo = values[template.outputs["albedo"]]
    if albedo.shape[2] == 1:
        albedo = ad.concat([albedo, albedo, albedo], axis=2)
    offset = ad.reshape((theta[len(template.params):] - 0.5) * (2 * OFFSET_RANGE), (1, 1, 3))
    albedo = ad.clamp(albedo + offset, 0.0, 1.0)

    rough = values[template.outputs["roughness"]]
    if rough.shape[2] != 1:
        rough = ad.mean(rough, axis=2, keepdims=True)
    rough = ad.clamp(rough, 0.01, 1.0)

    height = values[template.outputs["height"]]
    if height.shape[2] != 1:
        height = ad.mean(height, axis=2, keepdims=True)
    normal = normal_from_height(height, template.normal_strength * resolution / REFERENCE_RES)
    return TextureSet(albedo, normal, rough)


def sample_random_params(template, seed):
    return np.random.default_rng(seed).random(template.n_params)


def load_template(path):
    with open(path) as fh:
        return GraphTemplate.from_dict(json.load(fh))


@lru_cache(maxsize=1)
def _collection():
    root = resources.files(__package__) / "collection"
    out = []
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            out.append(GraphTemplate.from_dict(json.loads(entry.read_text())))
    return tuple(out)


def list_collection():
    return list(_collection())


def get_template(graph_id):
    for t in _collection():
        if t.graph_id == graph_id:
            return t
    raise KeyError(graph_id)
