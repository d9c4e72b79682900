"""kNN graph selection: render random exemplars of every template through a
part's render inputs and let the nearest ones vote."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..matgraph import eval_graph, get_template, list_collection, sample_random_params
from ..render import UVTransformParams
from .optimize import PhiGrid

HOMOGENEOUS = "homogeneous"


@dataclass(frozen=True)
class GraphSelectionConfig:
    samples_per_graph: int = 10
    k: int = 21
    exemplar_resolution: int = 256
    # render each template's exemplars in the UV transform that best aligns its
    # midpoint material with the photo; False renders them untransformed
    align_exemplars: bool = True
    align_stride: int = 4

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError("k must be a positive odd number")
        if self.samples_per_graph < 1:
            raise ValueError("samples_per_graph must be positive")

    def as_dict(self):
        return {"samplesPerGraph": self.samples_per_graph, "k": self.k,
                "exemplarResolution": self.exemplar_resolution, "alignExemplars": self.align_exemplars,
                "alignStride": self.align_stride}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["samplesPerGraph"]), int(d["k"]), int(d["exemplarResolution"]),
                   bool(d.get("alignExemplars", True)), int(d.get("alignStride", 4)))


@dataclass(frozen=True)
class Exemplar:
    graph_id: str
    sample: int
    theta: np.ndarray
    distance: float


@dataclass
class SelectionResult:
    graph_id: str
    ranking: list        # exemplars sorted by distance
    tally: dict          # graph id -> votes among the k nearest
    k: int
    phis: dict = None    # graph id -> UV transform its exemplars were rendered with

    def nearest(self, graph_id):
        """Closest exemplar of ``graph_id``, a natural starting point for fitting."""
        return next(e for e in self.ranking if e.graph_id == graph_id)

    def as_dict(self):
        return {
            "graphId": self.graph_id,
            "k": self.k,
            "tally": dict(sorted(self.tally.items())),
            "phi": {g: p.as_dict() for g, p in sorted((self.phis or {}).items())},
            "ranking": [{"graphId": e.graph_id, "sample": e.sample, "distance": e.distance,
                         "theta": [float(t) for t in e.theta]} for e in self.ranking],
        }


def exemplar_seed(seed, graph_index, sample):
    return int(np.random.SeedSequence([seed, graph_index, sample]).generate_state(1)[0])


@lru_cache(maxsize=256)
def _exemplar_maps(graph_id, theta_bytes, resolution):
    template = get_template(graph_id)
    theta = np.frombuffer(theta_bytes, dtype=np.float64)
    return tuple(a for a in eval_graph(template, theta, resolution).arrays())


def exemplar_params(collection, config, seed=0):
    """(graph id, sample index, theta) for every exemplar, in collection order."""
    out = []
    for gi, t in enumerate(collection):
        for s in range(config.samples_per_graph):
            out.append((t.graph_id, s, sample_random_params(t, exemplar_seed(seed, gi, s))))
    return out


def render_exemplar(scene, graph_id, theta, resolution, phi=UVTransformParams()):
    if scene.tex_res != resolution:
        raise ValueError("exemplar resolution must equal the scene texture resolution")
    albedo, normal, rough = _exemplar_maps(graph_id, np.asarray(theta, dtype=np.float64).tobytes(), resolution)
    return scene.shade(albedo, normal, rough, phi)


def align_template(scene, template, resolution, grid=PhiGrid()):
    """UV transform on ``grid`` minimizing the feature distance of the template's
    midpoint material; first grid point wins ties."""
    if template.symmetry == 0:
        return UVTransformParams()
    theta = template.midpoint()
    best, best_phi = np.inf, UVTransformParams()
    for phi in grid.points():
        d = float(scene.feature_distance(render_exemplar(scene, template.graph_id, theta, resolution, phi)).item())
        if d < best:
            best, best_phi = d, phi
    return best_phi


def rank_exemplars(scene, collection=None, config=GraphSelectionConfig(), seed=0, grid=PhiGrid()):
    """Exemplars sorted by feature distance, and the UV transform used per graph."""
    collection = list_collection() if collection is None else list(collection)
    phis = {t.graph_id: UVTransformParams() for t in collection}
    if config.align_exemplars:
        coarse = scene.coarse(config.align_stride) if config.align_stride > 1 else scene
        coarse = coarse or scene
        phis = {t.graph_id: align_template(coarse, t, config.exemplar_resolution, grid) for t in collection}
    out = []
    for graph_id, s, theta in exemplar_params(collection, config, seed):
        rows = render_exemplar(scene, graph_id, theta, config.exemplar_resolution, phis[graph_id])
        out.append(Exemplar(graph_id, s, theta, float(scene.feature_distance(rows).item())))
    order = sorted(range(len(out)), key=lambda i: (out[i].distance, i))
    return [out[i] for i in order], phis


def vote(ranking, k):
    """Winner among the ``k`` nearest exemplars: most votes, then smaller mean distance."""
    k = min(k, len(ranking))
    nearest = ranking[:k]
    tally = Counter(e.graph_id for e in nearest)
    mean_dist = {g: np.mean([e.distance for e in nearest if e.graph_id == g]) for g in tally}
    winner = min(tally, key=lambda g: (-tally[g], mean_dist[g], g))
    return winner, dict(tally), k


def select_graph(scene, collection=None, config=GraphSelectionConfig(), seed=0, grid=PhiGrid()):
    """Pick the template whose exemplars sit nearest the photo in feature space.

    ``scene`` is a :class:`PartScene` whose texture resolution matches
    ``config.exemplar_resolution``. When the collection holds fewer than ``k``
    exemplars every exemplar votes.
    """
    ranking, phis = rank_exemplars(scene, collection, config, seed, grid)
    winner, tally, k = vote(ranking, config.k)
    return SelectionResult(winner, ranking, tally, k, phis)
