"""Material optimization: discrete UV search alternating with gradient descent
on graph parameters, and the homogeneous rescale used after relighting."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .. import ad
from ..errors import NonFiniteLoss
from ..matgraph import eval_graph
from ..render import UVTransformParams
from .scene import final_roughness

SCALE_BOUNDS = (0.25, 4.0)
ROUGHNESS_BOUNDS = (0.01, 1.0)


@dataclass(frozen=True)
class PhiGrid:
    rotations: int = 16
    log_scales: tuple = tuple(np.arange(-2.0, 2.01, 0.5).tolist())
    translations: tuple = (0.0, 0.25, 0.5, 0.75)

    def points(self):
        rots = [k * 2 * np.pi / self.rotations for k in range(self.rotations)]
        for r, s, tu, tv in itertools.product(rots, self.log_scales, self.translations, self.translations):
            yield UVTransformParams(r, s, (tu, tv))

    @property
    def rotation_step(self):
        return 2 * np.pi / self.rotations

    def as_dict(self):
        return {"rotations": self.rotations, "logScales": list(self.log_scales),
                "translations": list(self.translations)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["rotations"]), tuple(d["logScales"]), tuple(d["translations"]))


@dataclass(frozen=True)
class MaterialOptConfig:
    rounds: int = 3
    iterations: int = 200
    learning_rate: float = 0.02
    betas: tuple = (0.9, 0.999)
    phi_grid: PhiGrid = field(default_factory=PhiGrid)
    # coarse-to-fine UV search: subsampling stride (1 disables) and rescored candidates
    search_stride: int = 2
    search_top_k: int = 4

    def as_dict(self):
        return {"rounds": self.rounds, "iterations": self.iterations, "learningRate": self.learning_rate,
                "betas": list(self.betas), "phiGrid": self.phi_grid.as_dict(),
                "searchStride": self.search_stride, "searchTopK": self.search_top_k}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["rounds"]), int(d["iterations"]), float(d["learningRate"]), tuple(d["betas"]),
                   PhiGrid.from_dict(d["phiGrid"]), int(d.get("searchStride", 2)), int(d.get("searchTopK", 4)))


@dataclass
class FitResult:
    graph_id: str
    theta: np.ndarray
    phi: UVTransformParams
    roughness_mean: float
    loss_trace: list
    final_loss: float
    albedo_scale: tuple = (1.0, 1.0, 1.0)
    roughness_scale: float = 1.0


class Adam:
    """Adaptive-moment gradient descent with box projection after each step."""

    def __init__(self, x, lr=0.02, betas=(0.9, 0.999), eps=1e-8, lower=0.0, upper=1.0):
        self.x = np.array(x, dtype=np.float64)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.lower, self.upper = lower, upper
        self.m = np.zeros_like(self.x)
        self.v = np.zeros_like(self.x)
        self.t = 0

    def step(self, g, lr=None):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        self.x = np.clip(self.x - (self.lr if lr is None else lr) * mhat / (np.sqrt(vhat) + self.eps),
                         self.lower, self.upper)
        return self.x


def _check(value, state):
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss became {value}", state=state)
    return float(value)


class MaterialObjective:
    """Loss of a template on a part as a function of (theta, mean roughness)."""

    def __init__(self, scene, template):
        self.scene = scene
        self.template = template
        self.d = template.n_params

    def textures(self, theta):
        return eval_graph(self.template, theta, self.scene.tex_res)

    def value_and_grad(self, x, phi):
        with ad.Tape() as tape:
            xt = tape.watch(x)
            tex = self.textures(xt[:self.d])
            loss = self.scene.loss(self.scene.shade(tex.albedo, tex.normal, xt[self.d], phi))
        value = _check(loss.item(), {"x": np.array(x), "phi": phi.as_dict()})
        return value, tape.backward(loss)[xt]

    def value(self, x, phi, tex=None):
        tex = tex or self.textures(x[:self.d])
        loss = self.scene.loss(self.scene.shade(tex.albedo, tex.normal, x[self.d], phi))
        return _check(loss.item(), {"x": np.array(x), "phi": phi.as_dict()})


def search_phi(objective, x, phi, current, grid, coarse=None, top_k=4):
    """Best UV transform on the grid; the current one is kept unless beaten.

    With a ``coarse`` objective every grid point is scored on the subsampled
    part and only the ``top_k`` best are rescored at full resolution.
    """
    tex = objective.textures(x[:objective.d])
    points = list(grid.points())
    if coarse is not None:
        scores = [coarse.value(x, p, tex) for p in points]
        order = np.argsort(scores, kind="stable")[:top_k]
        points = [points[i] for i in sorted(order)]
    best_phi, best = phi, current
    for p in points:
        v = objective.value(x, p, tex)
        if v < best:
            best_phi, best = p, v
    return best_phi, best


def optimize_material(scene, template, config=MaterialOptConfig(), init_theta=None, init_phi=None):
    """Fit ``template`` to the part in ``scene``.

    The graph's roughness map is replaced by one optimized scalar during the
    fit; the trace records accepted iterates only, so it never increases.
    """
    obj = MaterialObjective(scene, template)
    coarse_scene = scene.coarse(config.search_stride) if config.search_stride > 1 else None
    coarse = MaterialObjective(coarse_scene, template) if coarse_scene is not None else None
    d = template.n_params
    theta = template.midpoint() if init_theta is None else np.asarray(init_theta, dtype=np.float64)
    rough0 = float(np.clip(obj.textures(theta).roughness.numpy().mean(), *ROUGHNESS_BOUNDS))
    x = np.concatenate([theta, [rough0]])
    phi = init_phi or UVTransformParams()
    best = obj.value(x, phi)
    trace = [best]
    lower = np.concatenate([np.zeros(d), [ROUGHNESS_BOUNDS[0]]])
    upper = np.concatenate([np.ones(d), [ROUGHNESS_BOUNDS[1]]])
    for _ in range(config.rounds):
        phi, v = search_phi(obj, x, phi, best, config.phi_grid, coarse, config.search_top_k)
        if v < best:
            best = v
            trace.append(best)
        if not config.iterations:
            continue
        opt = Adam(x, config.learning_rate, config.betas, lower=lower, upper=upper)
        best_x = x
        for _ in range(config.iterations):
            v, g = obj.value_and_grad(opt.x, phi)
            if v < best:
                best, best_x = v, opt.x.copy()
                trace.append(best)
            opt.step(g)
        v = obj.value(opt.x, phi)
        if v < best:
            best, best_x = v, opt.x.copy()
            trace.append(best)
        x = best_x
    return FitResult(template.graph_id, x[:d].copy(), phi, float(x[d]), trace, trace[-1])


def fitted_maps(template, fit, resolution):
    """(albedo, normal, roughness) arrays of a fit, roughness rescaled to its mean."""
    albedo, normal, rough = eval_graph(template, fit.theta, resolution).arrays()
    return albedo, normal, final_roughness(rough, fit.roughness_mean)


def reoptimize_material(scene, template, fit, iterations=100, learning_rate=0.02, final_lr_fraction=0.05,
                        betas=(0.9, 0.999)):
    """Optimize per-channel albedo scales and a roughness scale in [0.25, 4].

    The step size decays geometrically to ``final_lr_fraction`` of its start so
    the scales settle instead of orbiting the optimum.
    """
    albedo, normal, rough = fitted_maps(template, fit, scene.tex_res)
    albedo_t, normal_t = ad.constant(albedo), ad.constant(normal)
    rough_t = ad.constant(rough)

    def objective(s, tape=None):
        st = tape.watch(s) if tape is not None else ad.Tensor(s)
        r = ad.clamp(rough_t * st[3], ROUGHNESS_BOUNDS[0], ROUGHNESS_BOUNDS[1])
        loss = scene.loss(scene.shade(albedo_t, normal_t, r, fit.phi, albedo_scale=st[:3]))
        return loss, st

    s = np.concatenate([np.asarray(fit.albedo_scale, dtype=np.float64), [fit.roughness_scale]])
    opt = Adam(s, learning_rate, betas, lower=SCALE_BOUNDS[0], upper=SCALE_BOUNDS[1])
    best = _check(objective(s)[0].item(), {"scales": s.tolist()})
    best_s = s.copy()
    trace = [best]
    decay = final_lr_fraction ** (1.0 / max(iterations - 1, 1))
    for k in range(iterations):
        with ad.Tape() as tape:
            loss, st = objective(opt.x, tape)
        v = _check(loss.item(), {"scales": opt.x.tolist()})
        if v < best:
            best, best_s = v, opt.x.copy()
            trace.append(best)
        opt.step(tape.backward(loss)[st], lr=learning_rate * decay ** k)
    v = _check(objective(opt.x)[0].item(), {"scales": opt.x.tolist()})
    if v < best:
        best, best_s = v, opt.x.copy()
        trace.append(best)
    return FitResult(fit.graph_id, fit.theta, fit.phi, fit.roughness_mean, trace, best,
                     tuple(float(a) for a in best_s[:3]), float(best_s[3]))
