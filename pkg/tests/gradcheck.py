"""Finite-difference gradient checks shared by the unit and acceptance suites."""
import numpy as np

from photoscene import ad
from photoscene.fit.losses import LossWeights
from photoscene.fit.scene import PartScene
from photoscene.matgraph import eval_graph
from photoscene.render import LightingGrid, ShadingContext, UVTransformParams, hemisphere_directions, view_directions

EPS = 1e-6
KINK_MARGIN = 1e-4


def _away(rng, shape, lo=0.3, hi=2.0):
    """Positive values bounded away from zero."""
    return rng.uniform(lo, hi, shape)


def _pool_input(rng):
    return [rng.standard_normal((8, 12, 2))]


# name -> (inputs(rng), fn(*tensors))
PRIMITIVES = {
    "add": (lambda r: [r.standard_normal((4, 3)), r.standard_normal((1, 3))], lambda a, b: ad.add(a, b)),
    "sub": (lambda r: [r.standard_normal((4, 3)), r.standard_normal((4, 1))], lambda a, b: ad.sub(a, b)),
    "neg": (lambda r: [r.standard_normal(5)], lambda a: ad.neg(a)),
    "mul": (lambda r: [r.standard_normal((4, 3)), r.standard_normal(3)], lambda a, b: ad.mul(a, b)),
    "div": (lambda r: [r.standard_normal((4, 3)), _away(r, (4, 3))], lambda a, b: ad.div(a, b)),
    "pow_int": (lambda r: [r.standard_normal(6)], lambda a: ad.pow(a, 3)),
    "pow_frac": (lambda r: [_away(r, 6)], lambda a: ad.pow(a, 0.7)),
    "pow_tensor": (lambda r: [_away(r, 6), r.uniform(0.2, 2.0, 6)], lambda a, p: ad.pow(a, p)),
    "exp": (lambda r: [r.standard_normal(6)], lambda a: ad.exp(a)),
    "log": (lambda r: [_away(r, 6)], lambda a: ad.log(a)),
    "sqrt": (lambda r: [_away(r, 6)], lambda a: ad.sqrt(a)),
    "sin": (lambda r: [r.standard_normal(6)], lambda a: ad.sin(a)),
    "cos": (lambda r: [r.standard_normal(6)], lambda a: ad.cos(a)),
    "abs": (lambda r: [r.standard_normal(6)], lambda a: ad.abs(a)),
    "minimum": (lambda r: [r.standard_normal(6), r.standard_normal(6)], lambda a, b: ad.minimum(a, b)),
    "maximum": (lambda r: [r.standard_normal(6), r.standard_normal(6)], lambda a, b: ad.maximum(a, b)),
    "clamp": (lambda r: [r.standard_normal(8)], lambda a: ad.clamp(a, -0.5, 0.5)),
    "lerp": (lambda r: [r.standard_normal(4), r.standard_normal(4), r.uniform(size=4)],
             lambda a, b, t: ad.lerp(a, b, t)),
    "where": (lambda r: [r.standard_normal(6), r.standard_normal(6)],
              lambda a, b: ad.where(np.array([1, 0, 1, 1, 0, 0], dtype=bool), a, b)),
    "sum_axis": (lambda r: [r.standard_normal((3, 4, 2))], lambda a: ad.sum(a, axis=1)),
    "mean_keepdims": (lambda r: [r.standard_normal((3, 4))], lambda a: ad.mean(a, axis=0, keepdims=True)),
    "reshape": (lambda r: [r.standard_normal((3, 4))], lambda a: ad.reshape(a, (2, 6))),
    "transpose": (lambda r: [r.standard_normal((2, 3, 4))], lambda a: ad.transpose(a, (2, 0, 1))),
    "getitem": (lambda r: [r.standard_normal((5, 3))], lambda a: a[1:4, ::2]),
    "take": (lambda r: [r.standard_normal((5, 3))], lambda a: ad.take(a, [4, 0, 0, 2], axis=0)),
    "roll": (lambda r: [r.standard_normal((5, 3))], lambda a: ad.roll(a, 2, axis=0)),
    "stack": (lambda r: [r.standard_normal(4), r.standard_normal(4)], lambda a, b: ad.stack([a, b], axis=0)),
    "concat": (lambda r: [r.standard_normal((2, 3)), r.standard_normal((2, 1))],
               lambda a, b: ad.concat([a, b], axis=1)),
    "broadcast_to": (lambda r: [r.standard_normal((1, 3))], lambda a: ad.broadcast_to(a, (4, 3))),
    "scatter_rows": (lambda r: [r.standard_normal((3, 2))], lambda a: ad.scatter_rows(a, np.array([4, 0, 2]), 6)),
    "matmul": (lambda r: [r.standard_normal((4, 3)), r.standard_normal((3, 2))], lambda a, b: ad.matmul(a, b)),
    "matmul_batched": (lambda r: [r.standard_normal((2, 1, 3)), r.standard_normal((2, 3, 2))],
                       lambda a, b: ad.matmul(a, b)),
    "dot3": (lambda r: [r.standard_normal((5, 3)), r.standard_normal((5, 3))], lambda a, b: ad.dot3(a, b)),
    "normalize3": (lambda r: [r.standard_normal((5, 3))], lambda a: ad.normalize3(a)),
    "reduce_mean_masked": (lambda r: [r.standard_normal((6, 3))],
                           lambda a: ad.reduce_mean_masked(a, np.array([1, 0.5, 0, 1, 0.2, 1]))),
    "reduce_var_masked": (lambda r: [r.standard_normal((6, 3))],
                          lambda a: ad.reduce_var_masked(a, np.array([1, 0.5, 0, 1, 0.2, 1]))),
    "bilinear_sample": (lambda r: [r.standard_normal((4, 5, 2))],
                        lambda t: ad.bilinear_sample(t, np.array([[0.1, 0.3], [0.95, 0.02], [0.5, 0.77]]))),
    "conv2d_fixed": (lambda r: [r.standard_normal((6, 7, 2))],
                     lambda x: ad.conv2d_fixed(x, np.random.default_rng(5).standard_normal((3, 3, 2, 4)))),
    "upsample_bilinear": (lambda r: [r.standard_normal((3, 4, 2))], lambda x: ad.upsample_bilinear(x, (7, 9))),
    "avg_pool": (_pool_input, lambda x: ad.avg_pool(x, 2)),
}


def primitive_error(name, rng):
    """Max relative error between tape and central-difference gradients of one
    primitive at one random point, over all of its inputs."""
    make, fn = PRIMITIVES[name]
    inputs = make(rng)
    out = fn(*[ad.Tensor(x) for x in inputs])
    w = rng.standard_normal(out.shape)

    def scalar(*xs):
        return ad.sum(fn(*xs) * w)

    _, grads = ad.grad(scalar, *inputs)
    worst = 0.0
    for k, x in enumerate(inputs):
        num = np.zeros_like(x)
        flat = num.reshape(-1)
        for i in range(x.size):
            xp = [np.array(v, dtype=np.float64) for v in inputs]
            xm = [np.array(v, dtype=np.float64) for v in inputs]
            xp[k].reshape(-1)[i] += EPS
            xm[k].reshape(-1)[i] -= EPS
            flat[i] = (scalar(*[ad.Tensor(v) for v in xp]).item()
                       - scalar(*[ad.Tensor(v) for v in xm]).item()) / (2 * EPS)
        scale = max(np.abs(num).max(), np.abs(grads[k]).max(), 1e-8)
        worst = max(worst, float(np.abs(grads[k] - num).max() / scale))
    return worst


def _directional(fn, x, d, eps):
    _, (g,) = ad.grad(fn, x)
    analytic = float(np.sum(g * d))
    numeric = (fn(ad.Tensor(x + eps * d)).item() - fn(ad.Tensor(x - eps * d)).item()) / (2 * eps)
    return analytic, numeric


def _rel(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def template_error(template, rng, resolution=64, eps=1e-7):
    """Relative error of the directional derivative of a random linear readout
    of all three maps, at a random interior parameter point.

    Clamps and fractional powers put kinks and steep curvature inside the
    graphs, so the step is small; double precision keeps round-off far below
    the tolerance at this step."""
    theta = rng.uniform(0.05, 0.95, template.n_params)
    wa = rng.standard_normal((resolution, resolution, 3))
    wn = rng.standard_normal((resolution, resolution, 3))
    wr = rng.standard_normal((resolution, resolution, 1))

    def readout(t):
        tex = eval_graph(template, t, resolution)
        return ad.sum(tex.albedo * wa) + ad.sum(tex.normal * wn) + ad.sum(tex.roughness * wr)

    d = rng.standard_normal(template.n_params)
    return _rel(*_directional(readout, theta, d, eps))


def lighting_grid(rng, cells=(4, 4), env=(4, 8)):
    return LightingGrid(rng.uniform(0.1, 2.0, cells + env + (3,)))


def render_error(rng, size=(128, 128), n=400, eps=1e-6):
    """Max-norm relative error of per-pixel directional derivatives of the render
    layer with respect to albedo, normals and roughness jointly, on ``n`` random
    pixels of an image. Pixels shade independently, so one backward pass of the
    weighted sum yields every pixel's derivative."""
    h, w = size
    ys = rng.integers(0, h, n)
    xs = rng.integers(0, w, n)
    view = view_directions(h, w, np.deg2rad(60.0))[ys, xs]
    ctx = ShadingContext(lighting_grid(rng), view, (ys, xs), size)
    base = np.concatenate([
        rng.uniform(0.1, 0.9, (n, 3)),
        rng.standard_normal((n, 3)) * 0.3 + [0.0, 0.0, 1.0],
        rng.uniform(0.2, 0.9, (n, 1)),
    ], axis=1)
    wts = rng.standard_normal((n, 3))

    def per_pixel(x):
        normals = ad.normalize3(x[:, 3:6])
        return ad.sum(ctx.shade(x[:, 0:3], normals, x[:, 6:7]) * wts, axis=1)

    d = rng.standard_normal(base.shape)
    _, (g,) = ad.grad(lambda x: ad.sum(per_pixel(x)), base)
    analytic = (g * d).sum(axis=1)
    numeric = (per_pixel(ad.Tensor(base + eps * d)).numpy() - per_pixel(ad.Tensor(base - eps * d)).numpy()) / (2 * eps)
    # the cosine clamps have kinks at n.l = 0 and n.v = 0; a stencil that straddles
    # one measures neither one-sided derivative, so such pixels are not sample points
    n_hat = base[:, 3:6] / np.linalg.norm(base[:, 3:6], axis=1, keepdims=True)
    dirs, _ = hemisphere_directions(*ctx.lighting.env)
    margin = np.minimum(np.abs(n_hat @ dirs.T).min(axis=1), np.abs((n_hat * view).sum(axis=1)))
    keep = margin > KINK_MARGIN
    a, num = analytic[keep], numeric[keep]
    return float(np.abs(a - num).max() / max(np.abs(num).max(), np.abs(a).max(), 1e-8))


def total_loss_scene(rng, template, size=128, tex_res=128):
    """A synthetic photo of ``template`` at random parameters and a scene to fit it."""
    h = w = size
    mask = np.zeros((h, w), dtype=bool)
    mask[16:112, 24:104] = True
    yy, xx = np.mgrid[0:h, 0:w]
    uv = np.stack([xx / 64.0, yy / 64.0], axis=-1)
    normals = np.zeros((h, w, 3))
    normals[..., 2] = 1.0
    lighting = lighting_grid(rng, cells=(8, 8))
    view = view_directions(h, w, np.deg2rad(60.0))
    photo = rng.uniform(0.0, 1.0, (h, w, 3))
    scene = PartScene(photo, mask, mask.astype(float), uv, normals, lighting, view,
                      loss_weights=LossWeights(), tex_res=tex_res)
    truth = rng.uniform(0.1, 0.9, template.n_params)
    tex = eval_graph(template, truth, tex_res)
    photo[mask] = scene.shade(tex.albedo, tex.normal, tex.roughness, UVTransformParams()).numpy()
    return PartScene(photo, mask, mask.astype(float), uv, normals, lighting, view, tex_res=tex_res)


def total_loss_error(scene, template, rng, eps=1e-6):
    """Relative error of the directional derivative of the full loss chain:
    parameters -> graph -> UV sampling -> shading -> statistics and features."""
    phi = UVTransformParams(rng.uniform(0, 2 * np.pi), rng.uniform(-0.5, 0.5), tuple(rng.uniform(0, 1, 2)))
    x0 = rng.uniform(0.1, 0.9, template.n_params + 1)

    def loss(x):
        tex = eval_graph(template, x[:template.n_params], scene.tex_res)
        return scene.loss(scene.shade(tex.albedo, tex.normal, x[template.n_params], phi))

    d = rng.standard_normal(x0.shape)
    return _rel(*_directional(loss, x0, d, eps))
