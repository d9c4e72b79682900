import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photoscene.fit.optimize import (
    SCALE_BOUNDS,
    Adam,
    MaterialObjective,
    MaterialOptConfig,
    PhiGrid,
    fitted_maps,
    optimize_material,
    reoptimize_material,
    search_phi,
)
from photoscene.fit.scene import final_roughness
from photoscene.matgraph import get_template
from photoscene.metrics import masked_rmse
from photoscene.render import UVTransformParams

import scenes

SMALL_GRID = PhiGrid(8, (-1.0, 0.0, 1.0), (0.0, 0.5))


def test_default_grid_and_budget():
    cfg = MaterialOptConfig()
    assert (cfg.rounds, cfg.iterations, cfg.learning_rate, cfg.betas) == (3, 200, 0.02, (0.9, 0.999))
    grid = cfg.phi_grid
    assert grid.rotations == 16 and grid.rotation_step == pytest.approx(np.pi / 8)
    np.testing.assert_allclose(grid.log_scales, np.arange(-2, 2.01, 0.5))
    assert grid.translations == (0.0, 0.25, 0.5, 0.75)
    assert len(list(grid.points())) == 16 * 9 * 16
    assert MaterialOptConfig.from_dict(cfg.as_dict()) == cfg


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_adam_stays_in_box(seed):
    rng = np.random.default_rng(seed)
    opt = Adam(rng.uniform(size=5), lr=0.3)
    for _ in range(20):
        x = opt.step(rng.standard_normal(5) * 10)
        assert (x >= 0).all() and (x <= 1).all()


def test_adam_minimizes_quadratic():
    opt = Adam(np.zeros(3), lr=0.05, lower=-10, upper=10)
    target = np.array([0.3, -0.2, 0.7])
    for _ in range(500):
        opt.step(2 * (opt.x - target))
    np.testing.assert_allclose(opt.x, target, atol=1e-2)


def test_zero_iterations_returns_initialization():
    t = get_template("brick")
    _, scene = scenes.rendered_photo(t, np.full(t.n_params, 0.3))
    cfg = MaterialOptConfig(rounds=1, iterations=0, phi_grid=SMALL_GRID)
    fit = optimize_material(scene, t, cfg)
    np.testing.assert_array_equal(fit.theta, t.midpoint())
    assert fit.final_loss == fit.loss_trace[-1] <= fit.loss_trace[0]


def test_search_never_accepts_a_worse_transform():
    t = get_template("wood")
    theta = np.full(t.n_params, 0.4)
    _, scene = scenes.rendered_photo(t, theta, UVTransformParams(np.pi / 2, 0.0, (0.0, 0.0)))
    obj = MaterialObjective(scene, t)
    x = np.concatenate([theta, [0.5]])
    current = UVTransformParams(np.pi / 2, 0.0, (0.0, 0.0))
    v0 = obj.value(x, current)
    phi, v = search_phi(obj, x, current, v0, SMALL_GRID)
    assert v <= v0
    phi, v = search_phi(obj, x, current, -1.0, SMALL_GRID)
    assert phi == current and v == -1.0


def test_homogeneous_recovers_constant_color():
    t = get_template("homogeneous")
    target = np.array([0.6, 0.35, 0.2])
    lighting = scenes.uniform_lighting(cells=(1, 1))
    mask, _, _ = scenes.planar_part()
    photo = np.where(mask[..., None], target, 0.0)
    scene = scenes.part_scene(photo, lighting, diffuse_only=True)
    cfg = MaterialOptConfig(rounds=1, iterations=150, learning_rate=0.02, phi_grid=PhiGrid(1, (0.0,), (0.0,)))
    fit = optimize_material(scene, t, cfg)
    albedo, _, _ = fitted_maps(t, fit, 64)
    np.testing.assert_allclose(albedo.reshape(-1, 3).mean(axis=0), target, atol=0.02)


def test_fit_reduces_loss_and_trace_is_monotone():
    t = get_template("brick")
    rng = np.random.default_rng(11)
    theta = rng.uniform(0.2, 0.8, t.n_params)
    phi = UVTransformParams(np.pi / 4, 0.0, (0.0, 0.0))
    photo, scene = scenes.rendered_photo(t, theta, phi)
    cfg = MaterialOptConfig(rounds=2, iterations=40, phi_grid=SMALL_GRID)
    fit = optimize_material(scene, t, cfg)
    trace = fit.loss_trace
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert fit.final_loss == trace[-1] < trace[0]
    assert abs(fit.phi.rotation - phi.rotation) < 1e-9 or abs(abs(fit.phi.rotation - phi.rotation) - np.pi) < 1e-9


def test_final_roughness_rescales_mean():
    r = np.linspace(0.2, 0.6, 64).reshape(8, 8, 1)
    out = final_roughness(r, 0.2)
    assert out.mean() == pytest.approx(0.2)
    np.testing.assert_allclose(out / out.mean(), r / r.mean())
    assert (final_roughness(np.zeros((2, 2, 1)), 0.3) == 0.3).all()
    np.testing.assert_array_equal(final_roughness(r, None), r)


def test_reoptimize_fixed_point():
    t = get_template("plaster")
    theta = np.full(t.n_params, 0.5)
    scene, fit = scenes.fit_under(t, theta, scenes.sky_lighting(), False)
    out = reoptimize_material(scene, t, fit, iterations=60)
    np.testing.assert_allclose(out.albedo_scale, 1.0, atol=0.02)
    assert out.roughness_scale == pytest.approx(1.0, abs=0.02)
    assert out.final_loss <= out.loss_trace[0]


def test_reoptimize_halves_albedo_under_doubled_light():
    t = get_template("plaster")
    theta = np.full(t.n_params, 0.5)
    light = scenes.sky_lighting()
    scene, fit = scenes.fit_under(t, theta, light, True)
    brighter = scene.with_lighting(type(light)(2.0 * light.radiance))
    out = reoptimize_material(brighter, t, fit, iterations=100)
    np.testing.assert_allclose(out.albedo_scale, 0.5, atol=0.05)
    assert all(SCALE_BOUNDS[0] <= s <= SCALE_BOUNDS[1] for s in out.albedo_scale + (out.roughness_scale,))
    np.testing.assert_array_equal(out.theta, fit.theta)
    assert out.phi == fit.phi


def test_fitted_render_error_is_small_at_truth():
    t = get_template("wood")
    theta = np.full(t.n_params, 0.5)
    photo, scene = scenes.rendered_photo(t, theta)
    fit = optimize_material(scene, t, MaterialOptConfig(rounds=1, iterations=0, phi_grid=PhiGrid(1, (0.0,), (0.0,))),
                            init_theta=theta)
    a, n, r = fitted_maps(t, fit, 64)
    rendered = scene.to_image(scene.shade(a, n, r, fit.phi))
    mask, _, _ = scenes.planar_part()
    assert masked_rmse(photo, rendered, mask) < 0.05
