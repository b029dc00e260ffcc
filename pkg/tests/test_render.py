import numpy as np
import pytest

from glintlab import geom, glint, ltc, render
from glintlab.scene import default_scene_dict, scene_from_dict


def scene(size=5.0, w=48, h=48, **kw):
    return scene_from_dict(default_scene_dict(light_size=size, width=w, height=h, **kw))


def test_modes_produce_finite_nonnegative_images(table):
    s = scene(w=24, h=24).with_render(R=0.01)
    for mode in ("smooth_ltc", "smooth_mc", "glint", "glint_baseline", "oracle"):
        img = render.render(s, table, seed=1, mode=mode)
        assert img.shape == (24, 24, 3)
        assert np.all(np.isfinite(img)) and np.all(img >= 0)
        assert img.max() > 0


def test_smooth_ltc_matches_mc_reference(table):
    # mid roughness, large light: 15% relative on at least 95% of lit pixels
    s = scene(w=48, h=48).with_render(spp=20_000)
    a = render.render(s, table, mode="smooth_ltc").mean(axis=-1)
    b = render.render(s, table, mode="smooth_mc").mean(axis=-1)
    lit = b > 1e-3 * b.max()
    rel = np.abs(a[lit] - b[lit]) / b[lit]
    assert np.mean(rel < 0.15) >= 0.95


def test_smooth_ltc_matches_point_evaluation(table):
    s = scene(w=16, h=16)
    prep = render.prepare(s, table, mode="smooth_ltc")
    from glintlab.scene import pixel_geometry
    geo = pixel_geometry(s.camera, s.plane)
    i = int(np.flatnonzero(geo.hit)[40])
    light = s.lights[0]
    frame = geom.shading_frame(np.array([0, 0, 1.0]), geo.wo[i])
    local = (light.quad.vertices - geo.position[i]) @ frame.T
    cos_nv = geo.wo[i, 2]
    ref = ltc.smooth_radiance_area(table, s.surface.f0, light.radiance, local, cos_nv, s.surface.model.alpha)
    np.testing.assert_allclose(prep.smooth[0, i], ref, rtol=1e-4)


def test_glint_matches_smooth_at_high_density(table):
    s = scene(w=32, h=32, density=1e13)
    g = render.render(s, table, seed=3, mode="glint")
    m = render.render(s, table, mode="smooth_ltc")
    lit = m.mean(axis=-1) > 0
    np.testing.assert_allclose(g[lit], m[lit], rtol=0.01)


def test_glint_is_sparse_at_low_density(table):
    s = scene(size=0.25, w=32, h=32, density=1e3)
    g = render.render(s, table, seed=3, mode="glint").mean(axis=-1)
    m = render.render(s, table, mode="smooth_ltc").mean(axis=-1)
    lit = m > 0
    assert np.mean(g[lit] == 0) > 0.3
    assert g.max() > 3 * m.max()


def test_multiple_lights_add_in_smooth_mode(table):
    d = default_scene_dict(width=16, height=16)
    d["lights"].append({"type": "quad", "center": [0.5, -0.5, 1.5], "size": 0.5, "radiance": 3.0})
    both = scene_from_dict(d)
    one = render.render(scene_from_dict(default_scene_dict(width=16, height=16)), table, mode="smooth_ltc")
    two = render.render(both, table, mode="smooth_ltc")
    assert np.all(two >= one - 1e-12)
    prep = render.prepare(both, table, mode="smooth_ltc")
    np.testing.assert_allclose(prep.smooth.sum(axis=0).reshape(16, 16, 3), two)


def test_cap_lights_render(table):
    d = default_scene_dict(width=16, height=16)
    d["lights"] = [{"type": "point", "position": [0, 0.8, 1.0], "radius": 0.05, "intensity": 2.0},
                   {"type": "directional", "direction": [0, 1, 1], "gamma_deg": 1.0}]
    s = scene_from_dict(d)
    for mode in ("smooth_ltc", "glint", "oracle"):
        img = render.render(s, table, seed=0, mode=mode)
        assert np.all(np.isfinite(img)) and img.max() > 0


def test_mode_errors(table):
    s = scene(w=8, h=8)
    with pytest.raises(ValueError):
        render.render(s, table, mode="glint_baseline")
    with pytest.raises(ValueError):
        render.render(s, None, mode="glint")
    with pytest.raises(ValueError):
        render.render(s, table, mode="wireframe")
    with pytest.raises(ValueError):
        render.render(s.with_surface(model=glint.MicrofacetModel("beckmann", 0.3)), table, mode="glint")


def test_ratio_moments_expectation(table):
    s = scene(w=24, h=24, density=1e6)
    prep = render.prepare(s, table, mode="glint")
    seeds = range(2000)
    s1, s2 = render.ratio_moments(prep, seeds)
    n = len(seeds)
    lit = prep.prob[0] > 0
    mean = s1[0, lit] / n
    var = s2[0, lit] / n - mean**2
    z = (mean - 1.0) / np.sqrt(var / n)
    assert np.mean(np.abs(z) < 3) > 0.98
    # the per-seed images agree with the moment kernel
    k = render.resolve(prep, 5).reshape(-1, 3)
    ratio = np.where(lit, k[:, 0] / np.where(lit, prep.smooth[0, :, 0], 1), 0)
    s1b, _ = render.ratio_moments(prep, [5])
    np.testing.assert_allclose(ratio[lit], s1b[0, lit], rtol=1e-10)


@pytest.mark.parametrize("threads", [1, 3, 8])
def test_render_is_bit_identical_across_threads(table, threads):
    # several pixel blocks, so the work is really split
    s = scene(w=128, h=128)
    ref = render.render(s, table, seed=11, threads=1)
    assert np.array_equal(render.render(s, table, seed=11, threads=threads), ref)


def test_thread_env_variable(monkeypatch):
    monkeypatch.setenv("GLINTLAB_THREADS", "3")
    assert render.thread_count() == 3
    for bad in ("zero", "0"):
        monkeypatch.setenv("GLINTLAB_THREADS", bad)
        with pytest.raises(ValueError, match="GLINTLAB_THREADS"):
            render.thread_count()
    monkeypatch.delenv("GLINTLAB_THREADS")
    assert render.thread_count() >= 1


def test_count_seed_mixes_surface_seed():
    assert render.count_seed(1, 0) != render.count_seed(2, 0)
    assert render.count_seed(1, 0) != render.count_seed(1, 1)
    assert 0 <= render.count_seed(-5, 3) < 2**63
