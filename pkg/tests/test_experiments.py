import math

import numpy as np
import pytest

from glintlab import experiments
from glintlab.scene import default_scene_dict, scene_from_dict


def scene(size=5.0, w=32, h=32, **kw):
    return scene_from_dict(default_scene_dict(light_size=size, width=w, height=h, **kw))


def test_relative_rms():
    ref = np.ones((2, 2, 3))
    assert experiments.relative_rms(ref * 1.1, ref) == pytest.approx(0.1)
    assert experiments.relative_rms(ref, np.zeros((2, 2, 3))) == 0.0


def test_convergence_rms_decreases(table):
    res = experiments.experiment_convergence(scene(density=1e5), table, 4, seed=2)
    rms = [r[4] for r in res.rows]
    assert all(b < a for a, b in zip(rms, rms[1:]))
    # four times the microfacets halves the relative noise
    assert rms[-1] / rms[0] == pytest.approx(1 / 8, rel=0.2)
    assert res.strip.shape == (32, 32, 3)


def test_convergence_needs_levels(table):
    with pytest.raises(ValueError):
        experiments.experiment_convergence(scene(), table, 1)


def test_subdivision_ltc_is_invariant(table):
    res = experiments.experiment_subdivision(scene(w=24, h=24), table, 16, range(20), "ltc")
    assert res.count_sum_exact
    assert abs(res.mean_diff) <= 3 * res.se_diff + 1e-12
    assert res.rel_abs_diff < 1e-9


def test_subdivision_mc_differs_more_for_large_lights(table):
    # patch radiance-to-probability ratios vary more over a large light
    diffs = []
    for size in (5.0, 0.25):
        res = experiments.experiment_subdivision(scene(size, w=24, h=24, density=1e4), table, 64, range(10), "mc")
        assert res.count_sum_exact
        diffs.append(res.rel_abs_diff)
    assert diffs[0] > diffs[1] > 1e-3


def test_subdivision_argument_checks(table):
    with pytest.raises(ValueError):
        experiments.experiment_subdivision(scene(w=8, h=8), table, 15, [0])
    with pytest.raises(ValueError):
        experiments.experiment_subdivision(scene(w=8, h=8), table, 16, [0], "exact")


def test_match_r_rows():
    rows = experiments.experiment_match_r([0.26, 5.0], [0.1, 0.5, 0.9])
    assert len(rows) == 6
    clipped = {(r[0], r[1]) for r in rows if r[4]}
    assert clipped == {(5.0, 0.1)}
    for g, r, R, p, _ in rows:
        assert R == pytest.approx(p)


def test_ablation(table):
    s = scene(w=16, h=16).with_render(spp=4096)
    grid, images = experiments.experiment_ablation(s, table, seed=1)
    assert grid.shape == (32, 32, 3)
    rows = {(r[0], r[1]): r for r in experiments.ablation_rows(images)}
    assert rows[("mc", "mc")][3] == 0.0
    # swapping only the probability method barely changes a dense render
    assert rows[("mc", "ltc")][3] < 0.05
    assert rows[("ltc", "ltc")][3] < 0.25


def test_write_csv(tmp_path):
    p = tmp_path / "x.csv"
    experiments.write_csv(p, ("a", "b"), [(1, 2.5), (3, math.pi)])
    lines = p.read_text().splitlines()
    assert lines[0] == "a,b" and len(lines) == 3
