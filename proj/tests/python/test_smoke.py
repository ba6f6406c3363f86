# Copyright Contributors to the splatedit Project
# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import splatedit


def blob(n=20, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return splatedit.Scene.from_arrays(
        positions=rng.uniform(-0.3, 0.3, size=(n, 3)),
        rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
        log_scales=np.full((n, 3), math.log(0.1)),
        opacity_logits=np.full(n, 1.5),
        colors=rng.uniform(0.2, 0.8, size=(n, 3)),
        object=True,
    )


def test_render_shapes_and_ranges():
    scene = blob()
    cam = splatedit.orbit_camera(30.0, 10.0, 3.0, 24, 20, fov_deg=40.0)
    out = splatedit.render(scene, cam, background=np.ones(3))
    assert out["color"].shape == (3, 20, 24)
    assert out["depth"].shape == (1, 20, 24)
    mask = out["mask"]
    assert mask.min() >= 0.0 and mask.max() <= 1.0 and mask.max() > 0.5
    assert np.all(np.isfinite(out["color"]))


def test_ply_round_trip(tmp_path):
    scene = blob(7)
    path = tmp_path / "blob.ply"
    splatedit.save_scene(scene, path)
    back = splatedit.load_scene(path)
    assert len(back) == 7
    np.testing.assert_allclose(back.positions, scene.positions, atol=1e-6)
    np.testing.assert_allclose(back.colors, scene.colors, atol=1e-6)


def test_compose_counts():
    bg = blob(30, seed=1)
    box = splatedit.Box([0.0, 0.0, 0.0], [0.2, 0.2, 0.2])
    kept = splatedit.excise_bbox(bg, box)
    merged = splatedit.merge_scenes(kept, blob(5, seed=2))
    assert len(merged) == len(kept) + 5
    assert merged.object_count == 5


def test_brightness_ratio_and_anchor():
    v = np.zeros((1, 8, 8))
    v[:, :, 4:] = 1.0
    assert splatedit.brightness_ratio(v, 0.0) == 0.0
    assert splatedit.brightness_ratio(v, 180.0) == 1.0
    flat = np.full((3, 8, 8), 0.5)
    lit = np.repeat(v, 3, axis=0)
    best = splatedit.propose_anchor([flat, lit])
    assert best["view_index"] == 1 and best["best_rotation"] == 0.0
    assert splatedit.propose_anchor([flat, lit], bright_side="left")["best_rotation"] == 180.0


def test_guidance_helpers():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 4, 5, 5))
    np.testing.assert_array_equal(splatedit.cfg_combine(a, b, 0.0), a)
    x0 = np.zeros((4, 5, 5))
    xt = splatedit.add_noise(x0, 500, a)
    np.testing.assert_allclose(xt, math.sqrt(1.0 - splatedit.alpha_bar(500)) * a)


def test_errors_are_typed(tmp_path):
    with pytest.raises(splatedit.IoError):
        splatedit.load_scene(tmp_path / "missing.ply")
    with pytest.raises(splatedit.ConfigError):
        splatedit.load_config(tmp_path / "missing.yaml")
    assert issubclass(splatedit.DegenerateInputError, splatedit.Error)
    with pytest.raises(splatedit.DegenerateInputError):
        splatedit.brightness_ratio(np.ones((1, 4, 4)), 0.0, mask=np.zeros((1, 4, 4)))
