import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bonerecon.drr import (DrrImage, ProjectionCamera, camera_for_view, clahe, display_normalize, read_pgm16,
                           read_png8, render_drr, siddon_path_integral, write_pgm16, write_png8)
from bonerecon.errors import ConfigurationError
from bonerecon.geom import Volume3D

from drr_oracles import cube_volume, dense_errors

DATA = Path(__file__).parent / "data"


def test_outside_segment_is_zero():
    assert siddon_path_integral(cube_volume(), [100, 100, 100], [200, 100, 100]) == 0.0


def test_axis_ray_through_cube():
    mu, L = 0.7, 40.0
    for axis in range(3):
        p0, p1 = np.full(3, 1.3), np.full(3, 1.3)
        p0[axis], p1[axis] = -100, 100
        assert siddon_path_integral(cube_volume(mu), p0, p1) == pytest.approx(mu * L, rel=1e-6)


def test_diagonal_ray_through_cube():
    mu, L = 0.7, 40.0
    got = siddon_path_integral(cube_volume(mu), [-30, -30, -30], [30, 30, 30])
    assert got == pytest.approx(mu * L * np.sqrt(3), rel=1e-6)


def test_segment_ending_inside():
    got = siddon_path_integral(cube_volume(1.0), [-100, 0.3, 0.3], [5.0, 0.3, 0.3])
    assert got == pytest.approx(25.0, rel=1e-9)


@settings(max_examples=40)
@given(st.integers(0, 2 ** 31))
def test_direction_symmetry_and_additivity(seed):
    rng = np.random.default_rng(seed)
    vol = Volume3D(rng.random((7, 5, 6)), (1.5, 2.0, 2.5), (-5.0, -5.0, -7.5))
    p0, p1 = rng.uniform(-15, 15, 3), rng.uniform(-15, 15, 3)
    f = siddon_path_integral(vol, p0, p1)
    assert abs(f - siddon_path_integral(vol, p1, p0)) <= 1e-9 * max(1.0, f)
    s = rng.uniform(0.05, 0.95)
    m = p0 + s * (p1 - p0)
    parts = siddon_path_integral(vol, p0, m) + siddon_path_integral(vol, m, p1)
    assert abs(parts - f) <= 1e-7 * max(1.0, f)


def test_matches_dense_stepping_on_noise_volumes():
    assert dense_errors(np.random.default_rng(12), 0).max() < 5e-3


def test_matches_dense_stepping_on_smooth_volumes():
    assert dense_errors(np.random.default_rng(11), 1.0, n_vol=3).max() < 5e-3


def test_golden_image():
    meta = json.loads((DATA / "golden_drr.json").read_text())
    rng = np.random.default_rng(meta["volume_seed"])
    vol = Volume3D(rng.random(tuple(meta["dims"])), meta["spacing"], meta["origin"])
    cam = ProjectionCamera.from_dict(meta["camera"])
    img = render_drr(vol, cam).values
    ref = np.load(DATA / "golden_drr.npy")
    assert img.shape == ref.shape == (12, 16)
    assert np.abs(img - ref).max() <= 1e-6 * np.abs(ref).max()
    assert ref.max() > 0


def test_zero_volume_and_linearity():
    rng = np.random.default_rng(2)
    vol = Volume3D(rng.random((6, 6, 6)), (3.0, 3.0, 3.0), (-9, -9, -9))
    cam = camera_for_view(20, 100, 50, 12, 2.0)
    assert not render_drr(Volume3D(np.zeros((6, 6, 6)), (3, 3, 3), (-9, -9, -9)), cam).values.any()
    a = render_drr(vol, cam).values
    b = render_drr(Volume3D(2 * vol.values, vol.spacing, vol.origin), cam).values
    assert np.allclose(b, 2 * a, rtol=1e-12)
    assert (a >= 0).all() and a.max() > 0


def test_camera_conventions():
    c = np.array([1.0, 2.0, 3.0])
    ap = camera_for_view(0, 100, 50, 8, 1.0, center=c)
    assert np.allclose(ap.source, c + [0, -100, 0])
    assert np.allclose(ap.detector_center, c + [0, 50, 0])
    lat = camera_for_view(90, 100, 50, 8, 1.0, center=c)
    assert np.allclose(lat.source, c + [100, 0, 0])
    full = camera_for_view(360, 100, 50, 8, 1.0, center=c)
    for k in ("source", "detector_center", "detector_u", "detector_v"):
        assert np.abs(getattr(full, k) - getattr(ap, k)).max() < 1e-9
    # right-handed: u x v points from detector toward source
    n = np.cross(ap.detector_u, ap.detector_v)
    assert n @ (ap.source - ap.detector_center) > 0
    ap.validate()


def test_invalid_camera():
    cam = camera_for_view(0, 100, 50, 8, 1.0)
    cam.detector_v = np.array([0.6, 0.0, 0.8])
    with pytest.raises(ConfigurationError):
        render_drr(cube_volume(), cam)
    with pytest.raises(ConfigurationError):
        camera_for_view(0, 0, 50, 8, 1.0)


def test_render_orientation_row0_is_top():
    vals = np.zeros((4, 4, 4))
    vals[:, :, 3] = 1.0  # top slab in +z
    vol = Volume3D(vals, (5, 5, 5), (-10, -10, -10))
    img = render_drr(vol, camera_for_view(0, 1000, 500, 8, 4.0)).values
    assert img[0].sum() > img[-1].sum()


def test_clahe_constant_image():
    out = clahe(DrrImage(np.full((32, 32), 0.4)))
    assert np.ptp(out.values) == 0.0


def global_equalize(v, bins=256):
    q = np.clip(np.floor(v * bins), 0, bins - 1).astype(int)
    cdf = np.cumsum(np.bincount(q.ravel(), minlength=bins)) / q.size
    return cdf[q]


def test_clahe_single_tile_no_clip_is_global_equalization():
    v = np.random.default_rng(0).random((37, 29)) ** 2
    out = clahe(DrrImage(v), (1, 1), np.inf).values
    assert np.allclose(out, global_equalize(v), atol=1e-12)


def test_clahe_monotone_within_tile_and_range():
    rng = np.random.default_rng(1)
    v = rng.random((64, 64))
    out = clahe(DrrImage(v), (8, 8), 2.0).values
    assert out.min() >= 0 and out.max() <= 1
    assert np.array_equal(out, clahe(DrrImage(v), (8, 8), 2.0).values)
    # with a single tile every pixel shares one mapping, so order is preserved
    one = clahe(DrrImage(v), (1, 1), 2.0).values.ravel()
    order = np.argsort(v.ravel())
    assert (np.diff(one[order]) >= -1e-15).all()


def test_clahe_tile_too_large():
    with pytest.raises(ConfigurationError):
        clahe(DrrImage(np.zeros((4, 4))), (8, 8))


def test_display_normalize():
    out = display_normalize(DrrImage(np.array([[2.0, 4.0], [6.0, 3.0]])))
    assert out.values.min() == 0 and out.values.max() == 1


def test_image_io(tmp_path):
    v = np.random.default_rng(3).random((9, 13))
    write_pgm16(DrrImage(v), tmp_path / "a.pgm")
    back = read_pgm16(tmp_path / "a.pgm").values
    assert back.shape == (9, 13)
    assert np.abs(back - display_normalize(DrrImage(v)).values).max() < 1e-4
    write_png8(DrrImage(v), tmp_path / "a.png")
    assert np.abs(read_png8(tmp_path / "a.png").values - v).max() <= 0.5 / 255 + 1e-12
