import json

import numpy as np
import pytest

from bonerecon.errors import ConfigurationError, InputError, PreconditionError
from bonerecon.geom import TriMesh, sample_surface
from bonerecon.metrics import (MetricsConfig, axis_mae, chamfer_l1, evaluate, f_score, nearest, nearest_brute,
                               normal_consistency, voxel_iou)
from bonerecon.primitives import box, icosphere

N = 20_000


def plane(z=0.0, axis=2):
    v = np.array([[-0.5, -0.5, 0], [0.5, -0.5, 0], [0.5, 0.5, 0], [-0.5, 0.5, 0]], dtype=float)
    v[:, 2] = z
    v = np.roll(v, axis - 2, axis=1)
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def rigid(mesh, deg=25.0, t=(0.3, -0.1, 0.2)):
    a = np.radians(deg)
    R = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
    return TriMesh(mesh.vertices @ R.T + t, mesh.faces)


@pytest.fixture(scope="module")
def blob():
    # a lumpy closed surface without symmetry
    s = icosphere(3, 0.3)
    v = s.vertices * (1 + 0.15 * np.sin(3 * s.vertices[:, [1]] / 0.3) + 0.1 * s.vertices[:, [0]] / 0.3)
    return TriMesh(v, s.faces)


# ---- identity and trivial cases

def test_identity(blob):
    assert chamfer_l1(blob, blob, N) < 1e-9
    assert voxel_iou(blob, blob) == 1.0
    assert f_score(blob, blob, n=N) == 1.0
    assert normal_consistency(blob, blob, N) == pytest.approx(1.0, abs=1e-6)
    assert np.abs(axis_mae(blob, blob, MetricsConfig(axis_samples=3000))).max() < 1e-6


def test_parallel_triangles_chamfer():
    a = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    b = TriMesh(a.vertices + [0, 0, 1.0], a.faces)
    assert chamfer_l1(a, b, 100_000, seed=3) == pytest.approx(1.0, abs=1e-3)


def test_empty_mesh_rejected(blob):
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    for fn in (chamfer_l1, f_score, normal_consistency):
        with pytest.raises(InputError):
            fn(blob, empty)


# ---- IoU

def test_iou_disjoint_and_half_overlap():
    a = box()
    assert voxel_iou(a, box((9.5, -0.5, -0.5), (10.5, 0.5, 0.5)), pitch=1 / 8) == 0.0
    half = box((0.0, -0.5, -0.5), (1.0, 0.5, 0.5))
    assert voxel_iou(a, half) == pytest.approx(1 / 3, abs=0.02)


def test_iou_empty_and_open():
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    assert voxel_iou(empty, empty) == 1.0
    assert voxel_iou(box(), empty, pitch=1 / 16) == 0.0
    with pytest.raises(PreconditionError):
        voxel_iou(box(), plane())


def test_iou_range_and_symmetry(blob):
    other = icosphere(3, 0.28, (0.05, 0, 0))
    v = voxel_iou(blob, other)
    assert 0 < v < 1
    assert voxel_iou(other, blob) == v


# ---- F-score

def test_fscore_concentric_step():
    t = 0.02
    inner = icosphere(4, 0.3)
    assert f_score(inner, icosphere(4, 0.3 + t / 2), t, N) > 0.99
    assert f_score(inner, icosphere(4, 0.3 + 2 * t), t, N) < 0.01


def test_fscore_far_apart_is_zero():
    assert f_score(plane(0.0), plane(1.0), 0.02, 5000) == 0.0


def test_fscore_monotone_in_t(blob):
    other = icosphere(3, 0.3)
    vals = [f_score(blob, other, t, N) for t in (0.04, 0.02, 0.01)]
    assert vals[0] >= vals[1] >= vals[2]


def test_fscore_threshold_checked(blob):
    with pytest.raises(ConfigurationError):
        f_score(blob, blob, 0.0)
    with pytest.raises(ConfigurationError):
        MetricsConfig(fscore_t=-1)


# ---- normal consistency

def test_nc_planes():
    assert normal_consistency(plane(0.0), plane(0.1), 5000) == pytest.approx(1.0, abs=1e-9)
    perp = normal_consistency(plane(0.0), plane(0.0, axis=0), 5000)
    assert perp < 1e-9


def test_nc_ignores_winding():
    assert normal_consistency(plane(), plane().flipped(), 5000) == pytest.approx(1.0, abs=1e-12)
    # flipping reorders face corners, so the samples move; nearest samples can then sit on a
    # neighbouring facet, which costs a little
    s = icosphere(3, 0.3)
    assert normal_consistency(s, s.flipped(), N) > 0.999


# ---- symmetry and rigid invariance

def test_symmetric(blob):
    other = icosphere(3, 0.3)
    assert chamfer_l1(blob, other, N) == pytest.approx(chamfer_l1(other, blob, N), abs=1e-12)
    assert f_score(blob, other, 0.02, N) == pytest.approx(f_score(other, blob, 0.02, N), abs=1e-12)
    assert normal_consistency(blob, other, N) == pytest.approx(normal_consistency(other, blob, N), abs=1e-12)


def test_rigid_invariance(blob):
    other = icosphere(3, 0.3)
    a, b = rigid(blob), rigid(other)
    assert chamfer_l1(a, b, N) == pytest.approx(chamfer_l1(blob, other, N), abs=1e-9)
    assert f_score(a, b, 0.02, N) == pytest.approx(f_score(blob, other, 0.02, N), abs=1e-9)


# ---- nearest neighbours

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kdtree_matches_brute_force(blob, seed):
    p, _ = sample_surface(blob, 3000, seed)
    q, _ = sample_surface(icosphere(2, 0.25), 2000, seed + 10)
    d, i = nearest(p, q)
    db, ib = nearest_brute(p, q)
    assert np.abs(d - db).max() < 1e-12
    assert np.array_equal(i, ib) or np.abs(np.linalg.norm(p - q[i], axis=1) - db).max() < 1e-12


# ---- per-axis errors

def test_axis_mae_absorbs_translation(blob):
    moved = TriMesh(blob.vertices + [0, 0, 5.0], blob.faces)
    _, _, maze = axis_mae(blob, moved, MetricsConfig(axis_samples=3000))
    assert maze < 1e-3


def test_axis_mae_matches_brute_force_on_bump(blob):
    v = blob.vertices.copy()
    bump = np.argsort(v[:, 0])[-len(v) // 5:]  # fixed region: the +x fifth
    v[bump, 2] += 0.1
    bumped = TriMesh(v, blob.faces)
    cfg = MetricsConfig(axis_samples=4000)
    errs, info = axis_mae(blob, bumped, cfg, details=True)
    moved = info["transform"].apply(info["source"])
    _, j = nearest_brute(moved, info["target"])
    ref = np.abs(moved - info["target"][j]).mean(axis=0)
    assert np.abs(np.array(errs) - ref).max() < 1e-6
    assert errs[2] > 0


# ---- report

def test_evaluate_report_json(blob, tmp_path):
    cfg = MetricsConfig(chamfer_samples=5000, nc_samples=5000, axis_samples=2000, iou_pitch=1 / 32)
    rep = evaluate(blob, blob, cfg)
    assert rep.iou == 1.0 and rep.chamfer_l1 < 1e-9 and rep.f_score == 1.0
    rep.save(tmp_path / "r.json")
    back = json.loads((tmp_path / "r.json").read_text())
    assert set(back) == {"iou", "chamfer_l1", "f_score", "nc", "maxe", "maye", "maze", "units", "config"}
    assert back["units"] == "normalized" and back["config"]["iou_pitch"] == 1 / 32
