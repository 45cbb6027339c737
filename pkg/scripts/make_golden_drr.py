"""Write the golden DRR fixture with an exact per-voxel slab integrator.

Each ray is clipped against every voxel box independently, so the reference does
not share any traversal logic with the Siddon implementation.
"""

import json
from pathlib import Path

import numpy as np

from bonerecon.drr import camera_for_view
from bonerecon.geom import Volume3D

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"


def golden_volume():
    rng = np.random.default_rng(20240607)
    values = rng.random((12, 10, 8))
    return Volume3D(values, spacing=(2.0, 2.5, 3.0), origin=(-12.0, -12.5, -12.0))


def golden_camera():
    return camera_for_view(30.0, 200.0, 100.0, (16, 12), 3.0, center=(0.5, -0.25, 0.75))


def slab_integral(volume, p0, p1):
    d = p1 - p0
    length = np.linalg.norm(d)
    sp = np.asarray(volume.spacing)
    total = 0.0
    for idx in np.ndindex(*volume.dims):
        lo = np.asarray(volume.origin) + np.asarray(idx) * sp
        hi = lo + sp
        t0, t1 = 0.0, 1.0
        for a in range(3):
            if d[a] == 0.0:
                if not lo[a] <= p0[a] <= hi[a]:
                    t0, t1 = 1.0, 0.0
                    break
                continue
            ta, tb = (lo[a] - p0[a]) / d[a], (hi[a] - p0[a]) / d[a]
            t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
        if t1 > t0:
            total += volume.values[idx] * (t1 - t0) * length
    return total


def main():
    vol, cam = golden_volume(), golden_camera()
    pix = cam.pixel_centers()
    img = np.array([[slab_integral(vol, cam.source, pix[r, c]) for c in range(pix.shape[1])]
                    for r in range(pix.shape[0])])
    OUT.mkdir(parents=True, exist_ok=True)
    np.save(OUT / "golden_drr.npy", img)
    with open(OUT / "golden_drr.json", "w") as fh:
        json.dump({"camera": cam.to_dict(), "volume_seed": 20240607, "dims": list(vol.dims),
                   "spacing": list(vol.spacing), "origin": list(vol.origin)}, fh, indent=1, sort_keys=True)
    print("golden DRR %s, range [%.4f, %.4f]" % (img.shape, img.min(), img.max()))


if __name__ == "__main__":
    main()
