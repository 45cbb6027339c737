"""Digitally reconstructed radiographs: Siddon ray integrals, cameras, CLAHE."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError


@dataclass
class ProjectionCamera:
    source: np.ndarray
    detector_center: np.ndarray
    detector_u: np.ndarray
    detector_v: np.ndarray
    pixel_pitch: float
    image_size: tuple  # (width, height)

    def __post_init__(self):
        for name in ("source", "detector_center", "detector_u", "detector_v"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def validate(self):
        u, v = self.detector_u, self.detector_v
        if abs(np.linalg.norm(u) - 1) > 1e-9 or abs(np.linalg.norm(v) - 1) > 1e-9:
            raise ConfigurationError("detector axes must be unit length")
        if abs(u @ v) > 1e-9:
            raise ConfigurationError("detector axes must be orthogonal")
        n = np.cross(u, v)
        if abs(n @ (self.source - self.detector_center)) < 1e-9:
            raise ConfigurationError("source lies on the detector plane")
        if self.pixel_pitch <= 0 or min(self.image_size) < 1:
            raise ConfigurationError("pixel pitch and image size must be positive")

    def pixel_centers(self):
        """(height, width, 3) detector positions; row 0 is the top (+v) edge."""
        w, h = self.image_size
        cu = (np.arange(w) - (w - 1) / 2.0) * self.pixel_pitch
        cv = ((h - 1) / 2.0 - np.arange(h)) * self.pixel_pitch
        return (self.detector_center + cu[None, :, None] * self.detector_u
                + cv[:, None, None] * self.detector_v)

    def to_dict(self):
        return {"source": self.source.tolist(), "detector_center": self.detector_center.tolist(),
                "detector_u": self.detector_u.tolist(), "detector_v": self.detector_v.tolist(),
                "pixel_pitch": float(self.pixel_pitch), "image_size": [int(s) for s in self.image_size]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["source"], d["detector_center"], d["detector_u"], d["detector_v"],
                   float(d["pixel_pitch"]), tuple(d["image_size"]))


@dataclass
class DrrImage:
    values: np.ndarray  # (height, width)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


def camera_for_view(angle_deg, source_distance, detector_distance, image_size, pixel_pitch, center=(0.0, 0.0, 0.0)):
    """Source on a circle in the axial plane; angle 0 puts it on -y (AP), 90 on +x."""
    if source_distance <= 0 or detector_distance <= 0:
        raise ConfigurationError("source and detector distances must be positive")
    th = np.deg2rad(angle_deg)
    n = np.array([np.sin(th), -np.cos(th), 0.0])
    center = np.asarray(center, dtype=np.float64)
    v = np.array([0.0, 0.0, 1.0])
    u = np.cross(v, n)
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    return ProjectionCamera(center + source_distance * n, center - detector_distance * n,
                            u, v, float(pixel_pitch), tuple(int(s) for s in image_size))


def siddon_batch(volume, p0, p1, chunk=4096):
    """Line integrals of ``volume`` along segments p0[i] -> p1[i] (mm-weighted sums).

    Parametric traversal: the segment is cut at every voxel-plane crossing; the
    sorted crossing parameters give the intersection lengths and each piece's
    midpoint selects its voxel.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=np.float64))
    p1 = np.atleast_2d(np.asarray(p1, dtype=np.float64))
    out = np.zeros(len(p0))
    origin = np.asarray(volume.origin)
    sp = np.asarray(volume.spacing)
    dims = np.asarray(volume.dims)
    planes = [origin[a] + sp[a] * np.arange(dims[a] + 1) for a in range(3)]
    vals = volume.values
    for s in range(0, len(p0), chunk):
        a0, a1 = p0[s:s + chunk], p1[s:s + chunk]
        d = a1 - a0
        length = np.linalg.norm(d, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            lo = (origin - a0) * inv
            hi = (origin + sp * dims - a0) * inv
        tmin = np.where(d != 0, np.minimum(lo, hi), -np.inf)
        tmax = np.where(d != 0, np.maximum(lo, hi), np.inf)
        inside_flat = (d != 0) | ((a0 >= origin) & (a0 <= origin + sp * dims))
        amin = np.maximum(tmin.max(axis=1), 0.0)
        amax = np.minimum(tmax.min(axis=1), 1.0)
        hit = inside_flat.all(axis=1) & (amax > amin) & (length > 0)
        if not hit.any():
            continue
        idx = np.flatnonzero(hit)
        a0, d, amin, amax, inv = a0[idx], d[idx], amin[idx], amax[idx], inv[idx]
        alphas = [amin[:, None], amax[:, None]]
        for a in range(3):
            with np.errstate(invalid="ignore"):
                al = (planes[a][None, :] - a0[:, a:a + 1]) * inv[:, a:a + 1]
            al = np.where(np.isfinite(al) & (al > amin[:, None]) & (al < amax[:, None]), al, amax[:, None])
            alphas.append(al)
        al = np.sort(np.concatenate(alphas, axis=1), axis=1)
        seg = np.diff(al, axis=1)
        mid = 0.5 * (al[:, 1:] + al[:, :-1])
        pos = a0[:, None, :] + mid[..., None] * d[:, None, :]
        ijk = np.floor((pos - origin) / sp).astype(np.int64)
        ijk = np.clip(ijk, 0, dims - 1)
        v = vals[ijk[..., 0], ijk[..., 1], ijk[..., 2]]
        out[s + idx] = (v * seg).sum(axis=1) * length[idx]
    return out


def siddon_path_integral(volume, p0, p1):
    return float(siddon_batch(volume, np.asarray(p0)[None], np.asarray(p1)[None])[0])


def render_drr(volume, camera):
    """Raw line-integral image, one ray from the source to each pixel centre."""
    camera.validate()
    pix = camera.pixel_centers()
    h, w = pix.shape[:2]
    src = np.broadcast_to(camera.source, (h * w, 3))
    return DrrImage(siddon_batch(volume, src, pix.reshape(-1, 3)).reshape(h, w))


def display_normalize(image):
    """Min-max rescale to [0, 1]; a constant image maps to zeros."""
    v = image.values
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return DrrImage(np.zeros_like(v))
    return DrrImage((v - lo) / (hi - lo))


def _tile_edges(n, t):
    return np.round(np.linspace(0, n, t + 1)).astype(np.int64)


def clahe(image, tile_grid=(8, 8), clip_limit=2.0, bins=256):
    """Contrast-limited adaptive histogram equalization of a [0, 1] image.

    ``tile_grid`` is (tiles across, tiles down). Each tile histogram is clipped at
    ``clip_limit`` times the mean bin count with the excess spread evenly over all
    bins; pixels blend the four nearest tile mappings bilinearly. Images outside
    [0, 1] are min-max normalized first.
    """
    v = image.values
    if v.min() < 0 or v.max() > 1:
        v = display_normalize(image).values
    h, w = v.shape
    tx, ty = int(tile_grid[0]), int(tile_grid[1])
    if tx < 1 or ty < 1:
        raise ConfigurationError("tile grid must be at least 1x1")
    if tx > w or ty > h:
        raise ConfigurationError("tile grid %dx%d finer than the %dx%d image" % (tx, ty, w, h))
    q = np.clip(np.floor(v * bins), 0, bins - 1).astype(np.int64)
    xe, ye = _tile_edges(w, tx), _tile_edges(h, ty)
    luts = np.empty((ty, tx, bins))
    for j in range(ty):
        for i in range(tx):
            tile = q[ye[j]:ye[j + 1], xe[i]:xe[i + 1]]
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.float64)
            n = hist.sum()
            if np.isfinite(clip_limit):
                limit = clip_limit * n / bins
                excess = np.maximum(hist - limit, 0).sum()
                hist = np.minimum(hist, limit) + excess / bins
            luts[j, i] = np.cumsum(hist) / n
    # bilinear blend between tile centres, clamped at the borders
    cx = 0.5 * (xe[:-1] + xe[1:]) - 0.5
    cy = 0.5 * (ye[:-1] + ye[1:]) - 0.5
    px, py = np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)
    ix = np.clip(np.searchsorted(cx, px, side="right") - 1, 0, tx - 1)
    iy = np.clip(np.searchsorted(cy, py, side="right") - 1, 0, ty - 1)
    ix1, iy1 = np.minimum(ix + 1, tx - 1), np.minimum(iy + 1, ty - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        fx = np.where(ix1 > ix, (px - cx[ix]) / (cx[ix1] - cx[ix]), 0.0)
        fy = np.where(iy1 > iy, (py - cy[iy]) / (cy[iy1] - cy[iy]), 0.0)
    fx, fy = np.clip(fx, 0, 1)[None, :], np.clip(fy, 0, 1)[:, None]
    Y, X = iy[:, None], ix[None, :]
    Y1, X1 = iy1[:, None], ix1[None, :]
    top = (1 - fx) * luts[Y, X, q] + fx * luts[Y, X1, q]
    bot = (1 - fx) * luts[Y1, X, q] + fx * luts[Y1, X1, q]
    return DrrImage(np.clip((1 - fy) * top + fy * bot, 0.0, 1.0))


def write_pgm16(image, path):
    """16-bit binary PGM of the min-max rescaled image."""
    v = display_normalize(image).values
    data = np.round(v * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (image.width, image.height))
        fh.write(data.tobytes())


def read_pgm16(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ParseError("%s: not a binary PGM" % path)
    w, h = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    data = np.frombuffer(parts[3], dtype=">u2" if maxval > 255 else np.uint8)
    if data.size != w * h:
        raise ParseError("%s: expected %d pixels, found %d" % (path, w * h, data.size))
    return DrrImage(data.reshape(h, w).astype(np.float64) / maxval)


def write_png8(image, path):
    from PIL import Image

    v = np.clip(image.values, 0.0, 1.0)
    Image.fromarray(np.round(v * 255).astype(np.uint8), mode="L").save(path)


def read_png8(path):
    from PIL import Image

    return DrrImage(np.asarray(Image.open(path), dtype=np.float64) / 255.0)
