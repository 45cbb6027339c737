"""Dataset building and the train -> infer -> register -> eval chain."""

import configparser
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .drr import camera_for_view, clahe, display_normalize, read_png8, render_drr, write_png8
from .errors import ConfigurationError, ReconError
from .extract.mise import ExtractionConfig, mise
from .extract.refine import refine_gradient
from .extract.simplify import simplify_quadric
from .geom import TriMesh, concatenate, load_mesh, normalize_to_unit_box, sample_surface, save_mesh
from .metrics import MetricsConfig, evaluate
from .net.checkpoint import load_checkpoint
from .net.model import NetConfig, field_function, field_gradient
from .net.train import TrainConfig, TrainingItem
from .occupancy import OccupancySampleSet, sample_uniform_occupancy
from .phantom import PhantomSpec, part_mesh, phantom_generate, phantom_parts
from .register.cpd import CPDParams, gbcpd_register
from .register.template import TemplateLibrary, assemble_template

log = logging.getLogger(__name__)


@dataclass
class DrrConfig:
    angles: tuple = (0.0, 15.0, -15.0, 30.0, -30.0, 90.0)
    source_distance: float = 1000.0
    detector_distance: float = 500.0
    image_size: int = 64
    pixel_pitch: float = 7.5
    clahe_tiles: int = 8
    clahe_clip: float = 2.0

    def __post_init__(self):
        self.angles = tuple(float(a) for a in self.angles)
        if not self.angles:
            raise ConfigurationError("at least one view angle is required")


@dataclass
class DatasetConfig:
    occupancy_samples: int = 100_000
    template_part_faces: int = 200  # per-part face budget for the template library


@dataclass
class RegisterConfig:
    target_samples: int = 5000


@dataclass
class PipelineConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    drr: DrrConfig = field(default_factory=DrrConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    extract: ExtractionConfig = field(default_factory=ExtractionConfig)
    cpd: CPDParams = field(default_factory=CPDParams)
    register: RegisterConfig = field(default_factory=RegisterConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self):
        return {f.name: _as_plain(getattr(self, f.name)) for f in fields(self)}


def _as_plain(obj):
    d = asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _parse_value(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return tuple(kind(x) for x in raw.replace(",", " ").split())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or default is None:
        return None if raw.lower() == "none" else float(raw)
    return raw


def load_pipeline_config(path=None):
    """Sectioned key = value file; sections are the PipelineConfig field names."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigurationError("cannot read config file %s" % path)
    for name in cp.sections():
        if not hasattr(cfg, name):
            raise ConfigurationError("unknown config section [%s]" % name)
        current = getattr(cfg, name)
        kw = _as_plain(current)
        for key, raw in cp[name].items():
            if key not in kw:
                raise ConfigurationError("unknown key %r in [%s]" % (key, name))
            default = getattr(current, key)
            try:
                kw[key] = _parse_value(raw, default)
            except ValueError:
                raise ConfigurationError("bad value %r for %s.%s" % (raw, name, key)) from None
        setattr(cfg, name, type(current)(**kw))
    return cfg


def save_pipeline_config(cfg, path):
    cp = configparser.ConfigParser()
    for name, section in cfg.to_dict().items():
        cp[name] = {k: (" ".join(map(str, v)) if isinstance(v, list) else str(v)) for k, v in section.items()}
    with open(path, "w") as fh:
        cp.write(fh)


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def drr_views(volume, cfg):
    """CLAHE-enhanced DRRs and their cameras, one per configured angle."""
    out = []
    for angle in cfg.angles:
        cam = camera_for_view(angle, cfg.source_distance, cfg.detector_distance, cfg.image_size,
                              cfg.pixel_pitch, center=volume.center)
        raw = render_drr(volume, cam)
        img = clahe(display_normalize(raw), (cfg.clahe_tiles, cfg.clahe_tiles), cfg.clahe_clip)
        out.append((angle, cam, img))
    return out


def build_template_library(cfg):
    """Unperturbed phantom parts, each simplified and placed in the unit-box frame of the whole."""
    spec = PhantomSpec(**{**asdict(cfg.phantom), "jitter": 0.0})
    parts = phantom_parts(spec, 0)
    meshes = [part_mesh(p, spec) for p in parts]
    _, tf = normalize_to_unit_box(concatenate(meshes))
    budget = cfg.dataset.template_part_faces
    groups = {}
    for p, m in zip(parts, meshes):
        if m.n_faces > budget:
            m = simplify_quadric(m, budget)
        # vertebrae sharing a region label are merged into one part
        groups.setdefault(p.label, []).append(m.transformed(tf.apply))
    out = {label: concatenate(ms) for label, ms in groups.items()}
    return TemplateLibrary(out)


def build_dataset(cfg, n_samples, seed, out_dir):
    """Write phantoms, DRRs, occupancy samples and a manifest under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_samples):
        sid = "sample_%03d" % i
        try:
            records.append(_build_sample(cfg, sid, seed, i, out))
        except (OSError, ReconError) as exc:
            raise type(exc)("%s: %s" % (sid, exc)) from exc
    lib = build_template_library(cfg)
    lib.save(out / "templates")
    with open(out / "templates" / "regions.txt", "w") as fh:
        fh.write("".join("%s\n" % lab for lab in lib.labels))
    manifest = {"seed": int(seed), "n_samples": int(n_samples), "config": cfg.to_dict(),
                "templates": "templates", "regions": "templates/regions.txt", "samples": records}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def view_filename(angle):
    a = int(round(angle))
    return "drr_%s%03d.png" % ("m" if a < 0 else "", abs(a))


def _build_sample(cfg, sid, seed, i, out):
    phantom_seed = derive_seed(seed, i, 1)
    occ_seed = derive_seed(seed, i, 2)
    sdir = out / sid
    sdir.mkdir(parents=True, exist_ok=True)
    vol, mesh, _ = phantom_generate(cfg.phantom, phantom_seed)
    views = []
    for angle, cam, img in drr_views(vol, cfg.drr):
        name = view_filename(angle)
        write_png8(img, sdir / name)
        views.append({"angle": angle, "path": "%s/%s" % (sid, name), "camera": cam.to_dict()})
    unit, tf = normalize_to_unit_box(mesh)
    save_mesh(unit, sdir / "mesh.off")
    samples = sample_uniform_occupancy(unit, cfg.dataset.occupancy_samples, occ_seed, mesh_id=sid)
    samples.save(sdir / "occupancy.bin")
    return {"id": sid, "views": views, "mesh": "%s/mesh.off" % sid, "occupancy": "%s/occupancy.bin" % sid,
            "transform": tf.to_dict(), "seeds": {"phantom": phantom_seed, "occupancy": occ_seed}}


def load_manifest(path):
    with open(path) as fh:
        return json.load(fh)


def training_items(manifest_path):
    root = Path(manifest_path).parent
    man = load_manifest(manifest_path)
    items = []
    for rec in man["samples"]:
        images = [read_png8(root / v["path"]).values for v in rec["views"]]
        samples = OccupancySampleSet.load(root / rec["occupancy"])
        items.append(TrainingItem(rec["id"], images, samples, rec["seeds"]["occupancy"],
                                  [float(v["angle"]) for v in rec["views"]]))
    return items


def reconstruct(model, images, cfg):
    """Latent -> MISE -> marching cubes -> simplify -> refine. Returns (mesh, info)."""
    dtype = next(model.parameters()).dtype
    model.eval()
    with torch.no_grad():
        latent = model.encode(torch.as_tensor(np.stack(images), dtype=dtype))
    fn = field_function(model, latent, cfg.batch_points)
    grid = mise(fn, cfg)
    vals = grid.values[np.isfinite(grid.values)]
    info = grid.stats()
    if vals.size == 0 or (vals >= cfg.tau).all() or (vals < cfg.tau).all():
        # a field that never crosses tau inside the box has no surface to extract
        info["empty"] = True
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), info
    mesh = grid.to_mesh()
    if mesh.n_faces > cfg.simplify_target_faces:
        mesh = simplify_quadric(mesh, cfg.simplify_target_faces)
    history = []
    mesh = refine_gradient(mesh, fn, cfg.tau, cfg.refine_iters, grad_fn=field_gradient(model, latent, cfg.batch_points),
                           history=history)
    info.update(empty=False, residual_history=history, n_faces=mesh.n_faces)
    return mesh, info


def infer(checkpoint, image_paths, out_path, cfg=None):
    cfg = cfg or ExtractionConfig()
    model, _ = load_checkpoint(checkpoint)
    images = [read_png8(p).values for p in image_paths]
    mesh, info = reconstruct(model, images, cfg)
    if info["empty"]:
        log.warning("field has no %.2f level set inside the unit box; writing an empty mesh", cfg.tau)
    save_mesh(mesh, out_path)
    return mesh, info


def register(template_dir, regions, target_mesh, params, n_targets=5000, seed=0):
    """Deform the assembled template toward surface samples of ``target_mesh``."""
    lib = TemplateLibrary.load(template_dir)
    template = assemble_template(lib, regions)
    pts, _ = sample_surface(target_mesh, n_targets, seed)
    out, model, em = gbcpd_register(template, pts, params)
    return out, em


def evaluate_files(pred_path, gt_path, cfg=None):
    return evaluate(load_mesh(pred_path), load_mesh(gt_path), cfg or MetricsConfig())
