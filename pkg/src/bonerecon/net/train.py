"""Training loop for the occupancy network."""

import configparser
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from ..errors import ConfigurationError, InputError, TrainingError
from ..occupancy import minibatch
from .model import NetConfig, bce_loss, build_model
from .optim import OptimizerState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_points: int = 2048
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_points < 2:
            raise ConfigurationError("steps must be >= 0 and batch_points >= 2")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("lr and clip_norm must be positive")


@dataclass
class TrainingItem:
    """One subject: its DRR views (each (H, W) in [0, 1]) and occupancy samples."""

    mesh_id: str
    images: list
    samples: object
    seed: int = 0
    angles: list = field(default_factory=list)

    def view_pair(self):
        if 0 in self.angles and 90 in self.angles:
            return [self.images[self.angles.index(0)], self.images[self.angles.index(90)]]
        if len(self.images) < 2:
            raise InputError("%s: bi-planar training needs two views" % self.mesh_id)
        return self.images[:2]


@dataclass
class TrainResult:
    model: object
    losses: list
    optimizer: OptimizerState


def _coerce(cls, section):
    out = {}
    types = {f.name: f.type for f in fields(cls)}
    for key, raw in section.items():
        if key not in types:
            raise ConfigurationError("unknown key %r in [%s]" % (key, section.name))
        default = getattr(cls(), key) if key != "widths" and key != "depths" else None
        if key in ("widths", "depths"):
            out[key] = tuple(int(x) for x in raw.replace(",", " ").split())
        elif isinstance(default, bool):
            out[key] = section.getboolean(key)
        elif isinstance(default, int):
            out[key] = int(raw)
        else:
            out[key] = float(raw)
    return cls(**out)


def load_config(path):
    """Read ``[net]`` and ``[train]`` sections of a key = value file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigurationError("cannot read config file %s" % path)
    net = _coerce(NetConfig, cp["net"]) if cp.has_section("net") else NetConfig()
    train = _coerce(TrainConfig, cp["train"]) if cp.has_section("train") else TrainConfig()
    return net, train


def save_config(path, net_cfg, train_cfg):
    cp = configparser.ConfigParser()
    cp["net"] = {k: (" ".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v))
                 for k, v in net_cfg.to_dict().items()}
    cp["train"] = {k: str(v) for k, v in asdict(train_cfg).items()}
    with open(path, "w") as fh:
        cp.write(fh)


def write_loss_csv(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def train(dataset, net_cfg, cfg, model=None, callback=None):
    """Fit the network; returns the model and the per-step loss history.

    Items are ordered by ``mesh_id`` before use, so the run depends only on the
    set of items and the seeds. Each mesh owns a random stream seeded from
    (cfg.seed, item.seed) that picks its view and minibatch.
    """
    if not dataset:
        raise InputError("training needs a nonempty dataset")
    items = sorted(dataset, key=lambda it: it.mesh_id)
    if model is None:
        model = build_model(net_cfg, seed=cfg.seed)
    dtype = next(model.parameters()).dtype
    model.train()
    params = dict(model.named_parameters())
    state = OptimizerState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    schedule = np.random.default_rng([cfg.seed, 0x5EED])
    streams = [np.random.default_rng([cfg.seed, it.seed, 1]) for it in items]
    draws = [0] * len(items)
    losses = []
    for step in range(cfg.steps):
        k = int(schedule.integers(len(items)))
        item, rng = items[k], streams[k]
        if net_cfg.views == 2:
            imgs = np.stack(item.view_pair())
        else:
            imgs = np.asarray(item.images[int(rng.integers(len(item.images)))])[None]
        batch = minibatch(item.samples, cfg.batch_points, seed=int(rng.integers(2 ** 62)), call_index=draws[k])
        draws[k] += 1
        pts = torch.as_tensor(batch.points, dtype=dtype)
        lab = torch.as_tensor(batch.labels.astype(np.float64), dtype=dtype)
        logits = model(pts, torch.as_tensor(imgs, dtype=dtype), train=True)
        loss = bce_loss(logits, lab)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError("non-finite loss at step %d" % step)
        grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
        grads = {n: g for n, g in zip(params, grads)}
        clip_grad_norm(grads, cfg.clip_norm)
        adam_step(params, grads, state)
        losses.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.5f", step, value)
        if callback is not None:
            callback(step, value, model)
    model.eval()
    return TrainResult(model, losses, state)
