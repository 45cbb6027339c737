"""Bias-corrected Adam and global gradient-norm clipping over named tensors."""

import math
from dataclasses import dataclass, field

import torch

from ..errors import ShapeError, TrainingError


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state):
    """One in-place Adam update. ``params`` and ``grads`` map names to tensors."""
    for name, g in grads.items():
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise ShapeError("gradient for %s has shape %s, parameter %s" % (name, tuple(g.shape), tuple(params[name].shape)))
        if not torch.isfinite(g).all():
            raise TrainingError("non-finite gradient for parameter %s" % name)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = state.m.setdefault(name, torch.zeros_like(p))
            v = state.v.setdefault(name, torch.zeros_like(p))
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(state.lr * (m / c1) / (torch.sqrt(v / c2) + state.eps))
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``; returns the norm."""
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values() if g is not None))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            if g is not None:
                g.mul_(scale)
    return total
