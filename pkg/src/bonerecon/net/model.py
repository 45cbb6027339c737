"""Conditional occupancy network: ConvNeXt-style image encoder and CBN decoder."""

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import ConfigurationError, ShapeError, SizeError


@dataclass
class NetConfig:
    """Network dimensions. Defaults are the small test scale; ``full_scale()`` gives 224 px / c=1024."""

    image_size: int = 64
    stem_patch: int = 4
    widths: tuple = (16, 32)
    depths: tuple = (1, 1)
    latent_dim: int = 64
    hidden: int = 128
    decoder_blocks: int = 5
    views: int = 1
    heads: int = 4

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.depths = tuple(int(d) for d in self.depths)
        if len(self.widths) != len(self.depths) or not self.widths:
            raise ConfigurationError("widths and depths must be non-empty and the same length")
        down = self.stem_patch * 2 ** (len(self.widths) - 1)
        if self.image_size % down:
            raise ConfigurationError("image_size %d not divisible by total downsampling %d" % (self.image_size, down))
        if self.views not in (1, 2):
            raise ConfigurationError("views must be 1 (single) or 2 (bi-planar)")
        if self.views == 2 and self.latent_dim % self.heads:
            raise ConfigurationError("latent_dim %d not divisible by heads %d" % (self.latent_dim, self.heads))

    @classmethod
    def full_scale(cls, **kw):
        base = dict(image_size=224, widths=(96, 192, 384, 768), depths=(3, 3, 9, 3), latent_dim=1024)
        base.update(kw)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["widths"], d["depths"] = list(self.widths), list(self.depths)
        return d


class ChannelNorm(nn.LayerNorm):
    """LayerNorm over the channel axis of an NCHW tensor."""

    def forward(self, x):
        return super().forward(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class ConvNeXtBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=7, padding=3, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pw1 = nn.Linear(dim, 4 * dim)
        self.pw2 = nn.Linear(4 * dim, dim)

    def forward(self, x):
        y = self.dwconv(x).permute(0, 2, 3, 1)
        y = self.pw2(F.gelu(self.pw1(self.norm(y))))
        return x + y.permute(0, 3, 1, 2)


class Encoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.image_size = cfg.image_size
        w = cfg.widths
        self.stem = nn.Sequential(nn.Conv2d(1, w[0], cfg.stem_patch, stride=cfg.stem_patch), ChannelNorm(w[0], eps=1e-6))
        self.down = nn.ModuleList()
        self.stages = nn.ModuleList()
        for i, (width, depth) in enumerate(zip(w, cfg.depths)):
            if i > 0:
                self.down.append(nn.Sequential(ChannelNorm(w[i - 1], eps=1e-6), nn.Conv2d(w[i - 1], width, 2, stride=2)))
            self.stages.append(nn.Sequential(*[ConvNeXtBlock(width) for _ in range(depth)]))
        self.head = nn.Linear(w[-1], cfg.latent_dim)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.trunc_normal_(m.weight, std=0.02 if m is not self.head else 0.1)
                nn.init.zeros_(m.bias)

    def forward(self, images):
        """images: (B, H, W) or (B, 1, H, W) -> (B, latent_dim)."""
        if images.dim() == 3:
            images = images[:, None]
        expected = (1, self.image_size, self.image_size)
        if tuple(images.shape[1:]) != expected:
            raise ShapeError("encoder expects images of shape %s, got %s" % (expected, tuple(images.shape[1:])))
        x = self.stem(images)
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.down[i - 1](x)
            x = stage(x)
        return self.head(x.mean(dim=(2, 3)))


class CBatchNorm(nn.Module):
    """Batch normalization whose scale and shift are affine functions of a latent code."""

    def __init__(self, latent_dim, features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = nn.Linear(latent_dim, features)
        self.beta = nn.Linear(latent_dim, features)
        self.momentum, self.eps = momentum, eps
        self.register_buffer("running_mean", torch.zeros(features))
        self.register_buffer("running_var", torch.ones(features))
        nn.init.zeros_(self.gamma.weight)
        nn.init.ones_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    def forward(self, x, latent, train):
        """x: (T, F); latent: (c,)."""
        if train:
            if x.shape[0] < 2:
                raise SizeError("train-mode CBN needs a batch of at least 2, got %d" % x.shape[0])
            mean = x.mean(dim=0)
            var = x.var(dim=0, unbiased=False)
            with torch.no_grad():
                n = x.shape[0]
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean.detach())
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * var.detach() * n / (n - 1))
        else:
            mean, var = self.running_mean, self.running_var
        xhat = (x - mean) / torch.sqrt(var + self.eps)
        return self.gamma(latent) * xhat + self.beta(latent)


def cbn_apply(features, latent, layer, mode="train"):
    if mode not in ("train", "eval"):
        raise ConfigurationError("mode must be 'train' or 'eval'")
    return layer(features, latent, mode == "train")


class DecoderBlock(nn.Module):
    def __init__(self, latent_dim, hidden):
        super().__init__()
        self.bn0 = CBatchNorm(latent_dim, hidden)
        self.fc0 = nn.Linear(hidden, hidden)
        self.bn1 = CBatchNorm(latent_dim, hidden)
        self.fc1 = nn.Linear(hidden, hidden)

    def forward(self, x, latent, train):
        h = self.fc0(F.gelu(self.bn0(x, latent, train)))
        h = self.fc1(F.gelu(self.bn1(h, latent, train)))
        return x + h


class Decoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.fc_p = nn.Linear(3, cfg.hidden)
        self.blocks = nn.ModuleList([DecoderBlock(cfg.latent_dim, cfg.hidden) for _ in range(cfg.decoder_blocks)])
        self.fc_out = nn.Linear(cfg.hidden, 1)
        nn.init.zeros_(self.fc_out.weight)
        nn.init.zeros_(self.fc_out.bias)

    def forward(self, points, latent, train):
        if points.dim() != 2 or points.shape[1] != 3:
            raise ShapeError("decoder expects points of shape (T, 3), got %s" % (tuple(points.shape),))
        x = self.fc_p(points)
        for block in self.blocks:
            x = block(x, latent, train)
        return self.fc_out(x)[:, 0]


class CrossAttentionFusion(nn.Module):
    """Fuse a second latent into the first by multi-head cross-attention over latent chunks.

    Query comes from the first (AP) latent, keys and values from the second; each
    of the ``heads`` query chunks attends over the ``heads`` key chunks.
    """

    def __init__(self, latent_dim, heads):
        super().__init__()
        if latent_dim % heads:
            raise ConfigurationError("latent_dim %d not divisible by heads %d" % (latent_dim, heads))
        self.heads = heads
        self.q = nn.Linear(latent_dim, latent_dim)
        self.k = nn.Linear(latent_dim, latent_dim)
        self.v = nn.Linear(latent_dim, latent_dim)
        self.out = nn.Linear(latent_dim, latent_dim)

    def forward(self, a, b, return_weights=False):
        """a, b: (..., c)."""
        shape = a.shape
        h = self.heads
        d = shape[-1] // h
        q = self.q(a).reshape(*shape[:-1], h, d)
        k = self.k(b).reshape(*shape[:-1], h, d)
        v = self.v(b).reshape(*shape[:-1], h, d)
        w = torch.softmax(q @ k.transpose(-1, -2) / d ** 0.5, dim=-1)
        fused = (w @ v).reshape(shape)
        out = a + self.out(fused)
        return (out, w) if return_weights else out


def fuse_cross_attention(latent_ap, latent_lat, params, heads=None):
    if heads is not None and heads != params.heads:
        raise ConfigurationError("fusion module built for %d heads, asked for %d" % (params.heads, heads))
    if latent_ap.shape[-1] % params.heads:
        raise ConfigurationError("latent dimension not divisible by heads")
    return params(latent_ap, latent_lat)


class OccupancyNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.fusion = CrossAttentionFusion(cfg.latent_dim, cfg.heads) if cfg.views == 2 else None

    def encode(self, images):
        """images: (views, H, W) for one subject -> latent (c,)."""
        z = self.encoder(images[: self.cfg.views])
        if self.cfg.views == 2:
            return self.fusion(z[0], z[1])
        return z[0]

    def forward(self, points, images, train=True):
        return self.decoder(points, self.encode(images), train)


def encode(image, params):
    """Latent code of one (H, W) image."""
    x = torch.as_tensor(image, dtype=next(params.parameters()).dtype)
    if x.dim() != 2:
        raise ShapeError("expected a single (H, W) image, got shape %s" % (tuple(x.shape),))
    return params(x[None])[0]


def decode(points, latent, params, mode="eval"):
    x = torch.as_tensor(points, dtype=next(params.parameters()).dtype)
    return params(x, latent, mode == "train")


def bce_loss(logits, labels):
    """Mean binary cross-entropy in the stable form max(z,0) - z*o + log(1 + exp(-|z|))."""
    z = logits
    o = labels.to(z.dtype)
    return (torch.clamp(z, min=0) - z * o + torch.log1p(torch.exp(-torch.abs(z)))).mean()


def build_model(cfg, seed=0, dtype=torch.float32):
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(int(seed))
    try:
        model = OccupancyNet(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def field_function(model, latent, batch=65536):
    """Eval-mode occupancy probability as a numpy callable of (k, 3) points."""
    dtype = next(model.parameters()).dtype
    latent = latent.detach()

    def fn(points):
        out = np.empty(len(points))
        with torch.no_grad():
            for s in range(0, len(points), batch):
                p = torch.as_tensor(np.asarray(points[s:s + batch]), dtype=dtype)
                out[s:s + batch] = torch.sigmoid(model.decoder(p, latent, False)).double().numpy()
        return out
    return fn


def field_gradient(model, latent, batch=65536):
    """Analytic gradient of the eval-mode probability w.r.t. the query points."""
    dtype = next(model.parameters()).dtype
    latent = latent.detach()

    def fn(points):
        out = np.empty((len(points), 3))
        for s in range(0, len(points), batch):
            p = torch.as_tensor(np.asarray(points[s:s + batch]), dtype=dtype).requires_grad_(True)
            prob = torch.sigmoid(model.decoder(p, latent, False))
            (g,) = torch.autograd.grad(prob.sum(), p)
            out[s:s + batch] = g.double().numpy()
        return out
    return fn
