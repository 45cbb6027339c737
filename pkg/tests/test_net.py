import json
import random

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from bonerecon.errors import ConfigurationError, FormatError, ShapeError, SizeError, TrainingError
from bonerecon.net.checkpoint import load_checkpoint, save_checkpoint
from bonerecon.net.model import (CBatchNorm, CrossAttentionFusion, Encoder, NetConfig, bce_loss, build_model,
                                 cbn_apply, decode, encode, fuse_cross_attention)
from bonerecon.net.optim import OptimizerState, adam_step, clip_grad_norm
from bonerecon.net.train import TrainConfig, TrainingItem, load_config, save_config, train, write_loss_csv
from bonerecon.occupancy import OccupancySampleSet

from gradcases import CASES, TOL, TOY


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    errs = [CASES[name](seed) for seed in range(10)]
    assert max(errs) < TOL, errs


def test_full_scale_latent_length():
    cfg = NetConfig.full_scale(widths=(8, 8, 8, 8), depths=(1, 1, 1, 1))
    enc = Encoder(cfg)
    with torch.no_grad():
        z = enc(torch.zeros(1, 224, 224))
    assert z.shape == (1, 1024)


def test_zero_image_gives_head_bias():
    enc = Encoder(TOY)
    with torch.no_grad():
        enc.head.bias.normal_()
        z = encode(np.zeros((16, 16)), enc)
    assert torch.equal(z, enc.head.bias)


def test_encoder_shape_error_names_sizes():
    with pytest.raises(ShapeError, match=r"16, 16.*20, 20"):
        Encoder(TOY)(torch.zeros(1, 20, 20))


def test_encoder_deterministic():
    enc = Encoder(TOY)
    img = np.random.default_rng(0).random((16, 16))
    with torch.no_grad():
        assert torch.equal(encode(img, enc), encode(img, enc))


def test_cbn_identity_case():
    layer = CBatchNorm(4, 6).double()
    x = torch.randn(500, 6, dtype=torch.float64)
    x = (x - x.mean(0)) / x.std(0, unbiased=False)
    out = cbn_apply(x, torch.randn(4, dtype=torch.float64), layer, "train")
    # identity up to the variance regularizer eps = 1e-5
    assert (out - x / np.sqrt(1 + 1e-5)).abs().max() < 1e-6
    assert (out - x).abs().max() < 1e-5 * x.abs().max()


def test_cbn_output_statistics():
    torch.manual_seed(0)
    layer = CBatchNorm(4, 6).double()
    with torch.no_grad():
        for p in layer.parameters():
            p.normal_()
    z = torch.randn(4, dtype=torch.float64)
    x = 5 * torch.randn(64, 6, dtype=torch.float64) - 2
    out = cbn_apply(x, z, layer, "train")
    with torch.no_grad():
        g, b = layer.gamma(z), layer.beta(z)
    assert (out.mean(0) - b).abs().max() < 1e-6
    assert (out.std(0, unbiased=False) - g.abs()).abs().max() < 1e-5


def test_cbn_running_stats_and_eval():
    layer = CBatchNorm(3, 2).double()
    x = torch.tensor([[1.0, 2.0], [3.0, 6.0]], dtype=torch.float64)
    cbn_apply(x, torch.zeros(3, dtype=torch.float64), layer, "train")
    assert torch.allclose(layer.running_mean, torch.tensor([0.2, 0.4], dtype=torch.float64))
    # unbiased batch variances are 2 and 8
    assert torch.allclose(layer.running_var, torch.tensor([0.9 + 0.2, 0.9 + 0.8], dtype=torch.float64))
    out = cbn_apply(x, torch.zeros(3, dtype=torch.float64), layer, "eval")
    ref = (x - layer.running_mean) / torch.sqrt(layer.running_var + 1e-5)
    assert torch.allclose(out, ref)
    assert (layer.running_var >= 0).all()


def test_cbn_batch_of_one():
    with pytest.raises(SizeError):
        cbn_apply(torch.zeros(1, 2), torch.zeros(3), CBatchNorm(3, 2), "train")
    cbn_apply(torch.zeros(1, 2), torch.zeros(3), CBatchNorm(3, 2), "eval")


def test_decoder_zero_init_gives_half():
    model = build_model(TOY, seed=1)
    pts = torch.rand(50, 3) - 0.5
    with torch.no_grad():
        logits = decode(pts, torch.randn(TOY.latent_dim), model.decoder, "train")
    assert torch.equal(logits, torch.zeros(50))
    assert torch.equal(torch.sigmoid(logits), torch.full((50,), 0.5))


def test_decoder_eval_mode_is_pointwise():
    gen = torch.Generator().manual_seed(3)
    model = build_model(TOY, seed=2, dtype=torch.float64)
    with torch.no_grad():
        for p in model.decoder.parameters():
            p.add_(0.3 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
        for name, b in model.decoder.named_buffers():
            b.copy_(torch.rand(b.shape, generator=gen, dtype=b.dtype) + 0.5)
    z = torch.randn(TOY.latent_dim, generator=gen, dtype=torch.float64)
    pts = torch.rand(40, 3, generator=gen, dtype=torch.float64) - 0.5
    perm = torch.randperm(40, generator=gen)
    with torch.no_grad():
        full = decode(pts, z, model.decoder)
        permuted = decode(pts[perm], z, model.decoder)
        alone = decode(pts[:1], z, model.decoder)
    assert torch.equal(permuted, full[perm])
    assert torch.allclose(alone, full[:1], rtol=0, atol=1e-12)


def test_decoder_shape_error():
    model = build_model(TOY)
    with pytest.raises(ShapeError):
        decode(torch.zeros(5, 2), torch.zeros(TOY.latent_dim), model.decoder)


def test_bce_cases():
    assert float(bce_loss(torch.tensor([50.0], dtype=torch.float64), torch.tensor([1.0]))) < 1e-20
    for o in (0.0, 1.0):
        assert float(bce_loss(torch.zeros(3), torch.full((3,), o))) == pytest.approx(np.log(2), abs=1e-7)


def test_bce_matches_direct_formula():
    rng = np.random.default_rng(0)
    z = rng.uniform(-10, 10, 1000)
    o = rng.integers(0, 2, 1000)
    s = 1 / (1 + np.exp(-z))
    direct = -np.mean(o * np.log(s) + (1 - o) * np.log(1 - s))
    ours = float(bce_loss(torch.tensor(z), torch.tensor(o)))
    assert abs(ours - direct) < 1e-9


@given(st.lists(st.floats(-80, 80), min_size=1, max_size=20), st.integers(0, 2 ** 20))
def test_bce_nonnegative(zs, bits):
    o = torch.tensor([(bits >> i) & 1 for i in range(len(zs))], dtype=torch.float64)
    assert float(bce_loss(torch.tensor(zs, dtype=torch.float64), o)) >= 0


def test_adam_zero_gradient_is_noop():
    p = {"w": torch.tensor([1.0, -2.0])}
    adam_step(p, {"w": torch.zeros(2)}, OptimizerState())
    assert torch.equal(p["w"], torch.tensor([1.0, -2.0]))


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.booleans())
def test_adam_first_step_is_lr_times_sign(mag, neg):
    g = -mag if neg else mag
    p = {"w": torch.tensor([0.5], dtype=torch.float64)}
    st_ = OptimizerState()
    adam_step(p, {"w": torch.tensor([g], dtype=torch.float64)}, st_)
    step = float(p["w"][0]) - 0.5
    assert abs(step + st_.lr * np.sign(g)) < 1e-6
    assert abs(step + st_.lr * np.sign(g)) <= st_.lr * (st_.eps / mag + 1e-9)
    assert st_.t == 1


def test_adam_minimizes_quadratic():
    w = torch.ones(5, dtype=torch.float64)
    st_ = OptimizerState(lr=1e-2)
    for _ in range(2000):
        adam_step({"w": w}, {"w": 2 * w}, st_)
    assert float(w.norm()) < 1e-2


def test_adam_errors():
    with pytest.raises(TrainingError, match="layer.weight"):
        adam_step({"layer.weight": torch.zeros(2)}, {"layer.weight": torch.tensor([1.0, float("nan")])},
                  OptimizerState())
    with pytest.raises(ShapeError):
        adam_step({"w": torch.zeros(2)}, {"w": torch.zeros(3)}, OptimizerState())


def test_clip_grad_norm():
    g = {"a": torch.tensor([3.0]), "b": torch.tensor([4.0])}
    assert clip_grad_norm(g, 10.0) == pytest.approx(5.0)
    assert float(g["a"]) == 3.0
    clip_grad_norm(g, 1.0)
    assert float(torch.sqrt(g["a"] ** 2 + g["b"] ** 2)) == pytest.approx(1.0)


def test_fusion_identity_case():
    fuse = CrossAttentionFusion(8, 1).double()
    with torch.no_grad():
        for lin in (fuse.q, fuse.k, fuse.v, fuse.out):
            lin.weight.copy_(torch.eye(8))
            lin.bias.zero_()
    z = torch.randn(8, dtype=torch.float64)
    assert torch.allclose(fuse_cross_attention(z, z, fuse, 1), 2 * z, atol=1e-12)


def test_fusion_weights_sum_to_one():
    fuse = CrossAttentionFusion(16, 4).double()
    _, w = fuse(torch.randn(16, dtype=torch.float64), torch.randn(16, dtype=torch.float64), return_weights=True)
    assert w.shape == (4, 4)
    assert (w.sum(-1) - 1).abs().max() < 1e-9


def test_fusion_heads_must_divide():
    with pytest.raises(ConfigurationError):
        CrossAttentionFusion(10, 4)
    with pytest.raises(ConfigurationError):
        NetConfig(latent_dim=10, heads=4, views=2)


def toy_dataset(n=3, pool=400, seed=0):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        pts = (rng.random((pool, 3)) - 0.5).astype(np.float32)
        lab = (np.linalg.norm(pts, axis=1) < 0.2 + 0.05 * i).astype(np.uint8)
        imgs = [rng.random((16, 16)) for _ in range(2)]
        items.append(TrainingItem("m%d" % i, imgs, OccupancySampleSet(pts, lab, i), seed=100 + i, angles=[0.0, 90.0]))
    return items


SMALL = TrainConfig(steps=12, batch_points=64, lr=1e-3, seed=4)


def test_training_is_deterministic():
    a = train(toy_dataset(), TOY, SMALL).losses
    b = train(toy_dataset(), TOY, SMALL).losses
    assert a == b and len(a) == 12
    assert all(np.isfinite(a))


def test_shuffled_dataset_same_losses():
    data = toy_dataset()
    shuffled = list(data)
    random.Random(1).shuffle(shuffled)
    a = train(data, TOY, SMALL).losses
    b = train(shuffled, TOY, SMALL).losses
    assert sorted(a) == sorted(b)


def test_training_reduces_loss():
    res = train(toy_dataset(1), TOY, TrainConfig(steps=150, batch_points=128, lr=1e-3))
    assert np.mean(res.losses[-20:]) < np.mean(res.losses[:5])
    assert all(torch.isfinite(p).all() for p in res.model.parameters())


def test_training_biplanar():
    cfg = NetConfig(**{**TOY.to_dict(), "views": 2})
    res = train(toy_dataset(2), cfg, TrainConfig(steps=3, batch_points=32))
    assert len(res.losses) == 3


def test_empty_dataset():
    from bonerecon.errors import InputError
    with pytest.raises(InputError):
        train([], TOY, SMALL)


def test_checkpoint_round_trip(tmp_path):
    model = train(toy_dataset(1), TOY, TrainConfig(steps=3, batch_points=32)).model
    path = save_checkpoint(model, tmp_path / "ck", extra={"steps": 3})
    index = json.loads(path.read_text())
    assert {"name", "shape", "offset"} <= set(index["tensors"][0])
    back, extra = load_checkpoint(tmp_path / "ck.json")
    assert extra == {"steps": 3}
    for (n, a), (m, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert n == m and torch.equal(a.float(), b)


def test_checkpoint_truncated_blob(tmp_path):
    save_checkpoint(build_model(TOY), tmp_path / "ck")
    blob = tmp_path / "ck.bin"
    blob.write_bytes(blob.read_bytes()[:100])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ck")


def test_config_file_round_trip(tmp_path):
    save_config(tmp_path / "c.ini", TOY, SMALL)
    net, tr = load_config(tmp_path / "c.ini")
    assert net == TOY and tr == SMALL


def test_loss_csv(tmp_path):
    write_loss_csv(tmp_path / "l.csv", [0.5, 0.25])
    assert (tmp_path / "l.csv").read_text().splitlines() == ["step,loss", "0,0.5", "1,0.25"]
