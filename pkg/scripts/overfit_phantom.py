"""Overfit the network to one phantom and report training BCE and 64^3 IoU."""

import argparse
import time

import numpy as np
import torch

from bonerecon.drr import camera_for_view, clahe, display_normalize, render_drr
from bonerecon.geom import normalize_to_unit_box
from bonerecon.net.model import NetConfig, field_function
from bonerecon.net.train import TrainConfig, TrainingItem, train
from bonerecon.occupancy import InsideTester, sample_uniform_occupancy
from bonerecon.phantom import PhantomSpec, phantom_generate


def grid_iou(fn, mesh, tau=0.2, res=64):
    c = -0.5 + (np.arange(res) + 0.5) / res
    pts = np.stack(np.meshgrid(c, c, c, indexing="ij"), -1).reshape(-1, 3)
    pred = fn(pts) >= tau
    gt = InsideTester(mesh)(pts)
    return float((pred & gt).sum() / max((pred | gt).sum(), 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--blocks", type=int, default=2)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=500)
    args = ap.parse_args()
    torch.set_num_threads(1)
    vol, mesh, _ = phantom_generate(PhantomSpec(), seed=3)
    img = clahe(display_normalize(render_drr(vol, camera_for_view(0, 1000, 500, 64, 7.5)))).values
    unit, _ = normalize_to_unit_box(mesh)
    samples = sample_uniform_occupancy(unit, 100000, 1)
    item = TrainingItem("phantom", [img], samples, 1)
    net = NetConfig(hidden=args.hidden, decoder_blocks=args.blocks)
    image = torch.as_tensor(img[None], dtype=torch.float32)
    t0 = time.time()

    def report(step, loss, model):
        if step % args.every == 0 or step == args.steps - 1:
            model.eval()
            fn = field_function(model, model.encode(image))
            print("step %5d  loss %.4f  iou %.3f  %.0fs" % (step, loss, grid_iou(fn, unit), time.time() - t0), flush=True)
            model.train()

    res = train([item], net, TrainConfig(steps=args.steps, lr=args.lr, seed=args.seed), callback=report)
    print("mean loss over last 100 steps %.4f" % np.mean(res.losses[-100:]))


if __name__ == "__main__":
    main()
