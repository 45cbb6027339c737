"""Command line entry point: ``bonerecon <subcommand> ...``."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ReconError

log = logging.getLogger("bonerecon")


def _cmd_phantom(args):
    from .geom import save_mesh, save_volume
    from .pipeline import load_pipeline_config
    from .phantom import phantom_generate

    cfg = load_pipeline_config(args.config)
    vol, mesh, _ = phantom_generate(cfg.phantom, args.seed)
    save_volume(vol, args.volume)
    save_mesh(mesh, args.mesh)
    print("phantom: %d voxels, bone mesh %d vertices / %d faces" % (vol.values.size, mesh.n_vertices, mesh.n_faces))


def _cmd_build_dataset(args):
    from .pipeline import build_dataset, load_pipeline_config

    cfg = load_pipeline_config(args.config)
    man = build_dataset(cfg, args.n, args.seed, args.out)
    print("dataset: %d samples in %s" % (len(man["samples"]), args.out))


def _cmd_train(args):
    import torch

    from .net.checkpoint import save_checkpoint
    from .net.train import train, write_loss_csv
    from .pipeline import load_pipeline_config, training_items

    torch.set_num_threads(args.threads)
    cfg = load_pipeline_config(args.config)
    tcfg = cfg.train
    if args.steps is not None or args.seed is not None:
        from dataclasses import replace
        tcfg = replace(tcfg, steps=tcfg.steps if args.steps is None else args.steps,
                       seed=tcfg.seed if args.seed is None else args.seed)
    items = training_items(args.manifest)
    res = train(items, cfg.net, tcfg)
    save_checkpoint(res.model, args.out, extra={"steps": tcfg.steps, "seed": tcfg.seed})
    if args.losses:
        write_loss_csv(args.losses, res.losses)
    last = res.losses[-1] if res.losses else float("nan")
    print("train: %d steps, final loss %.5f" % (tcfg.steps, last))


def _cmd_infer(args):
    from .pipeline import infer, load_pipeline_config

    cfg = load_pipeline_config(args.config)
    mesh, info = infer(args.checkpoint, args.image, args.out, cfg.extract)
    if info["empty"]:
        print("warning: empty mesh written to %s" % args.out, file=sys.stderr)
    print("infer: %d vertices / %d faces, %d field evaluations" % (mesh.n_vertices, mesh.n_faces, info["n_evals"]))


def _cmd_register(args):
    from .geom import load_mesh, save_mesh
    from .pipeline import load_pipeline_config, register
    from .register.template import TemplateLibrary, read_regions

    cfg = load_pipeline_config(args.config)
    regions = read_regions(args.regions) if args.regions else TemplateLibrary.load(args.templates).labels
    out, em = register(args.templates, regions, load_mesh(args.target), cfg.cpd,
                       cfg.register.target_samples, args.seed)
    save_mesh(out, args.out)
    print("register: %d iterations (%s), sigma2 %.3g" % (em.iterations, em.status, em.sigma2[-1] if em.sigma2 else float("nan")))


def _cmd_eval(args):
    from .pipeline import evaluate_files, load_pipeline_config

    cfg = load_pipeline_config(args.config)
    report = evaluate_files(args.pred, args.gt, cfg.metrics)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def _cmd_render_drr(args):
    from .drr import camera_for_view, clahe, display_normalize, render_drr, write_pgm16, write_png8
    from .geom import load_volume
    from .pipeline import load_pipeline_config

    cfg = load_pipeline_config(args.config).drr
    vol = load_volume(args.volume)
    cam = camera_for_view(args.angle, cfg.source_distance, cfg.detector_distance,
                          args.size or cfg.image_size, args.pitch or cfg.pixel_pitch, center=vol.center)
    img = render_drr(vol, cam)
    if args.raw:
        np.save(args.raw, img.values)
    shown = display_normalize(img)
    if not args.no_clahe:
        shown = clahe(shown, (cfg.clahe_tiles, cfg.clahe_tiles), cfg.clahe_clip)
    if args.out.endswith(".pgm"):
        write_pgm16(shown, args.out)
    else:
        write_png8(shown, args.out)
    print("render-drr: %dx%d image, raw range [%.4g, %.4g]" % (img.width, img.height, img.values.min(), img.values.max()))


def build_parser():
    p = argparse.ArgumentParser(prog="bonerecon", description="Single-view bone reconstruction toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="generate a synthetic torso volume and its bone mesh")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--volume", required=True, help="output raw volume path (a .json sidecar is written)")
    s.add_argument("--mesh", required=True, help="output bone mesh (.off/.obj/.ply)")
    s.set_defaults(fn=_cmd_phantom)

    s = sub.add_parser("build-dataset", help="phantoms, DRRs and occupancy samples with a manifest")
    s.add_argument("--config")
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_build_dataset)

    s = sub.add_parser("train", help="train the occupancy network on a dataset manifest")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="checkpoint path (index .json + .bin blob)")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--losses", help="write the loss history as CSV")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("infer", help="reconstruct a mesh from DRR image(s)")
    s.add_argument("--config")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True, action="append", help="PNG view; repeat for bi-planar models")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_infer)

    s = sub.add_parser("register", help="deform an assembled template toward a coarse mesh")
    s.add_argument("--config")
    s.add_argument("--templates", required=True, help="template library directory")
    s.add_argument("--regions", help="region list file, one label per line (default: all parts)")
    s.add_argument("--target", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=_cmd_register)

    s = sub.add_parser("eval", help="metric report between a predicted and a ground-truth mesh")
    s.add_argument("--config")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", help="write the JSON report here as well")
    s.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("render-drr", help="render a DRR from a saved volume")
    s.add_argument("--config")
    s.add_argument("--volume", required=True)
    s.add_argument("--angle", type=float, default=0.0)
    s.add_argument("--size", type=int)
    s.add_argument("--pitch", type=float)
    s.add_argument("--no-clahe", action="store_true")
    s.add_argument("--raw", help="also save raw line integrals as .npy")
    s.add_argument("--out", required=True, help=".png (8-bit) or .pgm (16-bit)")
    s.set_defaults(fn=_cmd_render_drr)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)  # usage errors exit with status 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except ReconError as exc:
        print("error [%s]: %s" % (exc.category, exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print("error [io]: %s" % exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
