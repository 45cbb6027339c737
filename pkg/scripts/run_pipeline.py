"""Run build-dataset -> train -> infer -> register -> eval in one working directory."""

import argparse
import sys
from pathlib import Path

from bonerecon.cli import main as cli
from bonerecon.pipeline import load_pipeline_config, save_pipeline_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="working directory")
    ap.add_argument("--config", help="pipeline config (defaults when omitted)")
    ap.add_argument("--n", type=int, default=4, help="number of phantoms")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    cfg_path = root / "pipeline.cfg"
    save_pipeline_config(load_pipeline_config(args.config), cfg_path)
    ds, ck = root / "ds", root / "model"
    steps = [
        ["build-dataset", "--n", args.n, "--seed", args.seed, "--out", ds],
        ["train", "--manifest", ds / "manifest.json", "--steps", args.steps, "--out", ck, "--losses", root / "loss.csv"],
        ["infer", "--checkpoint", ck, "--image", ds / "sample_000" / "drr_000.png", "--out", root / "coarse.off"],
        ["register", "--templates", ds / "templates", "--target", root / "coarse.off", "--out", root / "final.off"],
        ["eval", "--pred", root / "final.off", "--gt", ds / "sample_000" / "mesh.off", "--out", root / "report.json"],
    ]
    for argv in steps:
        print("==>", argv[0], flush=True)
        code = cli([argv[0], "--config", str(cfg_path), *map(str, argv[1:])])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
