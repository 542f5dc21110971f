"""Train on analytic sphere/torus/plane clouds and report accuracy on a held-out ellipsoid.

    python3 scripts/train_analytic.py --work /tmp/analytic --steps 500 --lr 3e-3
"""

import argparse
import json
import time
from pathlib import Path

from surfrecon.config import PipelineConfig
from surfrecon.network import init_state, save_checkpoint
from surfrecon.pipeline import analytic_dataset, load_dataset
from surfrecon.training import TrainOptions, accuracy, train

TRAIN_SHAPES = ("sphere", "torus", "plane")
HELD_OUT = "ellipsoid"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="/tmp/analytic")
    ap.add_argument("--depth", type=int, default=6)
    ap.add_argument("--points", type=int, default=20_000)
    ap.add_argument("--noise", type=float, default=0.005)
    ap.add_argument("--crop", type=int, default=4000)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = PipelineConfig().replace(octree={"depth": args.depth},
                                   train={"crop_vertices": args.crop})
    work = Path(args.work)
    t0 = time.perf_counter()
    dirs = {}
    for k, shape in enumerate(TRAIN_SHAPES + (HELD_OUT,)):
        d = work / f"{shape}_d{args.depth}_n{args.points}"
        if not (d / "manifest.json").exists():
            analytic_dataset(shape, cfg, d, args.points, args.noise, seed=k)
        dirs[shape] = d
    data = [p for s in TRAIN_SHAPES for p in load_dataset(dirs[s])]
    test = load_dataset(dirs[HELD_OUT])
    t_prep = time.perf_counter() - t0

    state = init_state(cfg.network_config(), args.seed)
    res = train(data, state, TrainOptions(lr=args.lr, steps=args.steps, seed=args.seed))
    acc = accuracy(test, res.final)
    out = {"lr": args.lr, "steps": args.steps, "held_out_accuracy": acc,
           "train_accuracy": accuracy(data, res.final), "prep_seconds": t_prep,
           "total_seconds": time.perf_counter() - t0,
           "final_loss_mean50": sum(c[1] for c in res.curve[-50:]) / min(50, len(res.curve))}
    save_checkpoint(res.final, work / f"net_lr{args.lr}_s{args.steps}.ckpt")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
