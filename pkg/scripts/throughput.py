"""Time baseline reconstructions of a torus cloud at several sizes.

    python3 scripts/throughput.py --depth 8 --points 200000 2000000
"""

import argparse
import json
import resource
import time

from surfrecon.analytic import make_shape
from surfrecon.config import PipelineConfig
from surfrecon.pipeline import reconstruct


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depth", type=int, default=8)
    ap.add_argument("--points", type=int, nargs="+", default=[200_000, 2_000_000])
    ap.add_argument("--shape", default="torus")
    ap.add_argument("--max-batch", type=int, default=300_000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = PipelineConfig().replace(octree={"depth": args.depth},
                                   partition={"max_batch": args.max_batch})
    rows = []
    for n in args.points:
        cloud = make_shape(args.shape).sample(n, seed=0)
        t0 = time.perf_counter()
        rec = reconstruct(cloud, cfg, workers=args.workers)
        rows.append({
            "points": n, "seconds": time.perf_counter() - t0,
            "phases": {k: round(v, 3) for k, v in rec.timings.items()},
            "parts": len(rec.parts), "vertices": len(rec.labels),
            "max_part_points": max(len(p.point_indices) for p in rec.parts),
            "triangles": len(rec.mesh.triangles),
            "peak_rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024,
        })
        print(json.dumps(rows[-1]), flush=True)
    if len(rows) > 1:
        print(json.dumps({"ratio_last_first": rows[-1]["seconds"] / rows[0]["seconds"]}))


if __name__ == "__main__":
    main()
