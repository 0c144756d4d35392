"""Shifted mIoU of the directional rows with every auxiliary weight scaled by k.

Exploratory: the default weights (0.2, 0.2, 0.3, 0.3) are used everywhere else.

    python scripts/weight_scale_probe.py --scales 1,0.1 --seeds 0,1
"""

import argparse
import json

from blindloss.ablation import DIRECTIONAL_ROWS, directional_runs
from blindloss.harness import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", default="1,0.1")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--rows", default="baseline,cml,cml+ccl,full")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = {k: DIRECTIONAL_ROWS[k] for k in args.rows.split(",")}
    table = {}
    for k in (float(s) for s in args.scales.split(",")):
        base = TrainConfig()
        cfg = TrainConfig(**{**base.to_dict(), **{f"omega{i + 1}": w * k for i, w in enumerate(base.weights)}})
        for r in directional_runs(cfg, seeds, rows):
            table.setdefault(f"x{k:g}", {}).setdefault(r["name"], []).append(round(r["shifted_miou"], 4))
            print(f"scale {k:g} {r['name']:<8} seed {r['seed']} shifted {r['shifted_miou']:.4f}", flush=True)
    print(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
