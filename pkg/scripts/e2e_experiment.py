"""Directional loss-ablation experiment over paired seeds.

Trains the baseline, +CML, +CML+CCL, full and full-without-SDCL rows on the
default corpus, then reports the shifted-domain mIoU ordering and the
separation comparison. Results go to OUT/e2e.json.

    OPENBLAS_NUM_THREADS=1 python scripts/e2e_experiment.py --seeds 0,1,2,3,4 --out runs/e2e
"""

import argparse
import json
from pathlib import Path

from blindloss.ablation import directional_runs, directional_verdict
from blindloss.cli import load_config
from blindloss.harness import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--config", help="JSON config (defaults otherwise)")
    ap.add_argument("--iters", type=int)
    ap.add_argument("--out", default="runs/e2e")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.iters:
        cfg = TrainConfig(**{**cfg.to_dict(), "total_iters": args.iters})
    seeds = [int(s) for s in args.seeds.split(",")]
    runs = directional_runs(cfg, seeds)
    for r in runs:
        print(f"{r['name']:<9} seed {r['seed']}  shifted {r['shifted_miou']:.4f}  source {r['source_miou']:.4f}  "
              f"sep {r['shifted_separation']}  {r['seconds']:.0f}s", flush=True)
    verdict = directional_verdict(runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    slim = [{k: r[k] for k in ("name", "seed", "shifted_miou", "source_miou", "shifted_separation", "seconds")}
            for r in runs]
    (out / "e2e.json").write_text(json.dumps({"verdict": verdict, "runs": slim}, indent=2) + "\n")
    print(json.dumps(verdict, indent=2))


if __name__ == "__main__":
    main()
