"""Seven-row loss ablation (CML, CCL, CWCL, SDCL switches) with optional flag sweeps.

Thin wrapper over ``blindloss ablate``; kept as a script so a full sweep is
one command from the repo root.

    BLINDLOSS_THREADS=4 python scripts/table4_sweep.py --seeds 0,1,2 --out runs/table4
    python scripts/table4_sweep.py --sweep head_mode=individual,sg,shared --out runs/heads
"""

import sys

from blindloss.cli import main

if __name__ == "__main__":
    sys.exit(main(["ablate", "--losses", "table4", *sys.argv[1:]]))
