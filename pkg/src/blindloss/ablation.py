"""Loss and flag ablation grids run over shared corpora and seeds."""

from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .harness import TrainConfig, evaluate_shifted, history_csv, summary_document, train, train_corpus
from .tensor import ContractError

# (CML, CCL, CWCL, SDCL) switches of the loss ablation table
TABLE4 = (
    (0, 0, 0, 0),
    (1, 0, 0, 0),
    (1, 1, 0, 0),
    (0, 0, 1, 0),
    (0, 0, 1, 1),
    (1, 1, 1, 0),
    (1, 1, 1, 1),
)
LOSS_SETS = {
    "all": ((1, 1, 1, 1),),
    "ce": ((0, 0, 0, 0),),
    "table4": TABLE4,
}
FLAG_NAMES = ("cml", "ccl", "cwcl", "sdcl")
DEFAULT_WEIGHTS = (0.2, 0.2, 0.3, 0.3)


def row_name(flags) -> str:
    on = [n for n, f in zip(FLAG_NAMES, flags) if f]
    return "ce" if not on else "ce+" + "+".join(on)


def apply_flags(cfg: TrainConfig, flags, weights=None) -> TrainConfig:
    """Copy of cfg with switched-off losses at weight 0; switched-on ones keep cfg's weight (or ``weights``)."""
    if len(flags) != 4:
        raise ContractError(f"loss flags need 4 entries (cml, ccl, cwcl, sdcl), got {flags!r}")
    weights = cfg.weights if weights is None else weights
    w = [float(wi) if f else 0.0 for f, wi in zip(flags, weights)]
    return replace(cfg, omega1=w[0], omega2=w[1], omega3=w[2], omega4=w[3])


def parse_flags(text: str) -> tuple:
    """'1,1,0,1' -> (1, 1, 0, 1)."""
    try:
        flags = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ContractError(f"cannot parse loss flags {text!r}; expected four comma-separated 0/1 values") from None
    if len(flags) != 4 or any(f not in (0, 1) for f in flags):
        raise ContractError(f"loss flags {text!r} must be four comma-separated 0/1 values")
    return flags


def parse_sweep(text: str) -> tuple[str, list]:
    """'head_mode=shared,sg' -> ('head_mode', ['shared', 'sg']) with values typed like the default."""
    key, sep, values = text.partition("=")
    if not sep or key not in TrainConfig.keys():
        raise ContractError(f"bad sweep {text!r}; expected KEY=V1,V2 with KEY a config field")
    default = getattr(TrainConfig(), key)
    out = []
    for v in values.split(","):
        if isinstance(default, bool):
            if v not in ("true", "false"):
                raise ContractError(f"sweep {key}: expected true/false, got {v!r}")
            out.append(v == "true")
        elif isinstance(default, int):
            out.append(int(v))
        elif isinstance(default, float):
            out.append(float(v))
        elif isinstance(default, str):
            out.append(v)
        else:
            raise ContractError(f"sweep {key}: list-valued fields cannot be swept")
    return key, out


@dataclass
class RowSpec:
    name: str
    cfg: TrainConfig


def grid(base: TrainConfig, loss_rows, sweeps=(), seeds=(0,)) -> list[RowSpec]:
    """Cross product of loss rows, flag sweeps and seeds, in a stable order."""
    keys = [k for k, _ in sweeps]
    specs = []
    for flags in loss_rows:
        for combo in itertools.product(*[v for _, v in sweeps]):
            cfg = apply_flags(base, flags)
            cfg = replace(cfg, **dict(zip(keys, combo)))
            label = row_name(flags) + "".join(f" {k}={v}" for k, v in zip(keys, combo))
            for s in seeds:
                specs.append(RowSpec(label, replace(cfg, seed=int(s))))
    return specs


def run_spec(spec: RowSpec) -> dict:
    """Train and evaluate one row; returns metrics plus the csv/summary texts."""
    cfg = spec.cfg
    cfg.validate()
    result = train(cfg, train_corpus(cfg))
    ev = evaluate_shifted(result, cfg)
    return {
        "name": spec.name,
        "seed": cfg.seed,
        "weights": list(cfg.weights),
        "shifted_miou": ev["shifted_miou"],
        "source_miou": ev["source_miou"],
        "shifted_separation": ev["shifted_separation"],
        "metrics_csv": history_csv(result.history),
        "summary": summary_document(cfg, ev),
    }


def worker_count(jobs: int) -> int:
    raw = os.environ.get("BLINDLOSS_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ContractError(f"BLINDLOSS_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, jobs))


def run_grid(specs: list[RowSpec], workers: int | None = None) -> list[dict]:
    """Run every spec; results come back in spec order whatever the worker count."""
    workers = worker_count(len(specs)) if workers is None else workers
    if workers <= 1:
        return [run_spec(s) for s in specs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(run_spec, specs))


def aggregate(results: list[dict]) -> list[dict]:
    """Mean metrics per row name, keeping first-seen order."""
    by_name: dict[str, list] = {}
    for r in results:
        by_name.setdefault(r["name"], []).append(r)
    rows = []
    for name, rs in by_name.items():
        seps = [r["shifted_separation"] for r in rs if r["shifted_separation"] is not None]
        rows.append({
            "name": name,
            "weights": rs[0]["weights"],
            "seeds": [r["seed"] for r in rs],
            "shifted_miou": float(np.mean([r["shifted_miou"] for r in rs])),
            "source_miou": float(np.mean([r["source_miou"] for r in rs])),
            "shifted_separation": float(np.mean(seps)) if seps else None,
            "per_seed_shifted_miou": [r["shifted_miou"] for r in rs],
        })
    return rows


def format_table(rows: list[dict]) -> str:
    width = max([len("row")] + [len(r["name"]) for r in rows]) + 2
    head = f"{'row':<{width}} {'shifted mIoU':>12} {'source mIoU':>12} {'separation':>11}"
    lines = [head, "-" * len(head)]
    for r in rows:
        sep = "n/a" if r["shifted_separation"] is None else f"{r['shifted_separation']:.4f}"
        lines.append(f"{r['name']:<{width}} {r['shifted_miou']:>12.4f} {r['source_miou']:>12.4f} {sep:>11}")
    return "\n".join(lines)


# ---------------------------------------------------------------- directional reproduction

# rows of the ordering check, plus the no-SDCL twin of the full row for the separation check
DIRECTIONAL_ROWS = {
    "baseline": (0, 0, 0, 0),
    "cml": (1, 0, 0, 0),
    "cml+ccl": (1, 1, 0, 0),
    "full": (1, 1, 1, 1),
    "no-sdcl": (1, 1, 1, 0),
}


def directional_runs(base: TrainConfig, seeds, rows=DIRECTIONAL_ROWS) -> list[dict]:
    """Train every (row, seed) on shared corpora; each record carries its wall time."""
    out = []
    for name, flags in rows.items():
        for s in seeds:
            spec = RowSpec(name, replace(apply_flags(base, flags), seed=int(s)))
            t0 = time.perf_counter()
            r = run_spec(spec)
            r["seconds"] = time.perf_counter() - t0
            out.append(r)
    return out


def directional_verdict(runs: list[dict]) -> dict:
    """Ordering baseline < cml <= cml+ccl < full on seed-mean shifted mIoU, full > baseline per seed,
    and shifted-domain separation with SDCL vs without, on seed means."""
    by = {}
    for r in runs:
        by.setdefault(r["name"], {})[r["seed"]] = r
    mean = {k: float(np.mean([r["shifted_miou"] for r in v.values()])) for k, v in by.items()}
    seeds = sorted(by["baseline"])
    paired = [by["full"][s]["shifted_miou"] - by["baseline"][s]["shifted_miou"] for s in seeds]
    verdict = {
        "seeds": seeds,
        "mean_shifted_miou": mean,
        "full_minus_baseline": paired,
        "ordering": {
            "baseline<cml": mean["baseline"] < mean["cml"],
            "cml<=cml+ccl": mean["cml"] <= mean["cml+ccl"],
            "cml+ccl<full": mean["cml+ccl"] < mean["full"],
            "full>baseline every seed": all(d > 0 for d in paired),
        },
        "ordering_seconds": sum(r["seconds"] for r in runs if r["name"] in ("baseline", "cml", "cml+ccl", "full")),
    }
    verdict["ordering_holds"] = all(verdict["ordering"].values())
    if "no-sdcl" in by:
        def sep(name):
            vals = [by[name][s]["shifted_separation"] for s in seeds]
            return None if any(v is None for v in vals) else float(np.mean(vals))

        with_s, without = sep("full"), sep("no-sdcl")
        verdict["separation"] = {"with_sdcl": with_s, "without_sdcl": without}
        verdict["separation_higher_with_sdcl"] = (with_s is not None and without is not None and with_s > without)
    return verdict
