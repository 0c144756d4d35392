"""Command-line entry point: train, eval, ablate, gradcheck, gen-data and rerun.

Every command that writes to ``--out`` also writes ``manifest.json`` holding
the argv, the full config snapshot, corpus manifests and a SHA-256 of every
output file. ``rerun MANIFEST`` replays the command from that snapshot.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from . import ablation as AB
from . import gradsuite, plots
from .data import make_corpus, write_manifest, write_pgm, write_ppm
from .harness import (NonFiniteLoss, TrainConfig, dumps, eval_corpora, evaluate_shifted, history_csv,
                      summary_document, train, train_corpus)
from .model import init_network, load_checkpoint, load_into, save_checkpoint
from .tensor import ContractError

log = logging.getLogger("blindloss")

MANIFEST = "manifest.json"


class ConfigError(ContractError):
    pass


# ---------------------------------------------------------------- config files


def _line_of(text: str, key: str) -> int:
    needle = json.dumps(key)
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return 0


def _coerce(key: str, value, default, line: int):
    where = f"$.{key} (line {line})"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    kind = type(default[0]) if default else None
    for i, v in enumerate(value):
        if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(f"$.{key}[{i}] (line {line}): expected an integer, got {v!r}")
        if kind is str and not isinstance(v, str):
            raise ConfigError(f"$.{key}[{i}] (line {line}): expected a string, got {v!r}")
    return list(value)


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    """JSON text -> TrainConfig. Unknown keys and bad types are rejected with key path and line."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for key, value in doc.items():
        line = _line_of(text, key)
        if key not in known:
            raise ConfigError(f"{source}: unknown key $.{key} (line {line})")
        values[key] = _coerce(key, value, getattr(defaults, key), line)
    try:
        return TrainConfig(**values)
    except ContractError as e:
        raise ConfigError(f"{source}: {e}") from None


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: TrainConfig) -> str:
    """Canonical form: every field, sorted keys, two-space indent."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- manifests


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_run_manifest(out: Path, command: list, cfg: TrainConfig | None, corpora: dict) -> dict:
    """List every file under ``out`` (except the manifest) with its digest."""
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    doc = {
        "command": list(command),
        "config": cfg.to_dict() if cfg is not None else None,
        "corpora": corpora,
        "out": str(out),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": version_string(),
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _write_corpora(out: Path, cfg: TrainConfig) -> dict:
    """Corpus manifests as text files; returns name -> file name."""
    listed = {"train": train_corpus(cfg)}
    listed.update({f"eval_{k}": v for k, v in eval_corpora(cfg).items()})
    names = {}
    for name, corpus in listed.items():
        fname = f"corpus_{name}.txt"
        write_manifest(out / fname, corpus)
        names[name] = fname
    return names


def _emit_plots(out: Path, history: list, evaluation: dict) -> None:
    """Loss curves and per-class IoU bars; failures are logged, never fatal."""
    try:
        keys = [k for k in ("total", "ce", "cml", "ccl", "cwcl", "sdcl") if any(r[k] for r in history)]
        (out / "loss_curves.svg").write_text(
            plots.line_chart({k: [r[k] for r in history] for k in keys}, "training losses"))
        for name, rep in evaluation["reports"].items():
            labels = [str(c) for c in range(len(rep.per_class_iou))]
            (out / f"iou_{name}.svg").write_text(plots.bar_chart(labels, rep.per_class_iou, f"per-class IoU ({name})"))
    except Exception as e:  # noqa: BLE001
        log.warning("plotting failed: %s", e)


# ---------------------------------------------------------------- commands


def _resolve_config(args) -> TrainConfig:
    cfg = args.config_obj if getattr(args, "config_obj", None) is not None else (
        load_config(args.config) if args.config else TrainConfig())
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        overrides["total_iters"] = args.iters
    d = cfg.to_dict()
    d.update(overrides)
    try:
        return TrainConfig(**d)
    except ContractError as e:
        raise ConfigError(str(e)) from None


def _losses_for_train(args, cfg: TrainConfig) -> TrainConfig:
    if args.losses is None:
        return cfg
    if args.losses == "table4":
        raise ConfigError("--losses table4 selects several rows; use the ablate command")
    if args.losses == "custom":
        if not args.flags:
            raise ConfigError("--losses custom needs --flags CML,CCL,CWCL,SDCL (e.g. 1,1,0,1)")
        return AB.apply_flags(cfg, AB.parse_flags(args.flags))
    return AB.apply_flags(cfg, AB.LOSS_SETS[args.losses][0])


def cmd_train(args) -> int:
    cfg = _losses_for_train(args, _resolve_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg))
    corpora = _write_corpora(out, cfg)
    result = train(cfg, train_corpus(cfg), progress=True)
    ev = evaluate_shifted(result, cfg)
    (out / "metrics.csv").write_text(history_csv(result.history))
    (out / "summary.json").write_text(dumps(summary_document(cfg, ev)))
    save_checkpoint(out / "checkpoint.bin", result.net.named_parameters() + result.heads.named_parameters(),
                    {"config": cfg.to_dict()})
    if not args.no_plots:
        _emit_plots(out, result.history, ev)
    write_run_manifest(out, args.argv, cfg, corpora)
    print(f"shifted mIoU {ev['shifted_miou']:.4f}  source mIoU {ev['source_miou']:.4f}  -> {out}")
    return 0


def cmd_eval(args) -> int:
    from .harness import TrainResult, build_heads

    arrays, meta = load_checkpoint(args.checkpoint)
    if args.config or args.config_obj is not None:
        cfg = _resolve_config(args)
    else:
        cfg = TrainConfig(**meta.get("config", {}))
    net = init_network(cfg.network())
    heads = build_heads(cfg)
    load_into(net.named_parameters() + heads.named_parameters(), arrays)
    ev = evaluate_shifted(TrainResult(net, heads, []), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpora = _write_corpora(out, cfg)
    (out / "summary.json").write_text(dumps(summary_document(cfg, ev)))
    if not args.no_plots:
        _emit_plots(out, [], ev)
    write_run_manifest(out, args.argv, cfg, corpora)
    for name, rep in ev["reports"].items():
        print(f"{name:<8} mIoU {rep.miou:.4f}  pixel acc {rep.pixel_accuracy:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    if args.losses == "custom":
        if not args.flags:
            raise ConfigError("--losses custom needs at least one --flags CML,CCL,CWCL,SDCL")
        rows = [AB.parse_flags(f) for f in args.flags.split(";")]
    else:
        rows = AB.LOSS_SETS[args.losses or "table4"]
    sweeps = [AB.parse_sweep(s) for s in args.sweep or []]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    specs = AB.grid(cfg, rows, sweeps, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg))
    corpora = _write_corpora(out, cfg)
    results = AB.run_grid(specs)
    for i, r in enumerate(results):
        d = out / f"row{i:03d}"
        d.mkdir(exist_ok=True)
        (d / "metrics.csv").write_text(r["metrics_csv"])
        (d / "summary.json").write_text(dumps(r["summary"]))
    table = AB.aggregate(results)
    text = AB.format_table(table)
    (out / "table.txt").write_text(text + "\n")
    (out / "summary.json").write_text(dumps({"rows": table, "seeds": seeds,
                                             "runs": [{k: r[k] for k in ("name", "seed", "shifted_miou",
                                                                         "source_miou", "shifted_separation")}
                                                      for r in results]}))
    if not args.no_plots:
        try:
            (out / "shifted_miou.svg").write_text(plots.bar_chart(
                [f"r{i}" for i in range(len(table))], [r["shifted_miou"] for r in table], "mean shifted mIoU"))
        except Exception as e:  # noqa: BLE001
            log.warning("plotting failed: %s", e)
    write_run_manifest(out, args.argv, cfg, corpora)
    print(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradsuite.run_suite(args.instances, args.seed if args.seed is not None else 0)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{r.name:<5} instances {r.instances:>4}  max rel error {r.max_error:.3e}  "
              f"{'PASS' if r.passed else 'FAIL'}  ({r.seconds:.1f}s)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"tolerance": gradsuite.TOLERANCE,
               "results": [{"name": r.name, "instances": r.instances, "max_error": r.max_error,
                            "worst_instance": r.worst_instance, "passed": r.passed} for r in results]}
        (out / "summary.json").write_text(dumps(doc))
        write_run_manifest(out, args.argv, None, {})
    return 0 if ok else 1


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpora = _write_corpora(out, cfg)
    if args.export_scenes:
        size = (cfg.image_size, cfg.image_size)
        listed = {"train": make_corpus("train", min(args.count, cfg.train_scenes), "source", cfg.n_classes, size,
                                       cfg.data_seed)}
        listed.update({k: v for k, v in eval_corpora(cfg).items()})
        for name, corpus in listed.items():
            d = out / "scenes" / name
            d.mkdir(parents=True, exist_ok=True)
            for i in range(min(args.count, len(corpus))):
                s = corpus.scene(i)
                write_ppm(d / f"{s.seed}.ppm", s.image)
                write_pgm(d / f"{s.seed}.pgm", s.mask, cfg.n_classes)
    write_run_manifest(out, args.argv, cfg, corpora)
    print(f"wrote corpus manifests to {out}")
    return 0


def cmd_rerun(args) -> int:
    """Replay a manifest's command from its config snapshot and compare output digests."""
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from None
    argv = list(doc["command"])
    out = Path(args.out) if args.out else Path(doc["out"] + "_rerun")
    replay = _strip_options(argv, {"--config", "--out"}) + ["--out", str(out)]
    ns = build_parser().parse_args(replay)
    ns.argv = replay
    ns.config_obj = None
    if doc.get("config") is not None and "config" in ns:
        # the snapshot already carries --seed/--iters overrides and, for train, the loss flags
        ns.config_obj = parse_config(json.dumps(doc["config"]), str(path))
        ns.seed = None
        if "iters" in ns:
            ns.iters = None
        if ns.command == "train":
            ns.losses = None
    code = ns.func(ns)
    if code != 0 or not args.check:
        return code
    fresh = json.loads((out / MANIFEST).read_text())["outputs"]
    compared = [k for k in doc["outputs"] if k.endswith(("metrics.csv", "summary.json"))]
    bad = [k for k in compared if fresh.get(k) != doc["outputs"][k]]
    for k in compared:
        print(f"{'MISMATCH' if k in bad else 'identical'}  {k}")
    return 1 if bad else 0


def _strip_options(argv: list, names: set) -> list:
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in names:
            skip = True
            continue
        if any(tok.startswith(n + "=") for n in names):
            continue
        out.append(tok)
    return out


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blindloss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, out_default, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="JSON config; missing keys take defaults")
        sp.add_argument("--seed", type=int, help="training seed override")
        sp.add_argument("--out", default=out_default, metavar="DIR", help=f"output directory (default {out_default})")

    sp = sub.add_parser("train", help="train one configuration and evaluate it")
    common(sp, "runs/train")
    sp.add_argument("--iters", type=int, help="override total_iters")
    sp.add_argument("--losses", choices=["all", "ce", "table4", "custom"], help="loss set (default: config weights)")
    sp.add_argument("--flags", metavar="CML,CCL,CWCL,SDCL", help="0/1 switches for --losses custom")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on source and shifted styles")
    common(sp, "runs/eval")
    sp.add_argument("--checkpoint", required=True, metavar="PATH")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train a grid of loss rows and flag sweeps over shared seeds")
    common(sp, "runs/ablate")
    sp.add_argument("--iters", type=int, help="override total_iters")
    sp.add_argument("--losses", choices=["all", "ce", "table4", "custom"], default="table4")
    sp.add_argument("--flags", metavar="F1;F2", help="';'-separated CML,CCL,CWCL,SDCL rows for --losses custom")
    sp.add_argument("--sweep", action="append", metavar="KEY=V1,V2", help="config field to sweep (repeatable)")
    sp.add_argument("--seeds", metavar="S1,S2", help="comma-separated seeds (default: config seed)")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    sp.add_argument("--instances", type=int, default=100)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", metavar="DIR", help="also write summary.json and manifest.json here")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("gen-data", help="write corpus manifests, optionally exporting PPM/PGM scenes")
    common(sp, "runs/data")
    sp.add_argument("--export-scenes", action="store_true", help="write images (PPM) and masks (PGM)")
    sp.add_argument("--count", type=int, default=16, help="scenes exported per corpus (default 16)")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("rerun", help="replay a run from its manifest.json")
    sp.add_argument("manifest", metavar="MANIFEST", help="manifest.json or the run directory holding it")
    sp.add_argument("--out", metavar="DIR", help="output directory (default: original out + '_rerun')")
    sp.add_argument("--check", action="store_true", help="exit 1 unless metrics.csv/summary.json match byte for byte")
    sp.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    args.config_obj = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"blindloss: error: {e}", file=sys.stderr)
        return 2
    except (ContractError, NonFiniteLoss) as e:
        print(f"blindloss: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
