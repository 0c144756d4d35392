"""One test per acceptance criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the end-to-end
criteria (5 and 6) train 25 networks and take roughly 25 minutes on one core.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from blindloss import cli, gradsuite
from blindloss import contrastive as CL
from blindloss import covariance as CV
from blindloss import tensor as T
from blindloss.ablation import TABLE4, directional_runs, directional_verdict
from blindloss.harness import TrainConfig, poly_lr, sgd_step
from blindloss.tensor import Tensor

RESULTS = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = gradsuite.run_suite(100, seed=0)
    seconds = time.perf_counter() - start
    worst = max(r.max_error for r in results)
    ok = all(r.passed and r.instances >= 100 for r in results) and seconds <= 120
    report(1, ok, f"max rel error {worst:.2e} (<= 1e-4) over 5 losses x 100 instances in {seconds:.0f}s (<= 120s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_covariance_algebra():
    rng = np.random.default_rng(0)
    sym = psd = diag = cross = blind = 0.0
    for _ in range(200):
        h, w = rng.integers(1, 9, 2).tolist()
        h = max(h, 3 - w)  # at least two positions
        c = int(rng.integers(1, 9))
        f = rng.normal(size=(h, w, c)) * rng.uniform(0.1, 10, c) + rng.normal(size=c)
        fa = rng.normal(size=(h, w, c))
        cov = CV.covariance(CV.instance_normalize(Tensor(f))).values.data
        live = np.std(f.reshape(-1, c), axis=0) > CV.EPS
        sym = max(sym, np.abs(cov - cov.T).max())
        psd = min(psd, np.linalg.eigvalsh(cov).min())
        diag = max(diag, np.abs(np.diag(cov)[live] - 1).max(initial=0.0))
        cc = np.diag(CV.cross_covariance(CV.instance_normalize(Tensor(f)), CV.instance_normalize(Tensor(fa))).values.data)
        cross = max(cross, np.abs(cc).max() - 1)
        scale, shift = rng.uniform(0.1, 10, c), rng.normal(size=c) * 5
        cml, ccl = CV.alignment_losses([Tensor(f[None])], [Tensor((f * scale + shift)[None])])
        blind = max(blind, cml.item(), ccl.item())
    ok = sym <= 1e-12 and psd >= -1e-8 and diag <= 1e-6 and cross <= 1e-9 and blind <= 1e-8
    report(2, ok, f"asym {sym:.1e}, min eig {psd:.1e}, |diag-1| {diag:.1e}, cross excess {cross:.1e}, "
                  f"affine CML/CCL {blind:.1e}")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_info_nce_closed_forms():
    rng = np.random.default_rng(0)
    errs = []
    for n in (1, 10, 50, 100):
        a = rng.normal(size=16)
        a /= np.linalg.norm(a)
        batch = CL.ContrastiveBatch.single(a, a, [a] * n)
        errs.append(abs(CL.info_nce(batch, 0.1).item() - math.log(1 + n)))
    negs = Tensor(rng.uniform(-1, 1, (1, 20)))
    curve = [CL.info_nce_from_similarities(Tensor([s]), negs, 0.1).item() for s in np.linspace(-1, 1, 201)]
    mono = all(x > y for x, y in zip(curve, curve[1:]))
    ok = max(errs) <= 1e-9 and mono
    report(3, ok, f"max |loss - ln(1+N)| {max(errs):.1e} for N in {{1,10,50,100}}; strictly decreasing: {mono}")
    assert ok


# ---------------------------------------------------------------- 4


def _enum(y, pred):
    h, w = y.shape
    cells = [(i * w + j, int(y[i, j]), int(pred[i, j])) for i, j in itertools.product(range(h), range(w))]
    present = {c for _, c, _ in cells}
    cw = {c: [p for p, yc, _ in cells if yc != c] for c in present}
    anchors = [p for p, yc, pc in cells if pc != yc and pc in present]
    sd = {a: [p for p, yc, _ in cells if yc == cells[a][2] and p != a] for a in anchors}
    return cw, anchors, sd


def test_criterion_4_sampler_oracles():
    rng = np.random.default_rng(0)
    cases = mismatches = 0
    for _ in range(1200):
        h, w = rng.integers(1, 9, 2)
        c = int(rng.integers(1, 5))
        y = rng.integers(0, c, (h, w))
        pred = np.where(rng.random((h, w)) < rng.uniform(0, 1), rng.integers(0, c, (h, w)), y)
        cw, anchors, sd = _enum(y, pred)
        got_anchors = CL.sdcl_anchor_positions(CL.error_mask(pred, y), y, pred).tolist()
        bad = got_anchors != anchors
        bad |= any(CL.cwcl_negative_pool(y, k).tolist() != v for k, v in cw.items())
        bad |= any(CL.sdcl_negative_pool(y, pred.reshape(-1)[a], a).tolist() != v for a, v in sd.items())
        # drawn negatives stay inside the enumerated pools
        cfg = CL.SamplerConfig(negatives_per_class=5, negatives_per_anchor=5, anchors_per_image=64)
        plan = CL.plan_cwcl(y, cfg, rng)
        bad |= any(not set(n.tolist()) <= set(cw[y.reshape(-1)[a]]) for a, n in zip(plan.anchor_pos, plan.negative_pos))
        plan = CL.plan_sdcl(y, pred, CL.error_mask(pred, y), cfg, rng)
        bad |= plan.anchor_pos.tolist() != anchors
        bad |= any(not set(n.tolist()) <= set(sd[a]) for a, n in zip(plan.anchor_pos, plan.negative_pos))
        cases += 1
        mismatches += bool(bad)
    # perfect prediction gives zero SDCL loss
    feats = [Tensor(rng.normal(size=(2, 4, 4, 3)))]
    labels = rng.integers(0, 3, (2, 8, 8))
    heads = CL.HeadSet.init([3], 16, rng)
    perfect = CL.resize_labels(labels, (4, 4))
    zero = CL.sdcl_loss(feats, [Tensor(rng.normal(size=(2, 4, 4, 3)))], labels, perfect, heads,
                        CL.SamplerConfig(), 0.1, rng).item()
    ok = cases >= 1000 and mismatches == 0 and zero == 0.0
    report(4, ok, f"{cases} random grids up to 8x8 with <= 4 classes, {mismatches} mismatches; "
                  f"perfect-prediction SDCL = {zero}")
    assert ok


# ---------------------------------------------------------------- 5 and 6


@pytest.fixture(scope="module")
def directional():
    runs = directional_runs(TrainConfig(), range(5))
    return directional_verdict(runs)


@pytest.mark.slow
def test_criterion_5_directional_ablation(directional):
    v = directional
    means = ", ".join(f"{k} {m:.4f}" for k, m in v["mean_shifted_miou"].items())
    failed = [k for k, good in v["ordering"].items() if not good]
    fast = v["ordering_seconds"] <= 900
    ok = v["ordering_holds"] and fast
    report(5, ok, f"mean shifted mIoU: {means}; full-baseline per seed "
                  f"{[round(d, 4) for d in v['full_minus_baseline']]}; failed: {failed or 'none'}; "
                  f"{v['ordering_seconds']:.0f}s CPU (<= 900s)")
    assert ok


@pytest.mark.slow
def test_criterion_6_separation_with_sdcl(directional):
    sep = directional["separation"]
    ok = directional["separation_higher_with_sdcl"]
    report(6, ok, f"shifted separation with SDCL {sep['with_sdcl']:.4f} vs without {sep['without_sdcl']:.4f}")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_schedule_and_optimizer():
    cfg = TrainConfig()
    t = cfg.total_iters
    lr0, lr_end, lr_half = poly_lr(0, cfg), poly_lr(t, cfg), poly_lr(t // 2, cfg)
    w, v = sgd_step([1.0], [1.0], [0.0], 0.1, 0.9, 0.0)
    step1 = (float(v[0]), float(w[0]))
    w, v = sgd_step(w, [1.0], v, 0.1, 0.9, 0.0)
    step2 = (float(v[0]), float(w[0]))
    trace = max(abs(step1[0] - 1), abs(step1[1] - 0.9), abs(step2[0] - 1.9), abs(step2[1] - 0.71))
    ok = lr0 == 1e-2 and lr_end == 0.0 and abs(lr_half - 5.3589e-3) <= 1e-7 and trace <= 1e-12
    report(7, ok, f"poly_lr(0)={lr0}, poly_lr(T)={lr_end}, poly_lr(T/2)={lr_half:.7e}; sgd trace error {trace:.1e}")
    assert ok


# ---------------------------------------------------------------- 8

TINY = {"image_size": 16, "train_scenes": 8, "eval_scenes": 4, "total_iters": 3, "batch_size": 2, "embed_dim": 8,
        "encoder_widths": [4, 4], "decoder_widths": [4, 4], "negatives_per_class": 5, "negatives_per_anchor": 5,
        "separation_samples": 8}


def test_criterion_8_rerun_is_byte_identical(tmp_path, capsys):
    config = tmp_path / "tiny.json"
    config.write_text(json.dumps(TINY))
    c = str(config)
    commands = {
        "train": ["train", "--config", c, "--seed", "4", "--no-plots"],
        "ablate": ["ablate", "--config", c, "--iters", "2", "--sweep", "head_mode=shared,individual",
                   "--seeds", "0,1", "--no-plots"],
        "gradcheck": ["gradcheck", "--instances", "3", "--seed", "2"],
    }
    codes = {}
    for name, argv in commands.items():
        out = tmp_path / name
        assert cli.main(argv + ["--out", str(out)]) == 0
        codes[name] = cli.main(["rerun", str(out), "--out", str(tmp_path / f"{name}_again"), "--check"])
    ckpt = tmp_path / "train" / "checkpoint.bin"
    assert cli.main(["eval", "--config", c, "--checkpoint", str(ckpt), "--out", str(tmp_path / "ev"), "--no-plots"]) == 0
    codes["eval"] = cli.main(["rerun", str(tmp_path / "ev"), "--out", str(tmp_path / "ev_again"), "--check"])
    capsys.readouterr()
    ok = all(code == 0 for code in codes.values())
    report(8, ok, f"rerun --check exit codes {codes} (0 = metrics.csv and summary.json identical)")
    assert ok


# ---------------------------------------------------------------- 9


def _head_gradients(mode):
    rng = np.random.default_rng(0)
    feats = [Tensor(rng.normal(size=(4, 4, 4, 6)))]
    labels = rng.integers(0, 3, (2, 8, 8))
    preds = rng.integers(0, 3, (2, 4, 4))
    heads = CL.HeadSet.init([6], 16, np.random.default_rng(1), mode)
    cfg = CL.SamplerConfig()
    loss = (CL.cwcl_loss(feats, None, labels, heads, cfg, 0.1, np.random.default_rng(2))
            + CL.sdcl_loss(feats, None, labels, preds, heads, cfg, 0.1, np.random.default_rng(3)))
    T.zero_grads(heads.parameters())
    T.backward(loss)
    return {n: p.grad.copy() for n, p in heads.named_parameters()}


def test_criterion_9_ablation_plumbing(tmp_path, capsys):
    out = tmp_path / "t4"
    config = tmp_path / "tiny.json"
    config.write_text(json.dumps(TINY))
    code = cli.main(["ablate", "--losses", "table4", "--config", str(config), "--iters", "1", "--out", str(out),
                     "--no-plots"])
    rows = json.loads((out / "summary.json").read_text())["rows"]
    flags = sorted(tuple(int(w > 0) for w in r["weights"]) for r in rows)
    capsys.readouterr()
    grads = {m: _head_gradients(m) for m in CL.HEAD_MODES}
    names = sorted(set().union(*grads.values()))
    flat = {m: np.concatenate([g.get(n, np.zeros_like(grads["individual"][n])).ravel() for n in names])
            for m, g in grads.items()}
    gaps = {f"{a}/{b}": float(np.abs(flat[a] - flat[b]).max()) for a, b in itertools.combinations(CL.HEAD_MODES, 2)}
    ok = code == 0 and len(rows) == 7 and flags == sorted(TABLE4) and min(gaps.values()) > 1e-8
    report(9, ok, f"table4 rows {len(rows)} matching the 7 flag sets: {flags == sorted(TABLE4)}; "
                  f"head-gradient gaps {', '.join(f'{k} {v:.2e}' for k, v in gaps.items())}")
    assert ok
