"""Total objective, SGD training loop and evaluation metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import contrastive as CL
from . import covariance as CV
from . import tensor as T
from .data import SHIFTED_STYLES, Corpus, color_jitter, get_style, make_corpus
from .model import NetworkConfig, SegmentationNet, cross_entropy, forward, init_network
from .tensor import ContractError, Tensor

log = logging.getLogger(__name__)

LOSS_NAMES = ("ce", "cml", "ccl", "cwcl", "sdcl")


class NonFiniteLoss(RuntimeError):
    def __init__(self, component: str, iteration: int | None = None, values: dict | None = None):
        self.component = component
        self.iteration = iteration
        self.values = values or {}
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"non-finite {component} loss{where}: {self.values}")


@dataclass
class TrainConfig:
    omega1: float = 0.2
    omega2: float = 0.2
    omega3: float = 0.3
    omega4: float = 0.3
    base_lr: float = 1e-2
    lr_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8
    total_iters: int = 2000
    tau: float = 0.1
    classes_per_image: int = 15
    anchors_per_class: int = 1
    negatives_per_class: int = 50
    anchors_per_image: int = 16
    negatives_per_anchor: int = 50
    embed_dim: int = 128
    normalize_embeddings: bool = True
    head_mode: str = "shared"
    ccl_form: str = "diagonal"
    covariance_normalizer: str = "correlation"
    sdcl_pred_source: str = "augmented"
    ce_on_augmented: bool = False
    align_features: str = "preactivation"
    grad_clip: float = 0.0
    jitter_strength: float = 1.0
    seed: int = 0
    data_seed: int = 0
    n_classes: int = 5
    image_size: int = 32
    train_scenes: int = 256
    eval_scenes: int = 64
    encoder_widths: list = field(default_factory=lambda: [8, 16, 16])
    decoder_widths: list = field(default_factory=lambda: [16, 16])
    eval_styles: list = field(default_factory=lambda: list(SHIFTED_STYLES))
    separation_samples: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for k in ("omega1", "omega2", "omega3", "omega4"):
            if not getattr(self, k) >= 0:
                raise ContractError(f"{k}: loss weights must be >= 0")
        if not self.base_lr > 0:
            raise ContractError("base_lr must be > 0")
        if self.total_iters < 1:
            raise ContractError("total_iters must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if not self.tau > 0:
            raise ContractError("tau must be > 0")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ContractError("momentum must lie in [0, 1) and weight_decay be >= 0")
        if self.head_mode not in CL.HEAD_MODES:
            raise ContractError(f"head_mode must be one of {CL.HEAD_MODES}")
        if self.ccl_form not in ("diagonal", "whitening"):
            raise ContractError("ccl_form must be 'diagonal' or 'whitening'")
        if self.covariance_normalizer not in ("correlation", "raw"):
            raise ContractError("covariance_normalizer must be 'correlation' or 'raw'")
        if self.sdcl_pred_source not in ("augmented", "original"):
            raise ContractError("sdcl_pred_source must be 'augmented' or 'original'")
        if self.align_features not in ("preactivation", "activation"):
            raise ContractError("align_features must be 'preactivation' or 'activation'")
        if not self.grad_clip >= 0:
            raise ContractError("grad_clip must be >= 0 (0 disables clipping)")
        if not 0 <= self.jitter_strength <= 1:
            raise ContractError("jitter_strength must lie in [0, 1]")
        for s in self.eval_styles:
            get_style(s)
        self.sampler()

    def sampler(self) -> CL.SamplerConfig:
        return CL.SamplerConfig(self.classes_per_image, self.anchors_per_class, self.negatives_per_class,
                                self.anchors_per_image, self.negatives_per_anchor)

    def network(self) -> NetworkConfig:
        return NetworkConfig(self.n_classes, self.image_size, self.image_size, tuple(self.encoder_widths),
                             tuple(self.decoder_widths), seed=self.seed)

    @property
    def weights(self) -> tuple:
        return (self.omega1, self.omega2, self.omega3, self.omega4)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------- schedule and optimizer


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """base_lr * (1 - iter/total_iters) ** lr_power."""
    if not 0 <= iteration <= cfg.total_iters:
        raise ContractError(f"poly_lr: iteration {iteration} outside [0, {cfg.total_iters}]")
    return cfg.base_lr * (1.0 - iteration / cfg.total_iters) ** cfg.lr_power


def sgd_step(weights, grads, velocity, lr: float, momentum: float, weight_decay: float):
    """One momentum-SGD update with L2 weight decay folded into the gradient.

    g' = g + wd*w;  v = momentum*v + g';  w = w - lr*v.
    Returns new ``(weights, velocity)`` lists; inputs are not modified.
    """
    new_w, new_v = [], []
    for w, g, v in zip(weights, grads, velocity, strict=True):
        w, g, v = np.asarray(w, float), np.asarray(g, float), np.asarray(v, float)
        if not (w.shape == g.shape == v.shape):
            raise ContractError(f"sgd_step: shape mismatch {w.shape}, {g.shape}, {v.shape}")
        g2 = g + weight_decay * w
        v2 = momentum * v + g2
        new_w.append(w - lr * v2)
        new_v.append(v2)
    return new_w, new_v


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most max_norm; returns the raw norm."""
    norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))
    if norm > max_norm:
        for p in params:
            p.grad *= max_norm / norm
    return norm


class SGD:
    def __init__(self, params: list[Tensor], momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        T.zero_grads(self.params)

    def step(self, lr: float) -> None:
        w, v = sgd_step([p.data for p in self.params], [p.grad for p in self.params], self.velocity, lr,
                        self.momentum, self.weight_decay)
        for p, wi in zip(self.params, w):
            p.data = wi
        self.velocity = v


# ---------------------------------------------------------------- objective


def total_loss(ce: Tensor, cml: Tensor, ccl: Tensor, cwcl: Tensor, sdcl: Tensor, cfg: TrainConfig,
               iteration: int | None = None) -> Tensor:
    """ce + w1*cml + w2*ccl + w3*cwcl + w4*sdcl."""
    parts = dict(zip(LOSS_NAMES, (ce, cml, ccl, cwcl, sdcl)))
    values = {k: float(v.data) for k, v in parts.items()}
    for k, v in values.items():
        if not math.isfinite(v):
            raise NonFiniteLoss(k, iteration, values)
    total = ce
    for w, term in zip(cfg.weights, (cml, ccl, cwcl, sdcl)):
        if w:
            total = total + T.scale(term, w)
    return total


@dataclass
class StepLosses:
    ce: Tensor
    cml: Tensor
    ccl: Tensor
    cwcl: Tensor
    sdcl: Tensor
    total: Tensor

    def values(self) -> dict:
        return {k: float(getattr(self, k).data) for k in LOSS_NAMES + ("total",)}


def _split(t: Tensor, b: int) -> tuple[Tensor, Tensor]:
    return T.take_rows(t, np.arange(b)), T.take_rows(t, np.arange(b, 2 * b))


def compute_losses(net: SegmentationNet, heads: CL.HeadSet, x: np.ndarray, x_aug: np.ndarray, y: np.ndarray,
                   cfg: TrainConfig, rng: np.random.Generator, iteration: int | None = None) -> StepLosses:
    """Forward an image batch and its augmented twin and evaluate every loss term.

    Covariance alignment reads encoder features, contrastive terms read
    decoder features, cross-entropy reads the original image's logits.
    """
    b = x.shape[0]
    w1, w2, w3, w4 = cfg.weights
    need_aug = any(cfg.weights) or cfg.ce_on_augmented
    zero = Tensor(0.0)
    if need_aug:
        out = forward(net, np.concatenate([x, x_aug]))
        enc = [_split(f, b) for f in (out.encoder_preactivations if cfg.align_features == "preactivation"
                                      else out.encoder_features)]
        dec = out.decoder_features  # joint (2B, ...) stacks
        logits, logits_aug = _split(out.logits, b)
    else:
        out = forward(net, x)
        logits, logits_aug, enc, dec = out.logits, None, [], []
    y_out = CL.resize_labels(y, logits.shape[1:3])
    ce = cross_entropy(logits, y_out)
    if cfg.ce_on_augmented:
        ce = T.scale(ce + cross_entropy(logits_aug, y_out), 0.5)
    cml = ccl = cwcl = sdcl = zero
    if w1 or w2:
        cml, ccl = CV.alignment_losses([e[0] for e in enc], [e[1] for e in enc],
                                       raw=cfg.covariance_normalizer == "raw",
                                       whitening=cfg.ccl_form == "whitening")
    sampler = cfg.sampler()
    cache: dict = {}
    if w3:
        cwcl = CL.cwcl_loss(dec, None, y, heads, sampler, cfg.tau, rng, cache=cache)
    if w4:
        source = logits_aug if cfg.sdcl_pred_source == "augmented" else logits
        preds = source.data.argmax(axis=-1)
        sdcl = CL.sdcl_loss(dec, None, y, preds, heads, sampler, cfg.tau, rng, cache=cache)
    total = total_loss(ce, cml, ccl, cwcl, sdcl, cfg, iteration)
    return StepLosses(ce, cml, ccl, cwcl, sdcl, total)


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    net: SegmentationNet
    heads: CL.HeadSet
    history: list  # of dict rows


def build_heads(cfg: TrainConfig) -> CL.HeadSet:
    rng = np.random.default_rng([cfg.seed, 1])
    return CL.HeadSet.init(cfg.decoder_widths, cfg.embed_dim, rng, cfg.head_mode, cfg.normalize_embeddings)


def train_corpus(cfg: TrainConfig) -> Corpus:
    size = (cfg.image_size, cfg.image_size)
    return make_corpus("train", cfg.train_scenes, "source", cfg.n_classes, size, cfg.data_seed)


def train(cfg: TrainConfig, corpus: Corpus | None = None, progress: bool = False) -> TrainResult:
    """Run cfg.total_iters SGD steps; deterministic given cfg.seed and the corpus."""
    corpus = corpus if corpus is not None else train_corpus(cfg)
    if len(corpus) < cfg.batch_size:
        raise ContractError("train: corpus smaller than one batch")
    images, masks = corpus.arrays()
    net = init_network(cfg.network())
    heads = build_heads(cfg)
    params = net.parameters() + heads.parameters()
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 2])
    history = []
    for it in range(cfg.total_iters):
        idx = rng.choice(len(corpus), cfg.batch_size, replace=False)
        x, y = images[idx], masks[idx]
        x_aug = color_jitter(x, cfg.jitter_strength, rng)
        losses = compute_losses(net, heads, x, x_aug, y, cfg, rng, it)
        opt.zero_grad()
        T.backward(losses.total)
        if cfg.grad_clip:
            clip_grad_norm(params, cfg.grad_clip)
        lr = poly_lr(it, cfg)
        opt.step(lr)
        row = {"iteration": it, "lr": lr, **losses.values()}
        history.append(row)
        if progress and (it % 100 == 0 or it == cfg.total_iters - 1):
            log.info("iter %d lr %.5f total %.4f ce %.4f", it, lr, row["total"], row["ce"])
    return TrainResult(net, heads, history)


# ---------------------------------------------------------------- evaluation


@dataclass
class MetricsReport:
    per_class_iou: list  # float or None when the class is absent from ground truth
    miou: float
    pixel_accuracy: float
    confusion: np.ndarray
    separation: float | None = None
    loss_curves: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "pixel_accuracy": self.pixel_accuracy,
            "confusion": self.confusion.tolist(),
            "separation": self.separation,
        }


def confusion_matrix(gt: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    gt, pred = np.asarray(gt).reshape(-1), np.asarray(pred).reshape(-1)
    if gt.shape != pred.shape:
        raise ContractError("confusion_matrix: prediction and ground truth sizes differ")
    return np.bincount(gt * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def scores_from_confusion(conf: np.ndarray) -> tuple[list, float, float]:
    """Per-class IoU (None where the class is absent from ground truth), mIoU and pixel accuracy."""
    tp = np.diag(conf).astype(float)
    gt_count = conf.sum(axis=1)
    pred_count = conf.sum(axis=0)
    union = gt_count + pred_count - tp
    ious = [float(tp[c] / union[c]) if gt_count[c] > 0 else None for c in range(len(tp))]
    present = [v for v in ious if v is not None]
    miou = float(np.mean(present)) if present else 0.0
    total = conf.sum()
    acc = float(tp.sum() / total) if total else 0.0
    return ious, miou, acc


def upsample_labels(pred: np.ndarray, size: tuple) -> np.ndarray:
    """Nearest-neighbour upsampling of (B, h, w) class maps to ``size``."""
    h, w = pred.shape[-2:]
    rows = (np.arange(size[0]) * h) // size[0]
    cols = (np.arange(size[1]) * w) // size[1]
    return pred[..., rows[:, None], cols[None, :]]


def embedding_separation(embeddings: np.ndarray, labels: np.ndarray, eps: float = 1e-8) -> float:
    """Mean pairwise centroid distance over mean within-class distance to the centroid."""
    emb = np.asarray(embeddings, float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ContractError("embedding_separation: need at least two classes")
    centroids, spreads = [], []
    for c in classes:
        pts = emb[labels == c]
        if len(pts) < 2:
            raise ContractError("embedding_separation: need at least two samples per class")
        mu = pts.mean(axis=0)
        centroids.append(mu)
        spreads.append(np.linalg.norm(pts - mu, axis=1).mean())
    centroids = np.array(centroids)
    k = len(centroids)
    inter = [np.linalg.norm(centroids[i] - centroids[j]) for i in range(k) for j in range(i + 1, k)]
    return float(np.mean(inter) / (np.mean(spreads) + eps))


def _decoder_embeddings(heads: CL.HeadSet, feats: Tensor, masks: np.ndarray, per_class: int,
                        rng: np.random.Generator):
    y = CL.resize_labels(masks, feats.shape[1:3]).reshape(-1)
    emb, valid = CL.project_map(heads.cwcl[-1], feats)
    picked = []
    for c in np.unique(y):
        pool = np.flatnonzero((y == c) & valid)
        if len(pool) >= 2:
            picked.append(rng.choice(pool, size=min(per_class, len(pool)), replace=False))
    idx = np.sort(np.concatenate(picked)) if picked else np.zeros(0, int)
    return emb.data[idx], y[idx]


def evaluate(net: SegmentationNet, corpus: Corpus, heads: CL.HeadSet | None = None, chunk: int = 64,
             separation_samples: int = 64, seed: int = 0) -> MetricsReport:
    """Confusion-matrix metrics at full label resolution.

    When ``heads`` is given, also scores how well the last decoder block's
    projected embeddings separate the classes.
    """
    n = net.cfg.n_classes
    conf = np.zeros((n, n), dtype=np.int64)
    emb_all, lab_all = [], []
    rng = np.random.default_rng([seed, 3])
    for start in range(0, len(corpus), chunk):
        x, y = corpus.arrays(range(start, min(start + chunk, len(corpus))))
        out = forward(net, x)
        pred = upsample_labels(out.logits.data.argmax(axis=-1), y.shape[1:])
        conf += confusion_matrix(y, pred, n)
        if heads is not None:
            e, lab = _decoder_embeddings(heads, out.decoder_features[-1], y, separation_samples, rng)
            emb_all.append(e)
            lab_all.append(lab)
    ious, miou, acc = scores_from_confusion(conf)
    sep = None
    if heads is not None and emb_all:
        emb, lab = np.concatenate(emb_all), np.concatenate(lab_all)
        if len(np.unique(lab)) >= 2:
            sep = embedding_separation(emb, lab)
    return MetricsReport(ious, miou, acc, conf, sep)


def eval_corpora(cfg: TrainConfig) -> dict[str, Corpus]:
    size = (cfg.image_size, cfg.image_size)
    base = make_corpus("eval", cfg.eval_scenes, "source", cfg.n_classes, size, cfg.data_seed)
    out = {"source": base}
    for s in cfg.eval_styles:
        out[s] = base.restyle(s)
    return out


def evaluate_shifted(result: TrainResult, cfg: TrainConfig) -> dict:
    """Metrics on the source eval split and on every configured shifted style."""
    reports = {name: evaluate(result.net, c, result.heads, separation_samples=cfg.separation_samples,
                              seed=cfg.seed)
               for name, c in eval_corpora(cfg).items()}
    shifted = [reports[s] for s in cfg.eval_styles]
    seps = [r.separation for r in shifted if r.separation is not None]
    return {
        "reports": reports,
        "shifted_miou": float(np.mean([r.miou for r in shifted])) if shifted else None,
        "shifted_separation": float(np.mean(seps)) if seps else None,
        "source_miou": reports["source"].miou,
    }


# ---------------------------------------------------------------- persistence


CSV_COLUMNS = ("iteration", "lr") + LOSS_NAMES + ("total",)


def history_csv(history: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in history:
        writer.writerow([row["iteration"]] + [repr(float(row[k])) for k in CSV_COLUMNS[1:]])
    return buf.getvalue()


def summary_document(cfg: TrainConfig, evaluation: dict) -> dict:
    reports = evaluation["reports"]
    return {
        "config": cfg.to_dict(),
        "seeds": {"seed": cfg.seed, "data_seed": cfg.data_seed},
        "shifted_miou": evaluation["shifted_miou"],
        "shifted_separation": evaluation["shifted_separation"],
        "domains": {name: r.to_dict() for name, r in reports.items()},
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
