"""Pixel-level contrastive objectives on decoder features.

Anchors always come from the augmented image and positives from the same
pixel of the original image. The class-wise loss draws negatives from
original-image pixels of other classes; the disentanglement loss anchors on
pixels the augmented prediction gets wrong and draws negatives from
augmented-image pixels whose ground truth is the wrongly predicted class.

Samplers work on integer label grids and return flat position indices
(:class:`SamplePlan`), so one projection per block serves every triple drawn
from it. Original and augmented maps are projected together as one joint
(2B, H, W, C) stack: rows ``[0, B*H*W)`` are original pixels, the rest are
augmented.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor

NORM_EPS = 1e-12
HEAD_MODES = ("shared", "sg", "individual")


# ---------------------------------------------------------------- projection head


@dataclass
class ProjectionHead:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    normalize: bool = True

    @classmethod
    def init(cls, in_width: int, dim: int = 128, rng: np.random.Generator | None = None, normalize: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        lim1 = np.sqrt(6.0 / in_width)
        lim2 = np.sqrt(6.0 / dim)
        return cls(
            Tensor(rng.uniform(-lim1, lim1, (in_width, dim)), requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True),
            Tensor(rng.uniform(-lim2, lim2, (dim, dim)), requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True),
            normalize,
        )

    @classmethod
    def identity(cls, width: int):
        eye = np.eye(width)
        return cls(
            Tensor(eye, requires_grad=True),
            Tensor(np.zeros(width), requires_grad=True),
            Tensor(eye.copy(), requires_grad=True),
            Tensor(np.zeros(width), requires_grad=True),
        )

    @property
    def in_width(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w2.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(
            *(Tensor(p.data.copy(), requires_grad=True) for p in self.parameters()), normalize=self.normalize
        )


def project_rows(head: ProjectionHead, x: Tensor, stop_gradient: bool = False):
    """Project an (N, C) matrix of feature vectors.

    Returns ``(embeddings, valid)``; ``valid`` is False for rows whose
    pre-normalisation norm is within the zero guard. Such rows stay in the
    output as near-zero vectors but samplers exclude them.
    """
    if x.ndim != 2 or x.shape[1] != head.in_width:
        raise ContractError(f"project: expected (N, {head.in_width}) features, got {x.shape}")
    params = head.parameters()
    if stop_gradient:
        params = [T.detach(p) for p in params]
    w1, b1, w2, b2 = params
    z = T.linear(T.relu(T.linear(x, w1, b1)), w2, b2)
    valid = np.einsum("ij,ij->i", z.data, z.data) > NORM_EPS**2
    if not head.normalize:
        return z, valid
    return T.l2_normalize(z, NORM_EPS), valid


def project(head: ProjectionHead, feature_vector: Tensor) -> Tensor:
    """Project a single C-vector to a unit-length embedding."""
    if feature_vector.ndim != 1:
        raise ContractError(f"project: expected a vector, got shape {feature_vector.shape}")
    emb, _ = project_rows(head, T.reshape(feature_vector, (1, feature_vector.shape[0])))
    return T.reshape(emb, (head.dim,))


def project_map(head: ProjectionHead, features: Tensor, stop_gradient: bool = False):
    """Project every pixel of a (..., C) map; returns flat (N, D) rows and validity."""
    c = features.shape[-1]
    return project_rows(head, T.reshape(features, (-1, c)), stop_gradient)


# ---------------------------------------------------------------- labels


def resize_labels(y: np.ndarray, target: tuple) -> np.ndarray:
    """Nearest-neighbour subsample: cell (m, n) <- y[floor(m*H/h), floor(n*W/w)]."""
    y = np.asarray(y)
    h, w = y.shape[-2:]
    th, tw = target
    if th > h or tw > w or th < 1 or tw < 1:
        raise ContractError(f"resize_labels: cannot resize {h}x{w} to {th}x{tw}")
    rows = (np.arange(th) * h) // th
    cols = (np.arange(tw) * w) // tw
    return y[..., rows[:, None], cols[None, :]]


@dataclass
class ErrorMask:
    values: np.ndarray  # bool grid

    @property
    def count(self) -> int:
        return int(self.values.sum())

    def positions(self) -> list[tuple]:
        return [tuple(int(i) for i in p) for p in np.argwhere(self.values)]


def error_mask(pred_aug: np.ndarray, y: np.ndarray) -> ErrorMask:
    pred_aug, y = np.asarray(pred_aug), np.asarray(y)
    if pred_aug.shape != y.shape:
        raise ContractError(f"error_mask: shapes differ {pred_aug.shape} vs {y.shape}")
    return ErrorMask(pred_aug != y)


# ---------------------------------------------------------------- sampling


@dataclass
class SamplerConfig:
    classes_per_image: int = 15
    anchors_per_class: int = 1
    negatives_per_class: int = 50
    anchors_per_image: int = 16
    negatives_per_anchor: int = 50

    def __post_init__(self):
        for name in ("classes_per_image", "anchors_per_class", "negatives_per_class", "anchors_per_image",
                     "negatives_per_anchor"):
            if getattr(self, name) < 1:
                raise ContractError(f"SamplerConfig.{name} must be >= 1")


@dataclass
class SamplePlan:
    """Flat position indices for a stack of anchor/positive/negative triples.

    ``anchor_pos[i]`` locates both the anchor (augmented map) and the
    positive (original map); ``negative_pos[i]`` locates the negatives in the
    ``negative_source`` map. Positions are flat over (B, H, W).
    """

    anchor_pos: np.ndarray  # (N,)
    negative_pos: np.ndarray  # (N, K)
    anchor_class: np.ndarray  # (N,) ground truth at the anchor
    negative_class: np.ndarray  # (N, K) ground truth at each negative
    target_class: np.ndarray  # (N,) class the negative pool was built for
    negative_source: str  # "original" or "augmented"

    def __len__(self) -> int:
        return len(self.anchor_pos)

    @classmethod
    def empty(cls, k: int, source: str) -> "SamplePlan":
        z = np.zeros(0, dtype=np.intp)
        return cls(z, np.zeros((0, k), dtype=np.intp), z, np.zeros((0, k), dtype=np.intp), z, source)

    @classmethod
    def join(cls, plans: list["SamplePlan"], k: int, source: str) -> "SamplePlan":
        plans = [p for p in plans if len(p)]
        if not plans:
            return cls.empty(k, source)
        cat = lambda name: np.concatenate([getattr(p, name) for p in plans])  # noqa: E731
        return cls(cat("anchor_pos"), cat("negative_pos"), cat("anchor_class"), cat("negative_class"),
                   cat("target_class"), source)


def _draw_masked(rng: np.random.Generator, mask: np.ndarray, k: int) -> np.ndarray:
    """k column indices per row of a boolean (R, n) mask.

    Rows with at least k candidates draw without replacement; shorter rows
    draw with replacement. Every row needs one candidate.
    """
    counts = mask.sum(axis=1)
    if mask.shape[0] and counts.min() == 0:
        raise ContractError("sampler: empty candidate pool")
    keys = np.where(mask, rng.random(mask.shape), 2.0)
    if k < mask.shape[1]:
        out = np.argpartition(keys, k - 1, axis=1)[:, :k]
    else:
        out = np.argsort(keys, axis=1)[:, :k]
    short = np.flatnonzero(counts < k)
    if len(short):
        ranked = np.argsort(~mask[short], axis=1, kind="stable")
        pick = (rng.random((len(short), k)) * counts[short, None]).astype(np.intp)
        filled = np.take_along_axis(ranked, pick, axis=1)
        if k > mask.shape[1]:
            out = np.concatenate([out, np.zeros((len(out), k - out.shape[1]), dtype=out.dtype)], axis=1)
        out[short] = filled
    return out


def _validity(size: int, valid) -> np.ndarray:
    return np.ones(size, bool) if valid is None else np.asarray(valid, bool).reshape(-1)


def cwcl_negative_pool(y: np.ndarray, cls: int, valid: np.ndarray | None = None) -> np.ndarray:
    """Flat positions whose label differs from ``cls``."""
    flat = np.asarray(y).reshape(-1)
    return np.flatnonzero((flat != cls) & _validity(flat.size, valid))


def sdcl_anchor_positions(mask: ErrorMask, y: np.ndarray, pred: np.ndarray,
                          valid: np.ndarray | None = None) -> np.ndarray:
    """Misclassified flat positions whose predicted class occurs somewhere in the ground truth."""
    flat_y = np.asarray(y).reshape(-1)
    flat_p = np.asarray(pred).reshape(-1)
    m = np.asarray(mask.values).reshape(-1)
    if not flat_y.shape == flat_p.shape == m.shape:
        raise ContractError("sdcl sampling: label, prediction and mask grids must match")
    ok = _validity(flat_y.size, valid)
    candidates = np.flatnonzero(m & ok)
    if len(candidates) == 0:
        return candidates
    counts = np.bincount(flat_y[ok], minlength=int(max(flat_y.max(), flat_p.max())) + 1)
    return candidates[counts[flat_p[candidates]] > 0]


def sdcl_negative_pool(y: np.ndarray, predicted_cls: int, anchor: int, valid: np.ndarray | None = None) -> np.ndarray:
    """Flat positions whose ground truth equals the anchor's predicted class, anchor excluded."""
    flat = np.asarray(y).reshape(-1)
    ok = (flat == predicted_cls) & _validity(flat.size, valid)
    ok[anchor] = False
    return np.flatnonzero(ok)


def plan_cwcl(y: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator, valid: np.ndarray | None = None,
              offset: int = 0) -> SamplePlan:
    """Class-wise sampling plan for one label grid (positions shifted by ``offset``)."""
    flat = np.asarray(y).reshape(-1)
    ok = _validity(flat.size, valid)
    k = cfg.negatives_per_class
    classes = np.unique(flat[ok])
    if len(classes) < 2:
        return SamplePlan.empty(k, "original")
    if len(classes) > cfg.classes_per_image:
        classes = np.sort(rng.choice(classes, size=cfg.classes_per_image, replace=False))
    same = flat[None, :] == classes[:, None]
    anchors = _draw_masked(rng, same & ok, cfg.anchors_per_class).reshape(-1)
    pools = np.repeat(~same & ok, cfg.anchors_per_class, axis=0)
    negs = _draw_masked(rng, pools, k)
    return SamplePlan(anchors + offset, negs + offset, flat[anchors], flat[negs], flat[anchors], "original")


def plan_sdcl(y: np.ndarray, pred: np.ndarray, mask: ErrorMask, cfg: SamplerConfig, rng: np.random.Generator,
              valid: np.ndarray | None = None, offset: int = 0) -> SamplePlan:
    """Disentanglement sampling plan for one grid; empty when no anchor qualifies."""
    flat_y = np.asarray(y).reshape(-1)
    flat_p = np.asarray(pred).reshape(-1)
    ok = _validity(flat_y.size, valid)
    k = cfg.negatives_per_anchor
    anchors = sdcl_anchor_positions(mask, y, pred, valid)
    if len(anchors) == 0:
        return SamplePlan.empty(k, "augmented")
    if len(anchors) > cfg.anchors_per_image:
        anchors = np.sort(rng.choice(anchors, size=cfg.anchors_per_image, replace=False))
    # anchors are misclassified, so none has the predicted class as ground truth and never lands in its own pool
    pools = (flat_y[None, :] == flat_p[anchors][:, None]) & ok
    negs = _draw_masked(rng, pools, k)
    return SamplePlan(anchors + offset, negs + offset, flat_y[anchors], flat_y[negs], flat_p[anchors], "augmented")


# ---------------------------------------------------------------- batches and InfoNCE


@dataclass
class ContrastiveBatch:
    """A stack of N (anchor, positive, negatives) triples.

    anchor, positive: (N, D); negatives: (N, K, D). ``plan`` records the
    pixel positions and classes each row was drawn from.
    """

    anchor: Tensor
    positive: Tensor
    negatives: Tensor
    plan: SamplePlan | None = None

    def __len__(self) -> int:
        return self.anchor.shape[0]

    @classmethod
    def single(cls, anchor, positive, negatives) -> "ContrastiveBatch":
        """One-row batch from an anchor, a positive and a list of negatives."""
        a = T.reshape(T.as_tensor(anchor), (1, -1))
        p = T.reshape(T.as_tensor(positive), (1, -1))
        negs = [T.reshape(T.as_tensor(n), (1, 1, -1)) for n in negatives]
        if not negs:
            raise ContractError("ContrastiveBatch needs at least one negative")
        return cls(a, p, T.concat(negs, axis=1))


def info_nce_from_similarities(pos: Tensor, neg: Tensor, tau: float = 0.1, reduction: str = "mean") -> Tensor:
    """InfoNCE from anchor-positive (N,) and anchor-negative (N, K) similarities."""
    if pos.ndim != 1 or neg.ndim != 2 or neg.shape[0] != pos.shape[0]:
        raise ContractError(f"info_nce: expected (N,) and (N, K) similarities, got {pos.shape}, {neg.shape}")
    return info_nce_from_table(T.concat([T.reshape(pos, (pos.shape[0], 1)), neg], axis=1), tau, reduction)


def info_nce_from_table(sims: Tensor, tau: float = 0.1, reduction: str = "mean") -> Tensor:
    """InfoNCE from an (N, 1+K) similarity table whose first column is the positive."""
    if tau <= 0:
        raise ContractError("info_nce: temperature must be positive")
    if sims.ndim != 2 or sims.shape[0] == 0 or sims.shape[1] < 2:
        raise ContractError(f"info_nce: need at least one anchor and one negative, got table {sims.shape}")
    n, cols = sims.shape
    logits = T.scale(sims, 1.0 / tau)
    shift = T.detach(T.reduce_max(logits, 1, keepdims=True))
    lse = T.log(T.reduce_sum(T.exp(logits - T.expand(shift, logits.shape)), 1)) + T.reshape(shift, (n,))
    positive = T.take_flat(logits, np.arange(n) * cols)
    per_row = lse - positive
    if reduction == "none":
        return per_row
    if reduction == "mean":
        return T.reduce_mean(per_row, 0)
    raise ContractError(f"info_nce: unknown reduction {reduction!r}")


def info_nce(batch: ContrastiveBatch, tau: float = 0.1, reduction: str = "mean") -> Tensor:
    """-log(e^{a.p/tau} / (e^{a.p/tau} + sum_n e^{a.n/tau})), max-shifted.

    ``reduction="mean"`` averages over the rows of the batch; ``"none"``
    returns one loss per row.
    """
    if len(batch) == 0:
        raise ContractError("info_nce: empty batch")
    n, d = batch.anchor.shape
    k = batch.negatives.shape[1]
    pos = T.reduce_sum(batch.anchor * batch.positive, 1)
    neg = T.reshape(T.matmul(batch.negatives, T.reshape(batch.anchor, (n, d, 1))), (n, k))
    return info_nce_from_similarities(pos, neg, tau, reduction)


# ---------------------------------------------------------------- joint embeddings


@dataclass
class JointEmbedding:
    rows: Tensor  # (2*B*H*W, D): original pixels first, augmented after
    valid: np.ndarray  # (B, H, W), usable in both halves
    images: int

    @property
    def per_image(self) -> int:
        return self.rows.shape[0] // (2 * self.images)

    @property
    def aug_offset(self) -> int:
        return self.images * self.per_image


def embed_joint(head: ProjectionHead, joint: Tensor, stop_gradient: bool = False) -> JointEmbedding:
    """Project a joint (2B, H, W, C) original+augmented stack."""
    if joint.ndim != 4 or joint.shape[0] % 2:
        raise ContractError(f"expected a joint (2B, H, W, C) feature stack, got {joint.shape}")
    b = joint.shape[0] // 2
    rows, valid = project_map(head, joint, stop_gradient)
    valid = valid.reshape((2, b) + joint.shape[1:3])
    return JointEmbedding(rows, valid[0] & valid[1], b)


def gather_batch(plan: SamplePlan, emb: JointEmbedding) -> ContrastiveBatch:
    off = emb.aug_offset
    src = 0 if plan.negative_source == "original" else off
    return ContrastiveBatch(
        T.take_rows(emb.rows, plan.anchor_pos + off),
        T.take_rows(emb.rows, plan.anchor_pos),
        T.take_rows(emb.rows, plan.negative_pos + src),
        plan,
    )


def plan_similarities(plan: SamplePlan, emb: JointEmbedding) -> Tensor:
    """(N, 1+K) table of anchor similarities: positive first, then the negatives.

    Positives and negatives always share the anchor's image, so anchors are
    grouped per image, scored against that image's original and augmented
    pixels in one product, and the needed entries are gathered.
    """
    b, hw, off = emb.images, emb.per_image, emb.aug_offset
    img = plan.anchor_pos // hw
    order = np.argsort(img, kind="stable")
    counts = np.bincount(img, minlength=b)
    slot = np.empty(len(img), dtype=np.intp)
    slot[order] = np.arange(len(img)) - np.repeat(np.cumsum(counts) - counts, counts)
    width = int(counts.max())
    # padding slots point at any row; their similarities are never gathered
    left = np.zeros((b, width), dtype=np.intp)
    left[img, slot] = plan.anchor_pos + off
    sims = T.block_gram(emb.rows, left, 2)  # (2, B, width, hw): original then augmented
    src = 0 if plan.negative_source == "original" else 1
    row = img * width + slot
    pos = row * hw + plan.anchor_pos - img * hw
    neg = ((src * b + img) * width + slot)[:, None] * hw + plan.negative_pos - (img * hw)[:, None]
    return T.take_flat(sims, np.concatenate([pos[:, None], neg], axis=1))


# ---------------------------------------------------------------- single-image samplers


def _single_joint(f: Tensor, f_aug: Tensor) -> Tensor:
    if f.shape != f_aug.shape or f.ndim != 3:
        raise ContractError(f"expected matching (H, W, C) feature maps, got {f.shape}, {f_aug.shape}")
    return T.concat([T.reshape(f, (1,) + f.shape), T.reshape(f_aug, (1,) + f_aug.shape)], 0)


def sample_cwcl(f: Tensor, f_aug: Tensor, y: np.ndarray, head: ProjectionHead, cfg: SamplerConfig,
                rng: np.random.Generator) -> ContrastiveBatch | None:
    """Class-wise batch for one (H, W, C) feature pair; ``None`` when no negatives exist."""
    if f.shape[:2] != np.asarray(y).shape:
        raise ContractError("sample_cwcl: feature and label grids must match")
    emb = embed_joint(head, _single_joint(f, f_aug))
    plan = plan_cwcl(y, cfg, rng, emb.valid[0])
    return gather_batch(plan, emb) if len(plan) else None


def sample_sdcl(f: Tensor, f_aug: Tensor, y: np.ndarray, pred_aug: np.ndarray, mask: ErrorMask,
                head: ProjectionHead, cfg: SamplerConfig, rng: np.random.Generator) -> ContrastiveBatch | None:
    """Disentanglement batch for one (H, W, C) feature pair; ``None`` when the mask yields no anchor."""
    if f.shape[:2] != np.asarray(y).shape:
        raise ContractError("sample_sdcl: feature and label grids must match")
    emb = embed_joint(head, _single_joint(f, f_aug))
    plan = plan_sdcl(y, pred_aug, mask, cfg, rng, emb.valid[0])
    return gather_batch(plan, emb) if len(plan) else None


# ---------------------------------------------------------------- block losses


@dataclass
class HeadSet:
    """Projection heads per decoder block.

    ``mode`` decides what the disentanglement loss projects with:
    ``shared`` uses the class-wise heads with gradient, ``sg`` uses them with
    gradients stopped at the head weights, ``individual`` owns separate heads.
    """

    cwcl: list[ProjectionHead]
    mode: str = "shared"
    sdcl_own: list[ProjectionHead] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in HEAD_MODES:
            raise ContractError(f"unknown head mode {self.mode!r}; expected one of {HEAD_MODES}")
        if self.mode == "individual" and not self.sdcl_own:
            self.sdcl_own = [h.copy() for h in self.cwcl]

    @classmethod
    def init(cls, widths, dim: int, rng: np.random.Generator, mode: str = "shared", normalize: bool = True):
        return cls([ProjectionHead.init(w, dim, rng, normalize) for w in widths], mode)

    def sdcl_head(self, j: int) -> tuple[ProjectionHead, bool]:
        if self.mode == "individual":
            return self.sdcl_own[j], False
        return self.cwcl[j], self.mode == "sg"

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, heads in (("head", self.cwcl), ("sdcl_head", self.sdcl_own)):
            for j, h in enumerate(heads):
                out += [(f"{prefix}{j}.{n}", p) for n, p in zip(("w1", "b1", "w2", "b2"), h.parameters())]
        return out


def _joint_blocks(feats, feats_aug) -> list[Tensor]:
    if feats_aug is None:
        joint = list(feats)
    else:
        if len(feats) != len(feats_aug):
            raise ContractError("decoder feature lists differ in length")
        joint = []
        for f, fa in zip(feats, feats_aug):
            if f.shape != fa.shape:
                raise ContractError(f"decoder feature pair shapes differ: {f.shape}, {fa.shape}")
            joint.append(T.concat([f, fa], 0))
    if not joint:
        raise ContractError("no decoder blocks given")
    return joint


def _check_batch(joint: Tensor, *maps) -> None:
    for m in maps:
        if joint.shape[0] != 2 * np.asarray(m).shape[0]:
            raise ContractError(f"joint feature stack of {joint.shape[0]} does not pair with {np.asarray(m).shape[0]} label maps")


def _cached_embedding(cache, head, joint, stop):
    if cache is None:
        return embed_joint(head, joint, stop)
    key = (id(head), id(joint), stop)
    if key not in cache:
        cache[key] = embed_joint(head, joint, stop)
    return cache[key]


def cwcl_loss(feats, feats_aug, labels: np.ndarray, heads: HeadSet, cfg: SamplerConfig, tau: float,
              rng: np.random.Generator, return_batches: bool = False, cache: dict | None = None):
    """Sum over decoder blocks of the mean class-wise InfoNCE.

    ``feats``/``feats_aug`` are lists of (B, H^j, W^j, C^j) tensors, or pass
    ``feats_aug=None`` with joint (2B, ...) stacks in ``feats``. ``labels`` is
    the full-resolution (B, H, W) ground truth. Sharing one ``cache`` dict
    with :func:`sdcl_loss` reuses projections under the shared head mode.
    """
    total, batches = Tensor(0.0), []
    for j, joint in enumerate(_joint_blocks(feats, feats_aug)):
        _check_batch(joint, labels)
        y = resize_labels(labels, joint.shape[1:3])
        emb = _cached_embedding(cache, heads.cwcl[j], joint, False)
        plans = [plan_cwcl(y[i], cfg, rng, emb.valid[i], i * y[i].size) for i in range(y.shape[0])]
        plan = SamplePlan.join(plans, cfg.negatives_per_class, "original")
        if not len(plan):
            continue
        if return_batches:
            batches.append(gather_batch(plan, emb))
        total = total + info_nce_from_table(plan_similarities(plan, emb), tau)
    return (total, batches) if return_batches else total


def sdcl_loss(feats, feats_aug, labels: np.ndarray, preds: np.ndarray, heads: HeadSet, cfg: SamplerConfig,
              tau: float, rng: np.random.Generator, return_batches: bool = False, cache: dict | None = None):
    """Sum over decoder blocks of the mean disentanglement InfoNCE.

    ``preds`` is the (B, H', W') argmax map of the augmented image's logits;
    it is resized to each block alongside the labels.
    """
    total, batches = Tensor(0.0), []
    for j, joint in enumerate(_joint_blocks(feats, feats_aug)):
        _check_batch(joint, labels, preds)
        size = joint.shape[1:3]
        y, p = resize_labels(labels, size), resize_labels(preds, size)
        head, stop = heads.sdcl_head(j)
        emb = _cached_embedding(cache, head, joint, stop)
        plans = [
            plan_sdcl(y[i], p[i], error_mask(p[i], y[i]), cfg, rng, emb.valid[i], i * y[i].size)
            for i in range(y.shape[0])
        ]
        plan = SamplePlan.join(plans, cfg.negatives_per_anchor, "augmented")
        if not len(plan):
            continue
        if return_batches:
            batches.append(gather_batch(plan, emb))
        total = total + info_nce_from_table(plan_similarities(plan, emb), tau)
    return (total, batches) if return_batches else total
