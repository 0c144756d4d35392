"""Finite-difference verification of every training loss.

Each case draws a small random instance (all extents <= 8) and compares
reverse-mode gradients with central differences. Instances are redrawn when
a ReLU pre-activation in a projection head lies within ``KINK_MARGIN`` of
zero, where a central difference straddles the kink and stops being an
oracle for the one-sided derivative.

Contrastive cases draw the temperature from [0.5, 1]. At tau = 0.1 softmax
weights reach e^-20 and some gradient components fall near 1e-9; central
differences at h = 1e-5 carry roundoff of about eps*|f|/h ~ 1e-10, which
the 1e-8 relative-error floor cannot absorb. Passing ``tau`` runs the same
cases at a fixed temperature for the looser low-temperature check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import contrastive as CL
from . import covariance as CV
from . import tensor as T
from .model import cross_entropy
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-5
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    worst_instance: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE


def _pair_shape(rng):
    return (int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 5)))


def _split_pair(x: Tensor) -> tuple[Tensor, Tensor]:
    return T.take_rows(x, np.array([0])), T.take_rows(x, np.array([1]))


def case_cml(rng):
    """CML over two encoder blocks; x holds both images of every block."""
    shapes = [_pair_shape(rng) for _ in range(2)]
    n = [int(np.prod(s)) for s in shapes]
    x = rng.normal(size=2 * sum(n))
    # per-channel affine offsets keep the pair away from the norm's kink at zero
    x += rng.uniform(-1, 1, x.shape)

    def f(t):
        enc, enc_a, at = [], [], 0
        for s, k in zip(shapes, n):
            pair = T.reshape(T.take_flat(t, np.arange(at, at + 2 * k)), (2,) + s)
            a, b = _split_pair(pair)
            enc.append(a)
            enc_a.append(b)
            at += 2 * k
        return CV.alignment_losses(enc, enc_a)[0]

    return f, x


def case_ccl(rng):
    shape = _pair_shape(rng)
    x = rng.normal(size=(2,) + shape)

    def f(t):
        a, b = _split_pair(t)
        return CV.alignment_losses([a], [b])[1]

    return f, x


def case_ce(rng):
    h, w, c = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(2, 6))
    logits = rng.normal(scale=2.0, size=(1, h, w, c))
    y = rng.integers(0, c, (1, h, w))
    return (lambda t: cross_entropy(t, y)), logits


def _head(rng, width, dim):
    return CL.ProjectionHead.init(width, dim, rng)


def _kink_free(head: CL.ProjectionHead, feats: np.ndarray) -> bool:
    pre = feats.reshape(-1, feats.shape[-1]) @ head.w1.data + head.b1.data
    return bool(np.abs(pre).min() > KINK_MARGIN)


def _contrastive_case(rng, kind: str, tau: float | None = None):
    while True:
        h, w, c = int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        dim = int(rng.integers(3, 9))
        n_cls = int(rng.integers(2, 5))
        y = rng.integers(0, n_cls, (1, h, w))
        pred = np.where(rng.random((1, h, w)) < 0.4, rng.integers(0, n_cls, (1, h, w)), y)
        feats = rng.normal(size=(2, h, w, c))
        head = _head(rng, c, dim)
        # random biases keep instances generic: with b2 = 0 and one active hidden unit the
        # normalized embedding is scale invariant and its exact-zero gradient is pure roundoff
        head.b1.data = rng.normal(scale=0.1, size=dim)
        head.b2.data = rng.normal(scale=0.1, size=dim)
        if not _kink_free(head, feats):
            continue
        cfg = CL.SamplerConfig(classes_per_image=int(rng.integers(1, 5)), negatives_per_class=int(rng.integers(1, 7)),
                               anchors_per_image=int(rng.integers(1, 5)), negatives_per_anchor=int(rng.integers(1, 7)))
        heads = CL.HeadSet([head])
        seed = int(rng.integers(1 << 30))
        t_draw = float(rng.uniform(0.5, 1.0))
        temp = t_draw if tau is None else tau

        def loss(feat_t, hs):
            r = np.random.default_rng(seed)
            if kind == "cwcl":
                return CL.cwcl_loss([feat_t], None, y, hs, cfg, temp, r)
            return CL.sdcl_loss([feat_t], None, y, pred, hs, cfg, temp, r)

        if float(loss(Tensor(feats), heads).data) == 0.0:
            continue  # no batch could be drawn
        if rng.random() < 0.5:
            return (lambda t: loss(t, heads)), feats
        # gradient with respect to the second head layer, through normalization and InfoNCE
        def via_head(t):
            hd = CL.ProjectionHead(head.w1, head.b1, t, head.b2)
            return loss(Tensor(feats), CL.HeadSet([hd]))

        return via_head, head.w2.data.copy()


def case_cwcl(rng, tau: float | None = None):
    return _contrastive_case(rng, "cwcl", tau)


def case_sdcl(rng, tau: float | None = None):
    return _contrastive_case(rng, "sdcl", tau)


CASES = {"cml": case_cml, "ccl": case_ccl, "cwcl": case_cwcl, "sdcl": case_sdcl, "ce": case_ce}


def run_case(name: str, instances: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    worst, worst_i = 0.0, -1
    start = time.perf_counter()
    for i in range(instances):
        f, x = CASES[name](rng)
        err = T.grad_check(f, x, STEP)
        if err > worst:
            worst, worst_i = err, i
    return CheckResult(name, instances, worst, worst_i, time.perf_counter() - start)


def run_suite(instances: int = 100, seed: int = 0, names=None) -> list[CheckResult]:
    return [run_case(n, instances, seed) for n in (names or CASES)]
