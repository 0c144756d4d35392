"""Instance-normalised feature covariances and the two alignment losses.

Feature maps are channels-last. A single map is ``(H, W, C)``; a batch is
``(B, H, W, C)`` and every function below treats the leading axis as
independent images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor

EPS = 1e-5


@dataclass
class NormalizedFeature:
    values: Tensor  # (HW, C) or (B, HW, C)
    source_shape: tuple  # (H, W, C)

    @property
    def positions(self) -> int:
        return self.source_shape[0] * self.source_shape[1]


@dataclass
class CovarianceMatrix:
    values: Tensor  # (C, C) or (B, C, C)
    normalizer: float


def instance_normalize(features: Tensor, eps: float = EPS) -> NormalizedFeature:
    """Standardise each channel over spatial positions and flatten to (HW, C).

    Uses the population standard deviation. ``eps`` acts as a threshold
    guard: channels with sigma <= eps are treated as constant and come out
    as zeros (with zero gradient). Adding eps to sigma instead would leave a
    2*eps/sigma bias on the covariance diagonal and break exact blindness
    to per-channel affine maps.
    """
    if eps <= 0:
        raise ContractError("instance_normalize: eps must be positive")
    batched = features.ndim == 4
    if features.ndim not in (3, 4):
        raise ContractError(f"instance_normalize: expected (H,W,C) or (B,H,W,C), got {features.shape}")
    h, w, c = features.shape[-3:]
    if h * w < 2:
        raise ContractError("instance_normalize: need at least two spatial positions")
    shape = features.shape
    axes = (1, 2) if batched else (0, 1)
    mu = T.expand(T.reduce_mean(features, axes, keepdims=True), shape)
    centered = features - mu
    sigma = T.sqrt(T.reduce_mean(centered * centered, axes, keepdims=True))
    live = sigma.data > eps
    # constant channels divide by 1 and are then zeroed
    safe = sigma + Tensor(np.where(live, 0.0, 1.0))
    normalized = T.div(centered, T.expand(safe, shape))
    if not live.all():
        normalized = normalized * Tensor(np.broadcast_to(live, shape).astype(np.float64))
    flat_shape = (shape[0], h * w, c) if batched else (h * w, c)
    return NormalizedFeature(T.reshape(normalized, flat_shape), (h, w, c))


def _product(a: NormalizedFeature, b: NormalizedFeature, raw: bool) -> CovarianceMatrix:
    if a.values.shape != b.values.shape:
        raise ContractError(f"covariance: feature shapes differ {a.values.shape} vs {b.values.shape}")
    gram = T.matmul(T.swap_last(a.values), b.values)
    if raw:
        return CovarianceMatrix(gram, 1.0)
    norm = 1.0 / a.positions
    return CovarianceMatrix(T.scale(gram, norm), norm)


def covariance(f: NormalizedFeature, raw: bool = False) -> CovarianceMatrix:
    """Channel covariance (1/HW) F^T F of a normalised feature.

    ``raw=True`` drops the 1/HW factor (unnormalised Gram matrix).
    """
    return _product(f, f, raw)


def cross_covariance(f: NormalizedFeature, f_aug: NormalizedFeature, raw: bool = False) -> CovarianceMatrix:
    """(1/HW) F^T F_a; entry (c, c) is the Pearson correlation of channel c across the pair."""
    return _product(f, f_aug, raw)


def _as_values(m) -> Tensor:
    return m.values if isinstance(m, CovarianceMatrix) else m


def _batch_mean(per_item: Tensor) -> Tensor:
    return T.reduce_mean(per_item, None) if per_item.ndim else per_item


def cml_loss(pairs) -> Tensor:
    """Sum over blocks of the Frobenius distance between paired self-covariances.

    Batched covariances are averaged over the batch within each block.
    """
    pairs = list(pairs)
    if not pairs:
        raise ContractError("cml_loss: no encoder blocks given")
    total = None
    for s, s_aug in pairs:
        s, s_aug = _as_values(s), _as_values(s_aug)
        if s.shape != s_aug.shape:
            raise ContractError(f"cml_loss: covariance shapes differ {s.shape} vs {s_aug.shape}")
        d = s - s_aug
        per_item = T.sqrt(T.reduce_sum(d * d, (-2, -1)))
        term = _batch_mean(per_item)
        total = term if total is None else total + term
    return total


def ccl_loss(crosses, whitening: bool = False) -> Tensor:
    """Sum over blocks of || diag(cross-covariance) - 1 ||_2.

    With ``whitening=True`` the whole matrix is pulled towards the identity
    (Frobenius norm), i.e. the off-diagonal entries are suppressed as well.
    """
    crosses = [_as_values(m) for m in crosses]
    if not crosses:
        raise ContractError("ccl_loss: no encoder blocks given")
    total = None
    for m in crosses:
        if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
            raise ContractError(f"ccl_loss: cross-covariance must be square, got {m.shape}")
        if whitening:
            eye = Tensor(np.broadcast_to(np.eye(m.shape[-1]), m.shape))
            d = m - eye
            per_item = T.sqrt(T.reduce_sum(d * d, (-2, -1)))
        else:
            d = T.shift(T.diagonal(m), -1.0)
            per_item = T.sqrt(T.reduce_sum(d * d, -1))
        term = _batch_mean(per_item)
        total = term if total is None else total + term
    return total


def alignment_losses(enc_features, enc_features_aug, raw: bool = False, whitening: bool = False):
    """CML and CCL over lists of encoder feature maps from an image pair.

    Returns ``(cml, ccl)`` as scalar tensors.
    """
    if len(enc_features) != len(enc_features_aug):
        raise ContractError("alignment_losses: block counts differ")
    pairs, crosses = [], []
    for f, fa in zip(enc_features, enc_features_aug):
        nf, nfa = instance_normalize(f), instance_normalize(fa)
        pairs.append((covariance(nf, raw), covariance(nfa, raw)))
        crosses.append(cross_covariance(nf, nfa, raw))
    return cml_loss(pairs), ccl_loss(crosses, whitening)
