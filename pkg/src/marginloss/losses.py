"""Margin-penalty softmax losses on the unit hypersphere.

One forward/backward implementation covers plain softmax, the cosine
(modified) softmax, the multiplicative, additive-angular and additive-cosine
margin families, and their elastic variants where each sample's margin is
drawn from a Gaussian. Everything is float64 numpy; gradients are written
out by hand.
"""

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidFamilyError,
    InvalidSpecError,
    MarginOverflowWarning,
    NonFiniteError,
    NumericalInstabilityWarning,
    ZeroRowError,
)
from .margins import assign_margins_plus, sample_margins

COS_EPS = 1e-7
ZERO_NORM = 1e-30
SIN_FLOOR = 1e-6


class Family(str, enum.Enum):
    PLAIN = "plain"
    MODIFIED = "modified"
    MULTIPLICATIVE = "multiplicative"
    ARC = "arc"
    COS = "cos"


@dataclass
class EmbeddingBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionMismatchError("features must be an N x d matrix")
        n, d = self.features.shape
        if n < 1 or d < 2:
            raise DimensionMismatchError(f"need N >= 1 and d >= 2, got {self.features.shape}")
        if self.labels.shape != (n,):
            raise DimensionMismatchError(f"expected {n} labels, got shape {self.labels.shape}")
        if n and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class MarginSpec:
    """Which loss to compute.

    ``margin`` is m1, m2 or m3 depending on ``family`` (ignored for plain and
    modified softmax). Setting ``sigma`` makes the margin elastic with mean
    ``margin``; ``plus`` then assigns the drawn margins by target cosine.
    """

    family: Family
    margin: float = 0.0
    sigma: Optional[float] = None
    plus: bool = False
    scale: float = 64.0
    clamp: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.scale <= 0:
            raise InvalidSpecError(f"scale must be > 0, got {self.scale}")
        if self.sigma is not None:
            if self.family not in (Family.ARC, Family.COS):
                raise InvalidSpecError(f"elastic margins are only defined for arc and cos, not {self.family.value}")
            if self.sigma < 0:
                raise InvalidSpecError(f"sigma must be >= 0, got {self.sigma}")
        if self.plus and self.sigma is None:
            raise InvalidSpecError("plus assignment requires an elastic margin (sigma)")
        if self.clamp is not None and self.sigma is None:
            raise InvalidSpecError("margin clamp only applies to elastic margins")

    @property
    def elastic(self):
        return self.sigma is not None

    @classmethod
    def softmax(cls):
        return cls(Family.PLAIN)

    @classmethod
    def modified(cls, scale=64.0):
        return cls(Family.MODIFIED, scale=scale)

    @classmethod
    def sphereface(cls, m1=2.0, scale=64.0):
        return cls(Family.MULTIPLICATIVE, m1, scale=scale)

    @classmethod
    def arcface(cls, m=0.5, scale=64.0):
        return cls(Family.ARC, m, scale=scale)

    @classmethod
    def cosface(cls, m=0.35, scale=64.0):
        return cls(Family.COS, m, scale=scale)

    @classmethod
    def elastic_arc(cls, m=0.5, sigma=0.05, plus=False, scale=64.0):
        return cls(Family.ARC, m, sigma=sigma, plus=plus, scale=scale)

    @classmethod
    def elastic_cos(cls, m=0.35, sigma=0.05, plus=False, scale=64.0):
        return cls(Family.COS, m, sigma=sigma, plus=plus, scale=scale)


@dataclass
class LossOutput:
    """Forward results plus gradients w.r.t. raw features and class weights.

    For plain softmax ``cos_theta`` holds the raw (unnormalized) logits.
    """

    mean_loss: float
    per_sample_loss: np.ndarray
    cos_theta: np.ndarray
    modified_logits: np.ndarray
    probabilities: np.ndarray
    margins_used: np.ndarray
    grad_features: Optional[np.ndarray] = None
    grad_weights: Optional[np.ndarray] = None
    numerically_unstable: bool = False
    clamped: np.ndarray = field(default=None, repr=False)


def l2_normalize_rows(M):
    M = np.asarray(M, dtype=np.float64)
    norms = np.sqrt(np.sum(M * M, axis=1))
    if np.any(norms < ZERO_NORM):
        rows = np.flatnonzero(norms < ZERO_NORM)
        raise ZeroRowError(f"rows with (near-)zero norm: {rows.tolist()[:10]}")
    return M / norms[:, None]


def _row_norms(M):
    return np.sqrt(np.sum(M * M, axis=1))


def cosine_logits(features_norm, weights_norm):
    """Dot products of unit rows, clamped to [-1 + 1e-7, 1 - 1e-7]."""
    if features_norm.shape[1] != weights_norm.shape[1]:
        raise DimensionMismatchError(
            f"feature dim {features_norm.shape[1]} != weight dim {weights_norm.shape[1]}"
        )
    return np.clip(features_norm @ weights_norm.T, -1.0 + COS_EPS, 1.0 - COS_EPS)


def softmax_cross_entropy(logits, labels):
    """Return (mean_loss, per_sample_loss, probabilities) for integer labels."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("logits contain NaN or inf")
    labels = np.asarray(labels)
    rows = np.arange(len(labels))
    shift = logits.max(axis=1)
    ex = np.exp(logits - shift[:, None])
    ey = ex[rows, labels]
    rest = np.maximum(ex.sum(axis=1, where=np.arange(ex.shape[1]) != labels[:, None]), 0.0)
    total = ey + rest
    # a dominant target makes total = 1 + tiny, where log1p keeps the tiny part
    log_total = np.where(ey == 1.0, np.log1p(rest), np.log(total))
    # both terms are >= 0, so the loss is too
    per_sample = (shift - logits[rows, labels]) + log_total
    probs = ex / total[:, None]
    mean = float(np.sum(per_sample)) / len(per_sample)
    return mean, per_sample, probs


def apply_margin(cos_theta, labels, margins, family):
    """Apply the family's margin to the target entries (i, y_i) only."""
    family = Family(family)
    if family is Family.PLAIN:
        raise InvalidFamilyError("margins are undefined for plain softmax")
    margins = np.asarray(margins, dtype=np.float64)
    if not np.all(np.isfinite(margins)):
        raise NonFiniteError("margins must be finite")
    out = np.array(cos_theta, dtype=np.float64, copy=True)
    if family is Family.MODIFIED:
        return out
    rows = np.arange(len(labels))
    target = out[rows, labels]
    # the identity margins (0, or 1 for the multiplicative family) leave entries bit-exact
    if family is Family.ARC:
        out[rows, labels] = np.where(margins == 0, target, np.cos(np.arccos(target) + margins))
    elif family is Family.COS:
        out[rows, labels] = target - margins
    else:
        out[rows, labels] = np.where(margins == 1, target, np.cos(margins * np.arccos(target)))
    return out


def _margins_for(spec, n, cos_target, rng, margins):
    if margins is not None:
        margins = np.asarray(margins, dtype=np.float64)
        if margins.shape != (n,):
            raise DimensionMismatchError(f"expected {n} margins, got {margins.shape}")
        return margins
    if spec.family in (Family.PLAIN, Family.MODIFIED):
        return np.zeros(n)
    if not spec.elastic:
        return np.full(n, float(spec.margin))
    draw = sample_margins(n, spec.margin, spec.sigma, rng, clamp=spec.clamp)
    if spec.plus:
        return assign_margins_plus(draw.values, cos_target)
    return draw.values


def margin_softmax_loss(batch, weights, spec, rng=None, margins=None, compute_grad=True):
    """Forward pass (and by default the backward pass) of the configured loss.

    ``margins`` overrides sampling with an explicit per-sample vector; this
    is how gradient checks hold elastic margins fixed.
    """
    X = batch.features
    W = np.asarray(weights, dtype=np.float64)
    labels = batch.labels
    n = len(labels)
    if W.ndim != 2 or W.shape[0] < 2:
        raise DimensionMismatchError(f"weights must be c x d with c >= 2, got {W.shape}")
    if X.shape[1] != W.shape[1]:
        raise DimensionMismatchError(f"feature dim {X.shape[1]} != weight dim {W.shape[1]}")
    if labels.max() >= W.shape[0]:
        raise ValueError(f"label {labels.max()} out of range for {W.shape[0]} classes")
    rows = np.arange(n)

    if spec.family is Family.PLAIN:
        logits = X @ W.T
        used = _margins_for(spec, n, None, rng, margins)
        mean, per_sample, probs = softmax_cross_entropy(logits, labels)
        out = LossOutput(mean, per_sample, logits, logits, probs, used)
    else:
        xn, wn = l2_normalize_rows(X), l2_normalize_rows(W)
        cos = cosine_logits(xn, wn)
        clamped = cos != xn @ wn.T
        target = cos[rows, labels]
        used = _margins_for(spec, n, target, rng, margins)
        modified = apply_margin(cos, labels, used, spec.family)
        theta = np.arccos(target)
        if spec.family is Family.ARC and np.any(theta + used > np.pi):
            warnings.warn(
                "target angle + margin exceeds pi; cos(theta + m) is non-monotone there",
                MarginOverflowWarning,
                stacklevel=2,
            )
        logits = spec.scale * modified
        mean, per_sample, probs = softmax_cross_entropy(logits, labels)
        unstable = bool(np.any(np.abs(np.sin(theta)) < SIN_FLOOR))
        out = LossOutput(mean, per_sample, cos, logits, probs, used, numerically_unstable=unstable, clamped=clamped)

    if compute_grad:
        out.grad_features, out.grad_weights = loss_backward(out, batch, W, spec)
    return out


def _normalize_backward(M, unit, g):
    # d(M/|M|) chain rule: (I - u u^T) g / |M|
    return (g - unit * np.sum(unit * g, axis=1, keepdims=True)) / _row_norms(M)[:, None]


def loss_backward(loss_output, batch, weights, spec):
    """Gradients of the mean loss w.r.t. raw features and raw class weights.

    Margins are constants. Entries removed by the cosine clamp get zero
    gradient (the derivative of the clamp itself).
    """
    X = batch.features
    W = np.asarray(weights, dtype=np.float64)
    labels = batch.labels
    n = len(labels)
    rows = np.arange(n)

    dlogits = loss_output.probabilities.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= n

    if spec.family is Family.PLAIN:
        return dlogits @ W, dlogits.T @ X

    dcos = spec.scale * dlogits
    target = loss_output.cos_theta[rows, labels]
    theta = np.arccos(target)
    sin_t = np.sin(theta)
    if loss_output.numerically_unstable:
        warnings.warn(
            "|sin(theta)| < 1e-6 at a target entry; derivative taken at the clamped angle",
            NumericalInstabilityWarning,
            stacklevel=2,
        )
        sin_t = np.where(np.abs(sin_t) < SIN_FLOOR, np.copysign(SIN_FLOOR, sin_t), sin_t)
    m = loss_output.margins_used
    if spec.family is Family.ARC:
        dtarget = np.sin(theta + m) / sin_t
    elif spec.family is Family.MULTIPLICATIVE:
        dtarget = m * np.sin(m * theta) / sin_t
    else:
        dtarget = np.ones(n)
    dcos[rows, labels] *= dtarget
    if loss_output.clamped is not None:
        dcos[loss_output.clamped] = 0.0

    xn = l2_normalize_rows(X)
    wn = l2_normalize_rows(W)
    g_xn = dcos @ wn
    g_wn = dcos.T @ xn
    return _normalize_backward(X, xn, g_xn), _normalize_backward(W, wn, g_wn)
