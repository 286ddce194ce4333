"""Central finite-difference verification of the analytic loss gradients."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import MarginOverflowWarning
from .losses import EmbeddingBatch, Family, MarginSpec, margin_softmax_loss
from .margins import make_rng

RTOL = 1e-5
ATOL = 1e-8
STEP = 1e-5


def default_grid():
    """(name, spec) pairs covering every family, margin value and elastic variant."""
    grid = [
        ("softmax", MarginSpec.softmax()),
        ("modified", MarginSpec.modified()),
    ]
    grid += [(f"sphereface-m{m1:g}", MarginSpec.sphereface(m1)) for m1 in (2.0, 3.0)]
    grid += [(f"arcface-m{m:g}", MarginSpec.arcface(m)) for m in (0.45, 0.5, 0.55)]
    grid += [(f"cosface-m{m:g}", MarginSpec.cosface(m)) for m in (0.3, 0.35, 0.4)]
    for sigma in (0.0175, 0.05):
        for plus in (False, True):
            tag = "+" if plus else ""
            grid.append((f"elastic-arc{tag}-s{sigma:g}", MarginSpec.elastic_arc(0.5, sigma, plus)))
            grid.append((f"elastic-cos{tag}-s{sigma:g}", MarginSpec.elastic_cos(0.35, sigma, plus)))
    return grid


def finite_difference_grads(batch, weights, spec, margins, h=STEP):
    """Central differences of the mean loss w.r.t. every feature and weight entry."""
    X = batch.features
    W = np.asarray(weights, dtype=np.float64)

    def loss(Xp, Wp):
        out = margin_softmax_loss(EmbeddingBatch(Xp, batch.labels), Wp, spec, margins=margins, compute_grad=False)
        return out.mean_loss

    gX = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        gX[idx] = (loss(Xp, W) - loss(Xm, W)) / (2 * h)
    gW = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        gW[idx] = (loss(X, Wp) - loss(X, Wm)) / (2 * h)
    return gX, gW


def max_violation(analytic, numeric, rtol=RTOL, atol=ATOL):
    """Largest |a - f| / max(atol, rtol * |f|); values <= 1 pass."""
    err = np.abs(analytic - numeric)
    bound = np.maximum(atol, rtol * np.abs(numeric))
    return float(np.max(err / bound))


def _random_rows(rng, k, d, norm_range):
    v = rng.standard_normal((k, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(*norm_range, size=(k, 1))


def random_instance(rng, n_max=8, c_max=8, d_max=4, norm_range=(2.0, 4.0)):
    """Random batch and weights with uniform row directions and bounded row norms.

    Instances with a cosine within 1e-6 of +-1 are redrawn: the cosine clamp
    puts a kink there that a finite-difference step can straddle.
    """
    while True:
        n = int(rng.integers(1, n_max + 1))
        c = int(rng.integers(2, c_max + 1))
        d = int(rng.integers(2, d_max + 1))
        X = _random_rows(rng, n, d, norm_range)
        W = _random_rows(rng, c, d, norm_range)
        labels = rng.integers(0, c, size=n)
        cos = (X / np.linalg.norm(X, axis=1, keepdims=True)) @ (W / np.linalg.norm(W, axis=1, keepdims=True)).T
        if np.max(np.abs(cos)) < 1.0 - 1e-6:
            return EmbeddingBatch(X, labels), W


@dataclass
class GradcheckResult:
    name: str
    trials: int
    failures: int
    worst: float

    @property
    def passed(self):
        return self.failures == 0


def check_spec(name, spec, trials, seed=0, grad_fn=None, rtol=RTOL, atol=ATOL):
    """Run ``trials`` random instances for one spec.

    ``grad_fn(batch, weights, spec, margins) -> (gX, gW)`` replaces the
    analytic gradient; used to confirm the harness rejects wrong gradients.
    """
    rng = make_rng(seed)
    failures = 0
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginOverflowWarning)
        for _ in range(trials):
            batch, W = random_instance(rng)
            out = margin_softmax_loss(batch, W, spec, rng=rng)
            if grad_fn is None:
                gX, gW = out.grad_features, out.grad_weights
            else:
                gX, gW = grad_fn(batch, W, spec, out.margins_used)
            fX, fW = finite_difference_grads(batch, W, spec, out.margins_used)
            v = max(max_violation(gX, fX, rtol, atol), max_violation(gW, fW, rtol, atol))
            worst = max(worst, v)
            failures += v > 1.0
    return GradcheckResult(name, trials, failures, worst)


def run_gradcheck(trials=100, seed=0, grid=None, grad_fn=None):
    grid = default_grid() if grid is None else grid
    return [check_spec(name, spec, trials, seed=seed + i, grad_fn=grad_fn) for i, (name, spec) in enumerate(grid)]


def sigma_zero_max_diff(trials=100, seed=0):
    """Max |difference| in loss and gradients between sigma=0 elastic and fixed margins."""
    rng = make_rng(seed)
    worst = 0.0
    pairs = [
        (MarginSpec.arcface(0.5), MarginSpec.elastic_arc(0.5, 0.0)),
        (MarginSpec.arcface(0.5), MarginSpec.elastic_arc(0.5, 0.0, plus=True)),
        (MarginSpec.cosface(0.35), MarginSpec.elastic_cos(0.35, 0.0)),
        (MarginSpec.cosface(0.35), MarginSpec.elastic_cos(0.35, 0.0, plus=True)),
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginOverflowWarning)
        for _ in range(trials):
            batch, W = random_instance(rng)
            for fixed, elastic in pairs:
                a = margin_softmax_loss(batch, W, fixed)
                b = margin_softmax_loss(batch, W, elastic, rng=rng)
                worst = max(
                    worst,
                    float(np.max(np.abs(a.per_sample_loss - b.per_sample_loss))),
                    float(np.max(np.abs(a.grad_features - b.grad_features))),
                    float(np.max(np.abs(a.grad_weights - b.grad_weights))),
                )
    return worst


__all__ = [
    "Family",
    "GradcheckResult",
    "check_spec",
    "default_grid",
    "finite_difference_grads",
    "run_gradcheck",
    "sigma_zero_max_diff",
]
