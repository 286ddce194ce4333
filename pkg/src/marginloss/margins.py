"""Gaussian margin sampling and the proximity-sorted (plus) assignment.

Random numbers come from numpy's counter-based Philox generator and are
turned into normal deviates with an explicit Box-Muller transform, so a
seed reproduces the same margins regardless of how numpy implements its
own ``Generator.normal``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatchError, NegativeSigmaError

GENERATOR_INFO = {"bit_generator": "Philox4x64", "transform": "box-muller", "numpy": np.__version__}


def make_rng(seed, *path):
    """Return a Philox-backed Generator for ``seed`` and an optional integer path.

    ``make_rng(seed, 3)`` and ``make_rng(seed, 4)`` are statistically
    independent streams (SeedSequence spawn keys), which is how parallel
    runs and sub-streams are derived from one user seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def standard_normal(rng, size):
    """Draw ``size`` standard normal deviates with the Box-Muller transform."""
    n = int(np.prod(size))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(size)


@dataclass
class MarginDraw:
    values: np.ndarray
    seed_state: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.values)


def sample_margins(n, m, sigma, rng=None, clamp=None):
    """Draw ``n`` independent margins from N(m, sigma^2).

    sigma == 0 returns the constant vector ``m`` without touching ``rng``.
    ``clamp`` is an optional ``(low, high)`` pair; by default draws are
    left untruncated.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if sigma < 0:
        raise NegativeSigmaError(f"sigma must be >= 0, got {sigma}")
    state = {} if rng is None else dict(rng.bit_generator.state)
    if sigma == 0:
        values = np.full(n, float(m))
    else:
        if rng is None:
            raise ValueError("a random stream is required when sigma > 0")
        values = m + sigma * standard_normal(rng, n)
    if clamp is not None:
        values = np.clip(values, clamp[0], clamp[1])
    return MarginDraw(values=values, seed_state=state)


def assign_margins_plus(margins, cos_target):
    """Give the largest margins to the samples with the smallest target cosine.

    Margins sorted descending are paired with samples sorted by
    ``cos_target`` ascending; the result is in original sample order.
    Both sorts are stable, so ties keep original index order.
    """
    values = np.asarray(getattr(margins, "values", margins), dtype=np.float64)
    cos_target = np.asarray(cos_target, dtype=np.float64)
    if values.shape != cos_target.shape or values.ndim != 1:
        raise LengthMismatchError(
            f"margins {values.shape} and cos_target {cos_target.shape} must be equal-length vectors"
        )
    by_cos = np.argsort(cos_target, kind="stable")
    by_margin_desc = np.argsort(-values, kind="stable")
    out = np.empty_like(values)
    out[by_cos] = values[by_margin_desc]
    return out
