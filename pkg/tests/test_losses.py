import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginloss import (
    EmbeddingBatch,
    Family,
    MarginSpec,
    apply_margin,
    cosine_logits,
    l2_normalize_rows,
    loss_backward,
    margin_softmax_loss,
    softmax_cross_entropy,
)
from marginloss.errors import (
    DimensionMismatchError,
    InvalidFamilyError,
    InvalidSpecError,
    MarginOverflowWarning,
    NonFiniteError,
    ZeroRowError,
)
from marginloss.margins import make_rng

from oracles import scalar_cosines, scalar_margin_loss


def rand_problem(seed, n=8, c=8, d=4):
    rng = np.random.default_rng(seed)
    return EmbeddingBatch(rng.normal(size=(n, d)), rng.integers(0, c, size=n)), rng.normal(size=(c, d))


# -- normalization and cosines ----------------------------------------------------------------


def test_normalize_345():
    np.testing.assert_array_equal(l2_normalize_rows([[3.0, 4.0]]), [[0.6, 0.8]])


def test_normalize_unit_row_unchanged():
    e = np.zeros((1, 6))
    e[0, 0] = 1.0
    np.testing.assert_array_equal(l2_normalize_rows(e), e)


def test_normalize_random_rows_unit():
    M = np.random.default_rng(0).normal(size=(5, 8))
    out = l2_normalize_rows(M)
    for row in out:
        assert abs(math.sqrt(math.fsum(v * v for v in row)) - 1.0) < 1e-12
    # direction preserved
    assert np.all(np.sum(out * M, axis=1) > 0)


def test_normalize_zero_row():
    with pytest.raises(ZeroRowError):
        l2_normalize_rows([[1.0, 0.0], [0.0, 0.0]])


def test_cosine_parallel_is_clamped():
    x = np.array([[0.6, 0.8]])
    assert cosine_logits(x, x)[0, 0] == 1.0 - 1e-7


def test_cosine_orthogonal_zero():
    assert cosine_logits(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))[0, 0] == 0.0


def test_cosine_matches_scalar_loop():
    rng = np.random.default_rng(3)
    X, W = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    got = cosine_logits(l2_normalize_rows(X), l2_normalize_rows(W))
    np.testing.assert_allclose(got, scalar_cosines(X, W), rtol=0, atol=1e-12)


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        cosine_logits(np.ones((2, 3)), np.ones((2, 4)))


# -- cross-entropy -----------------------------------------------------------------------------


def test_ce_uniform_is_log_c():
    mean, per, probs = softmax_cross_entropy(np.full((3, 8), 2.5), [0, 3, 7])
    np.testing.assert_allclose(per, math.log(8), rtol=1e-15)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_ce_saturated():
    logits = np.zeros((1, 5))
    logits[0, 2] = 1000.0
    mean, per, _ = softmax_cross_entropy(logits, [2])
    assert 0.0 <= per[0] < 1e-300 or per[0] == 0.0


def test_ce_matches_mpmath():
    rng = np.random.default_rng(11)
    logits = rng.normal(scale=20.0, size=(3, 5))
    labels = [1, 4, 0]
    _, per, _ = softmax_cross_entropy(logits, labels)
    mpmath.mp.dps = 50
    for i, y in enumerate(labels):
        row = [mpmath.mpf(float(v)) for v in logits[i]]
        ref = -mpmath.log(mpmath.exp(row[y]) / mpmath.fsum(mpmath.exp(v) for v in row))
        assert abs(per[i] - float(ref)) <= 1e-10 * max(1.0, abs(float(ref)))


def test_ce_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        softmax_cross_entropy(np.array([[0.0, np.nan]]), [0])


# -- margins -------------------------------------------------------------------------------------


@pytest.mark.parametrize("family", ["arc", "cos", "multiplicative", "modified"])
def test_zero_margin_identity(family):
    cos = np.random.default_rng(1).uniform(-0.9, 0.9, size=(4, 5))
    labels = np.array([0, 1, 2, 3])
    m = np.ones(4) if family == "multiplicative" else np.zeros(4)
    out = apply_margin(cos, labels, m, family)
    np.testing.assert_array_equal(out, cos)


def test_cos_margin_example():
    cos = np.array([[1.0 - 1e-7, 0.2]])
    out = apply_margin(cos, np.array([0]), np.array([0.35]), "cos")
    assert out[0, 0] == pytest.approx(0.65 - 1e-7, abs=1e-15)
    assert out[0, 1] == 0.2


def test_arc_margin_example():
    out = apply_margin(np.array([[0.5, 0.1]]), np.array([0]), np.array([0.5]), "arc")
    assert out[0, 0] == pytest.approx(math.cos(math.pi / 3 + 0.5), abs=1e-15)
    # the rounded reference figure 0.02358 is good to about 2e-5
    assert out[0, 0] == pytest.approx(0.02358, abs=1e-4)


def test_margin_only_touches_targets():
    cos = np.random.default_rng(2).uniform(-0.9, 0.9, size=(6, 4))
    labels = np.array([0, 1, 2, 3, 0, 1])
    out = apply_margin(cos, labels, np.full(6, 0.3), "arc")
    mask = np.ones_like(cos, dtype=bool)
    mask[np.arange(6), labels] = False
    np.testing.assert_array_equal(out[mask], cos[mask])
    assert np.all(out[~mask] != cos[~mask])


def test_plain_has_no_margin():
    with pytest.raises(InvalidFamilyError):
        apply_margin(np.zeros((1, 2)), np.array([0]), np.zeros(1), "plain")


def test_non_finite_margin_rejected():
    with pytest.raises(NonFiniteError):
        apply_margin(np.zeros((1, 2)), np.array([0]), np.array([np.inf]), "cos")


# -- spec validation -------------------------------------------------------------------------


def test_spec_rules():
    with pytest.raises(InvalidSpecError):
        MarginSpec(Family.MULTIPLICATIVE, 2.0, sigma=0.1)
    with pytest.raises(InvalidSpecError):
        MarginSpec(Family.ARC, 0.5, plus=True)
    with pytest.raises(InvalidSpecError):
        MarginSpec(Family.ARC, 0.5, sigma=-0.1)
    with pytest.raises(InvalidSpecError):
        MarginSpec(Family.COS, 0.35, scale=0.0)
    with pytest.raises(ValueError):
        MarginSpec("tangent", 0.1)


# -- full loss -------------------------------------------------------------------------------


def test_two_class_closed_form():
    batch = EmbeddingBatch(np.array([[1.0, 0.0]]), np.array([0]))
    W = np.array([[2.0, 0.0], [0.0, 3.0]])
    out = margin_softmax_loss(batch, W, MarginSpec.modified())
    # -log(e^a / (e^a + e^0)) = log1p(e^-a); cos(x, W_1) is clamped to 1 - 1e-7
    ref = math.log1p(math.exp(-64 * (1 - 1e-7)))
    assert out.per_sample_loss[0] == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize(
    "spec,family",
    [
        (MarginSpec.modified(), "modified"),
        (MarginSpec.sphereface(3.0), "multiplicative"),
        (MarginSpec.arcface(0.5), "arc"),
        (MarginSpec.cosface(0.35), "cos"),
        (MarginSpec.elastic_arc(0.5, 0.05), "arc"),
        (MarginSpec.elastic_cos(0.35, 0.05), "cos"),
        (MarginSpec.elastic_arc(0.5, 0.0175, plus=True), "arc"),
        (MarginSpec.elastic_cos(0.35, 0.05, plus=True), "cos"),
    ],
)
def test_scalar_oracle(spec, family):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginOverflowWarning)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n, c, d = rng.integers(1, 9), rng.integers(2, 9), rng.integers(2, 5)
            batch = EmbeddingBatch(rng.normal(size=(n, d)), rng.integers(0, c, size=n))
            W = rng.normal(size=(c, d))
            out = margin_softmax_loss(batch, W, spec, rng=make_rng(seed), compute_grad=False)
            ref = scalar_margin_loss(batch.features, W, batch.labels, family, out.margins_used, spec.scale)
            np.testing.assert_allclose(out.per_sample_loss, ref, rtol=1e-10, atol=1e-12)


def test_elastic_cos_d2_example():
    batch, W = rand_problem(5, 8, 8, 2)
    out = margin_softmax_loss(batch, W, MarginSpec.elastic_cos(0.35, 0.05), rng=make_rng(42))
    assert np.std(out.margins_used) > 0
    ref = scalar_margin_loss(batch.features, W, batch.labels, "cos", out.margins_used, 64.0)
    np.testing.assert_allclose(out.per_sample_loss, ref, rtol=1e-10)


def test_plain_softmax_uses_raw_dot_products():
    batch, W = rand_problem(0, 5, 4, 3)
    out = margin_softmax_loss(batch, W, MarginSpec.softmax())
    ref, _, _ = softmax_cross_entropy(batch.features @ W.T, batch.labels)
    assert out.mean_loss == ref


def test_output_invariants():
    batch, W = rand_problem(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginOverflowWarning)
        out = margin_softmax_loss(batch, W, MarginSpec.arcface(0.5))
    assert abs(out.mean_loss - np.mean(out.per_sample_loss)) <= 1e-12 * out.mean_loss
    assert np.all(out.per_sample_loss >= 0)
    assert np.all(out.margins_used == 0.5)
    # target-only modification
    diff = out.modified_logits != 64.0 * out.cos_theta
    expected = np.zeros_like(diff)
    expected[np.arange(len(batch)), batch.labels] = True
    np.testing.assert_array_equal(diff, expected)


def test_overflow_warning():
    batch = EmbeddingBatch(np.array([[-1.0, 0.01]]), np.array([0]))
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.warns(MarginOverflowWarning):
        margin_softmax_loss(batch, W, MarginSpec.arcface(0.5))


def test_label_out_of_range():
    batch = EmbeddingBatch(np.ones((2, 2)), np.array([0, 3]))
    with pytest.raises(ValueError):
        margin_softmax_loss(batch, np.eye(2), MarginSpec.cosface())


def test_batch_validation():
    with pytest.raises(DimensionMismatchError):
        EmbeddingBatch(np.ones((3, 1)), np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        EmbeddingBatch(np.ones((3, 2)), np.zeros(2))


def test_sigma_zero_bit_identical():
    batch, W = rand_problem(7)
    for fixed, elastic in [
        (MarginSpec.arcface(0.5), MarginSpec.elastic_arc(0.5, 0.0)),
        (MarginSpec.cosface(0.35), MarginSpec.elastic_cos(0.35, 0.0, plus=True)),
    ]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MarginOverflowWarning)
            a = margin_softmax_loss(batch, W, fixed)
            b = margin_softmax_loss(batch, W, elastic, rng=make_rng(0))
        assert a.mean_loss == b.mean_loss
        np.testing.assert_array_equal(a.grad_features, b.grad_features)
        np.testing.assert_array_equal(a.grad_weights, b.grad_weights)


def test_cos_margin_monotone():
    batch, W = rand_problem(9)
    prev = None
    for m in np.linspace(0, 0.6, 13):
        loss = margin_softmax_loss(batch, W, MarginSpec.cosface(m), compute_grad=False).per_sample_loss
        if prev is not None:
            assert np.all(loss >= prev)
        prev = loss


def test_arc_margin_monotone_below_pi():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(8, 3))
    W = rng.normal(size=(5, 3))
    labels = rng.integers(0, 5, size=8)
    cos = l2_normalize_rows(X) @ l2_normalize_rows(W).T
    ok = np.arccos(cos[np.arange(8), labels]) + 0.6 <= np.pi
    batch = EmbeddingBatch(X[ok], labels[ok])
    prev = None
    for m in np.linspace(0, 0.6, 13):
        loss = margin_softmax_loss(batch, W, MarginSpec.arcface(m), compute_grad=False).per_sample_loss
        if prev is not None:
            assert np.all(loss >= prev)
        prev = loss


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 200.0))
def test_scale_argmax_invariance(seed, s):
    batch, W = rand_problem(seed, 6, 5, 3)
    a = margin_softmax_loss(batch, W, MarginSpec.cosface(0.35, scale=s), compute_grad=False)
    b = margin_softmax_loss(batch, W, MarginSpec.cosface(0.35, scale=1.0), compute_grad=False)
    np.testing.assert_array_equal(np.argmax(a.modified_logits, axis=1), np.argmax(b.modified_logits, axis=1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    batch, W = rand_problem(seed)
    perm = np.random.default_rng(seed + 1).permutation(len(batch))
    spec = MarginSpec.cosface(0.35)
    a = margin_softmax_loss(batch, W, spec)
    b = margin_softmax_loss(EmbeddingBatch(batch.features[perm], batch.labels[perm]), W, spec)
    np.testing.assert_allclose(b.per_sample_loss, a.per_sample_loss[perm], rtol=1e-13)
    np.testing.assert_allclose(b.grad_features, a.grad_features[perm], rtol=1e-12, atol=1e-15)


def test_plus_permutation_equivariance_same_multiset():
    batch, W = rand_problem(3)
    perm = np.random.default_rng(8).permutation(len(batch))
    spec = MarginSpec.elastic_cos(0.35, 0.05, plus=True)
    a = margin_softmax_loss(batch, W, spec, rng=make_rng(1))
    b = margin_softmax_loss(EmbeddingBatch(batch.features[perm], batch.labels[perm]), W, spec, rng=make_rng(1))
    np.testing.assert_allclose(b.margins_used, a.margins_used[perm], rtol=0)
    np.testing.assert_allclose(b.per_sample_loss, a.per_sample_loss[perm], rtol=1e-13)


# -- backward ------------------------------------------------------------------------------


def test_two_class_swap_antisymmetry():
    x = np.array([[1.0, 0.3]])
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    spec = MarginSpec.modified()
    g0 = margin_softmax_loss(EmbeddingBatch(x, [0]), W, spec).grad_features
    # mirror the input across the diagonal and swap the classes
    g1 = margin_softmax_loss(EmbeddingBatch(x[:, ::-1], [1]), W, spec).grad_features
    np.testing.assert_allclose(g1, g0[:, ::-1], rtol=1e-14)


def test_cos_grad_equals_modified_at_shifted_logits():
    batch, W = rand_problem(12)
    out = margin_softmax_loss(batch, W, MarginSpec.cosface(0.35))
    n = len(batch)
    d = out.probabilities.copy()
    d[np.arange(n), batch.labels] -= 1.0
    dcos = 64.0 * d / n
    xn, wn = l2_normalize_rows(batch.features), l2_normalize_rows(W)
    g = dcos @ wn
    ref = (g - xn * np.sum(xn * g, axis=1, keepdims=True)) / np.linalg.norm(batch.features, axis=1, keepdims=True)
    np.testing.assert_allclose(out.grad_features, ref, rtol=1e-13, atol=1e-16)


def test_backward_standalone_matches_forward():
    batch, W = rand_problem(13)
    spec = MarginSpec.sphereface(2.0)
    out = margin_softmax_loss(batch, W, spec)
    gx, gw = loss_backward(out, batch, W, spec)
    np.testing.assert_array_equal(gx, out.grad_features)
    np.testing.assert_array_equal(gw, out.grad_weights)


def test_clamped_entries_get_zero_gradient():
    x = np.array([[1.0, 0.0]])
    W = np.array([[2.0, 0.0], [0.0, 1.0]])
    out = margin_softmax_loss(EmbeddingBatch(x, [1]), W, MarginSpec.cosface())
    assert out.clamped[0, 0]
    # only the unclamped class contributes
    assert np.all(out.grad_weights[0] == 0.0)
