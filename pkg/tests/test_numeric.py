import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparsevlm.errors import DimensionError, DomainError
from sparsevlm.numeric import (
    hadamard_mask,
    kl_divergence,
    make_rng,
    matmul,
    pack_mask,
    softmax_row,
    unpack_mask,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), x), x)


def test_matmul_projector():
    assert np.array_equal(matmul([[1.0, 0.0], [0.0, 0.0]], [[5.0], [7.0]]), [[5.0], [0.0]])


@pytest.mark.parametrize("seed", range(5))
def test_matmul_matches_triple_loop_exactly(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    assert np.array_equal(matmul(a, b), triple_loop(a, b))
    a, b = rng.standard_normal((7, 33)), rng.standard_normal((33, 5))
    assert np.array_equal(matmul(a, b), triple_loop(a, b))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@given(arrays(np.float64, (4, 6), elements=finite))
def test_matmul_left_identity_bit_exact(x):
    assert np.array_equal(matmul(np.eye(4), x), x)


def test_hadamard_mask_examples():
    assert np.array_equal(hadamard_mask([[2.0, -3.0]], [[True, False]]), [[2.0, 0.0]])
    w = np.random.default_rng(0).standard_normal((3, 5))
    assert np.array_equal(hadamard_mask(w, np.ones((3, 5), bool)), w)
    assert np.array_equal(hadamard_mask(w, np.zeros((3, 5), bool)), np.zeros((3, 5)))
    with pytest.raises(DimensionError):
        hadamard_mask(w, np.ones((5, 3), bool))


@settings(max_examples=50)
@given(arrays(np.float64, (3, 8), elements=finite), arrays(np.float64, (3, 8), elements=finite), arrays(bool, (3, 8)))
def test_mask_idempotent_and_distributive(w0, dw, m):
    once = hadamard_mask(w0, m)
    assert np.array_equal(hadamard_mask(once, m), once)
    assert np.array_equal(hadamard_mask(w0 + dw, m), hadamard_mask(w0, m) + hadamard_mask(dw, m))


def test_softmax_row_examples():
    assert np.array_equal(softmax_row([0.0, 0.0]), [0.5, 0.5])
    p = softmax_row([1000.0, 1000.0, 1000.0])
    assert np.allclose(p, 1 / 3, atol=1e-15, rtol=0)
    with pytest.raises(DomainError):
        softmax_row([])


def test_softmax_row_against_extended_precision():
    mpmath.mp.dps = 50
    exps = [mpmath.exp(v) for v in (1, 2, 3)]
    ref = [float(e / sum(exps)) for e in exps]
    got = softmax_row([1.0, 2.0, 3.0])
    assert np.max(np.abs(got - ref)) <= 1e-12
    assert abs(got.sum() - 1.0) <= 1e-12


def test_kl_examples():
    assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert math.isclose(kl_divergence([1.0, 0.0], [0.5, 0.5]), math.log(2), rel_tol=0, abs_tol=1e-15)
    with pytest.raises(DomainError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


@pytest.mark.parametrize("seed", range(10))
def test_kl_matches_term_by_term_and_gibbs(seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    ref = sum(float(mpmath.mpf(pi) * mpmath.log(mpmath.mpf(pi) / mpmath.mpf(qi))) for pi, qi in zip(p, q))
    assert abs(kl_divergence(p, q) - ref) <= 1e-12
    assert kl_divergence(p, q) >= 0.0
    assert kl_divergence(p, p) == 0.0


def test_rng_test_vectors():
    # Philox4x64-10 keyed by SeedSequence([seed, stream]).
    assert [int(x) for x in make_rng(0, 0).bit_generator.random_raw(4)] == [
        259491006799949737,
        4754966410622352325,
        8698845897610382596,
        1686395276220330909,
    ]
    assert [int(x) for x in make_rng(7, 1).bit_generator.random_raw(2)] == [15726550606777476398, 7444883432361683333]


def test_rng_reproducible_stream():
    a = make_rng(123).random(100_000)
    b = make_rng(123).random(100_000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_rng(124).random(100_000))


@given(arrays(bool, st.tuples(st.integers(1, 9), st.integers(1, 17))))
def test_mask_pack_round_trip(m):
    assert np.array_equal(unpack_mask(pack_mask(m), *m.shape), m)
