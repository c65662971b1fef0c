import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrrfp.hrr import (
    SingularVectorError,
    circular_convolve,
    containment_score,
    cosine,
    delta,
    exact_inverse,
    generate_position_basis,
    involution,
    unbind,
)

from .conftest import naive_convolve, unit


def test_identity_and_shift_examples():
    b = np.array([5.0, 6.0, 7.0, 8.0])
    assert np.allclose(circular_convolve(delta(4), b), [5, 6, 7, 8], atol=1e-12)
    assert np.allclose(circular_convolve(delta(4, 1), b), [8, 5, 6, 7], atol=1e-12)


@pytest.mark.parametrize("d", [4, 16, 64])
def test_matches_naive_definition(rng, d):
    for _ in range(20):
        a, b = rng.standard_normal(d), rng.standard_normal(d)
        assert np.max(np.abs(circular_convolve(a, b) - naive_convolve(a, b))) < 1e-10


def test_dimension_mismatch_and_nonfinite():
    with pytest.raises(ValueError, match="mismatch"):
        circular_convolve(np.ones(4), np.ones(5))
    with pytest.raises(ValueError, match="non-finite"):
        circular_convolve(np.array([1.0, np.nan]), np.ones(2))


def test_inverse_of_delta_is_delta():
    assert np.allclose(exact_inverse(delta(8)), delta(8), atol=1e-12)


def test_two_point_inverse_by_hand():
    # 2-point DFT of (0.6, 0.8) is (1.4, -0.2); the inverse spectrum (1/1.4, -5)
    # maps back to ((1/1.4 - 5)/2, (1/1.4 + 5)/2).
    b = np.array([0.6, 0.8])
    expected = np.array([(1 / 1.4 - 5) / 2, (1 / 1.4 + 5) / 2])
    binv = exact_inverse(b)
    assert np.allclose(binv, expected, atol=1e-12)
    assert np.allclose(circular_convolve(b, binv), [1.0, 0.0], atol=1e-12)


def test_singular_vector_names_bin():
    # (1, 1, 1, 1) has zero spectrum everywhere but DC
    with pytest.raises(SingularVectorError, match="bin 1"):
        exact_inverse(np.ones(4))
    with pytest.raises(SingularVectorError):
        unbind(np.ones(4), np.array([1.0, -1.0, 1.0, -1.0]))


def test_unitary_inverse_roundtrip():
    basis = generate_position_basis(256, 8, seed=3)
    for p in basis.vectors:
        assert np.allclose(circular_convolve(p, exact_inverse(p)), delta(256), atol=1e-6)


def test_unbind_single_pair_is_exact(rng):
    a = unit(rng, 512)
    b = generate_position_basis(512, 1, seed=11)[1]
    assert np.max(np.abs(unbind(circular_convolve(a, b), b) - a)) < 1e-6


def test_unbind_zero():
    b = generate_position_basis(64, 1, seed=1)[1]
    assert np.array_equal(unbind(np.zeros(64), b), np.zeros(64))


def test_unbind_two_pair_bundle(rng):
    # circulant-matrix oracle over 1000 draws: mean cosine 0.707, 5th percentile 0.676
    basis = generate_position_basis(512, 200, seed=5)
    cos = []
    for t in range(200):
        a, c, d = unit(rng, 512, 3)
        b = basis.vectors[t]
        s = circular_convolve(a, b) + circular_convolve(c, d)
        cos.append(cosine(unbind(s, b), a))
    cos = np.array(cos)
    assert np.all(cos > 0.5)
    assert np.percentile(cos, 5) > 0.64


def test_basis_is_deterministic():
    a = generate_position_basis(512, 4, seed=7, unitary=True)
    b = generate_position_basis(512, 4, seed=7, unitary=True)
    assert a.vectors.tobytes() == b.vectors.tobytes()
    assert a.seed == 7 and a.unitary


def test_basis_unitary_properties():
    basis = generate_position_basis(512, 4, seed=9)
    assert np.allclose(np.linalg.norm(basis.vectors, axis=1), 1.0, atol=1e-6)
    assert np.allclose(np.abs(np.fft.fft(basis.vectors, axis=1)), 1.0, atol=1e-6)


def test_basis_variance_nonunitary():
    D = 512
    for seed in range(100):
        v = generate_position_basis(D, 4, seed=seed, unitary=False).vectors
        assert 0.8 / D <= v.var() <= 1.2 / D


@pytest.mark.parametrize("D,M", [(3, 4), (0, 1), (8, 0)])
def test_basis_rejects_bad_shapes(D, M):
    with pytest.raises(ValueError):
        generate_position_basis(D, M, seed=0)


def test_basis_is_immutable():
    basis = generate_position_basis(16, 2, seed=0)
    with pytest.raises(ValueError):
        basis.vectors[0, 0] = 1.0
    with pytest.raises(IndexError):
        basis[3]


def test_containment_self_similarity(rng):
    q = unit(rng, 512)
    p = generate_position_basis(512, 1, seed=2)[1]
    assert containment_score(q, p, circular_convolve(q, p)) == pytest.approx(1.0, abs=1e-6)


def test_containment_zero_composite():
    with pytest.raises(ValueError, match="zero norm"):
        containment_score(np.ones(4), delta(4), np.zeros(4))


def _member_nonmember(rng, trials=1000, D=512, M=4):
    mem, non = [], []
    for t in range(trials):
        basis = generate_position_basis(D, M, seed=1000 + t)
        X = unit(rng, D, M)
        s = sum(circular_convolve(X[m], basis.vectors[m]) for m in range(M))
        m = t % M
        mem.append(containment_score(X[m], basis.vectors[m], s))
        non.append(containment_score(unit(rng, D), basis.vectors[m], s))
    return np.array(mem), np.array(non)


def test_containment_member_and_nonmember(rng):
    # circulant oracle (1000 trials): member mean 0.499, non-member |score| < 0.2 always
    mem, non = _member_nonmember(rng)
    assert abs(mem.mean() - 0.499) < 0.05
    assert np.mean(np.abs(non) < 0.2) >= 0.99
    pooled = np.sqrt((mem.var(ddof=1) + non.var(ddof=1)) / 2)
    assert mem.mean() - non.mean() > 5 * pooled


# --- algebraic properties ------------------------------------------------------

vectors = st.integers(1, 64).flatmap(
    lambda d: st.tuples(*[st.lists(st.floats(-10, 10), min_size=d, max_size=d) for _ in range(3)])
)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_commutative_bilinear(vs):
    a, b, c = (np.array(v) for v in vs)
    ab = circular_convolve(a, b)
    assert np.allclose(ab, circular_convolve(b, a), atol=1e-9)
    assert np.allclose(ab, naive_convolve(a, b), atol=1e-9)
    assert np.allclose(circular_convolve(a + 2.5 * c, b), ab + 2.5 * circular_convolve(c, b), atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 64), st.integers(0, 200), st.integers(0, 2**32 - 1))
def test_delta_shift(d, t, seed):
    b = np.random.default_rng(seed).standard_normal(d)
    assert np.allclose(circular_convolve(delta(d, t), b), np.roll(b, t % d), atol=1e-12)
    assert np.max(np.abs(circular_convolve(delta(d), b) - b)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 128), st.integers(0, 2**32 - 1))
def test_unitary_inverse_equals_involution_and_preserves_norm(d, seed):
    p = generate_position_basis(d, 1, seed=seed)[1]
    assert np.allclose(exact_inverse(p), involution(p), atol=1e-6)
    a = np.random.default_rng(seed + 1).standard_normal(d)
    assert np.linalg.norm(circular_convolve(a, p)) == pytest.approx(np.linalg.norm(a), rel=1e-6)
