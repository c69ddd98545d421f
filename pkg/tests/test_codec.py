import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codedoffload.codec import (
    EncodingCoeffs,
    aggregate_field,
    aggregate_gradient,
    backward_coeffs_for,
    decode_forward,
    decode_full,
    encode,
    gen_backward_coeffs,
    gen_forward_coeffs,
    noise_rows_private,
    share_equation,
    verify_coeff_constraint,
)
from codedoffload.errors import ShapeMismatch, Singular
from codedoffload.experiments import roundtrip_instance, trace_instance
from codedoffload.fieldcore import P25, FieldMatrix, mat_inv, mat_mul, random_matrix
from codedoffload.quantizer import QuantParams, quantize

P = 11


def fm(rows, p=P):
    return FieldMatrix(np.array(rows, dtype=np.int64), p)


@pytest.fixture
def tiny():
    """K = M = 1 over F_11: x = 3, r = 5, W = 2, delta = 4."""
    A = fm([[2, 1], [3, 4]])
    return EncodingCoeffs.from_matrix(A, 1, 1)


def test_worked_example_forward(tiny):
    assert tiny.A_inv == fm([[3, 2], [6, 7]])
    shares = encode(fm([[3]]), fm([[5]]), tiny)
    assert shares.matrix == fm([[10, 1]])
    ybar = mat_mul(fm([[2]]), shares.matrix)
    assert ybar == fm([[9, 2]])
    assert decode_full(ybar, tiny) == fm([[6, 10]])  # W.x and W.r
    assert decode_forward(ybar, tiny) == fm([[6]])


def test_worked_example_backward(tiny):
    bc = backward_coeffs_for(tiny, [1, 1])
    assert bc.B == fm([[3], [6]])
    assert verify_coeff_constraint(tiny, bc)
    shares = encode(fm([[3]]), fm([[5]]), tiny)
    eqs = [share_equation([fm([[4]])], bc.B.data[j], shares.share(j)) for j in range(2)]
    assert [int(e.data[0, 0]) for e in eqs] == [10, 2]
    assert aggregate_field(eqs, bc) == fm([[1]])  # 4 * 3 = 12 = 1 mod 11


def test_privacy_condition_is_per_subset():
    # rank-1 noise rows but column 0 is zero: that share would be unmasked
    a2 = fm([[0, 1, 2]])
    assert not noise_rows_private(a2, 1)
    assert noise_rows_private(fm([[1, 1, 2]]), 1)
    # M = 2: the pair of columns {0, 1} is rank deficient
    assert not noise_rows_private(fm([[1, 2, 0, 1], [2, 4, 1, 0]]), 2)


def test_from_matrix_rejects_bad():
    with pytest.raises(Singular):
        EncodingCoeffs.from_matrix(fm([[1, 2], [2, 4]]), 1, 1)
    with pytest.raises(ValueError):
        EncodingCoeffs.from_matrix(fm([[1, 1], [0, 1]]), 1, 1)  # noise row has a zero


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_generated_coeffs_satisfy_constraint(K, M, seed):
    rng = np.random.default_rng(seed)
    C = gen_forward_coeffs(rng, K, M, P25)
    assert mat_mul(C.A, C.A_inv) == mat_mul(C.A_inv, C.A)
    assert noise_rows_private(C.A2, M)
    assert verify_coeff_constraint(C, gen_backward_coeffs(rng, C))


def test_constraint_rejects_perturbed_B():
    rng = np.random.default_rng(0)
    C = gen_forward_coeffs(rng, 2, 1, P25)
    bc = gen_backward_coeffs(rng, C)
    bad = bc.B.data.copy()
    bad[1, 0] = (bad[1, 0] + 1) % P25
    assert not verify_coeff_constraint(C, type(bc)(FieldMatrix(bad, P25), bc.gamma))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_roundtrip_property(K, M, seed):
    assert roundtrip_instance(np.random.default_rng(seed), K, M, 32, QuantParams())


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_trace_identity_property(K, M, seed):
    ok, rel = trace_instance(np.random.default_rng(seed), K, M, 16, QuantParams())
    assert ok and rel < 1e-9


def test_trace_identity_fails_when_broken():
    ok, rel = trace_instance(np.random.default_rng(5), 2, 1, 8, QuantParams(), break_constraint=True)
    assert not ok and rel > 1e-3


def test_gradient_decode_real_values():
    q = QuantParams()
    rng = np.random.default_rng(9)
    K, M = 2, 1
    X = rng.uniform(-1, 1, (5, K))
    D = rng.uniform(-1, 1, (3, K))
    C = gen_forward_coeffs(rng, K, M, q.p)
    bc = gen_backward_coeffs(rng, C)
    shares = encode(quantize(X, q), random_matrix(rng, 5, M, q.p), C)
    dq = [quantize(D[:, [i]], q) for i in range(K)]
    eqs = [share_equation(dq, bc.B.data[j], shares.share(j)) for j in range(C.S)]
    g = aggregate_gradient(eqs, bc, K, q)
    assert np.max(np.abs(g - D @ X.T / K)) < 5 * 2.0**-8


def test_encode_shape_checks():
    rng = np.random.default_rng(0)
    C = gen_forward_coeffs(rng, 2, 1, P25)
    with pytest.raises(ShapeMismatch):
        encode(random_matrix(rng, 4, 3, P25), random_matrix(rng, 4, 1, P25), C)
    with pytest.raises(ShapeMismatch):
        encode(random_matrix(rng, 4, 2, P25), random_matrix(rng, 3, 1, P25), C)
    with pytest.raises(ShapeMismatch):
        decode_forward(random_matrix(rng, 2, 2, P25), C)


def test_backward_coeffs_need_nonzero_gamma():
    C = gen_forward_coeffs(np.random.default_rng(0), 1, 1, P25)
    with pytest.raises(ValueError):
        backward_coeffs_for(C, [0, 1])


def test_inverse_relation():
    C = gen_forward_coeffs(np.random.default_rng(2), 3, 2, P25)
    assert C.A_inv == mat_inv(C.A)
    assert C.A1.shape == (3, 5) and C.A2.shape == (2, 5)
