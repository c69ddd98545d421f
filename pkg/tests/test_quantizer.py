import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codedoffload.errors import OverflowBudget
from codedoffload.fieldcore import P25, P61, FieldMatrix, mat_add, mat_mul
from codedoffload.quantizer import (
    QuantParams,
    dequantize,
    dequantize_result,
    dynamic_normalize,
    overflow_budget,
    quantize,
    quantize_bias,
    round_half_up,
)

Q = QuantParams()


@pytest.mark.parametrize("x, want", [(2.4, 2), (2.5, 3), (-1.5, -1), (-1.6, -2), (-0.5, 0), (0.0, 0)])
def test_round_half_rule(x, want):
    assert round_half_up(x) == want


def test_round_array():
    assert list(round_half_up(np.array([0.5, 1.49, -2.5]))) == [1, 1, -2]


def test_params_validation():
    assert Q.scale == 256
    with pytest.raises(ValueError):
        QuantParams(l=13, p=P25)  # 2^26 >= p/2
    QuantParams(l=20, p=P61)


def test_negative_embedding():
    xq = quantize(np.array([[-1.0, 0.5]]), Q)
    assert xq.data.tolist() == [[P25 - 256, 128]]


@given(st.floats(-1000, 1000, allow_nan=False))
def test_roundtrip_within_resolution(x):
    back = dequantize(quantize(np.array([[x]]), Q), Q)[0, 0]
    assert abs(back - x) <= 2.0**-9 + 1e-12


def test_product_rescale():
    W = np.array([[0.5, -1.25]])
    X = np.array([[2.0], [1.0]])
    b = np.array([[0.75]])
    y = mat_add(mat_mul(quantize(W, Q), quantize(X, Q)), quantize_bias(b, Q))
    assert dequantize_result(y, Q)[0, 0] == pytest.approx(0.5 * 2.0 - 1.25 + 0.75)


def test_dequantize_result_rounds_half_up():
    # 2^(2l) scale: 1.5 * 2^8 units of 2^-16 -> exactly half a step below/above
    y = FieldMatrix(np.array([[384, P25 - 384]]), P25)
    assert dequantize_result(y, Q).tolist() == [[2 / 256, -1 / 256]]


def test_overflow_detected():
    with pytest.raises(OverflowBudget):
        quantize(np.array([[1e6]]), Q)
    with pytest.raises(ValueError):
        quantize(np.array([[np.nan]]), Q)


def test_overflow_budget_boundary():
    assert overflow_budget(Q, 0, 1e9, 1e9)
    assert overflow_budget(Q, 100, 1.0, 1.0)
    # n * 2^16 + 2^16 < p/2  <=>  n < 255.0...
    assert overflow_budget(Q, 254, 1.0, 1.0)
    assert not overflow_budget(Q, 256, 1.0, 1.0)


def test_dynamic_normalize():
    x, s = dynamic_normalize(np.array([2.0, -4.0]))
    assert s == 4.0 and x.tolist() == [0.5, -1.0]
    z, s0 = dynamic_normalize(np.zeros(3))
    assert s0 == 1.0 and not z.any()


def test_spec_examples():
    assert quantize(np.array([[1.5]]), Q).data.tolist() == [[384]]
    assert dequantize_result(FieldMatrix(np.array([[98304]]), P25), Q).tolist() == [[1.5]]


@given(st.floats(-1000, 1000, allow_nan=False).filter(lambda v: (v * 256) % 1 != 0.5))
def test_negation_commutes(x):
    a = quantize(np.array([[x]]), Q).data[0, 0]
    b = quantize(np.array([[-x]]), Q).data[0, 0]
    assert (int(a) + int(b)) % P25 == 0
