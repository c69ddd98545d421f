"""Fixed-point conversion between real tensors and field matrices.

Reals are scaled by ``2**l``, rounded half-up, and embedded into F_p (biases
at ``2**(2l)`` so they line up with weight-times-input products). Results
come back by signed lifting, then a two-stage rescale that first rounds to
``2**-l`` resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OverflowBudget
from .fieldcore import P25, FieldMatrix, Prime, embed_signed, lift_signed


@dataclass(frozen=True)
class QuantParams:
    l: int = 8
    p: int = P25

    def __post_init__(self):
        object.__setattr__(self, "p", Prime(self.p))
        if self.l < 1:
            raise ValueError("need at least one fractional bit")
        if 2 ** (2 * self.l) >= self.p / 2:
            raise ValueError(f"2**(2*{self.l}) does not fit below p/2 for p={int(self.p)}")

    @property
    def scale(self) -> int:
        return 1 << self.l


def round_half_up(x):
    """floor(x) when the fractional part is below 0.5, else floor(x) + 1.

    Negative half-integers round toward +inf (-1.5 -> -1). Returns a Python
    int for scalar input and an ``int64`` array otherwise.
    """
    arr = np.asarray(x, dtype=np.float64)
    fl = np.floor(arr)
    out = np.where(arr - fl < 0.5, fl, fl + 1.0)
    if np.ndim(x) == 0:
        return int(out)
    return out.astype(np.int64)


def _to_field(x, scale: int, q: QuantParams) -> FieldMatrix:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize NaN or infinite values")
    scaled = arr * scale
    half = q.p // 2
    # checked on the float first so the int64 cast below cannot wrap
    if scaled.size and np.max(np.abs(scaled)) > half + 1:
        raise OverflowBudget(f"max |x*{scale}| exceeds p/2 for p={int(q.p)}")
    ints = np.atleast_1d(np.asarray(round_half_up(scaled), dtype=np.int64))
    if ints.size and np.max(np.abs(ints)) > half:
        raise OverflowBudget(f"max |round(x*{scale})| exceeds p/2 for p={int(q.p)}")
    if ints.ndim == 1:
        ints = ints.reshape(-1, 1)
    return FieldMatrix(embed_signed(ints, q.p), q.p, check=False)


def quantize(x, q: QuantParams) -> FieldMatrix:
    """Field(Round(x * 2**l)); 1-D input becomes a column."""
    return _to_field(x, q.scale, q)


def quantize_bias(b, q: QuantParams) -> FieldMatrix:
    """Field(Round(b * 2**(2l)))."""
    return _to_field(b, q.scale * q.scale, q)


def _round_shift(z: np.ndarray, l: int) -> np.ndarray:
    # exact round_half_up(z / 2**l) for integers z
    fl = z >> l
    rem = z - (fl << l)
    return fl + (2 * rem >= (1 << l))


def dequantize_result(yq: FieldMatrix, q: QuantParams) -> np.ndarray:
    """Lift, then Round(y * 2**-l) * 2**-l, reading ``yq`` at scale 2**(2l)."""
    z = lift_signed(yq.data, q.p).astype(np.int64)
    return _round_shift(z, q.l).astype(np.float64) / q.scale


def dequantize(xq: FieldMatrix, q: QuantParams) -> np.ndarray:
    """Inverse of :func:`quantize` for a single (non-product) operand."""
    return lift_signed(xq.data, q.p).astype(np.float64) / q.scale


def dynamic_normalize(x):
    """Divide by the max-abs entry; returns ``(normalized, scale)``.

    An all-zero tensor is returned unchanged with scale 1.0.
    """
    arr = np.asarray(x, dtype=np.float64)
    m = float(np.max(np.abs(arr))) if arr.size else 0.0
    if m == 0.0:
        return arr, 1.0
    return arr / m, m


def overflow_budget(q: QuantParams, n_terms: int, x_bound: float, w_bound: float) -> bool:
    """True when an ``n_terms``-long fixed-point dot product plus a unit
    bias stays strictly inside (-p/2, p/2)."""
    if n_terms == 0:
        return True
    xb = round_half_up(abs(x_bound) * q.scale)
    wb = round_half_up(abs(w_bound) * q.scale)
    return n_terms * xb * wb + q.scale * q.scale < q.p / 2
