"""Share encoding, forward decoding, and gamma-weighted gradient aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from ..fieldcore import FieldMatrix, hstack, mat_mul, mul_mod, random_matrix
from ..quantizer import QuantParams, dequantize_result
from .coeffs import BackwardCoeffs, EncodingCoeffs


@dataclass(frozen=True)
class NoiseBlock:
    R: FieldMatrix  # N x M

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int, m: int, p) -> "NoiseBlock":
        return cls(random_matrix(rng, n, m, p))


@dataclass
class ShareSet:
    """Encoded operand: column ``j`` of ``matrix`` is the share for worker ``j``.

    ``share_shape`` lets a flattened column travel as an N x T operand
    (T > 1 for im2col'd convolution inputs).
    """

    matrix: FieldMatrix
    batch_id: int = 0
    layer_id: int = 0
    share_shape: tuple = field(default=None)

    def __post_init__(self):
        if self.share_shape is None:
            self.share_shape = (self.matrix.rows, 1)
        if int(np.prod(self.share_shape)) != self.matrix.rows:
            raise ShapeMismatch(f"share_shape {self.share_shape} does not hold {self.matrix.rows} values")

    def __len__(self):
        return self.matrix.cols

    def share(self, j: int) -> FieldMatrix:
        col = self.matrix.data[:, j]
        return FieldMatrix(col.reshape(self.share_shape), self.matrix.p, check=False)

    @property
    def shares(self) -> list[FieldMatrix]:
        return [self.share(j) for j in range(len(self))]

    def drop_last(self) -> "ShareSet":
        return ShareSet(self.matrix[:, :-1], self.batch_id, self.layer_id, self.share_shape)


def encode(Xq: FieldMatrix, R, C: EncodingCoeffs, *, batch_id: int = 0, layer_id: int = 0,
           share_shape=None) -> ShareSet:
    """X_bar = [Xq | R] . A  (N x S)."""
    R = R.R if isinstance(R, NoiseBlock) else R
    if Xq.cols != C.K:
        raise ShapeMismatch(f"expected {C.K} data columns, got {Xq.cols}")
    if R.shape != (Xq.rows, C.M):
        raise ShapeMismatch(f"noise block must be {Xq.rows}x{C.M}, got {R.shape}")
    xbar = mat_mul(hstack([Xq, R]), C.A)
    return ShareSet(xbar, batch_id, layer_id, share_shape)


def decode_full(Ybar: FieldMatrix, C: EncodingCoeffs) -> FieldMatrix:
    """Ybar . A^-1 including the noise-product columns."""
    if Ybar.cols != C.S:
        raise ShapeMismatch(f"expected {C.S} worker results, got {Ybar.cols}")
    return mat_mul(Ybar, C.A_inv)


def decode_forward(Ybar: FieldMatrix, C: EncodingCoeffs) -> FieldMatrix:
    """Recover W . X from stacked worker outputs; noise products are dropped."""
    return decode_full(Ybar, C)[:, : C.K]


def stack_results(results) -> FieldMatrix:
    """Flatten per-worker outputs into the columns of one matrix, in order."""
    p = results[0].p
    cols = [r.data.reshape(-1, 1) for r in results]
    return FieldMatrix(np.hstack(cols), p, check=False)


def combine_deltas(deltas, beta_row) -> FieldMatrix:
    """sum_i beta_i * delta_i over F_p."""
    p = int(deltas[0].p)
    acc = np.zeros(deltas[0].shape, dtype=np.int64)
    for d, b in zip(deltas, beta_row):
        acc = (acc + mul_mod(d.data, int(b), p)) % p
    return FieldMatrix(acc, p, check=False)


def share_equation(deltas, beta_row, share: FieldMatrix) -> FieldMatrix:
    """Eq_j = <sum_i beta_{j,i} delta_i, x_bar_j> as (sum beta delta) . x_bar^T."""
    dbar = combine_deltas(deltas, beta_row)
    if dbar.cols != share.cols:
        raise ShapeMismatch(f"delta {dbar.shape} and share {share.shape} disagree on width")
    return mat_mul(dbar, share.T)


def as_delta_list(delta_q) -> list[FieldMatrix]:
    """Accept an N_out x K matrix (one column per input) or a list of matrices."""
    if isinstance(delta_q, FieldMatrix):
        return [delta_q[:, [i]] for i in range(delta_q.cols)]
    return list(delta_q)


def aggregate_field(eq_results, BC: BackwardCoeffs) -> FieldMatrix:
    """sum_j gamma_j * Eq_j over F_p."""
    if len(eq_results) != len(BC.gamma):
        raise ShapeMismatch(f"{len(eq_results)} equations for {len(BC.gamma)} gammas")
    shape = eq_results[0].shape
    p = int(BC.p)
    acc = np.zeros(shape, dtype=np.int64)
    for eq, g in zip(eq_results, BC.gamma):
        if eq.shape != shape:
            raise ShapeMismatch("worker equations differ in shape")
        acc = (acc + mul_mod(eq.data, int(g), p)) % p
    return FieldMatrix(acc, p, check=False)


def aggregate_gradient(eq_results, BC: BackwardCoeffs, K: int, q: QuantParams) -> np.ndarray:
    """Decode the batch gradient: lift the gamma-sum, rescale, divide by K."""
    total = aggregate_field(eq_results, BC)
    return dequantize_result(total, q) / K
