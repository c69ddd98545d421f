"""Integrity extension: one redundant share, two independent decodings.

With S + 1 shares and an S x (S + 1) coefficient matrix whose every S-column
submatrix is invertible, the coordinator decodes once from shares
``0..S-1`` and once from ``0..S-2, S``. Honest results agree; an additive
error on any single worker changes exactly one side or moves both by
different amounts, so the decodings disagree.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import GenerationFailure, ShapeMismatch, Singular
from ..fieldcore import (
    MAX_GENERATION_TRIES,
    FieldMatrix,
    hstack,
    mat_inv,
    mat_mul,
    random_matrix,
    random_nonzero,
)
from .coeffs import BackwardCoeffs, EncodingCoeffs, gen_backward_coeffs, noise_rows_private
from .encoding import NoiseBlock, ShareSet, aggregate_field, encode


class Verdict(str, Enum):
    CLEAN = "clean"
    VIOLATION = "violation"


@dataclass(frozen=True)
class ExtendedCoeffs:
    base: EncodingCoeffs
    A_ext: FieldMatrix  # S x (S + 1)
    views: tuple  # two EncodingCoeffs, one per decoding subset
    subsets: tuple  # share indices used by each view

    @property
    def K(self) -> int:
        return self.base.K

    @property
    def S(self) -> int:
        return self.base.S


def _subsets(S: int):
    return tuple(range(S)), tuple(range(S - 1)) + (S,)


def extend_coeffs(C: EncodingCoeffs, rng: np.random.Generator | None = None,
                  column=None) -> ExtendedCoeffs:
    """Append a redundant coefficient column to ``C.A``.

    A random column is resampled until every S-column submatrix of the
    extended matrix is invertible and the noise rows stay private over all
    S + 1 shares. An explicit ``column`` is validated the same way.
    """
    S, p = C.S, C.p
    tries = 1 if column is not None else MAX_GENERATION_TRIES
    for _ in range(tries):
        if column is not None:
            col = FieldMatrix.reduce(np.asarray(column, dtype=np.int64).reshape(S, 1), p)
        else:
            col = random_matrix(rng, S, 1, p)
        A_ext = hstack([C.A, col])
        if not noise_rows_private(A_ext[C.K :, :], C.M):
            continue
        try:
            inverses = [mat_inv(A_ext[:, [c for c in range(S + 1) if c != drop]]) for drop in range(S + 1)]
        except Singular:
            continue
        subsets = _subsets(S)
        views = (
            C,
            EncodingCoeffs(C.K, C.M, A_ext[:, list(subsets[1])], inverses[S - 1]),
        )
        return ExtendedCoeffs(C, A_ext, views, subsets)
    raise GenerationFailure("could not find a redundant column with all S-subsets invertible")


def extend_for_integrity(Xq: FieldMatrix, R, C: EncodingCoeffs, rng: np.random.Generator, *,
                         column=None, batch_id: int = 0, layer_id: int = 0, share_shape=None):
    """Encode S + 1 shares; the first S are exactly ``encode(Xq, R, C)``."""
    ext = extend_coeffs(C, rng, column)
    R = R.R if isinstance(R, NoiseBlock) else R
    base = encode(Xq, R, C, batch_id=batch_id, layer_id=layer_id, share_shape=share_shape)
    extra = mat_mul(hstack([Xq, R]), ext.A_ext[:, [C.S]])
    shares = ShareSet(hstack([base.matrix, extra]), batch_id, layer_id, base.share_shape)
    return shares, ext


def decode_with_verification(Ybar_ext: FieldMatrix, ext: ExtendedCoeffs):
    """Decode from both share subsets and compare full decoded rows.

    Returns ``(data_columns, verdict)``; the data columns come from the
    first subset. Comparison covers the noise-product columns too, since an
    error can be invisible in the data columns alone.
    """
    if Ybar_ext.cols != ext.S + 1:
        raise ShapeMismatch(f"expected {ext.S + 1} worker results, got {Ybar_ext.cols}")
    decoded = [mat_mul(Ybar_ext[:, list(sub)], view.A_inv) for sub, view in zip(ext.subsets, ext.views)]
    verdict = Verdict.CLEAN if decoded[0] == decoded[1] else Verdict.VIOLATION
    return decoded[0][:, : ext.K], verdict


def parity_vector(ext: ExtendedCoeffs) -> np.ndarray:
    """Nonzero ``n`` with ``A_ext . n = 0``; honest results satisfy ``Ybar_ext . n = 0``."""
    S, p = ext.S, int(ext.A_ext.p)
    # n = [-(A^-1 . c); 1] where c is the redundant column
    c = ext.A_ext.data[:, S].reshape(S, 1)
    sol = mat_mul(ext.base.A_inv, FieldMatrix(c, p, check=False)).data.ravel()
    return np.concatenate([(-sol) % p, [1]]).astype(np.int64)


def gen_backward_coeffs_extended(rng: np.random.Generator, ext: ExtendedCoeffs):
    """One (B, gamma) pair per decoding subset.

    Workers in both subsets get different gammas in the two pairs, so a
    worker that adds the same error to both of its equations still moves
    the two aggregates apart.
    """
    first = gen_backward_coeffs(rng, ext.views[0])
    shared = len(set(ext.subsets[0]) & set(ext.subsets[1]))
    for _ in range(MAX_GENERATION_TRIES):
        gamma = random_nonzero(rng, ext.S, ext.A_ext.p)
        if np.all(gamma[:shared] != first.gamma[:shared]):
            return first, gen_backward_coeffs(rng, ext.views[1], gamma=gamma)
    raise GenerationFailure("could not separate the two gamma vectors")


def aggregate_with_verification(eq_first, eq_second, bcs: tuple[BackwardCoeffs, BackwardCoeffs]):
    """Field aggregates from both subsets; returns ``(first_total, verdict)``."""
    a = aggregate_field(eq_first, bcs[0])
    b = aggregate_field(eq_second, bcs[1])
    return a, (Verdict.CLEAN if a == b else Verdict.VIOLATION)
