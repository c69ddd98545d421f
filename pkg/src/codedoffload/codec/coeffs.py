"""Secret coefficient generation for the coordinator.

``A`` (S x S) mixes the K data columns with M noise columns; its last M rows
(``A2``) multiply the noise. ``B`` (S x K) and the diagonal ``gamma`` are
chosen so that ``B^T . diag(gamma) . A^T = [I_K | 0]``, which is what lets
the gamma-weighted sum of worker equations collapse to the batch gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..errors import GenerationFailure, ShapeMismatch, Singular
from ..fieldcore import (
    MAX_GENERATION_TRIES,
    FieldMatrix,
    Prime,
    identity,
    mat_inv,
    mat_mul,
    mat_rank,
    mul_mod,
    random_matrix,
    random_nonzero,
)


def noise_rows_private(a2: FieldMatrix, m: int) -> bool:
    """Every set of at most ``m`` columns of the noise rows is independent.

    Full rank of ``a2`` alone is not enough: a colluding subset whose noise
    columns are dependent can cancel the noise. Checking all size-``m``
    subsets covers the smaller ones.
    """
    if a2.rows != m:
        raise ShapeMismatch(f"noise block must have {m} rows, got {a2.rows}")
    cols = a2.cols
    size = min(m, cols)
    for subset in combinations(range(cols), size):
        if mat_rank(a2[:, list(subset)]) < size:
            return False
    return True


@dataclass(frozen=True)
class EncodingCoeffs:
    K: int
    M: int
    A: FieldMatrix
    A_inv: FieldMatrix

    @property
    def S(self) -> int:
        return self.K + self.M

    @property
    def p(self) -> Prime:
        return self.A.p

    @property
    def A1(self) -> FieldMatrix:
        return self.A[: self.K, :]

    @property
    def A2(self) -> FieldMatrix:
        return self.A[self.K :, :]

    @classmethod
    def from_matrix(cls, A: FieldMatrix, K: int, M: int, *, check_privacy: bool = True):
        if K < 1 or M < 1:
            raise ValueError("K and M must both be >= 1")
        if A.shape != (K + M, K + M):
            raise ShapeMismatch(f"A must be {K + M}x{K + M}, got {A.shape}")
        A_inv = mat_inv(A)
        if check_privacy and not noise_rows_private(A[K:, :], M):
            raise ValueError("noise rows of A leave a colluding subset unmasked")
        return cls(K, M, A, A_inv)


@dataclass(frozen=True)
class BackwardCoeffs:
    B: FieldMatrix  # S x K, handed to workers
    gamma: np.ndarray  # S nonzero residues, kept by the coordinator

    @property
    def p(self) -> Prime:
        return self.B.p

    def gamma_matrix(self) -> FieldMatrix:
        return FieldMatrix(np.diag(self.gamma), self.B.p, check=False)


def gen_forward_coeffs(rng: np.random.Generator, K: int, M: int, p) -> EncodingCoeffs:
    """Fresh uniform A, resampled until invertible with private noise rows."""
    if K < 1 or M < 1:
        raise ValueError("K and M must both be >= 1")
    S = K + M
    for _ in range(MAX_GENERATION_TRIES):
        A = random_matrix(rng, S, S, p)
        if not noise_rows_private(A[K:, :], M):
            continue
        try:
            return EncodingCoeffs(K, M, A, mat_inv(A))
        except Singular:
            continue
    raise GenerationFailure(f"no usable {S}x{S} coefficient matrix in {MAX_GENERATION_TRIES} draws")


def constraint_target(K: int, S: int, p) -> FieldMatrix:
    """[I_K | 0_{K x (S-K)}]."""
    return identity(S, p)[:K, :]


def verify_coeff_constraint(C: EncodingCoeffs, BC: BackwardCoeffs) -> bool:
    if BC.B.shape != (C.S, C.K) or len(BC.gamma) != C.S:
        return False
    if np.any(np.asarray(BC.gamma) % int(C.p) == 0):
        return False
    lhs = mat_mul(mat_mul(BC.B.T, BC.gamma_matrix()), C.A.T)
    return lhs == constraint_target(C.K, C.S, C.p)


def backward_coeffs_for(C: EncodingCoeffs, gamma) -> BackwardCoeffs:
    """Solve for B given gamma: B = diag(gamma)^-1 . A^-1[:, :K]."""
    p = int(C.p)
    gamma = np.asarray(gamma, dtype=np.int64) % p
    if gamma.shape != (C.S,):
        raise ShapeMismatch(f"gamma must have {C.S} entries")
    if np.any(gamma == 0):
        raise ValueError("every gamma must be nonzero")
    gamma_inv = np.array([pow(int(g), -1, p) for g in gamma], dtype=np.int64)
    B = mul_mod(C.A_inv.data[:, : C.K], gamma_inv[:, None], p)
    return BackwardCoeffs(FieldMatrix(B, C.p, check=False), gamma)


def gen_backward_coeffs(rng: np.random.Generator, C: EncodingCoeffs, gamma=None) -> BackwardCoeffs:
    if gamma is None:
        gamma = random_nonzero(rng, C.S, C.p)
    BC = backward_coeffs_for(C, gamma)
    if not verify_coeff_constraint(C, BC):
        raise GenerationFailure("generated backward coefficients violate the decoding constraint")
    return BC
