"""Exact and statistical leakage measurements for encoded shares.

The exhaustive routines enumerate every input and every noise block over a
small field and count how often each colluding view occurs. Mutual
information is computed from integer counts so that independent variables
produce exactly 0.0.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy import stats

from ..errors import TooLarge
from ..fieldcore import FieldMatrix, Prime
from .coeffs import EncodingCoeffs, gen_forward_coeffs

MAX_NOISE_STATES = 10**6
MAX_JOINT_STATES = 10**7


def _all_vectors(p: int, length: int) -> np.ndarray:
    """Every vector of F_p^length, shape (p**length, length)."""
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*[np.arange(p, dtype=np.int64)] * length, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _view_keys(C: EncodingCoeffs, X: np.ndarray, noise: np.ndarray, subset, dim: int) -> np.ndarray:
    """Integer code of the colluders' view for each (input, noise) pair.

    ``X`` is (nx, dim*K) and ``noise`` is (nr, dim*M), both row-major in the
    data dimension. Returns an (nx, nr) array.
    """
    p = int(C.p)
    cols = list(subset)
    a1 = C.A.data[: C.K][:, cols]
    a2 = C.A.data[C.K :][:, cols]
    Xm = X.reshape(-1, dim, C.K)
    Rm = noise.reshape(-1, dim, C.M)
    data_part = np.einsum("xdk,ks->xds", Xm, a1) % p
    noise_part = np.einsum("rdm,ms->rds", Rm, a2) % p
    view = (data_part[:, None] + noise_part[None, :]) % p
    flat = view.reshape(view.shape[0], view.shape[1], -1)
    weights = p ** np.arange(flat.shape[-1], dtype=np.int64)
    return flat @ weights


def _check_size(p: int, K: int, M: int, dim: int):
    if p ** (M * dim) > MAX_NOISE_STATES or p ** ((K + M) * dim) > MAX_JOINT_STATES:
        raise TooLarge(f"enumeration over p={p}, K={K}, M={M}, dim={dim} is too large")


def subset_mutual_information(C: EncodingCoeffs, subset, data_dim: int) -> float:
    """Exact I(view; X) in bits with X uniform over F_p^(data_dim x K)."""
    p = int(C.p)
    _check_size(p, C.K, C.M, data_dim)
    X = _all_vectors(p, data_dim * C.K)
    noise = _all_vectors(p, data_dim * C.M)
    keys = _view_keys(C, X, noise, subset, data_dim)
    nx, nr = keys.shape
    x_idx = np.repeat(np.arange(nx), nr)
    uniq, inv = np.unique(keys.ravel(), return_inverse=True)
    joint = np.zeros((nx, len(uniq)), dtype=np.int64)
    np.add.at(joint, (x_idx, inv.ravel()), 1)
    marginal = joint.sum(axis=0)
    xs, ys = np.nonzero(joint)
    c = joint[xs, ys]
    # equal integer ratios give log2(1.0) == 0.0 exactly
    ratio = (c * nx) / marginal[ys]
    return float(np.sum((c / (nx * nr)) * np.log2(ratio)))


def exhaustive_mutual_information(p_small, K: int, M: int, data_dim: int = 1, *,
                                  subset_size: int | None = None, coeffs: EncodingCoeffs | None = None,
                                  rng: np.random.Generator | None = None) -> float:
    """Largest exact leakage over all colluding subsets of ``subset_size`` shares.

    ``subset_size`` defaults to M, in which case every subset of size 1..M
    is checked. A fixed coefficient matrix is drawn from ``rng`` unless
    ``coeffs`` is given.
    """
    p = Prime(p_small)
    _check_size(int(p), K, M, data_dim)
    if coeffs is None:
        coeffs = gen_forward_coeffs(rng if rng is not None else np.random.default_rng(0), K, M, p)
    S = K + M
    sizes = range(1, M + 1) if subset_size is None else [subset_size]
    worst = 0.0
    for size in sizes:
        if not 1 <= size <= S:
            raise ValueError(f"subset size {size} outside 1..{S}")
        for subset in itertools.combinations(range(S), size):
            worst = max(worst, subset_mutual_information(coeffs, subset, data_dim))
    return worst


def exact_view_distribution(C: EncodingCoeffs, Xq: FieldMatrix, subset) -> np.ndarray:
    """Histogram over all colluder views for one fixed input (data_dim x K)."""
    p = int(C.p)
    dim = Xq.rows
    _check_size(p, C.K, C.M, dim)
    noise = _all_vectors(p, dim * C.M)
    keys = _view_keys(C, Xq.data.reshape(1, -1), noise, subset, dim)[0]
    return np.bincount(keys, minlength=p ** (dim * len(subset)))


def residue_bins(p: int, bins: int) -> np.ndarray:
    """How many residues of [0, p) land in each of ``bins`` equal-width bins."""
    edges = -(-np.arange(bins + 1, dtype=object) * p // bins)  # ceil(b * p / bins)
    return np.diff(edges).astype(np.float64)


def chi_square_uniformity(values, p: int, bins: int = 100) -> float:
    """p-value of Pearson's chi-square test against uniform on [0, p)."""
    v = np.asarray(values, dtype=np.int64).ravel()
    idx = (v.astype(object) * bins // p).astype(np.int64) if p > 2**40 else v * bins // p
    counts = np.bincount(idx, minlength=bins)
    expected = residue_bins(p, bins) * (len(v) / p)
    return float(stats.chisquare(counts, f_exp=expected).pvalue)


def binomial_reject_limit(n_tests: int, alpha: float, confidence: float = 0.999) -> int:
    """Largest rejection count compatible with ``n_tests`` valid tests at level ``alpha``."""
    return int(stats.binom.ppf(confidence, n_tests, alpha))
