"""Exact arithmetic and dense linear algebra over a prime field F_p.

Residues are stored as least nonnegative representatives in ``int64``
numpy arrays. Products are reduced with a widened intermediate: plain
``int64`` when the inner dimension keeps partial sums below 2**63, chunked
accumulation when it does not, and Python integers (``object`` arrays) for
primes whose squared residues already overflow 64 bits.
"""
from __future__ import annotations

import io
from functools import lru_cache

import numpy as np
from sympy import isprime

from .errors import (
    GenerationFailure,
    OutOfRange,
    PrimeMismatch,
    ShapeMismatch,
    Singular,
    ZeroInverse,
)

#: Largest 25-bit prime, the default working field.
P25 = 2**25 - 39
#: Mersenne prime offered for configurations that exceed the 25-bit budget.
P61 = 2**61 - 1

_INT64_MAX = np.iinfo(np.int64).max
MAX_GENERATION_TRIES = 64


@lru_cache(maxsize=64)
def _checked_prime(p: int) -> bool:
    return p >= 5 and bool(isprime(p))


class Prime(int):
    """An ``int`` that is known to be a prime >= 5."""

    def __new__(cls, p):
        if isinstance(p, Prime):
            return p
        if isinstance(p, (bool, float)) or int(p) != p:
            raise ValueError(f"prime must be an integer, got {p!r}")
        if not _checked_prime(int(p)):
            raise ValueError(f"{p} is not a prime >= 5")
        return super().__new__(cls, int(p))

    def __repr__(self):
        return f"Prime({int(self)})"


PRIMES = {"25bit": Prime(P25), "large": Prime(P61)}


# -- scalar arithmetic -------------------------------------------------------

def f_add(a: int, b: int, p: int) -> int:
    return (a + b) % p


def f_sub(a: int, b: int, p: int) -> int:
    return (a - b) % p


def f_mul(a: int, b: int, p: int) -> int:
    return (int(a) * int(b)) % p


def f_neg(a: int, p: int) -> int:
    return (-a) % p


def f_inv(a: int, p: int) -> int:
    a = int(a) % p
    if a == 0:
        raise ZeroInverse("0 has no multiplicative inverse")
    return pow(a, -1, int(p))


def embed_signed(z, p: int):
    """Map signed integers with |z| < p to residues (negatives get +p).

    Accepts a Python int or an integer array; returns the same kind.
    """
    if np.isscalar(z) and not isinstance(z, np.ndarray):
        z = int(z)
        if abs(z) >= p:
            raise OutOfRange(f"|{z}| >= p={p}")
        return z + p if z < 0 else z
    arr = np.asarray(z)
    if arr.dtype == object:
        bad = any(abs(int(v)) >= p for v in arr.flat)
    else:
        arr = arr.astype(np.int64)
        bad = bool(np.any(np.abs(arr) >= p))
    if bad:
        raise OutOfRange(f"value with magnitude >= p={p}")
    return np.where(arr < 0, arr + p, arr).astype(np.int64)


def lift_signed(e, p: int):
    """Signed representative in (-p/2, p/2) of residues ``e``."""
    if np.isscalar(e) and not isinstance(e, np.ndarray):
        e = int(e)
        return e - p if e > p // 2 else e
    arr = np.asarray(e, dtype=np.int64)
    return np.where(arr > p // 2, arr - p, arr)


# -- matrices ----------------------------------------------------------------

class FieldMatrix:
    """Dense 2-D matrix of residues modulo ``p``."""

    __slots__ = ("data", "p")

    def __init__(self, data, p, *, check: bool = True):
        p = Prime(p)
        arr = np.asarray(data)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ShapeMismatch(f"FieldMatrix needs 2-D data, got ndim={arr.ndim}")
        if check:
            if arr.dtype == object or not np.issubdtype(arr.dtype, np.integer):
                if not all(float(v) == int(v) for v in arr.flat):
                    raise ValueError("FieldMatrix entries must be integers")
                arr = np.array([[int(v) for v in row] for row in arr], dtype=object)
                if arr.size and (min(arr.flat) < 0 or max(arr.flat) >= p):
                    raise OutOfRange("entries must lie in [0, p)")
            elif arr.size and (arr.min() < 0 or arr.max() >= p):
                raise OutOfRange("entries must lie in [0, p)")
        self.data = np.ascontiguousarray(arr, dtype=np.int64).reshape(arr.shape)
        self.p = p

    @classmethod
    def reduce(cls, values, p) -> "FieldMatrix":
        """Build from arbitrary integers, reducing each modulo ``p``."""
        arr = np.asarray(values)
        if arr.dtype == object:
            arr = np.vectorize(lambda v: int(v) % int(p), otypes=[np.int64])(arr)
        else:
            arr = np.mod(arr.astype(np.int64), int(p))
        return cls(arr, p, check=False)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self) -> "FieldMatrix":
        return FieldMatrix(self.data.T, self.p, check=False)

    def __getitem__(self, idx) -> "FieldMatrix":
        return FieldMatrix(np.atleast_2d(self.data[idx]), self.p, check=False)

    def __eq__(self, other):
        if not isinstance(other, FieldMatrix):
            return NotImplemented
        return self.p == other.p and self.shape == other.shape and bool(
            np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def __repr__(self):
        return f"FieldMatrix({self.data.tolist()}, p={int(self.p)})"

    def tolist(self):
        return self.data.tolist()

    def tobytes(self) -> bytes:
        return self.data.astype("<i8").tobytes()

    # CSV dump: first line "rows,cols,p", then one row of residues per line.
    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"{self.rows},{self.cols},{int(self.p)}\n")
        for row in self.data:
            buf.write(",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FieldMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        rows, cols, p = (int(v) for v in lines[0].split(","))
        body = [[int(v) for v in ln.split(",")] for ln in lines[1:]]
        if len(body) != rows or any(len(r) != cols for r in body):
            raise ShapeMismatch("CSV body does not match its rows,cols header")
        return cls(np.array(body, dtype=np.int64).reshape(rows, cols), p)


def _same_prime(*mats: FieldMatrix) -> Prime:
    p = mats[0].p
    for m in mats[1:]:
        if m.p != p:
            raise PrimeMismatch(f"p={int(m.p)} vs p={int(p)}")
    return p


def identity(n: int, p) -> FieldMatrix:
    return FieldMatrix(np.eye(n, dtype=np.int64), p, check=False)


def zeros(rows: int, cols: int, p) -> FieldMatrix:
    return FieldMatrix(np.zeros((rows, cols), dtype=np.int64), p, check=False)


def _matmul_mod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    n = a.shape[1]
    bound = (p - 1) ** 2
    if n == 0:
        return np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    if bound > _INT64_MAX:
        prod = a.astype(object) @ b.astype(object)
        return np.vectorize(lambda v: v % p, otypes=[np.int64])(prod)
    chunk = _INT64_MAX // bound
    if n <= chunk:
        return (a @ b) % p
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    for s in range(0, n, chunk):
        out = (out + (a[:, s : s + chunk] @ b[s : s + chunk]) % p) % p
    return out


def mul_mod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """Elementwise (broadcasting) product of residue arrays modulo ``p``."""
    if (p - 1) ** 2 > _INT64_MAX:
        prod = np.asarray(a).astype(object) * np.asarray(b).astype(object)
        return np.vectorize(lambda v: v % p, otypes=[np.int64])(prod)
    return (np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)) % p


def mat_mul(a: FieldMatrix, b: FieldMatrix) -> FieldMatrix:
    p = _same_prime(a, b)
    if a.cols != b.rows:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return FieldMatrix(_matmul_mod(a.data, b.data, int(p)), p, check=False)


def mat_add(a: FieldMatrix, b: FieldMatrix) -> FieldMatrix:
    p = _same_prime(a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}")
    # residues < 2**61 so the sum stays inside int64
    return FieldMatrix((a.data + b.data) % int(p), p, check=False)


def mat_sub(a: FieldMatrix, b: FieldMatrix) -> FieldMatrix:
    p = _same_prime(a, b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot subtract {b.shape} from {a.shape}")
    return FieldMatrix((a.data - b.data) % int(p), p, check=False)


def mat_scale(a: FieldMatrix, c: int) -> FieldMatrix:
    return FieldMatrix(mul_mod(a.data, int(c) % int(a.p), int(a.p)), a.p, check=False)


def hstack(mats) -> FieldMatrix:
    p = _same_prime(*mats)
    return FieldMatrix(np.hstack([m.data for m in mats]), p, check=False)


def vstack(mats) -> FieldMatrix:
    p = _same_prime(*mats)
    return FieldMatrix(np.vstack([m.data for m in mats]), p, check=False)


def _row_reduce(rows: list[list[int]], p: int, ncols: int):
    """In-place reduced row echelon form; returns the pivot column list."""
    pivots = []
    r = 0
    n = len(rows)
    for c in range(ncols):
        if r == n:
            break
        piv = next((i for i in range(r, n) if rows[i][c] % p), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        inv = pow(rows[r][c], -1, p)
        rows[r] = [(v * inv) % p for v in rows[r]]
        pr = rows[r]
        for i in range(n):
            if i != r and rows[i][c]:
                f = rows[i][c]
                rows[i] = [(vi - f * vr) % p for vi, vr in zip(rows[i], pr)]
        pivots.append(c)
        r += 1
    return pivots


def mat_inv(a: FieldMatrix) -> FieldMatrix:
    """Gauss-Jordan inverse; pivots are the first nonzero entry by row order."""
    if a.rows != a.cols:
        raise ShapeMismatch(f"cannot invert non-square {a.shape}")
    n = a.rows
    p = int(a.p)
    aug = [[int(v) for v in row] + [int(i == j) for j in range(n)] for i, row in enumerate(a.data)]
    pivots = _row_reduce(aug, p, n)
    if len(pivots) < n:
        raise Singular(f"matrix has rank {len(pivots)} < {n}")
    inv = np.array([row[n:] for row in aug], dtype=np.int64).reshape(n, n)
    return FieldMatrix(inv, a.p, check=False)


def mat_rank(a: FieldMatrix) -> int:
    rows = [[int(v) for v in row] for row in a.data]
    return len(_row_reduce(rows, int(a.p), a.cols))


def is_invertible(a: FieldMatrix) -> bool:
    return a.rows == a.cols and mat_rank(a) == a.rows


def random_matrix(rng: np.random.Generator, rows: int, cols: int, p) -> FieldMatrix:
    """Entries drawn uniformly from [0, p)."""
    p = Prime(p)
    return FieldMatrix(rng.integers(0, int(p), size=(rows, cols), dtype=np.int64), p, check=False)


def random_nonzero(rng: np.random.Generator, size, p) -> np.ndarray:
    """Uniform draws from [1, p)."""
    return rng.integers(1, int(p), size=size, dtype=np.int64)


def random_invertible(rng: np.random.Generator, n: int, p) -> FieldMatrix:
    for _ in range(MAX_GENERATION_TRIES):
        a = random_matrix(rng, n, n, p)
        if is_invertible(a):
            return a
    raise GenerationFailure(f"no invertible {n}x{n} matrix in {MAX_GENERATION_TRIES} draws")
