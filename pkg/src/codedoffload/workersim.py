"""Simulated untrusted workers.

Workers are in-process objects reached only through :class:`WorkerPool`
dispatch calls, which pass field matrices and public coefficients and
nothing else. Each worker owns its share cache and its own RNG stream
(spawned from the pool seed), so results do not depend on the order in
which workers happen to run.
"""
from __future__ import annotations

import hashlib
import itertools
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codec.encoding import ShareSet, as_delta_list, share_equation
from .codec.leakage import binomial_reject_limit, chi_square_uniformity
from .errors import DuplicateShare, MissingCache, PoolTooSmall, ShapeMismatch
from .fieldcore import FieldMatrix, mat_mul, mul_mod


@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class Faulty:
    """Adds a nonzero error to each result with probability ``corrupt_probability``.

    With ``offset`` set, that residue is added to every entry; otherwise one
    random entry receives a random nonzero residue.
    """

    corrupt_probability: float = 1.0
    offset: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.corrupt_probability <= 1.0:
            raise ValueError("corrupt_probability must lie in [0, 1]")


@dataclass(frozen=True)
class Colluding:
    pass


@dataclass(frozen=True)
class LedgerRecord:
    worker_id: int
    batch_id: int
    layer_id: int
    share: FieldMatrix
    public_B: FieldMatrix | None = None


class CollusionLedger:
    """Append-only pool of what colluding workers saw.

    Only shares and the public B matrix can be recorded.
    """

    def __init__(self):
        self._records: list[LedgerRecord] = []
        self._lock = threading.Lock()

    def record_share(self, worker_id: int, batch_id: int, layer_id: int, share: FieldMatrix):
        with self._lock:
            self._records.append(LedgerRecord(worker_id, batch_id, layer_id, share))

    def record_public(self, worker_id: int, batch_id: int, layer_id: int, B: FieldMatrix):
        with self._lock:
            self._records.append(LedgerRecord(worker_id, batch_id, layer_id, None, B))

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def __len__(self):
        return len(self._records)

    def dump_bytes(self) -> bytes:
        out = bytearray()
        for r in self._records:
            if r.share is not None:
                out += r.share.tobytes()
            if r.public_B is not None:
                out += r.public_B.tobytes()
        return bytes(out)


class Worker:
    def __init__(self, worker_id: int, behavior=None, rng: np.random.Generator | None = None,
                 ledger: CollusionLedger | None = None):
        self.id = worker_id
        self.behavior = behavior if behavior is not None else Honest()
        self.rng = rng if rng is not None else np.random.default_rng(worker_id)
        self.ledger = ledger
        self.cache: dict[tuple[int, int], FieldMatrix] = {}

    def receive(self, batch_id: int, layer_id: int, share: FieldMatrix):
        key = (batch_id, layer_id)
        if key in self.cache:
            raise DuplicateShare(f"worker {self.id} already holds a share for batch {batch_id} layer {layer_id}")
        self.cache[key] = share
        if isinstance(self.behavior, Colluding) and self.ledger is not None:
            self.ledger.record_share(self.id, batch_id, layer_id, share)

    def cached(self, batch_id: int, layer_id: int) -> FieldMatrix:
        try:
            return self.cache[(batch_id, layer_id)]
        except KeyError:
            raise MissingCache(f"worker {self.id} has no share for batch {batch_id} layer {layer_id}") from None

    def release(self, batch_id: int):
        for key in [k for k in self.cache if k[0] == batch_id]:
            del self.cache[key]

    def _maybe_corrupt(self, result: np.ndarray, p: int) -> np.ndarray:
        b = self.behavior
        if not isinstance(b, Faulty) or self.rng.random() >= b.corrupt_probability:
            return result
        out = np.array(result, copy=True)
        if b.offset is not None:
            if b.offset % p == 0:
                raise ValueError("fault offset must be nonzero mod p")
            return (out + b.offset) % p
        idx = int(self.rng.integers(out.size))
        flat = out.reshape(-1)
        flat[idx] = (flat[idx] + int(self.rng.integers(1, p))) % p
        return out

    def forward(self, Wq: FieldMatrix, batch_id: int, layer_id: int) -> FieldMatrix:
        share = self.cached(batch_id, layer_id)
        y = mat_mul(Wq, share)
        return FieldMatrix(self._maybe_corrupt(y.data, int(y.p)), y.p, check=False)

    def backward_eq(self, deltas, beta_row, batch_id: int, layer_id: int) -> FieldMatrix:
        eq = share_equation(deltas, beta_row, self.cached(batch_id, layer_id))
        return FieldMatrix(self._maybe_corrupt(eq.data, int(eq.p)), eq.p, check=False)

    def plain(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        out = np.asarray(left) @ np.asarray(right)
        b = self.behavior
        if isinstance(b, Faulty) and self.rng.random() < b.corrupt_probability:
            out = np.array(out, dtype=np.float64, copy=True)
            bump = 1.0 if b.offset is None else float(b.offset)
            out.reshape(-1)[int(self.rng.integers(out.size))] += bump
        return out


def _checksum(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


@dataclass
class WorkerPool:
    workers: list
    ledger: CollusionLedger = field(default_factory=CollusionLedger)
    max_threads: int = 1
    transcript: list = field(default_factory=list)
    _plain_counter: itertools.count = field(default_factory=itertools.count, repr=False)

    @classmethod
    def create(cls, n: int, seed: int = 0, behaviors: dict | None = None, max_threads: int = 1):
        """``n`` workers; ``behaviors`` maps worker index to a behavior (default Honest)."""
        behaviors = behaviors or {}
        ledger = CollusionLedger()
        streams = np.random.SeedSequence([seed, 0x5EED]).spawn(n)
        workers = [
            Worker(i, behaviors.get(i, Honest()), np.random.default_rng(streams[i]), ledger)
            for i in range(n)
        ]
        return cls(workers, ledger, max_threads)

    def __len__(self):
        return len(self.workers)

    def _run(self, jobs):
        """Run callables, returning results in job order (a barrier)."""
        if self.max_threads <= 1 or len(jobs) <= 1:
            return [job() for job in jobs]
        with ThreadPoolExecutor(max_workers=self.max_threads) as ex:
            futures = [ex.submit(job) for job in jobs]
            return [f.result() for f in futures]

    def _log(self, batch_id, layer_id, worker_id, direction, *arrays):
        self.transcript.append(f"{batch_id},{layer_id},{worker_id},{direction},{_checksum(*arrays)}")

    def transcript_text(self) -> str:
        return "".join(line + "\n" for line in self.transcript)

    def release(self, batch_id: int):
        for w in self.workers:
            w.release(batch_id)


def dispatch_forward(pool: WorkerPool, Wq: FieldMatrix, shares: ShareSet, workers=None) -> list[FieldMatrix]:
    """Send share ``j`` to worker ``workers[j]`` and collect ``Wq . share`` in share order."""
    n = len(shares)
    if n > len(pool):
        raise PoolTooSmall(f"{n} shares but only {len(pool)} workers")
    assigned = list(range(n)) if workers is None else list(workers)
    if len(set(assigned)) != n:
        raise ValueError("each share needs its own worker")
    b, l = shares.batch_id, shares.layer_id
    for j, w in enumerate(assigned):
        pool.workers[w].receive(b, l, shares.share(j))
    jobs = [lambda w=w: pool.workers[w].forward(Wq, b, l) for w in assigned]
    results = pool._run(jobs)
    for j, w in enumerate(assigned):
        pool._log(b, l, w, "fwd", shares.share(j).data, results[j].data)
    return results


def dispatch_backward_eq(pool: WorkerPool, delta_q, B: FieldMatrix, batch_id: int, layer_id: int,
                         workers=None) -> list[FieldMatrix]:
    """Worker ``workers[j]`` returns Eq_j = <sum_i B[j, i] delta_i, cached share>."""
    deltas = as_delta_list(delta_q)
    if B.cols != len(deltas):
        raise ShapeMismatch(f"B has {B.cols} columns for {len(deltas)} deltas")
    assigned = list(range(B.rows)) if workers is None else list(workers)
    if len(assigned) != B.rows:
        raise ShapeMismatch("one worker per row of B")
    for w in assigned:
        if isinstance(pool.workers[w].behavior, Colluding):
            pool.ledger.record_public(w, batch_id, layer_id, B)
    jobs = [
        lambda j=j, w=w: pool.workers[w].backward_eq(deltas, B.data[j], batch_id, layer_id)
        for j, w in enumerate(assigned)
    ]
    results = pool._run(jobs)
    for j, w in enumerate(assigned):
        pool._log(batch_id, layer_id, w, "bwd", B.data[j], *(d.data for d in deltas), results[j].data)
    return results


def dispatch_plain_linear(pool: WorkerPool, left, right, worker: int | None = None):
    """Unencoded product at one worker; only for operands that carry no raw input."""
    if worker is None:
        worker = next(pool._plain_counter) % len(pool)
    if isinstance(left, FieldMatrix):
        out = mat_mul(left, right)
        w = pool.workers[worker]
        return FieldMatrix(w._maybe_corrupt(out.data, int(out.p)), out.p, check=False)
    result = pool.workers[worker].plain(left, right)
    pool._log(-1, -1, worker, "plain", np.asarray(left, dtype=np.float64), np.asarray(right, dtype=np.float64),
              np.asarray(result, dtype=np.float64))
    return result


def collusion_report(ledger: CollusionLedger, p: int, M: int, rng: np.random.Generator | None = None,
                     bins: int = 100, alpha: float = 0.01, min_samples: int = 1000) -> dict:
    """Chi-square uniformity of recorded shares and of random combinations.

    Shares recorded by the same set of colluders for one (batch, layer) are
    grouped; for every group of up to ``M`` workers a random nonzero linear
    combination of their shares is formed. Values are pooled across
    batches before testing.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    shares = [r for r in ledger.records if r.share is not None]
    if not shares:
        return {"subsets": [], "rejections": 0, "tests": 0, "reject_limit": 0}
    by_key: dict[tuple[int, int], dict[int, np.ndarray]] = {}
    for r in shares:
        by_key.setdefault((r.batch_id, r.layer_id), {})[r.worker_id] = r.share.data.ravel()
    worker_ids = sorted({r.worker_id for r in shares})
    subsets = [
        s for size in range(1, M + 1) for s in itertools.combinations(worker_ids, size)
    ]
    report = []
    for subset in subsets:
        values = []
        for views in by_key.values():
            if not all(w in views for w in subset):
                continue
            coeffs = rng.integers(1, p, size=len(subset))
            comb = np.zeros_like(views[subset[0]])
            for c, w in zip(coeffs, subset):
                comb = (comb + mul_mod(views[w], int(c), p)) % p
            values.append(comb)
        if not values:
            continue
        flat = np.concatenate(values)
        if flat.size < min_samples:
            continue
        pv = chi_square_uniformity(flat, p, bins)
        report.append({"workers": list(subset), "samples": int(flat.size), "p_value": pv, "rejected": pv < alpha})
    rejections = sum(r["rejected"] for r in report)
    return {
        "subsets": report,
        "rejections": rejections,
        "tests": len(report),
        "reject_limit": binomial_reject_limit(len(report), alpha) if report else 0,
    }
