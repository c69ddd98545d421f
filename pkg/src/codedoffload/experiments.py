"""Experiment drivers behind the command line.

Each ``cmd_*`` takes a :class:`RunConfig` and returns a JSON-ready report.
Everything outside ``report["volatile"]`` is a pure function of the config,
so two runs with the same config compare byte-for-byte once that field is
dropped (see :func:`stable_json`).
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import itertools
import json
import time
from pathlib import Path

import numpy as np

from .codec import (
    BackwardCoeffs,
    Verdict,
    aggregate_field,
    aggregate_with_verification,
    binomial_reject_limit,
    chi_square_uniformity,
    decode_forward,
    decode_with_verification,
    encode,
    exact_view_distribution,
    exhaustive_mutual_information,
    extend_for_integrity,
    gen_backward_coeffs,
    gen_backward_coeffs_extended,
    gen_forward_coeffs,
    share_equation,
    stack_results,
    verify_coeff_constraint,
)
from .config import RunConfig
from .fieldcore import FieldMatrix, Prime, embed_signed, hstack, lift_signed, mat_mul, mul_mod, random_matrix
from .quantizer import quantize
from .trainer import TrainConfig, encoded_train, make_dataset, mlp, paired_metrics, plaintext_reference_train
from .trainer.loops import calibrate_tau
from .workersim import Colluding, Faulty, WorkerPool, collusion_report, dispatch_backward_eq, dispatch_forward

SCHEMA_VERSION = 1


def _rng(cfg: RunConfig, tag: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, tag])


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _report(command: str, cfg: RunConfig, passed: bool, results: dict, volatile: dict | None = None) -> dict:
    vol = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    vol.update(volatile or {})
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg.as_dict(),
        "passed": bool(passed),
        "results": results,
        "volatile": vol,
    }


def stable_json(report: dict) -> str:
    """Canonical JSON of a report without its volatile field."""
    body = {k: v for k, v in report.items() if k != "volatile"}
    return json.dumps(body, sort_keys=True, indent=2)


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{report['command']}.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return path


# -- codec-check -----------------------------------------------------------------
def _value_bound(q, n_terms: int) -> int:
    """Largest integer magnitude b with n * b^2 + 2^(2l) < p/2, capped at 2^l."""
    room = (q.p // 2 - q.scale * q.scale) // max(n_terms, 1)
    return max(1, min(q.scale, int(np.sqrt(room)) - 1))


def roundtrip_instance(rng, K: int, M: int, dim: int, q) -> bool:
    """Encode random in-budget X, multiply by W at every share, decode, compare."""
    p = q.p
    n, o = (int(v) for v in rng.integers(1, dim + 1, size=2))
    b = _value_bound(q, n)
    X = rng.integers(-b, b + 1, size=(n, K))
    W = rng.integers(-b, b + 1, size=(o, n))
    Xq, Wq = FieldMatrix(embed_signed(X, p), p), FieldMatrix(embed_signed(W, p), p)
    C = gen_forward_coeffs(rng, K, M, p)
    shares = encode(Xq, random_matrix(rng, n, M, p), C)
    Y = decode_forward(mat_mul(Wq, shares.matrix), C)
    return Y == mat_mul(Wq, Xq) and np.array_equal(lift_signed(Y.data, p), W @ X)


def trace_instance(rng, K: int, M: int, dim: int, q, *, break_constraint: bool = False):
    """One gradient-aggregation check; returns ``(field_ok, float_rel_err)``.

    The field part builds every worker equation from its share and checks
    ``sum_j gamma_j Eq_j == sum_i delta_i x_i^T`` exactly. The float part
    replays the same algebra with real-valued coefficients.
    """
    p = q.p
    n, o = (int(v) for v in rng.integers(1, dim + 1, size=2))
    b = _value_bound(q, K)
    X = rng.integers(-b, b + 1, size=(n, K))
    D = rng.integers(-b, b + 1, size=(o, K))
    Xq, Dq = FieldMatrix(embed_signed(X, p), p), FieldMatrix(embed_signed(D, p), p)
    C = gen_forward_coeffs(rng, K, M, p)
    BC = gen_backward_coeffs(rng, C)
    if break_constraint:
        B = BC.B.data.copy()
        B[0, 0] = (B[0, 0] + 1) % p
        BC = BackwardCoeffs(FieldMatrix(B, p, check=False), BC.gamma)
    shares = encode(Xq, random_matrix(rng, n, M, p), C)
    deltas = [Dq[:, [i]] for i in range(K)]
    eqs = [share_equation(deltas, BC.B.data[j], shares.share(j)) for j in range(C.S)]
    total = aggregate_field(eqs, BC)
    field_ok = (verify_coeff_constraint(C, BC) and total == mat_mul(Dq, Xq.T)
                and np.array_equal(lift_signed(total.data, p), D @ X.T))

    # float replica: B = Gamma^-1 A^-1[:, :K]
    S = K + M
    A = rng.standard_normal((S, S))
    gamma = rng.uniform(0.5, 2.0, size=S) * rng.choice([-1.0, 1.0], size=S)
    Bf = np.linalg.inv(A)[:, :K] / gamma[:, None]
    if break_constraint:
        Bf[0, 0] += 1.0
    Xf, Df = rng.standard_normal((n, K)), rng.standard_normal((o, K))
    xbar = np.hstack([Xf, rng.standard_normal((n, M))]) @ A
    agg = sum(gamma[j] * np.outer(Df @ Bf[j], xbar[:, j]) for j in range(S))
    ref = Df @ Xf.T
    rel = float(np.max(np.abs(agg - ref)) / max(np.max(np.abs(ref)), 1e-300))
    return bool(field_ok), rel


def cmd_codec_check(cfg: RunConfig) -> dict:
    q, rng = cfg.q, _rng(cfg, 1)
    rt_fail = sum(not roundtrip_instance(rng, cfg.k, cfg.m, cfg.dim, q) for _ in range(cfg.instances))
    tr_fail, worst_rel = 0, 0.0
    for _ in range(cfg.instances):
        ok, rel = trace_instance(rng, cfg.k, cfg.m, cfg.dim, q, break_constraint=cfg.break_constraint)
        worst_rel = max(worst_rel, rel)
        tr_fail += (not ok) or rel > 1e-9
    results = {
        "K": cfg.k,
        "M": cfg.m,
        "max_dim": cfg.dim,
        "instances": cfg.instances,
        "roundtrip_failures": int(rt_fail),
        "trace_failures": int(tr_fail),
        "float_max_rel_error": worst_rel,
    }
    return _report("codec-check", cfg, rt_fail == 0 and tr_fail == 0, results)


# -- privacy-audit ---------------------------------------------------------------
def _chi_square_suite(cfg: RunConfig, rng) -> dict:
    """Uniformity of single shares and of random combinations of up to M shares.

    The input row is fixed within a round, so any departure from uniform
    would be leakage about it; fresh noise is drawn per sample.
    """
    p, K, M = cfg.p, cfg.k, cfg.m
    S = K + M
    subsets = [s for size in range(1, M + 1) for s in itertools.combinations(range(S), size)]
    pvals = []
    for _ in range(cfg.chi_rounds):
        C = gen_forward_coeffs(rng, K, M, p)
        x = random_matrix(rng, 1, K, p).data
        xs = FieldMatrix(np.repeat(x, cfg.samples, axis=0), p, check=False)
        shares = mat_mul(hstack([xs, random_matrix(rng, cfg.samples, M, p)]), C.A).data
        for sub in subsets:
            coeffs = rng.integers(1, p, size=len(sub))
            comb = np.zeros(cfg.samples, dtype=np.int64)
            for c, j in zip(coeffs, sub):
                comb = (comb + mul_mod(shares[:, j], int(c), p)) % p
            pvals.append(chi_square_uniformity(comb, p, cfg.bins))
    rejections = sum(pv < cfg.alpha for pv in pvals)
    limit = binomial_reject_limit(len(pvals), cfg.alpha)
    return {
        "p": p,
        "samples": cfg.samples,
        "tests": len(pvals),
        "rejections": int(rejections),
        "reject_limit": limit,
        "min_p_value": min(pvals),
        "p_values": pvals,
        "passed": rejections <= limit,
    }


def _ledger_suite(cfg: RunConfig, rng) -> dict:
    """Shares seen by colluding workers during real dispatches."""
    p, K, M = cfg.p, cfg.k, cfg.m
    S = K + M
    pool = WorkerPool.create(S, seed=cfg.seed, behaviors={i: Colluding() for i in range(M)})
    rows, batches = 64, 32
    Wq = FieldMatrix(np.eye(rows, dtype=np.int64), p, check=False)
    for b in range(batches):
        C = gen_forward_coeffs(rng, K, M, p)
        Xq = quantize(rng.uniform(-1, 1, size=(rows, K)), cfg.q)
        dispatch_forward(pool, Wq, encode(Xq, random_matrix(rng, rows, M, p), C, batch_id=b))
        pool.release(b)
    rep = collusion_report(pool.ledger, p, M, rng, cfg.bins, cfg.alpha)
    rep["passed"] = rep["rejections"] <= rep["reject_limit"]
    return rep


def cmd_privacy_audit(cfg: RunConfig) -> dict:
    rng = _rng(cfg, 2)
    mi_rows, ok = [], True
    for p_small in _int_list(cfg.mi_primes):
        for K in range(1, cfg.mi_max_k + 1):
            for M in range(1, cfg.mi_max_m + 1):
                C = gen_forward_coeffs(rng, K, M, Prime(p_small))
                private = exhaustive_mutual_information(p_small, K, M, coeffs=C)
                leak = exhaustive_mutual_information(p_small, K, M, subset_size=M + 1, coeffs=C)
                # two different inputs must induce identical view histograms
                xa, xb = random_matrix(rng, 1, K, p_small), random_matrix(rng, 1, K, p_small)
                while xa == xb:
                    xb = random_matrix(rng, 1, K, p_small)
                same = all(
                    np.array_equal(exact_view_distribution(C, xa, sub), exact_view_distribution(C, xb, sub))
                    for size in range(1, M + 1)
                    for sub in itertools.combinations(range(K + M), size)
                )
                row_ok = private == 0.0 and leak > 0.0 and same
                ok &= row_ok
                mi_rows.append({
                    "p": p_small, "K": K, "M": M,
                    "mi_bits_up_to_M": private,
                    "mi_bits_M_plus_1": leak,
                    "expected_leak": leak > 0.0,
                    "views_input_independent": same,
                    "passed": row_ok,
                })
    chi = _chi_square_suite(cfg, rng)
    ledger = _ledger_suite(cfg, rng)
    results = {"mutual_information": mi_rows, "chi_square": chi, "collusion_ledger": ledger}
    return _report("privacy-audit", cfg, ok and chi["passed"] and ledger["passed"], results)


# -- integrity-audit -------------------------------------------------------------
def _integrity_trial(cfg: RunConfig, rng, trial: int, faulty: tuple[int, ...]):
    """One forward + backward pass with integrity on; returns the two verdicts."""
    p, K, M, q = cfg.p, cfg.k, cfg.m, cfg.q
    S = K + M
    pool = WorkerPool.create(S + 1, seed=cfg.seed * 1_000_003 + trial,
                             behaviors={w: Faulty() for w in faulty})
    n, o = (int(v) for v in rng.integers(1, 9, size=2))
    Xq = quantize(rng.uniform(-1, 1, size=(n, K)), q)
    Wq = quantize(rng.uniform(-1, 1, size=(o, n)), q)
    C = gen_forward_coeffs(rng, K, M, p)
    shares, ext = extend_for_integrity(Xq, random_matrix(rng, n, M, p), C, rng, batch_id=trial)
    _, fwd = decode_with_verification(stack_results(dispatch_forward(pool, Wq, shares)), ext)
    dq = [quantize(rng.uniform(-1, 1, size=(o, 1)), q) for _ in range(K)]
    bc1, bc2 = gen_backward_coeffs_extended(rng, ext)
    eq1 = dispatch_backward_eq(pool, dq, bc1.B, trial, 0, workers=ext.subsets[0])
    eq2 = dispatch_backward_eq(pool, dq, bc2.B, trial, 0, workers=ext.subsets[1])
    _, bwd = aggregate_with_verification(eq1, eq2, (bc1, bc2))
    return fwd is Verdict.VIOLATION, bwd is Verdict.VIOLATION


def cmd_integrity_audit(cfg: RunConfig) -> dict:
    rng = _rng(cfg, 3)
    S = cfg.k + cfg.m
    counts = {}
    for name, n_faulty in (("single_fault", 1), ("honest", 0), ("double_fault", 2)):
        fwd = bwd = either = 0
        for t in range(cfg.trials):
            faulty = tuple(int(w) for w in rng.choice(S + 1, size=n_faulty, replace=False))
            f, b = _integrity_trial(cfg, rng, t, faulty)
            fwd, bwd, either = fwd + f, bwd + b, either + (f or b)
        counts[name] = {"trials": cfg.trials, "forward_flagged": fwd, "backward_flagged": bwd,
                        "flagged": either}
    single, honest = counts["single_fault"], counts["honest"]
    results = dict(counts)
    results["detection_rate"] = single["flagged"] / max(cfg.trials, 1)
    results["false_positive_rate"] = honest["flagged"] / max(cfg.trials, 1)
    results["double_fault_detection_rate"] = counts["double_fault"]["flagged"] / max(cfg.trials, 1)
    passed = (single["forward_flagged"] == single["backward_flagged"] == cfg.trials
              and honest["flagged"] == 0)
    return _report("integrity-audit", cfg, passed, results)


# -- train -------------------------------------------------------------------------
def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(K=cfg.k, M=cfg.m, workers=cfg.workers, integrity=cfg.integrity, epochs=cfg.epochs,
                       large_batch=cfg.large_batch, seed=cfg.seed, q=cfg.q, lr=cfg.lr, dataset=cfg.dataset,
                       n_points=cfg.n_points, hidden=cfg.hidden)


def cmd_train(cfg: RunConfig, out_dir=None) -> dict:
    tc = train_config(cfg)
    x, y = make_dataset(tc.dataset, tc.n_points, tc.seed)
    model0 = mlp([x.shape[1], tc.hidden, int(y.max()) + 1], seed=tc.seed, lr=tc.lr)
    behaviors = {w: Faulty(corrupt_probability=cfg.fault_prob) for w in range(cfg.faulty)}
    pool = WorkerPool.create(tc.workers, seed=tc.seed, behaviors=behaviors)
    tau = calibrate_tau(tc.q, K=tc.K, M=tc.M, seed=tc.seed)
    _, plain = plaintext_reference_train(model0, (x, y), tc)
    _, enc, audit = encoded_train(model0, (x, y), tc, pool=pool,
                                  dump_dir=Path(out_dir) / "coeffs" if (out_dir and cfg.insecure_dump) else None)
    rows = paired_metrics(enc, plain)
    worst_ratio = max((d / (tau * s) for *_, d, s in audit["parity"]), default=0.0)
    final = rows[-1]
    gap = abs(final["acc_enc"] - final["acc_plain"])
    violations = len(audit["violations"])
    checks = {
        "accuracy_gap_within_0.02": gap <= 0.02,
        "gradient_delta_within_tau": worst_ratio <= 1.0,
        "no_integrity_violations": violations == 0,
    }
    results = {
        "tau": tau,
        "final": final,
        "accuracy_gap": gap,
        "max_grad_delta_over_tau_scale": worst_ratio,
        "integrity_violations": violations,
        "violations": audit["violations"],
        "normalized_layers": audit["normalized_layers"],
        "checks": checks,
        "metrics": rows,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(rows, indent=2) + "\n")
        header = list(rows[0])
        lines = [",".join(header)] + [",".join(repr(r[h]) for h in header) for r in rows]
        (out / "metrics.csv").write_text("\n".join(lines) + "\n")
        if cfg.transcript:
            (out / "transcript.txt").write_text(pool.transcript_text())
    return _report("train", cfg, all(checks.values()), results)


def summary_line(report: dict) -> str:
    res = report["results"]
    status = "PASS" if report["passed"] else "FAIL"
    if report["command"] == "train":
        f = res["final"]
        return (f"{status} train epochs={f['epoch']} acc_enc={f['acc_enc']:.4f} acc_plain={f['acc_plain']:.4f} "
                f"gap={res['accuracy_gap']:.4f} violations={res['integrity_violations']}")
    return f"{status} {report['command']}"


# -- bench -------------------------------------------------------------------------
STAGES = ("quantize", "coeff_gen", "encode", "dispatch_forward", "decode",
          "backward_coeffs", "dispatch_backward", "aggregate")


def _bench_once(pool, K: int, M: int, q, rng, batch: int, n: int, o: int, timer: dict):
    p = q.p

    def stage(name, fn):
        t0 = time.perf_counter()
        out = fn()
        timer[name] += time.perf_counter() - t0
        return out

    x = rng.uniform(-1, 1, size=(n, K))
    w = rng.uniform(-1, 1, size=(o, n))
    d = rng.uniform(-1, 1, size=(o, K))
    Xq, Wq, Dq = stage("quantize", lambda: (quantize(x, q), quantize(w, q), quantize(d, q)))
    C = stage("coeff_gen", lambda: gen_forward_coeffs(rng, K, M, p))
    R = random_matrix(rng, n, M, p)
    shares = stage("encode", lambda: encode(Xq, R, C, batch_id=batch))
    results = stage("dispatch_forward", lambda: dispatch_forward(pool, Wq, shares))
    Y = stage("decode", lambda: decode_forward(stack_results(results), C))
    BC = stage("backward_coeffs", lambda: gen_backward_coeffs(rng, C))
    eqs = stage("dispatch_backward", lambda: dispatch_backward_eq(pool, Dq, BC.B, batch, 0))
    G = stage("aggregate", lambda: aggregate_field(eqs, BC))
    pool.release(batch)
    return Y, G


def cmd_bench(cfg: RunConfig) -> dict:
    """Fraction of pipeline time per stage, for each virtual batch size."""
    ks = _int_list(cfg.bench_k)
    n = o = 8 * cfg.dim
    per_k, fractions, seconds = [], {}, {}
    for K in ks:
        rng = _rng(cfg, 50 + K)
        pool = WorkerPool.create(K + cfg.m, seed=cfg.seed)
        digest = hashlib.sha256()
        timer = dict.fromkeys(STAGES, 0.0)
        warm = 2
        for rep in range(warm + cfg.reps):
            if rep == warm:
                timer = dict.fromkeys(STAGES, 0.0)
            Y, G = _bench_once(pool, K, cfg.m, cfg.q, rng, rep, n, o, timer)
            digest.update(Y.tobytes())
            digest.update(G.tobytes())
        total = sum(timer.values())
        fractions[str(K)] = {s: timer[s] / total for s in STAGES}
        fractions[str(K)]["encode_plus_decode"] = (timer["encode"] + timer["decode"]) / total
        seconds[str(K)] = total
        per_k.append({"K": K, "M": cfg.m, "rows": n, "cols": o, "reps": cfg.reps,
                      "output_sha256": digest.hexdigest()})
    results = {"stages": list(STAGES), "runs": per_k}
    return _report("bench", cfg, True, results, volatile={"fractions": fractions, "total_seconds": seconds})


COMMANDS = {
    "codec-check": cmd_codec_check,
    "privacy-audit": cmd_privacy_audit,
    "integrity-audit": cmd_integrity_audit,
    "train": cmd_train,
    "bench": cmd_bench,
}
