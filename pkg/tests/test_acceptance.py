"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are collected and repeated in pytest's terminal summary, so a
plain ``pytest tests/test_acceptance.py`` shows all of them.
"""
import time

import numpy as np
import pytest

from codedoffload.codec import gen_backward_coeffs, gen_forward_coeffs, verify_coeff_constraint
from codedoffload.config import RunConfig
from codedoffload.errors import ChecksumMismatch
from codedoffload.experiments import (
    COMMANDS,
    cmd_integrity_audit,
    cmd_privacy_audit,
    cmd_train,
    roundtrip_instance,
    stable_json,
    trace_instance,
)
from codedoffload.fieldcore import P25
from codedoffload.quantizer import QuantParams, dequantize, quantize, round_half_up
from codedoffload.trainer import Coordinator, TrainConfig, calibrate_tau, make_dataset, mlp
from codedoffload.trainer import layers as L
from codedoffload.trainer.loops import flatten_grads, iterate_steps
from codedoffload.trainer.sealing import GradientStore, SealedGradient, seal_gradient, update_aggregation
from codedoffload.workersim import WorkerPool

from .conftest import ACCEPTANCE_LINES

Q = QuantParams(8, P25)


def verdict(number: int, name: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_decode_exactness():
    t0 = time.perf_counter()
    failures, total = 0, 0
    for K in range(1, 5):
        for M in (1, 2):
            rng = np.random.default_rng([1, K, M])
            for _ in range(1000):
                failures += not roundtrip_instance(rng, K, M, 32, Q)
                total += 1
    dt = time.perf_counter() - t0
    verdict(1, "decode exactness", failures == 0 and dt < 30,
            f"{failures} mismatches over {total} instances (K=1..4, M=1..2, dims<=32) in {dt:.1f}s")


def test_2_trace_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    failures, worst = 0, 0.0
    configs = [(K, M) for K in range(1, 5) for M in (1, 2)]
    for i in range(1000):
        K, M = configs[i % len(configs)]
        ok, rel = trace_instance(rng, K, M, 32, Q)
        failures += not ok
        worst = max(worst, rel)
    dt = time.perf_counter() - t0
    verdict(2, "trace identity", failures == 0 and worst <= 1e-9 and dt < 30,
            f"{failures} field mismatches over 1000 instances, float max rel err {worst:.2e}, {dt:.1f}s")


def test_3_coefficient_constraint():
    rng = np.random.default_rng(3)
    configs = [(K, M) for K in range(1, 5) for M in (1, 2)]
    failures = 0
    for i in range(10_000):
        K, M = configs[i % len(configs)]
        C = gen_forward_coeffs(rng, K, M, P25)
        failures += not verify_coeff_constraint(C, gen_backward_coeffs(rng, C))
    verdict(3, "coefficient constraint", failures == 0, f"{failures} failures over 10000 generations")


def test_4_privacy():
    t0 = time.perf_counter()
    rep = cmd_privacy_audit(RunConfig())
    dt = time.perf_counter() - t0
    rows = rep["results"]["mutual_information"]
    zero = all(r["mi_bits_up_to_M"] == 0.0 for r in rows)
    leak = all(r["mi_bits_M_plus_1"] > 0.0 for r in rows)
    chi = rep["results"]["chi_square"]
    ok = zero and leak and chi["passed"] and rep["passed"] and dt < 120
    verdict(4, "privacy", ok,
            f"MI<=M exactly 0.0 in {sum(r['mi_bits_up_to_M'] == 0.0 for r in rows)}/{len(rows)} configs, "
            f"M+1 leak>0 in {sum(r['mi_bits_M_plus_1'] > 0 for r in rows)}/{len(rows)}; chi-square "
            f"{chi['rejections']}/{chi['tests']} rejections (limit {chi['reject_limit']}) at p={chi['p']}; {dt:.1f}s")


def test_5_integrity():
    t0 = time.perf_counter()
    rep = cmd_integrity_audit(RunConfig(trials=1000))
    dt = time.perf_counter() - t0
    res = rep["results"]
    single, honest = res["single_fault"], res["honest"]
    ok = single["flagged"] == 1000 and honest["flagged"] == 0 and rep["passed"] and dt < 60
    verdict(5, "integrity", ok,
            f"single-fault detection {single['flagged']}/1000 (fwd {single['forward_flagged']}, "
            f"bwd {single['backward_flagged']}), honest false positives {honest['flagged']}/1000, "
            f"double-fault {res['double_fault']['flagged']}/1000; {dt:.1f}s")


def test_6_quantization():
    rng = np.random.default_rng(6)
    x = rng.uniform(-100, 100, size=(1000, 100))
    err = float(np.max(np.abs(dequantize(quantize(x, Q), Q) - x)))
    cases = [round_half_up(2.4), round_half_up(2.5), round_half_up(-1.5)]
    ok = err <= 2.0**-8 and cases == [2, 3, -1]
    verdict(6, "quantization", ok, f"max roundtrip error {err:.3e} (bound {2.0**-8:.3e}) on 1e5 values; "
            f"Round(2.4, 2.5, -1.5) = {tuple(cases)}")


def test_7_training_parity(tmp_path):
    t0 = time.perf_counter()
    rep = cmd_train(RunConfig(epochs=200), out_dir=tmp_path)
    dt = time.perf_counter() - t0
    res = rep["results"]
    final = res["final"]
    ok = res["accuracy_gap"] <= 0.02 and res["max_grad_delta_over_tau_scale"] <= 1.0 and dt < 300
    verdict(7, "training parity", ok,
            f"acc_enc {final['acc_enc']:.4f} vs acc_plain {final['acc_plain']:.4f} (gap {res['accuracy_gap']:.4f}) "
            f"after {final['epoch']} epochs; worst per-step grad delta / (tau*scale) = "
            f"{res['max_grad_delta_over_tau_scale']:.3f} with tau={res['tau']:.4g}; {dt:.1f}s")


def test_8_sealed_aggregation(tmp_path):
    cfg = TrainConfig(K=2, M=1, large_batch=16, seed=8)
    assert cfg.virtual_batches == 8
    x, y = make_dataset("moons", 64, 8)
    model = mlp([2, 16, 2], seed=8)
    coord = Coordinator(WorkerPool.create(cfg.workers, seed=8), Q, 2, 1, np.random.default_rng(8),
                        record_operands=True)
    step = next(iterate_steps(len(x), cfg, np.random.default_rng(80)))
    store = GradientStore(tmp_path / "store")
    reference = []
    scale = 1.0
    for v, idx in enumerate(step):
        caches, logits = coord.forward_pass(model, x[idx], v)
        _, dlogits = L.cross_entropy(logits, y[idx])
        grads = coord.backward_virtual_batch(model, caches, dlogits, v)
        store.evict(seal_gradient(flatten_grads(grads), v))
        # float large-batch reference on the operands and deltas the coordinator held
        ref = {}
        for i, c in enumerate(caches):
            if "delta3" in c:
                ref[f"W{i}"] = np.einsum("kot,knt->on", c["delta3"], c["ops"]) / cfg.K
                ref[f"b{i}"] = c["delta3"].sum(axis=(0, 2)) / cfg.K
                scale = max(scale, float(np.max(np.abs(c["ops"]))), float(np.max(np.abs(c["delta3"]))))
        reference.append(ref)
    agg = update_aggregation(store.load_all(), cfg.virtual_batches)
    plain = {k: sum(r[k] for r in reference) / len(reference) for k in reference[0]}
    tau = calibrate_tau(Q)
    gap = max(float(np.max(np.abs(agg[k] - plain[k]))) for k in plain)

    batch = store.load_all()
    blob = bytearray(batch[3].blob)
    blob[len(blob) // 2] ^= 0x10
    batch[3] = SealedGradient(bytes(blob), batch[3].checksum, 3)
    raised = 0
    for _ in range(2):
        with pytest.raises(ChecksumMismatch):
            update_aggregation(batch, cfg.virtual_batches)
        raised += 1
    ok = gap <= tau * scale and raised == 2
    verdict(8, "sealed aggregation", ok,
            f"8 virtual batches, max |aggregate - float large-batch grad| {gap:.2e} <= tau*scale {tau * scale:.2e}; "
            f"tampered blob raised ChecksumMismatch {raised}/2 times")


def test_9_determinism(tmp_path):
    small = {
        "codec-check": RunConfig(instances=200),
        "privacy-audit": RunConfig(samples=20_000),
        "integrity-audit": RunConfig(trials=100),
        "train": RunConfig(epochs=3),
        "bench": RunConfig(reps=3),
    }
    same = []
    for name, cfg in small.items():
        fn = COMMANDS[name]
        runs = [fn(cfg, out_dir=tmp_path / f"{name}{i}") if name == "train" else fn(cfg) for i in range(2)]
        same.append((name, stable_json(runs[0]) == stable_json(runs[1])))
    ok = all(s for _, s in same)
    verdict(9, "determinism", ok, ", ".join(f"{n} {'identical' if s else 'DIFFERS'}" for n, s in same))
