"""Trusted coordinator: runs each layer's linear algebra through coded offload.

Per layer and virtual batch the coordinator quantizes the operands, draws
fresh coefficients and noise, encodes, dispatches to the pool, decodes, adds
the bias, and applies non-linearities itself. The backward pass reuses the
shares workers cached during the forward pass.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..codec import (
    Verdict,
    aggregate_gradient,
    aggregate_with_verification,
    decode_forward,
    decode_with_verification,
    encode,
    extend_for_integrity,
    gen_backward_coeffs,
    gen_backward_coeffs_extended,
    gen_forward_coeffs,
    stack_results,
)
from ..errors import IntegrityViolation, OverflowBudget, PoolTooSmall
from ..fieldcore import FieldMatrix, mat_add, random_matrix
from ..quantizer import (
    QuantParams,
    dequantize_result,
    dynamic_normalize,
    overflow_budget,
    quantize,
    quantize_bias,
    round_half_up,
)
from ..workersim import WorkerPool, dispatch_backward_eq, dispatch_forward, dispatch_plain_linear
from . import layers as L


def fits_budget(q: QuantParams, n_terms: int, x_bound: float, w_bound: float, bias_bound: float = 0.0) -> bool:
    """:func:`overflow_budget` extended to biases larger than one."""
    if not overflow_budget(q, n_terms, x_bound, w_bound):
        return False
    if bias_bound <= 1.0:
        return True
    prod = n_terms * round_half_up(x_bound * q.scale) * round_half_up(w_bound * q.scale)
    return prod + round_half_up(bias_bound * q.scale * q.scale) < q.p / 2


def _maxabs(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


class Coordinator:
    def __init__(self, pool: WorkerPool, q: QuantParams, K: int, M: int, rng: np.random.Generator, *,
                 integrity: bool = False, dump_dir=None, record_operands: bool = False):
        need = K + M + (1 if integrity else 0)
        if len(pool) < need:
            raise PoolTooSmall(f"K={K}, M={M}, integrity={integrity} needs {need} workers, pool has {len(pool)}")
        self.pool, self.q, self.K, self.M = pool, q, K, M
        self.rng = rng
        self.integrity = integrity
        self.dump_dir = Path(dump_dir) if dump_dir is not None else None
        self.normalized_layers = 0
        # audit hook: keep float operands and deltas so an oracle can recheck gradients
        self.record_operands = record_operands
        self._plain_turn = 0

    # -- audit dump (insecure, debug only) --
    def _dump(self, name: str, mat: FieldMatrix, batch_id: int, layer_id: int):
        if self.dump_dir is None:
            return
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        path = self.dump_dir / f"coeffs_b{batch_id}_l{layer_id}_{name}.csv"
        path.write_text(f"matrix,batch_id,layer_id\n{name},{batch_id},{layer_id}\n" + mat.to_csv())

    def _violation(self, stage, batch_id, layer_id):
        raise IntegrityViolation(f"{stage} results disagree at batch {batch_id} layer {layer_id}",
                                 batch_id, layer_id, stage)

    # -- forward ---------------------------------------------------------------
    def linear_forward(self, spec, prm, x, batch_id: int, layer_id: int):
        q, K = self.q, self.K
        ops, meta = L.operands(spec, x)
        if ops.shape[0] != K:
            raise ValueError(f"virtual batch must hold exactly K={K} inputs, got {ops.shape[0]}")
        _, N, T = ops.shape
        Wm = L.weight_matrix(spec, prm["W"])
        b = prm.get("b")
        sx = sw = 1.0
        if not fits_budget(q, N, _maxabs(ops), _maxabs(Wm), _maxabs(b) if b is not None else 0.0):
            ops, sx = dynamic_normalize(ops)
            Wm, sw = dynamic_normalize(Wm)
            self.normalized_layers += 1
            bb = _maxabs(b) / (sx * sw) if b is not None else 0.0
            if not fits_budget(q, N, _maxabs(ops), _maxabs(Wm), bb):
                raise OverflowBudget(f"layer {layer_id}: {N} terms exceed the field even after normalization")
        Xq = quantize(ops.reshape(K, N * T).T, q)
        Wq = quantize(Wm, q)
        C = gen_forward_coeffs(self.rng, K, self.M, q.p)
        R = random_matrix(self.rng, N * T, self.M, q.p)
        ext = None
        if self.integrity:
            shares, ext = extend_for_integrity(Xq, R, C, self.rng, batch_id=batch_id, layer_id=layer_id,
                                               share_shape=(N, T))
        else:
            shares = encode(Xq, R, C, batch_id=batch_id, layer_id=layer_id, share_shape=(N, T))
        self._dump("A", ext.A_ext if ext is not None else C.A, batch_id, layer_id)
        results = dispatch_forward(self.pool, Wq, shares)
        Ybar = stack_results(results)
        if ext is not None:
            Yq, verdict = decode_with_verification(Ybar, ext)
            if verdict is Verdict.VIOLATION:
                self._violation("forward", batch_id, layer_id)
        else:
            Yq = decode_forward(Ybar, C)
        if b is not None:
            bq = quantize_bias(np.repeat(b / (sx * sw), T), q)
            Yq = mat_add(Yq, FieldMatrix(np.repeat(bq.data, K, axis=1), q.p, check=False))
        y = dequantize_result(Yq, q) * (sx * sw)
        y3 = y.T.reshape(K, -1, T)
        cache = {"coeffs": C, "ext": ext, "sx": sx, "x_bound": _maxabs(ops), "N": N, "T": T, "meta": meta}
        if self.record_operands:
            cache["ops"] = ops * sx
        return L.assemble(spec, y3, meta), cache

    def forward_pass(self, model: L.ModelState, x: np.ndarray, batch_id: int):
        """Returns per-layer caches and the logits."""
        caches = []
        for idx, (spec, prm) in enumerate(zip(model.specs, model.params)):
            if isinstance(spec, L.LINEAR):
                x, cache = self.linear_forward(spec, prm, x, batch_id, idx)
            elif isinstance(spec, L.ReLU):
                cache = {"pre": x}
                x = np.maximum(x, 0.0)
            elif isinstance(spec, L.MaxPool):
                x, cache = L.maxpool_forward(x, spec.window)
            else:
                raise TypeError(f"unknown layer {spec!r}")
            caches.append(cache)
        return caches, x

    # -- backward --------------------------------------------------------------
    def weight_gradient(self, cache, delta3: np.ndarray, batch_id: int, layer_id: int) -> np.ndarray:
        """(1/K) sum_i delta_i x_i^T, decoded from gamma-weighted worker equations."""
        q, K = self.q, self.K
        T = cache["T"]
        sd = 1.0
        if not overflow_budget(q, K * T, cache["x_bound"], _maxabs(delta3)):
            delta3, sd = dynamic_normalize(delta3)
            if not overflow_budget(q, K * T, cache["x_bound"], 1.0):
                raise OverflowBudget(f"layer {layer_id}: gradient sum exceeds the field")
        dq = [quantize(delta3[i], q) for i in range(K)]
        ext = cache["ext"]
        if ext is not None:
            bc1, bc2 = gen_backward_coeffs_extended(self.rng, ext)
            self._dump("B", bc1.B, batch_id, layer_id)
            self._dump("Gamma", bc1.gamma_matrix(), batch_id, layer_id)
            eq1 = dispatch_backward_eq(self.pool, dq, bc1.B, batch_id, layer_id, workers=ext.subsets[0])
            eq2 = dispatch_backward_eq(self.pool, dq, bc2.B, batch_id, layer_id, workers=ext.subsets[1])
            total, verdict = aggregate_with_verification(eq1, eq2, (bc1, bc2))
            if verdict is Verdict.VIOLATION:
                self._violation("backward", batch_id, layer_id)
            gW = dequantize_result(total, q) / K
        else:
            BC = gen_backward_coeffs(self.rng, cache["coeffs"])
            self._dump("B", BC.B, batch_id, layer_id)
            self._dump("Gamma", BC.gamma_matrix(), batch_id, layer_id)
            eqs = dispatch_backward_eq(self.pool, dq, BC.B, batch_id, layer_id)
            gW = aggregate_gradient(eqs, BC, K, q)
        return gW * (cache["sx"] * sd)

    def _plain(self, left, right, batch_id, layer_id):
        n = len(self.pool)
        w = self._plain_turn % n
        self._plain_turn += 1
        out = dispatch_plain_linear(self.pool, left, right, worker=w)
        if self.integrity:
            again = dispatch_plain_linear(self.pool, left, right, worker=(w + 1) % n)
            if not np.array_equal(out, again):
                self._violation("delta", batch_id, layer_id)
        return out

    def backward_virtual_batch(self, model: L.ModelState, caches, dlogits: np.ndarray, batch_id: int):
        """Per-layer gradients ``{"W", "b"}`` for one virtual batch."""
        grads = [None] * len(model.specs)
        delta = dlogits
        for idx in range(len(model.specs) - 1, -1, -1):
            spec, prm, cache = model.specs[idx], model.params[idx], caches[idx]
            if isinstance(spec, L.LINEAR):
                d3 = L.split_delta(spec, delta)
                if self.record_operands:
                    cache["delta3"] = d3
                gW = self.weight_gradient(cache, d3, batch_id, idx)
                g = {"W": gW.reshape(prm["W"].shape)}
                if "b" in prm:
                    g["b"] = d3.sum(axis=(0, 2)) / self.K
                grads[idx] = g
                if idx == 0:
                    break
                Wm = L.weight_matrix(spec, prm["W"])
                K, out, T = d3.shape
                flat = self._plain(Wm.T, d3.transpose(1, 0, 2).reshape(out, K * T), batch_id, idx)
                dops = flat.reshape(-1, K, T).transpose(1, 0, 2)
                delta = L.input_grad(spec, dops, cache["meta"])
            elif isinstance(spec, L.ReLU):
                delta = delta * (cache["pre"] > 0)
            elif isinstance(spec, L.MaxPool):
                delta = L.maxpool_backward(delta, cache, spec.window)
        self.pool.release(batch_id)
        return grads
