"""Training loops: plaintext reference and coded training with sealed aggregation."""
from __future__ import annotations

import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, IntegrityViolation
from ..quantizer import QuantParams
from ..workersim import WorkerPool
from . import layers as L
from .coordinator import Coordinator
from .sealing import GradientStore, seal_gradient, update_aggregation


@dataclass
class TrainConfig:
    K: int = 2
    M: int = 1
    workers: int | None = None  # K'; defaults to the minimum the config needs
    integrity: bool = False
    epochs: int = 200
    large_batch: int = 10  # N_total, split into N_total / K virtual batches
    seed: int = 0
    q: QuantParams = field(default_factory=QuantParams)
    lr: float = 0.1
    dataset: str = "moons"
    n_points: int = 500
    hidden: int = 16
    parity: bool = True
    max_threads: int = 1

    def __post_init__(self):
        if self.K < 1 or self.M < 1:
            raise ConfigError("K and M must be >= 1")
        need = self.K + self.M + (1 if self.integrity else 0)
        if self.workers is None:
            self.workers = need
        if self.workers < need:
            raise ConfigError(
                f"K + M{' + 1' if self.integrity else ''} = {need} exceeds the {self.workers} available workers"
            )
        if self.large_batch < self.K or self.large_batch % self.K:
            raise ConfigError(f"large batch {self.large_batch} must be a positive multiple of K={self.K}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    @property
    def virtual_batches(self) -> int:
        return self.large_batch // self.K


def sgd_step(model: L.ModelState, grads, lr: float | None = None):
    """In-place ``W -= lr * grad``; ``grads`` is per-layer or flat (``W0``, ``b0``...)."""
    lr = model.lr if lr is None else lr
    if isinstance(grads, dict):
        for name, g in grads.items():
            kind, idx = name[0], int(name[1:])
            model.params[idx][kind] -= lr * g
        return model
    for prm, g in zip(model.params, grads):
        if prm is not None and g is not None:
            for k in prm:
                prm[k] -= lr * g[k]
    return model


def flatten_grads(grads) -> dict:
    out = {}
    for idx, g in enumerate(grads):
        if g is not None:
            for k, v in g.items():
                out[f"{k}{idx}"] = v
    return out


def iterate_steps(n: int, cfg: TrainConfig, epoch_rng: np.random.Generator):
    """Yield one list of virtual-batch index arrays per SGD step."""
    perm = epoch_rng.permutation(n)
    usable = n - n % cfg.large_batch
    for start in range(0, usable, cfg.large_batch):
        big = perm[start : start + cfg.large_batch]
        yield [big[v * cfg.K : (v + 1) * cfg.K] for v in range(cfg.virtual_batches)]


def _epoch_rng(cfg: TrainConfig):
    return np.random.default_rng([cfg.seed, 101])


def plaintext_reference_train(model0: L.ModelState, data, cfg: TrainConfig):
    """Float training with the same batching as :func:`encoded_train`."""
    x, y = data
    model = model0.copy()
    rng = _epoch_rng(cfg)
    loss, acc = L.evaluate(model, x, y)
    metrics = [{"epoch": 0, "loss": loss, "acc": acc}]
    for epoch in range(1, cfg.epochs + 1):
        for step in iterate_steps(len(x), cfg, rng):
            vgrads = [flatten_grads(L.plain_gradients(model, x[idx], y[idx])[0]) for idx in step]
            mean = {k: sum(g[k] for g in vgrads) / len(vgrads) for k in vgrads[0]}
            sgd_step(model, mean, cfg.lr)
        loss, acc = L.evaluate(model, x, y)
        metrics.append({"epoch": epoch, "loss": loss, "acc": acc})
    return model, metrics


def gradient_parity(caches, grads, K: int):
    """Per linear layer: ``(layer, max |dW_coded - dW_float|, scale)``.

    The float reference is ``(1/K) sum_i delta_i x_i^T`` on the operands and
    deltas the coordinator actually held (recorded by the audit hook), so
    the gap measures only the coded gradient path. ``scale`` is
    ``max(1, |x|_inf, |delta|_inf)``.
    """
    out = []
    for idx, (cache, g) in enumerate(zip(caches, grads)):
        if g is None or "delta3" not in cache:
            continue
        ops, d3 = cache["ops"], cache["delta3"]
        ref = np.einsum("kot,knt->on", d3, ops) / K
        diff = float(np.max(np.abs(g["W"].reshape(ref.shape) - ref)))
        scale = max(1.0, float(np.max(np.abs(ops))), float(np.max(np.abs(d3))))
        out.append((idx, diff, scale))
    return out


def reference_gradient_gap(model: L.ModelState, x: np.ndarray, labels: np.ndarray, enc_grads) -> float:
    """Largest |dW_coded - dW_plaintext| where the plaintext side reruns the whole
    float forward/backward. Includes activation-mask flips caused by
    forward quantization, so it is not bounded by the gradient tolerance."""
    plain, _ = L.plain_gradients(model, x, labels)
    return max(
        float(np.max(np.abs(e["W"] - p["W"]))) for e, p in zip(enc_grads, plain) if e is not None
    )


def make_pool(cfg: TrainConfig, behaviors=None) -> WorkerPool:
    return WorkerPool.create(cfg.workers, seed=cfg.seed, behaviors=behaviors, max_threads=cfg.max_threads)


def encoded_train(model0: L.ModelState, data, cfg: TrainConfig, *, pool: WorkerPool | None = None,
                  store_dir=None, dump_dir=None, stop_on_violation: bool = False):
    """Coded training loop.

    Returns ``(model, metrics, audit)``. ``audit`` holds per-virtual-batch
    gradient parity records ``(epoch, step, layer, delta, scale)``, the
    violation log and the pool (for transcripts and the collusion ledger).
    A detected integrity violation drops the whole SGD step.
    """
    x, y = data
    model = model0.copy()
    pool = pool if pool is not None else make_pool(cfg)
    coord = Coordinator(pool, cfg.q, cfg.K, cfg.M, np.random.default_rng([cfg.seed, 202]),
                        integrity=cfg.integrity, dump_dir=dump_dir, record_operands=cfg.parity)
    rng = _epoch_rng(cfg)
    tmp = None
    if store_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="sealed-")
        store_dir = tmp.name
    store = GradientStore(store_dir)
    parity, violations = [], []
    loss, acc = L.evaluate(model, x, y)
    metrics = [{"epoch": 0, "loss": loss, "acc": acc, "max_grad_delta": 0.0, "integrity_violations": 0}]
    batch_id = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            epoch_delta, epoch_viol = 0.0, 0
            for step_no, step in enumerate(iterate_steps(len(x), cfg, rng)):
                store.clear()
                try:
                    for v, idx in enumerate(step):
                        xb, yb = x[idx], y[idx]
                        caches, logits = coord.forward_pass(model, xb, batch_id)
                        _, dlogits = L.cross_entropy(logits, yb)
                        grads = coord.backward_virtual_batch(model, caches, dlogits, batch_id)
                        batch_id += 1
                        if cfg.parity:
                            for layer, d, s in gradient_parity(caches, grads, cfg.K):
                                parity.append((epoch, step_no, layer, d, s))
                                epoch_delta = max(epoch_delta, d)
                        store.evict(seal_gradient(flatten_grads(grads), v))
                except IntegrityViolation as exc:
                    pool.release(batch_id)
                    batch_id += 1
                    epoch_viol += 1
                    violations.append({"epoch": epoch, "step": step_no, "stage": exc.stage,
                                       "layer": exc.layer_id, "batch": exc.batch_id})
                    if stop_on_violation:
                        raise
                    continue
                sgd_step(model, update_aggregation(store.load_all(), cfg.virtual_batches), cfg.lr)
            loss, acc = L.evaluate(model, x, y)
            metrics.append({"epoch": epoch, "loss": loss, "acc": acc, "max_grad_delta": epoch_delta,
                            "integrity_violations": epoch_viol})
    finally:
        if tmp is not None:
            tmp.cleanup()
    audit = {"parity": parity, "violations": violations, "pool": pool,
             "normalized_layers": coord.normalized_layers}
    return model, metrics, audit


def paired_metrics(enc_metrics, plain_metrics) -> list[dict]:
    return [
        {
            "epoch": e["epoch"],
            "loss_enc": e["loss"],
            "loss_plain": p["loss"],
            "acc_enc": e["acc"],
            "acc_plain": p["acc"],
            "max_grad_delta": e["max_grad_delta"],
            "integrity_violations": e["integrity_violations"],
        }
        for e, p in zip(enc_metrics, plain_metrics)
    ]


def calibrate_tau(q: QuantParams | None = None, *, trials: int = 100, K: int = 2, M: int = 1,
                  shapes=((2, 16), (16, 2)), seed: int = 0) -> float:
    """Twice the worst encoded-vs-float weight-gradient error on unit-scale data.

    Each trial draws W, X and delta uniformly from [-1, 1] for every layer
    shape, runs the coded forward and gradient decode, and compares against
    ``(1/K) sum_i delta_i x_i^T`` in floats.
    """
    q = q if q is not None else QuantParams()
    rng = np.random.default_rng([seed, 303])
    pool = WorkerPool.create(K + M, seed=seed)
    coord = Coordinator(pool, q, K, M, np.random.default_rng([seed, 304]))
    worst = 0.0
    batch = 0
    for _ in range(trials):
        for n_in, n_out in shapes:
            spec = L.Dense(n_in, n_out, has_bias=False)
            prm = {"W": rng.uniform(-1, 1, size=(n_out, n_in))}
            X = rng.uniform(-1, 1, size=(K, n_in))
            delta = rng.uniform(-1, 1, size=(K, n_out))
            _, cache = coord.linear_forward(spec, prm, X, batch, 0)
            g = coord.weight_gradient(cache, delta[:, :, None], batch, 0)
            pool.release(batch)
            batch += 1
            worst = max(worst, float(np.max(np.abs(g - delta.T @ X / K))))
    return 2.0 * worst
