"""Layer definitions and plaintext (float) forward/backward passes.

Batches are sample-major: ``x[i]`` is input ``i``. Every linear layer is
expressed as ``Wmat @ operand_i`` where ``operand_i`` is an N x T matrix
(T = 1 for dense layers, T = output positions for im2col'd convolutions),
so the coded path and the plaintext path share one formulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    has_bias: bool = True

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("Dense dimensions must be positive")


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    has_bias: bool = True

    def __post_init__(self):
        if min(self.in_ch, self.out_ch, self.kernel, self.stride) < 1:
            raise ValueError("Conv2D parameters must be positive")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("pool window must be positive")


LINEAR = (Dense, Conv2D)


@dataclass
class ModelState:
    specs: list
    params: list = field(default_factory=list)  # per layer: {"W", "b"} or None
    lr: float = 0.1

    def copy(self) -> "ModelState":
        params = [None if p is None else {k: v.copy() for k, v in p.items()} for p in self.params]
        return ModelState(list(self.specs), params, self.lr)

    def flat_params(self) -> dict:
        out = {}
        for idx, p in enumerate(self.params):
            if p is not None:
                for k, v in p.items():
                    out[f"{k}{idx}"] = v
        return out


def init_model(specs, seed: int = 0, lr: float = 0.1) -> ModelState:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng([seed, 7])
    params = []
    for s in specs:
        if isinstance(s, Dense):
            W = rng.normal(0.0, np.sqrt(2.0 / s.in_dim), size=(s.out_dim, s.in_dim))
            params.append({"W": W, "b": np.zeros(s.out_dim)} if s.has_bias else {"W": W})
        elif isinstance(s, Conv2D):
            fan_in = s.in_ch * s.kernel * s.kernel
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(s.out_ch, s.in_ch, s.kernel, s.kernel))
            params.append({"W": W, "b": np.zeros(s.out_ch)} if s.has_bias else {"W": W})
        else:
            params.append(None)
    return ModelState(list(specs), params, lr)


def mlp(sizes, seed: int = 0, lr: float = 0.1) -> ModelState:
    """Dense/ReLU stack, e.g. ``mlp([2, 16, 2])``."""
    specs = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        specs.append(Dense(a, b))
        if i < len(sizes) - 2:
            specs.append(ReLU())
    return init_model(specs, seed, lr)


# -- im2col ------------------------------------------------------------------

def _conv_out(h: int, k: int, s: int) -> int:
    if h < k:
        raise ValueError(f"kernel {k} larger than input {h}")
    return (h - k) // s + 1


def _im2col_index(c: int, h: int, w: int, k: int, s: int):
    oh, ow = _conv_out(h, k, s), _conv_out(w, k, s)
    ci, ki, kj = np.meshgrid(np.arange(c), np.arange(k), np.arange(k), indexing="ij")
    oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    rows = ki.reshape(-1, 1) + s * oi.reshape(1, -1)
    cols = kj.reshape(-1, 1) + s * oj.reshape(1, -1)
    chans = np.broadcast_to(ci.reshape(-1, 1), rows.shape)
    return chans, rows, cols, oh, ow


def im2col(x: np.ndarray, k: int, s: int = 1) -> np.ndarray:
    """(K, C, H, W) -> (K, C*k*k, OH*OW); rows ordered (channel, ki, kj)."""
    _, c, h, w = x.shape
    chans, rows, cols, _, _ = _im2col_index(c, h, w, k, s)
    return x[:, chans, rows, cols]


def col2im(cols: np.ndarray, shape, k: int, s: int = 1) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to (K, C, H, W)."""
    n, c, h, w = shape
    chans, rows, cc, _, _ = _im2col_index(c, h, w, k, s)
    out = np.zeros((n, c, h, w))
    for i in range(n):
        np.add.at(out[i], (chans, rows, cc), cols[i])
    return out


def conv2d_naive(x: np.ndarray, W: np.ndarray, b=None, stride: int = 1) -> np.ndarray:
    """Direct nested-loop convolution (no padding); reference for im2col."""
    n, c, h, w = x.shape
    oc, _, k, _ = W.shape
    oh, ow = _conv_out(h, k, stride), _conv_out(w, k, stride)
    out = np.zeros((n, oc, oh, ow))
    for i in range(n):
        for o in range(oc):
            for a in range(oh):
                for bb in range(ow):
                    patch = x[i, :, a * stride : a * stride + k, bb * stride : bb * stride + k]
                    out[i, o, a, bb] = np.sum(patch * W[o]) + (0.0 if b is None else b[o])
    return out


# -- linear-layer plumbing shared by both paths ------------------------------

def operands(spec, x: np.ndarray):
    """Per-sample operand matrices (K, N, T) and reshape metadata."""
    if isinstance(spec, Dense):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != spec.in_dim:
            raise ValueError(f"Dense expects {spec.in_dim} inputs, got {flat.shape[1]}")
        return flat[:, :, None], {"x_shape": x.shape}
    cols = im2col(x, spec.kernel, spec.stride)
    oh = _conv_out(x.shape[2], spec.kernel, spec.stride)
    ow = _conv_out(x.shape[3], spec.kernel, spec.stride)
    return cols, {"x_shape": x.shape, "out_hw": (oh, ow)}


def weight_matrix(spec, W: np.ndarray) -> np.ndarray:
    return W.reshape(W.shape[0], -1)


def assemble(spec, y: np.ndarray, meta) -> np.ndarray:
    """(K, out, T) -> layer output shape."""
    if isinstance(spec, Dense):
        return y[:, :, 0]
    return y.reshape(y.shape[0], y.shape[1], *meta["out_hw"])


def split_delta(spec, delta: np.ndarray) -> np.ndarray:
    """Layer-output gradient -> (K, out, T)."""
    if isinstance(spec, Dense):
        return delta[:, :, None]
    return delta.reshape(delta.shape[0], delta.shape[1], -1)


def input_grad(spec, dops: np.ndarray, meta) -> np.ndarray:
    """Gradient w.r.t. operands (K, N, T) -> gradient w.r.t. layer input."""
    if isinstance(spec, Dense):
        return dops[:, :, 0].reshape(meta["x_shape"])
    return col2im(dops, meta["x_shape"], spec.kernel, spec.stride)


def maxpool_forward(x: np.ndarray, w: int):
    n, c, h, wd = x.shape
    oh, ow = h // w, wd // w
    xc = x[:, :, : oh * w, : ow * w].reshape(n, c, oh, w, ow, w)
    out = xc.max(axis=(3, 5))
    mask = xc == out[:, :, :, None, :, None]
    # ties: keep only the first maximum in each window
    flat = mask.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, w * w)
    first = np.zeros_like(flat)
    np.put_along_axis(first, flat.argmax(axis=-1)[..., None], True, axis=-1)
    return out, {"mask": first, "shape": x.shape}


def maxpool_backward(delta: np.ndarray, cache, w: int) -> np.ndarray:
    n, c, h, wd = cache["shape"]
    oh, ow = delta.shape[2], delta.shape[3]
    routed = cache["mask"] * delta[..., None]
    routed = routed.reshape(n, c, oh, ow, w, w).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * w, ow * w)
    out = np.zeros((n, c, h, wd))
    out[:, :, : oh * w, : ow * w] = routed
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean loss and the per-sample gradient d loss_i / d logits_i."""
    probs = softmax(logits)
    n = logits.shape[0]
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(n), labels], 1e-300, None))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad


# -- plaintext passes -----------------------------------------------------------

def plain_forward(model: ModelState, x: np.ndarray):
    caches = []
    for spec, prm in zip(model.specs, model.params):
        if isinstance(spec, LINEAR):
            ops, meta = operands(spec, x)
            Wm = weight_matrix(spec, prm["W"])
            y = np.einsum("on,knt->kot", Wm, ops)
            if "b" in prm:
                y = y + prm["b"][None, :, None]
            caches.append({"ops": ops, "meta": meta})
            x = assemble(spec, y, meta)
        elif isinstance(spec, ReLU):
            caches.append({"pre": x})
            x = np.maximum(x, 0.0)
        elif isinstance(spec, MaxPool):
            x, cache = maxpool_forward(x, spec.window)
            caches.append(cache)
        else:
            raise TypeError(f"unknown layer {spec!r}")
    return caches, x


def linear_grads(spec, prm, ops: np.ndarray, delta3: np.ndarray):
    """Batch-mean weight and bias gradients from operands and (K, out, T) deltas."""
    K = ops.shape[0]
    gW = np.einsum("kot,knt->on", delta3, ops) / K
    g = {"W": gW.reshape(prm["W"].shape)}
    if "b" in prm:
        g["b"] = delta3.sum(axis=(0, 2)) / K
    return g


def plain_backward(model: ModelState, caches, dlogits: np.ndarray, need_input_grad: bool = False):
    grads = [None] * len(model.specs)
    delta = dlogits
    for idx in range(len(model.specs) - 1, -1, -1):
        spec, prm, cache = model.specs[idx], model.params[idx], caches[idx]
        if isinstance(spec, LINEAR):
            d3 = split_delta(spec, delta)
            grads[idx] = linear_grads(spec, prm, cache["ops"], d3)
            if idx == 0 and not need_input_grad:
                break
            Wm = weight_matrix(spec, prm["W"])
            dops = np.einsum("on,kot->knt", Wm, d3)
            delta = input_grad(spec, dops, cache["meta"])
        elif isinstance(spec, ReLU):
            delta = delta * (cache["pre"] > 0)
        elif isinstance(spec, MaxPool):
            delta = maxpool_backward(delta, cache, spec.window)
    return grads


def plain_gradients(model: ModelState, x: np.ndarray, labels: np.ndarray):
    caches, logits = plain_forward(model, x)
    loss, dlogits = cross_entropy(logits, labels)
    return plain_backward(model, caches, dlogits), loss


def predict(model: ModelState, x: np.ndarray) -> np.ndarray:
    return plain_forward(model, x)[1]


def evaluate(model: ModelState, x: np.ndarray, labels: np.ndarray):
    logits = predict(model, x)
    loss, _ = cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, acc
