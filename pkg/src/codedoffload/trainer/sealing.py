"""Sealed per-virtual-batch gradients and their aggregation.

A sealed gradient is a deterministic serialization plus a SHA-256 digest.
It stands in for encrypt-and-evict: the blob goes to untrusted storage and
is checked when it comes back. This is not encryption.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ChecksumMismatch, MissingBatch


@dataclass(frozen=True)
class SealedGradient:
    blob: bytes
    checksum: str
    batch_index: int


def _serialize(grads: dict) -> bytes:
    names = sorted(grads)
    header = {
        "names": names,
        "shapes": [list(np.shape(grads[k])) for k in names],
    }
    body = b"".join(np.ascontiguousarray(grads[k], dtype="<f8").tobytes() for k in names)
    return json.dumps(header, sort_keys=True).encode() + b"\n" + body


def _deserialize(blob: bytes) -> dict:
    head, _, body = blob.partition(b"\n")
    header = json.loads(head)
    out, offset = {}, 0
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
        out[name] = arr.reshape(shape).astype(np.float64)
        offset += 8 * count
    return out


def seal_gradient(grads: dict, batch_index: int = 0) -> SealedGradient:
    blob = _serialize(grads)
    return SealedGradient(blob, hashlib.sha256(blob).hexdigest(), batch_index)


def unseal_gradient(sealed: SealedGradient) -> dict:
    if hashlib.sha256(sealed.blob).hexdigest() != sealed.checksum:
        raise ChecksumMismatch(f"sealed gradient {sealed.batch_index} failed its checksum")
    return _deserialize(sealed.blob)


class GradientStore:
    """Directory-backed untrusted storage for sealed gradients."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._index: dict[int, str] = {}

    def _path(self, batch_index: int) -> Path:
        return self.directory / f"vb_{batch_index:06d}.bin"

    def evict(self, sealed: SealedGradient):
        self._path(sealed.batch_index).write_bytes(sealed.blob)
        self._index[sealed.batch_index] = sealed.checksum

    def load(self, batch_index: int) -> SealedGradient:
        if batch_index not in self._index:
            raise MissingBatch(f"no sealed gradient for virtual batch {batch_index}")
        return SealedGradient(self._path(batch_index).read_bytes(), self._index[batch_index], batch_index)

    def load_all(self) -> list[SealedGradient]:
        return [self.load(i) for i in sorted(self._index)]

    def clear(self):
        for i in list(self._index):
            self._path(i).unlink(missing_ok=True)
        self._index.clear()


def update_aggregation(sealed, expected: int | None = None) -> dict:
    """Mean over virtual batches of their (already K-averaged) gradients."""
    sealed = list(sealed)
    indices = sorted(s.batch_index for s in sealed)
    n = expected if expected is not None else len(sealed)
    if indices != list(range(n)):
        missing = sorted(set(range(n)) - set(indices))
        raise MissingBatch(f"virtual batches missing or duplicated: {missing or indices}")
    total: dict = {}
    for s in sealed:
        for k, v in unseal_gradient(s).items():
            total[k] = total[k] + v if k in total else v.copy()
    return {k: v / n for k, v in total.items()}
