"""Named parameter storage, Adam, and the binary parameter blob."""

from __future__ import annotations

import struct

import numpy as np

from ..errors import DataError
from .engine import Tensor

BLOB_MAGIC = b"BWPS"


class ParamStore:
    """Ordered named parameters plus their Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64, order="C"), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def size(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(p.grad**2) for p in self.params.values() if p.grad is not None)))

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.grad_norm()
        if max_norm and norm > max_norm:
            scale = max_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            if self.params[k].data.shape != v.shape:
                raise DataError(f"shape mismatch restoring {k}: {v.shape} vs {self.params[k].data.shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def to_bytes(self) -> bytes:
        """Blob: magic, uint32 count, then per tensor
        ``uint16 name_len | name | uint8 ndim | uint32 dims... | float64 data`` (all little-endian)."""
        parts = [BLOB_MAGIC, struct.pack("<I", len(self.params))]
        for name, p in self.params.items():
            raw = name.encode()
            parts.append(struct.pack("<H", len(raw)) + raw)
            parts.append(struct.pack("<B", p.data.ndim) + struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            parts.append(p.data.astype("<f8").tobytes())
        return b"".join(parts)

    @staticmethod
    def parse_bytes(blob: bytes) -> dict[str, np.ndarray]:
        if blob[:4] != BLOB_MAGIC:
            raise DataError("bad parameter blob magic")
        (count,) = struct.unpack_from("<I", blob, 4)
        off = 8
        out = {}
        try:
            for _ in range(count):
                (ln,) = struct.unpack_from("<H", blob, off)
                off += 2
                name = blob[off:off + ln].decode()
                off += ln
                (ndim,) = struct.unpack_from("<B", blob, off)
                off += 1
                shape = struct.unpack_from(f"<{ndim}I", blob, off)
                off += 4 * ndim
                size = int(np.prod(shape)) if ndim else 1
                out[name] = np.frombuffer(blob, "<f8", size, off).reshape(shape).astype(np.float64)
                off += 8 * size
        except (struct.error, ValueError) as exc:
            raise DataError(f"truncated parameter blob: {exc}") from exc
        if off != len(blob):
            raise DataError("trailing bytes in parameter blob")
        return out


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter that has a gradient."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
