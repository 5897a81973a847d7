"""Counter-based, splittable random number streams."""
from __future__ import annotations

import hashlib
from typing import Tuple

import numpy as np

from .core import DType
from .core import Tensor

_MASK64 = (1 << 64) - 1


def _stream_id(parent: int, name: str) -> int:
    key = parent.to_bytes(8, "little") + name.encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """A Philox stream keyed by ``(seed, stream_id)``.

    Identical keys produce identical draws on any platform. Streams with
    different ids are independent, so a parameter drawn from
    ``rng.child("block3.f.w_qkv")`` does not depend on what else has been
    drawn before it.

    :param seed: A 64-bit seed.
    :param stream_id: A 64-bit stream identifier. Defaults to ``0``.
    """

    __slots__ = ("seed", "stream_id", "_bits", "_gen")

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        self.seed = seed & _MASK64
        self.stream_id = stream_id & _MASK64
        self._bits = np.random.Philox(key=(self.stream_id << 64) | self.seed)
        self._gen = np.random.Generator(self._bits)

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"Rng(seed={self.seed}, stream_id={self.stream_id}, "
            f"counter={self.counter})"
        )

    @property
    def counter(self) -> int:
        """The position of this stream's 256-bit Philox counter."""
        words = self._bits.state["state"]["counter"]
        return sum(int(w) << (64 * i) for i, w in enumerate(words))

    def child(self, name: str) -> Rng:
        """Return an independent stream derived from this one and _name_."""
        return Rng(self.seed, _stream_id(self.stream_id, name))

    def normal(self, shape: Tuple[int, ...], dtype: DType, std: float = 1.0) -> Tensor:
        """Draw Gaussian values with mean zero."""
        return (self._gen.standard_normal(shape) * std).astype(dtype.numpy)

    def truncated_normal(
        self,
        shape: Tuple[int, ...],
        dtype: DType,
        std: float = 0.02,
    ) -> Tensor:
        """Draw Gaussian values, redrawing any that fall outside two ``std``."""
        values = self._gen.standard_normal(shape)
        bad = np.abs(values) > 2.0
        while bad.any():
            values[bad] = self._gen.standard_normal(int(bad.sum()))
            bad = np.abs(values) > 2.0
        return (values * std).astype(dtype.numpy)

    def integers(self, low: int, high: int, size: int) -> Tuple[int, ...]:
        """Draw _size_ integers uniformly from ``[low, high)``."""
        return tuple(int(v) for v in self._gen.integers(low, high, size=size))
