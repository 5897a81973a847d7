"""Dense tensor type, dtype policy and finiteness checks."""
from __future__ import annotations

import enum
from typing import Any
from typing import Iterable

import numpy as np
import numpy.typing as npt

from revprop.exceptions import ConfigError
from revprop.exceptions import NonFiniteError

# A dense, row-major array of reals. ``shape`` gives the dims.
Tensor = npt.NDArray[np.floating[Any]]


class DType(enum.Enum):
    """Floating point precision of a tensor.

    ``f32`` is used for benchmarking, ``f64`` for every test that asserts
    numerical agreement.
    """

    F32 = "f32"
    F64 = "f64"

    @property
    def numpy(self) -> np.dtype[Any]:
        """The numpy dtype for this precision."""
        return np.dtype(np.float32 if self is DType.F32 else np.float64)

    @classmethod
    def parse(cls, value: str) -> DType:
        """Return the ``DType`` named by _value_, one of "f32" or "f64"."""
        try:
            return cls(value.strip().lower())
        except ValueError as err:
            raise ConfigError(f"unknown dtype {value!r}, expected f32 or f64") from err

    @classmethod
    def of(cls, x: Tensor) -> DType:
        """Return the precision of an existing tensor."""
        return cls.F32 if x.dtype == np.float32 else cls.F64


def check_finite(x: Tensor, op: str) -> Tensor:
    """Raise ``NonFiniteError`` if any element of _x_ is NaN or infinite."""
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return x


def nbytes(tensors: Iterable[Tensor]) -> int:
    """Total byte size of an iterable of tensors."""
    return sum(int(t.nbytes) for t in tensors)
