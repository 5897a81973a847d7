"""Common behaviour for parameter records."""
from __future__ import annotations

import dataclasses
from typing import Callable
from typing import ClassVar
from typing import Dict
from typing import Tuple
from typing import TypeVar

from revprop.tensor import Tensor

T = TypeVar("T", bound="ParamRecord")


class ParamRecord:
    """Base class for frozen dataclasses whose array fields are parameters.

    The same record types carry cotangents, so a gradient always has exactly
    the fields and shapes of the parameters it belongs to.
    """

    ARRAYS: ClassVar[Tuple[str, ...]] = ()

    def arrays(self) -> Dict[str, Tensor]:
        """Parameter arrays by field name, skipping absent optional fields."""
        found = {name: getattr(self, name) for name in self.ARRAYS}
        return {name: array for name, array in found.items() if array is not None}

    def map(self: T, fn: Callable[[Tensor], Tensor]) -> T:
        """Return a copy with _fn_ applied to every parameter array."""
        changes = {name: fn(array) for name, array in self.arrays().items()}
        return dataclasses.replace(self, **changes)  # type: ignore

    def zip_map(self: T, other: T, fn: Callable[[Tensor, Tensor], Tensor]) -> T:
        """Return a copy with ``fn(mine, theirs)`` applied field by field."""
        theirs = other.arrays()
        changes = {
            name: fn(array, theirs[name]) for name, array in self.arrays().items()
        }
        return dataclasses.replace(self, **changes)  # type: ignore

    @property
    def nbytes(self) -> int:
        """Total byte size of the parameter arrays."""
        return sum(int(array.nbytes) for array in self.arrays().values())
