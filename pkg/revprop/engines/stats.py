"""Engine kinds, gradients and step statistics."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import Iterator
from typing import List
from typing import Optional
from typing import Tuple

from revprop.exceptions import ConfigError
from revprop.exceptions import MissingGradientError
from revprop.layers import BoundaryParams
from revprop.models import Model
from revprop.reversible import RevBlockGrads
from revprop.tensor import Tensor


class EngineKind(enum.Enum):
    """Backpropagation strategy.

    ``VANILLA`` stores every block's activations. ``REPROP`` recomputes them
    block by block from the outputs. ``PAREPROP`` recomputes block ``i - 1``
    on one lane while another computes block ``i``'s gradients.
    """

    VANILLA = "vanilla"
    REPROP = "reprop"
    PAREPROP = "pareprop"

    @classmethod
    def parse(cls, value: str) -> EngineKind:
        """Return the ``EngineKind`` named by _value_."""
        try:
            return cls(value.strip().lower())
        except ValueError as err:
            names = ", ".join(kind.value for kind in cls)
            raise ConfigError(
                f"unknown engine {value!r}, expected one of {names}"
            ) from err


@dataclass(eq=False)
class GradStore:
    """Gradients for every parameterized component of a model."""

    blocks: Dict[int, RevBlockGrads] = field(default_factory=dict)
    boundaries: Dict[int, BoundaryParams] = field(default_factory=dict)
    embed_w: Optional[Tensor] = None
    head_w: Optional[Tensor] = None

    def check_complete(self, model: Model) -> None:
        """Raise ``MissingGradientError`` unless every component has a gradient."""
        if self.embed_w is None:
            raise MissingGradientError("embed_w")
        if self.head_w is None:
            raise MissingGradientError("head_w")
        for block in model.blocks():
            if block.block_id not in self.blocks:
                raise MissingGradientError(f"block{block.block_id}")
        for index, stage in enumerate(model.stages):
            if stage.boundary is not None and index not in self.boundaries:
                raise MissingGradientError(f"boundary{index}")

    def named_arrays(self) -> Iterator[Tuple[str, Tensor]]:
        """Every gradient array with the dotted name of its parameter."""
        if self.embed_w is not None:
            yield "embed_w", self.embed_w
        for block_id in sorted(self.blocks):
            grads = self.blocks[block_id]
            for name, array in grads.d_f.arrays().items():
                yield f"block{block_id}.f.{name}", array
            for name, array in grads.d_g.arrays().items():
                yield f"block{block_id}.g.{name}", array
        for index in sorted(self.boundaries):
            for name, array in self.boundaries[index].arrays().items():
                yield f"boundary{index}.{name}", array
        if self.head_w is not None:
            yield "head_w", self.head_w


@dataclass
class StepStats:
    """Timing, loss and memory of one training step.

    ``lane_busy_ns`` maps lane names to busy time: ``"main"`` for the
    sequential engines, ``"R"`` (recompute) and ``"G"`` (gradient) for the
    pipelined engine. ``schedule`` is the pipelined engine's slot log, one
    tuple of task names per slot, e.g. ``("G3", "R2")``.
    """

    loss: float
    wall_ns: int
    peak_activation_bytes: int
    blocks_processed: int
    lane_busy_ns: Dict[str, int] = field(default_factory=dict)
    schedule: List[Tuple[str, ...]] = field(default_factory=list)
