"""Model configuration."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Tuple

from revprop.exceptions import ConfigError
from revprop.layers import FusionKind
from revprop.tensor import DType

Grid = Tuple[int, int]


class ModelKind(enum.Enum):
    """Isotropic models have one stage. Hierarchical ones downsample between stages."""

    ISOTROPIC = "isotropic"
    HIERARCHICAL = "hierarchical"

    @classmethod
    def parse(cls, value: str) -> ModelKind:
        """Return the ``ModelKind`` named by _value_."""
        try:
            return cls(value.strip().lower())
        except ValueError as err:
            raise ConfigError(
                f"unknown model kind {value!r}, expected isotropic or hierarchical"
            ) from err


@dataclass(frozen=True)
class ModelConfig:
    """Shape and initialization of a reversible model.

    Hierarchical stages double the width and divide the token count by the
    merge factor ``r`` (2 for sequences, 4 for 2-D grids) at each boundary.

    :param kind: Isotropic or hierarchical.
    :param depths: Blocks per stage.
    :param width: Width ``d0`` of the first stage.
    :param heads: Attention heads, the same in every stage.
    :param seq_len: Tokens ``N`` entering the first stage.
    :param in_dim: Features per input token. Defaults to ``width``.
    :param mlp_ratio: MLP hidden width as a multiple of the model width.
    :param window: Tokens per attention window, or ``None`` for full attention.
    :param grid: ``(H, W)`` layout of the tokens for 2-D patch merging.
    :param fusion: How a stage's pair is fused at a boundary.
    :param num_classes: Classifier outputs.
    :param dtype: Parameter and activation precision.
    :param seed: Initialization seed.
    """

    kind: ModelKind
    depths: Tuple[int, ...]
    width: int
    heads: int
    seq_len: int
    in_dim: Optional[int] = None
    mlp_ratio: int = 4
    window: Optional[int] = None
    grid: Optional[Grid] = None
    fusion: FusionKind = FusionKind.AVERAGE
    num_classes: int = 10
    dtype: DType = DType.F32
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.depths or any(depth < 1 for depth in self.depths):
            raise ConfigError("depths must be a non-empty list of positive integers")
        if self.kind is ModelKind.ISOTROPIC and len(self.depths) != 1:
            raise ConfigError("an isotropic model has exactly one stage")
        if self.kind is ModelKind.HIERARCHICAL and len(self.depths) < 2:
            raise ConfigError("a hierarchical model needs at least two stages")
        for name in ("width", "heads", "seq_len", "mlp_ratio", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.in_dim is not None and self.in_dim < 1:
            raise ConfigError("in_dim must be positive")
        if self.width % self.heads:
            raise ConfigError(
                f"width {self.width} is not divisible by {self.heads} heads"
            )
        if self.grid is not None:
            if self.kind is not ModelKind.HIERARCHICAL:
                raise ConfigError("a token grid is only used by hierarchical models")
            height, width = self.grid
            if height * width != self.seq_len:
                raise ConfigError(
                    f"grid {height}x{width} does not hold {self.seq_len} tokens"
                )
            scale = 2 ** (self.num_stages - 1)
            if height % scale or width % scale:
                raise ConfigError(
                    f"grid {height}x{width} cannot be halved "
                    f"{self.num_stages - 1} times"
                )
        tokens = self.seq_len
        for stage, n in enumerate(self.stage_tokens()):
            if n * self.reduction ** stage != tokens:
                raise ConfigError(
                    f"seq_len {tokens} is not divisible by "
                    f"{self.reduction}^{self.num_stages - 1}"
                )
            if self.window is not None and n % self.window:
                raise ConfigError(
                    f"stage {stage} has {n} tokens, not divisible by "
                    f"window {self.window}"
                )

    @property
    def num_stages(self) -> int:
        """Number of stages."""
        return len(self.depths)

    @property
    def reduction(self) -> int:
        """Tokens merged into one at each boundary."""
        return 4 if self.grid is not None else 2

    @property
    def input_dim(self) -> int:
        """Features per input token."""
        return self.in_dim if self.in_dim is not None else self.width

    @property
    def total_depth(self) -> int:
        """Reversible blocks across all stages."""
        return sum(self.depths)

    def stage_widths(self) -> List[int]:
        """Width of each stage."""
        return [self.width * 2**stage for stage in range(self.num_stages)]

    def stage_tokens(self) -> List[int]:
        """Token count entering each stage."""
        r = self.reduction
        return [self.seq_len // r**stage for stage in range(self.num_stages)]

    def stage_grids(self) -> List[Optional[Grid]]:
        """Token grid entering each stage, or ``None`` for sequences."""
        if self.grid is None:
            return [None] * self.num_stages
        height, width = self.grid
        return [(height >> stage, width >> stage) for stage in range(self.num_stages)]
