"""Batches and synthetic data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from revprop.exceptions import ShapeError
from revprop.tensor import Rng
from revprop.tensor import Tensor

from .config import ModelConfig


@dataclass(frozen=True, eq=False)
class Batch:
    """Token inputs ``[B, N, in_dim]`` and one class label per sample."""

    inputs: Tensor
    labels: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.inputs.ndim != 3:
            raise ShapeError(f"inputs must be [B, N, in_dim], got {self.inputs.shape}")
        if len(self.labels) != self.inputs.shape[0]:
            raise ShapeError(
                f"{len(self.labels)} labels for a batch of {self.inputs.shape[0]}"
            )

    @property
    def size(self) -> int:
        """Samples in the batch."""
        return int(self.inputs.shape[0])


def make_batch(cfg: ModelConfig, batch_size: int, rng: Rng) -> Batch:
    """Draw Gaussian inputs and uniform labels for a model of shape _cfg_."""
    inputs = rng.child("inputs").normal(
        (batch_size, cfg.seq_len, cfg.input_dim),
        cfg.dtype,
    )
    labels = rng.child("labels").integers(0, cfg.num_classes, batch_size)
    return Batch(inputs=inputs, labels=labels)
