"""Classification loss."""
from __future__ import annotations

from typing import Sequence
from typing import Tuple

import numpy as np

from revprop.exceptions import LabelError
from revprop.exceptions import ShapeError
from revprop.tensor import Tensor
from revprop.tensor import check_finite


def loss_and_grad_head(logits: Tensor, labels: Sequence[int]) -> Tuple[float, Tensor]:
    """Mean cross-entropy and its gradient with respect to the logits.

    ``d_logits = (softmax(logits) - onehot(labels)) / B``.
    """
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise ShapeError(f"logits of shape {logits.shape} for {len(labels)} labels")
    batch, classes = logits.shape
    index = np.asarray(labels, dtype=np.int64)
    if batch and (index.min() < 0 or index.max() >= classes):
        raise LabelError(f"labels must be in [0, {classes})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(batch)
    loss = float(-log_probs[rows, index].mean())

    d_logits = exp / total
    d_logits[rows, index] -= 1.0
    d_logits /= batch
    return loss, check_finite(d_logits, "loss_and_grad_head")
