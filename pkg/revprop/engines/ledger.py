"""Activation memory accounting."""
from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field
from typing import Iterable
from typing import List
from typing import Tuple

from revprop.exceptions import AccountingError

Event = Tuple[str, int]


@dataclass
class MemoryLedger:
    """Live and peak activation bytes, with the events that produced them.

    A ledger is updated from one thread only. Engines that use more than one
    lane report their allocations back to the controlling thread, which
    records them in a fixed order.
    """

    live_bytes: int = 0
    peak_bytes: int = 0
    event_log: List[Event] = field(default_factory=list)

    def track(self, tag: str, delta: int) -> None:
        """Record an allocation (positive _delta_) or release (negative)."""
        live = self.live_bytes + delta
        if live < 0:
            raise AccountingError(
                f"{tag}: releasing {-delta} bytes leaves {live} live bytes"
            )
        self.live_bytes = live
        self.peak_bytes = max(self.peak_bytes, live)
        self.event_log.append((tag, delta))

    def alloc(self, tag: str, size: int) -> None:
        """Record _size_ bytes becoming live."""
        self.track(tag, size)

    def free(self, tag: str, size: int) -> None:
        """Record _size_ bytes being released."""
        self.track(tag, -size)

    def peak_since(self, index: int) -> int:
        """Peak live bytes over the events from _index_ onwards."""
        window = self.event_log[index:]
        live = self.live_bytes - sum(delta for _, delta in window)
        peak = live
        for _, delta in window:
            live += delta
            peak = max(peak, live)
        return peak


def ledger_track(ledger: MemoryLedger, tag: str, delta: int) -> None:
    """Record a byte delta against _ledger_."""
    ledger.track(tag, delta)


def predict_peak(events: Iterable[Event], scale: int = 1) -> int:
    """Replay _events_ with every delta multiplied by _scale_ and return the peak.

    Every tracked activation has the batch as its leading dimension, so the
    events of a batch-of-one step, scaled by ``B``, are exactly the events of
    a batch-of-``B`` step.
    """
    ledger = MemoryLedger()
    for tag, delta in events:
        ledger.track(tag, delta * scale)
    return ledger.peak_bytes
