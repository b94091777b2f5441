"""Broadcast channel carrying serialized trajectories with a fixed delivery latency."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from itertools import count


@dataclass(frozen=True)
class Message:
    sender: int
    payload: bytes
    send_time: float

    def delivery_time(self, latency: float) -> float:
        return self.send_time + latency


@dataclass
class BroadcastBus:
    """Every message reaches all receivers at ``send_time + latency``.

    Messages from one sender are delivered in send order. ``dropped`` maps a
    receiver to the senders whose messages it never sees (lost links).
    """

    latency: float = 0.0
    dropped: dict = field(default_factory=dict)
    _queue: list = field(default_factory=list, repr=False)
    _seq: count = field(default_factory=count, repr=False)

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be non-negative")

    def __len__(self) -> int:
        return len(self._queue)

    def publish(self, sender: int, payload: bytes, send_time: float) -> None:
        msg = Message(int(sender), bytes(payload), float(send_time))
        heapq.heappush(self._queue, (msg.delivery_time(self.latency), next(self._seq), msg))

    def deliver(self, now: float) -> list[Message]:
        """Pop every message due at or before ``now`` in delivery order."""
        out = []
        while self._queue and self._queue[0][0] <= now + 1e-12:
            out.append(heapq.heappop(self._queue)[2])
        return out

    def drop_link(self, receiver: int, sender: int) -> None:
        self.dropped.setdefault(int(receiver), set()).add(int(sender))

    def accepts(self, receiver: int, sender: int) -> bool:
        return sender not in self.dropped.get(receiver, ())
