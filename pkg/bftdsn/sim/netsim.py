"""Deterministic discrete-event simulation of a partially synchronous network.

Before GST a message may be dropped (seeded) or delayed uniformly in
``[Δ, 20Δ]``; from GST on, the propagation delay is in ``(0, Δ]``. Every node
has one network interface that serialises its outgoing and incoming traffic
at the configured bandwidth, so transfer time adds to propagation delay.
Events fire in ``(time, sequence)`` order, which makes runs with the same
seed replay bit for bit.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from bftdsn.core.codec import encode_value
from bftdsn.core.exceptions import LivenessViolationError, UnknownNodeError
from bftdsn.core.utils import hash_bytes, make_rng

logger = logging.getLogger("bftdsn.sim.netsim")

Handler = Callable[[int, bytes], None]

PRE_GST_MAX_FACTOR = 20


@dataclass(frozen=True)
class LinkPolicy:
    delta_ms: float
    gst_ms: float = 0.0
    bandwidth_bytes_per_ms: float = 1_000_000.0
    drop_probability: float = 0.0

    def transfer_ms(self, size: int) -> float:
        if self.bandwidth_bytes_per_ms <= 0:
            return 0.0
        return size / self.bandwidth_bytes_per_ms

    def propagation(self, rng, now: float) -> float | None:
        """Delay for a message sent at ``now``; ``None`` means dropped."""
        if now < self.gst_ms:
            if self.drop_probability > 0 and rng.random() < self.drop_probability:
                return None
            return float(rng.uniform(self.delta_ms, PRE_GST_MAX_FACTOR * self.delta_ms))
        return self.delta_ms * (1.0 - float(rng.random()))


@dataclass(order=True)
class Event:
    time: float
    seq: int
    action: Callable[[], None] = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class SimClock:
    def __init__(self) -> None:
        self.now = 0.0
        self._queue: list[Event] = []
        self._seq = 0

    def schedule(self, at: float, action: Callable[[], None]) -> Event:
        event = Event(time=max(at, self.now), seq=self._seq, action=action)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def cancel(self, event: Event) -> None:
        event.cancelled = True

    def peek(self) -> Event | None:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0] if self._queue else None

    def pop(self) -> Event:
        event = heapq.heappop(self._queue)
        self.now = event.time
        return event

    def __len__(self) -> int:
        return sum(1 for event in self._queue if not event.cancelled)


class Network:
    def __init__(self, policy: LinkPolicy, seed: int, clock: SimClock | None = None) -> None:
        self.policy = policy
        self.clock = clock or SimClock()
        self._rng = make_rng(seed, "netsim")
        self._handlers: dict[int, Handler] = {}
        self._egress_free: dict[int, float] = {}
        self._ingress_free: dict[int, float] = {}
        self.trace: list[tuple] = []
        self.bytes_sent: dict[int, int] = {}
        self.events_processed = 0
        self.max_post_gst_delay = 0.0
        self.delay_violations = 0

    @property
    def now(self) -> float:
        return self.clock.now

    def register(self, node: int, handler: Handler) -> None:
        self._handlers[node] = handler
        self._egress_free.setdefault(node, 0.0)
        self._ingress_free.setdefault(node, 0.0)

    def nodes(self) -> list[int]:
        return sorted(self._handlers)

    def _require(self, node: int) -> None:
        if node not in self._handlers:
            raise UnknownNodeError(node)

    def send(self, sender: int, receiver: int, payload: bytes) -> Event | None:
        self._require(sender)
        self._require(receiver)
        now = self.clock.now
        digest = hash_bytes(payload)[:8].hex()

        if sender == receiver:
            return self.clock.schedule(now, lambda: self._deliver(sender, receiver, payload, digest))

        size = len(payload)
        self.bytes_sent[sender] = self.bytes_sent.get(sender, 0) + size
        transfer = self.policy.transfer_ms(size)
        egress_end = max(now, self._egress_free[sender]) + transfer
        self._egress_free[sender] = egress_end

        delay = self.policy.propagation(self._rng, now)
        if delay is None:
            self.trace.append((now, "drop", sender, receiver, size, digest))
            logger.debug("t=%.3f drop %s->%s bytes=%s", now, sender, receiver, size)
            return None
        if now >= self.policy.gst_ms:
            self.max_post_gst_delay = max(self.max_post_gst_delay, delay)
            if delay > self.policy.delta_ms:
                self.delay_violations += 1
                logger.warning("post-GST delay %.3f exceeds delta", delay)

        arrival = max(egress_end + delay, self._ingress_free[receiver] + transfer)
        self._ingress_free[receiver] = arrival
        return self.clock.schedule(
            arrival, lambda: self._deliver(sender, receiver, payload, digest)
        )

    def broadcast(self, sender: int, receivers: list[int], payload: bytes) -> None:
        for receiver in receivers:
            self.send(sender, receiver, payload)

    def _deliver(self, sender: int, receiver: int, payload: bytes, digest: str) -> None:
        self.trace.append((self.clock.now, "deliver", sender, receiver, len(payload), digest))
        self._handlers[receiver](sender, payload)

    def set_timer(self, node: int, delay_ms: float, action: Callable[[], None]) -> Event:
        self._require(node)
        return self.clock.schedule(self.clock.now + delay_ms, action)

    def cancel_timer(self, event: Event) -> None:
        self.clock.cancel(event)

    def run_until(
        self,
        predicate: Callable[[], bool],
        cap_ms: float,
        reason: str = "",
    ) -> float:
        while not predicate():
            event = self.clock.peek()
            if event is None:
                return self.clock.now
            if event.time > cap_ms:
                raise LivenessViolationError(cap_ms, reason)
            self.clock.pop()
            self.events_processed += 1
            event.action()
        return self.clock.now

    def trace_digest(self) -> str:
        return hash_bytes(encode_value(tuple(self.trace))).hex()

    def dump_trace(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as file:
            for time, kind, src, dst, size, digest in self.trace:
                file.write(f"{time:.6f} {kind} {src} {dst} {size} {digest}\n")
