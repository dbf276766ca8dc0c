"""Measurement layer: analytic latency floors, slowdowns, goodput, queue and credit sampling.

The slowdown denominator is the exact unloaded store-and-forward delivery time
over the message's route, so a slowdown of 1.0 means the fabric moved the
message as fast as it possibly could. Credit-location snapshots partition the
fleet's entire credit budget into at-receiver headroom, in-flight credit, and
credit parked at senders; the three parts must sum to the budget exactly at
every sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .engine import InvariantViolation, SimulationError, Simulator
from .fabric import Fabric, serialization_ns


def ideal_latency_ns(fabric: Fabric, src: int, dst: int, size: int) -> int:
    """Unloaded one-way delivery time for a size-byte message, in ns.

    The message is cut into full-size packets plus a tail, sent back to back.
    Delivery can finish no earlier than the larger of two bounds: every
    packet store-and-forwards through its own hop chain after waiting out its
    predecessors on the source link, and the destination link must serialize
    the whole message once the earliest packet can reach it.  With two or
    more spines a later (smaller) packet may arrive first, so the second
    bound starts from the quickest chain rather than the first packet's.
    """
    if size < 1:
        raise SimulationError("message size must be positive")
    mss = fabric.spec.mss_bytes
    hdr = fabric.spec.header_bytes
    route = fabric.route(src, dst)
    sizes = [mss] * (size // mss)
    if size % mss:
        sizes.append(size % mss)
    rest = route[1:]
    props = sum(link.prop_ns for link in route)
    sprayed = fabric.spec.num_spines >= 2 and len(route) > 2

    finish = 0
    src_done = 0
    arrivals = []
    for s in sizes:
        src_done += serialization_ns(s + hdr, route[0].gbps)
        mid = sum(serialization_ns(s + hdr, link.gbps) for link in rest[:-1])
        arrivals.append(src_done + mid)
        last = serialization_ns(s + hdr, rest[-1].gbps) if rest else 0
        finish = max(finish, src_done + mid + last)

    if rest:
        first_arrival = min(arrivals) if sprayed else arrivals[0]
        dst_busy = sum(serialization_ns(s + hdr, rest[-1].gbps) for s in sizes)
        finish = max(finish, first_arrival + dst_busy)
    return finish + props


def steady_state_oracle(num_congested: int, fanout: int,
                        sender_threshold_bytes: float, bdp_bytes: int) -> float:
    """Closed-form credit demand of a receiver with num_congested feeding senders.

    Each congested sender fanning out to `fanout` receivers parks about one
    fanout-th of the sender threshold per receiver, on top of a full pipe.
    Valid only while senders outnumber none of their receivers (fanout strictly
    larger than the congested count).
    """
    if num_congested < 0:
        raise SimulationError("num_congested must be non-negative")
    if num_congested == 0:
        return float(bdp_bytes)
    if fanout <= num_congested:
        raise SimulationError("oracle needs fanout > num_congested")
    return bdp_bytes + num_congested * sender_threshold_bytes / fanout


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile of an unsorted list; nan when empty."""
    if not values:
        return math.nan
    vals = sorted(values)
    idx = max(0, math.ceil(q * len(vals)) - 1)
    return vals[min(idx, len(vals) - 1)]


def size_class(size: int, mss: int, bdp: int) -> str:
    if size < mss:
        return "A"
    if size < bdp:
        return "B"
    if size < 8 * bdp:
        return "C"
    return "D"


@dataclass
class MessageRecord:
    msg_id: int
    src: int
    dst: int
    size: int
    created_ns: int
    ideal_ns: int
    size_class: str
    incast: bool = False
    completed_ns: Optional[int] = None

    @property
    def slowdown(self) -> float:
        if self.completed_ns is None:
            return math.nan
        return (self.completed_ns - self.created_ns) / self.ideal_ns


class Metrics:
    """Collects per-run observations; aggregates are post-warmup."""

    def __init__(self, sim: Simulator, fabric: Fabric, *, mss_bytes: int, bdp_bytes: int,
                 warmup_ns: int, goodput_window_ns: int, sample_interval_ns: int):
        self.sim = sim
        self.fabric = fabric
        self.mss_bytes = mss_bytes
        self.bdp_bytes = bdp_bytes
        self.warmup_ns = warmup_ns
        self.goodput_window_ns = goodput_window_ns
        self.sample_interval_ns = sample_interval_ns

        self.messages: dict[int, MessageRecord] = {}
        self.completed: list[MessageRecord] = []
        # Unique payload bytes landed per host since warmup (duplicates excluded).
        self.payload_bytes: dict[int, int] = {}
        # Payload of completed messages bucketed per (host, window index).
        self.window_bytes: dict[tuple[int, int], int] = {}
        self.credit_samples: list[tuple[int, int, int, int]] = []
        self.queue_row_sink: Optional[Callable[[int, str, str, int, int], None]] = None
        self.credit_probe: Optional[Callable[[], tuple[int, int, int]]] = None
        self.fleet_credit_budget = 0
        self._tor_sample_sum = 0
        self._tor_sample_count = 0
        self._sampler_handle = None

    # -- message lifecycle ---------------------------------------------------

    def on_created(self, msg_id: int, src: int, dst: int, size: int,
                   incast: bool = False) -> None:
        self.messages[msg_id] = MessageRecord(
            msg_id=msg_id, src=src, dst=dst, size=size, created_ns=self.sim.now,
            ideal_ns=ideal_latency_ns(self.fabric, src, dst, size),
            size_class=size_class(size, self.mss_bytes, self.bdp_bytes), incast=incast)

    def on_payload(self, host: int, new_bytes: int) -> None:
        if self.sim.now >= self.warmup_ns:
            self.payload_bytes[host] = self.payload_bytes.get(host, 0) + new_bytes

    def on_complete(self, src: int, dst: int, msg_id: int, now: int) -> None:
        rec = self.messages.get(msg_id)
        if rec is None:
            raise InvariantViolation(f"completion for unregistered message {msg_id}")
        if rec.completed_ns is not None:
            raise InvariantViolation(f"message {msg_id} completed twice")
        rec.completed_ns = now
        measured = now - rec.created_ns
        if measured < rec.ideal_ns:
            raise InvariantViolation(
                f"message {msg_id} finished in {measured} ns, below its {rec.ideal_ns} ns floor")
        self.completed.append(rec)
        win = now // self.goodput_window_ns
        key = (dst, win)
        self.window_bytes[key] = self.window_bytes.get(key, 0) + rec.size

    # -- sampling --------------------------------------------------------------

    def start_sampler(self, until_ns: int) -> None:
        def tick() -> None:
            self._sample()
            if self.sim.now + self.sample_interval_ns <= until_ns:
                self.sim.schedule_in(self.sample_interval_ns, tick)

        self.sim.schedule_in(self.sample_interval_ns, tick)

    def _sample(self) -> None:
        now = self.sim.now
        post_warmup = now >= self.warmup_ns
        for switch, port, queue in self.fabric.switch_ports():
            if self.queue_row_sink is not None:
                for lane, nbytes in enumerate(queue.lane_bytes):
                    self.queue_row_sink(now, switch, port, lane, nbytes)
            if post_warmup and switch.startswith("tor"):
                self._tor_sample_sum += queue.total_bytes
                self._tor_sample_count += 1
        if self.credit_probe is not None:
            at_receivers, in_flight, at_senders = self.credit_probe()
            if at_receivers + in_flight + at_senders != self.fleet_credit_budget:
                raise InvariantViolation("credit location snapshot does not cover the budget")
            self.credit_samples.append((now, at_receivers, in_flight, at_senders))

    # -- aggregates ---------------------------------------------------------------

    def mean_tor_queue_bytes(self) -> float:
        if self._tor_sample_count == 0:
            return 0.0
        return self._tor_sample_sum / self._tor_sample_count

    def host_goodput_gbps(self, host: int, duration_ns: int) -> float:
        if duration_ns <= 0:
            return 0.0
        return self.payload_bytes.get(host, 0) * 8 / duration_ns

    def fleet_goodput_gbps(self, num_hosts: int, end_ns: int) -> float:
        """Mean per-host delivered payload rate between warmup and end, in Gbit/s."""
        span = end_ns - self.warmup_ns
        if span <= 0 or num_hosts == 0:
            return 0.0
        total = sum(rec.size for rec in self.completed if rec.completed_ns >= self.warmup_ns)
        return total * 8 / span / num_hosts

    def slowdowns(self, cls: Optional[str] = None) -> list[float]:
        out = []
        for rec in self.completed:
            if rec.incast or rec.created_ns < self.warmup_ns:
                continue
            if cls is not None and rec.size_class != cls:
                continue
            out.append(rec.slowdown)
        return out

    def summary(self, num_hosts: int, end_ns: int) -> dict[str, float]:
        row: dict[str, float] = {
            "max_goodput_gbps": self.fleet_goodput_gbps(num_hosts, end_ns),
            "mean_tor_queue_bytes": self.mean_tor_queue_bytes(),
            "max_tor_queue_bytes": float(self.fabric.max_tor_queue_bytes()),
            "p50_slowdown": percentile(self.slowdowns(), 0.50),
            "p99_slowdown": percentile(self.slowdowns(), 0.99),
        }
        for cls in "ABCD":
            vals = self.slowdowns(cls)
            row[f"p50_slowdown_{cls}"] = percentile(vals, 0.50)
            row[f"p99_slowdown_{cls}"] = percentile(vals, 0.99)
        return row
