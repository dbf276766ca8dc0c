"""Leaf-spine fabric model: store-and-forward links, output queues, ECN, spraying.

Geometry is a two-tier Clos: hosts attach to top-of-rack switches, every ToR
connects to every spine. Packets from different racks are sprayed uniformly
across spines per packet. Switch output ports have unbounded FIFO queues with
up to two strict-priority lanes; queue depth is measured in wire bytes
(payload + fixed header). ECN CE is applied to DATA packets at enqueue time
when the pre-insertion queue depth meets the threshold.

Propagation delays are solved at build time so that the unloaded round trip of
one full-size packet plus a header-only reply hits the configured intra-rack
and inter-rack targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .engine import InvariantViolation, SimulationError, Simulator


class PacketKind(Enum):
    DATA = "data"
    CREDIT = "credit"
    RESEND = "resend"


# Byte ranges are half-open (start, end) tuples.
Range = tuple[int, int]


@dataclass(slots=True)
class Packet:
    """One simulated packet. length is payload bytes; the wire adds a fixed header."""

    kind: PacketKind
    src: int
    dst: int
    msg_id: int = -1
    offset: int = 0
    length: int = 0
    carries_credit: int = 0
    csn: bool = False
    ecn_ce: bool = False
    unscheduled: bool = False
    msg_size: int = 0
    # CREDIT only: scheduled ranges the sender must retransmit with this grant.
    resend_sched: tuple[Range, ...] = ()
    # RESEND only: unscheduled ranges to re-queue.
    resend_unsched: tuple[Range, ...] = ()
    lane: int = 0

    def wire_bytes(self, header_bytes: int) -> int:
        return self.length + header_bytes


def serialization_ns(wire_bytes: int, gbps: int) -> int:
    """Time to put wire_bytes on a link of the given rate, in whole nanoseconds.

    A rate of g Gbit/s is exactly g bits per nanosecond, so this is exact for
    the common cases and rounds up otherwise.
    """
    bits = wire_bytes * 8
    return -(-bits // gbps)


@dataclass
class TopologySpec:
    """Shape and speeds of the fabric plus packet framing constants."""

    hosts_per_tor: int = 16
    num_tors: int = 9
    num_spines: int = 4
    host_link_gbps: int = 100
    spine_link_gbps: int = 400
    # One-way propagation delays; None means "solve from the RTT targets".
    host_link_prop_ns: Optional[int] = None
    tor_spine_prop_ns: Optional[int] = None
    mss_bytes: int = 9000
    header_bytes: int = 100
    rtt_intra_ns: int = 5500
    rtt_inter_ns: int = 7500

    @property
    def num_hosts(self) -> int:
        return self.hosts_per_tor * self.num_tors

    def validate(self) -> None:
        if self.hosts_per_tor < 1 or self.num_tors < 1:
            raise SimulationError("topology needs at least one ToR with one host")
        if self.num_tors > 1 and self.num_spines < 1:
            raise SimulationError("multi-rack topology needs at least one spine")
        if self.host_link_gbps < 1 or (self.num_spines > 0 and self.spine_link_gbps < 1):
            raise SimulationError("link rates must be positive")
        if self.mss_bytes < 1 or self.header_bytes < 0:
            raise SimulationError("bad framing constants")


class PortQueue:
    """Unbounded output queue with strict-priority lanes (lane 0 drains first)."""

    __slots__ = ("lanes", "lane_bytes", "total_bytes", "sched_payload_bytes",
                 "peak_bytes", "sched_peak_bytes")

    def __init__(self, num_lanes: int):
        self.lanes: list[list[Packet]] = [[] for _ in range(num_lanes)]
        self.lane_bytes = [0] * num_lanes
        self.total_bytes = 0
        self.sched_payload_bytes = 0
        self.peak_bytes = 0
        self.sched_peak_bytes = 0

    def push(self, pkt: Packet, wire: int) -> None:
        lane = pkt.lane if pkt.lane < len(self.lanes) else len(self.lanes) - 1
        self.lanes[lane].append(pkt)
        self.lane_bytes[lane] += wire
        self.total_bytes += wire
        if pkt.kind is PacketKind.DATA and pkt.carries_credit > 0:
            self.sched_payload_bytes += pkt.length
            if self.sched_payload_bytes > self.sched_peak_bytes:
                self.sched_peak_bytes = self.sched_payload_bytes
        if self.total_bytes > self.peak_bytes:
            self.peak_bytes = self.total_bytes

    def pop(self, header_bytes: int) -> Optional[Packet]:
        for lane, q in enumerate(self.lanes):
            if q:
                pkt = q.pop(0)
                wire = pkt.wire_bytes(header_bytes)
                self.lane_bytes[lane] -= wire
                self.total_bytes -= wire
                if pkt.kind is PacketKind.DATA and pkt.carries_credit > 0:
                    self.sched_payload_bytes -= pkt.length
                return pkt
        return None

    def __len__(self) -> int:
        return sum(len(q) for q in self.lanes)


@dataclass
class Link:
    """Simplex link from src node to dst node with an output queue at src."""

    src: int
    dst: int
    gbps: int
    prop_ns: int
    queue: PortQueue
    busy: bool = False
    is_switch_port: bool = False
    tor_owner: int = -1  # ToR node id when this port belongs to a ToR, else -1
    dst_host: int = -1  # receiving host id for ToR downlinks, else -1


class Fabric:
    """Builds the topology and moves packets hop by hop under the event engine."""

    def __init__(self, sim: Simulator, spec: TopologySpec, priority_lanes: int = 2,
                 ecn_threshold_bytes: int = 125_000):
        spec.validate()
        if priority_lanes not in (1, 2):
            raise SimulationError("priority_lanes must be 1 or 2")
        self.sim = sim
        self.spec = spec
        self.priority_lanes = priority_lanes
        self.ecn_threshold_bytes = ecn_threshold_bytes

        self.deliver: Callable[[Packet], None] = lambda pkt: None
        self.on_host_data_sent: Callable[[int, Packet], None] = lambda h, p: None
        # Test hook: return True to drop the offered packet. Disarmed after one drop.
        self.drop_hook: Optional[Callable[[Packet], bool]] = None
        # Bound check for scheduled bytes sitting in a receiver's ToR downlink.
        self.sched_queue_check: Optional[Callable[[int, int], None]] = None

        self._calibrate()
        self._build()

        self.injected = 0
        self.delivered = 0
        self.dropped = 0
        self._propagating = 0
        # Exact per-ToR totals (all that switch's output ports), tracked per event.
        self._tor_cur: dict[int, int] = {self.first_tor + t: 0 for t in range(spec.num_tors)}
        self._tor_peak: dict[int, int] = dict(self._tor_cur)

    # -- construction ------------------------------------------------------

    def _calibrate(self) -> None:
        spec = self.spec
        mss_wire = spec.mss_bytes + spec.header_bytes
        ser_mss_h = serialization_ns(mss_wire, spec.host_link_gbps)
        ser_hdr_h = serialization_ns(spec.header_bytes, spec.host_link_gbps)
        if spec.host_link_prop_ns is None:
            budget = spec.rtt_intra_ns - 2 * (ser_mss_h + ser_hdr_h)
            if budget < 0:
                raise SimulationError("intra-rack RTT target below serialization floor")
            spec.host_link_prop_ns = round(budget / 4)
        self.rtt_intra_achieved = 2 * (ser_mss_h + ser_hdr_h) + 4 * spec.host_link_prop_ns

        if spec.num_spines > 0:
            ser_mss_s = serialization_ns(mss_wire, spec.spine_link_gbps)
            ser_hdr_s = serialization_ns(spec.header_bytes, spec.spine_link_gbps)
            if spec.tor_spine_prop_ns is None:
                budget = (spec.rtt_inter_ns - 2 * (ser_mss_h + ser_hdr_h)
                          - 2 * (ser_mss_s + ser_hdr_s) - 4 * spec.host_link_prop_ns)
                if budget < 0:
                    raise SimulationError("inter-rack RTT target below serialization floor")
                spec.tor_spine_prop_ns = round(budget / 4)
            self.rtt_inter_achieved = (2 * (ser_mss_h + ser_hdr_h)
                                       + 2 * (ser_mss_s + ser_hdr_s)
                                       + 4 * spec.host_link_prop_ns
                                       + 4 * spec.tor_spine_prop_ns)
        else:
            self.rtt_inter_achieved = 0

    def _build(self) -> None:
        spec = self.spec
        h = spec.num_hosts
        self.first_tor = h
        self.first_spine = h + spec.num_tors
        self.num_nodes = h + spec.num_tors + spec.num_spines

        self.links: dict[tuple[int, int], Link] = {}

        def add(src: int, dst: int, gbps: int, prop: int) -> Link:
            link = Link(src=src, dst=dst, gbps=gbps, prop_ns=prop,
                        queue=PortQueue(self.priority_lanes))
            self.links[(src, dst)] = link
            return link

        for host in range(h):
            tor = self.tor_of(host)
            add(host, tor, spec.host_link_gbps, spec.host_link_prop_ns)
            down = add(tor, host, spec.host_link_gbps, spec.host_link_prop_ns)
            down.is_switch_port = True
            down.tor_owner = tor
            down.dst_host = host
        for t in range(spec.num_tors):
            tor = self.first_tor + t
            for s in range(spec.num_spines):
                spine = self.first_spine + s
                up = add(tor, spine, spec.spine_link_gbps, spec.tor_spine_prop_ns or 0)
                up.is_switch_port = True
                up.tor_owner = tor
                dn = add(spine, tor, spec.spine_link_gbps, spec.tor_spine_prop_ns or 0)
                dn.is_switch_port = True

    # -- id helpers --------------------------------------------------------

    def tor_of(self, host: int) -> int:
        return self.first_tor + host // self.spec.hosts_per_tor

    def is_host(self, node: int) -> bool:
        return node < self.first_tor

    def is_tor(self, node: int) -> bool:
        return self.first_tor <= node < self.first_spine

    def node_label(self, node: int) -> str:
        if node < self.first_tor:
            return f"host{node}"
        if node < self.first_spine:
            return f"tor{node - self.first_tor}"
        return f"spine{node - self.first_spine}"

    # -- routing -----------------------------------------------------------

    def next_hop(self, at_node: int, pkt: Packet) -> int:
        """Next node id for pkt sitting at at_node."""
        if self.is_host(at_node):
            return self.tor_of(at_node)
        if self.is_tor(at_node):
            dst_tor = self.tor_of(pkt.dst)
            if dst_tor == at_node:
                return pkt.dst
            # Per-packet spraying over the equal-cost uplinks.
            s = self.sim.rng.stream("routing").randrange(self.spec.num_spines)
            return self.first_spine + s
        return self.tor_of(pkt.dst)

    def route(self, src: int, dst: int, spine: int = 0) -> list[Link]:
        """Canonical unloaded path src -> dst (fixed spine choice for analysis)."""
        src_tor, dst_tor = self.tor_of(src), self.tor_of(dst)
        if src_tor == dst_tor:
            return [self.links[(src, src_tor)], self.links[(src_tor, dst)]]
        spine_node = self.first_spine + spine
        return [self.links[(src, src_tor)], self.links[(src_tor, spine_node)],
                self.links[(spine_node, dst_tor)], self.links[(dst_tor, dst)]]

    # -- data plane --------------------------------------------------------

    def send(self, pkt: Packet) -> None:
        """Inject a packet at its source host's uplink."""
        self.injected += 1
        self._enqueue(self.links[(pkt.src, self.tor_of(pkt.src))], pkt)

    def _enqueue(self, link: Link, pkt: Packet) -> None:
        wire = pkt.wire_bytes(self.spec.header_bytes)
        if link.is_switch_port:
            if (pkt.kind is PacketKind.DATA
                    and link.queue.total_bytes >= self.ecn_threshold_bytes):
                pkt.ecn_ce = True
        link.queue.push(pkt, wire)
        if link.tor_owner >= 0:
            cur = self._tor_cur[link.tor_owner] + wire
            self._tor_cur[link.tor_owner] = cur
            if cur > self._tor_peak[link.tor_owner]:
                self._tor_peak[link.tor_owner] = cur
        if link.dst_host >= 0 and self.sched_queue_check is not None:
            self.sched_queue_check(link.dst_host, link.queue.sched_payload_bytes)
        self._maybe_start(link)

    def _maybe_start(self, link: Link) -> None:
        if link.busy:
            return
        pkt = link.queue.pop(self.spec.header_bytes)
        if pkt is None:
            return
        if link.tor_owner >= 0:
            self._tor_cur[link.tor_owner] -= pkt.wire_bytes(self.spec.header_bytes)
        link.busy = True
        ser = serialization_ns(pkt.wire_bytes(self.spec.header_bytes), link.gbps)
        self.sim.schedule_in(ser, lambda: self._tx_done(link, pkt))

    def _tx_done(self, link: Link, pkt: Packet) -> None:
        link.busy = False
        self._propagating += 1
        self.sim.schedule_in(link.prop_ns, lambda: self._arrive(link.dst, pkt))
        if self.is_host(link.src) and pkt.kind is PacketKind.DATA and pkt.src == link.src:
            self.on_host_data_sent(link.src, pkt)
        self._maybe_start(link)

    def _arrive(self, node: int, pkt: Packet) -> None:
        self._propagating -= 1
        if self.is_host(node):
            if node != pkt.dst:
                raise InvariantViolation(f"packet for {pkt.dst} arrived at host {node}")
            self.delivered += 1
            self.deliver(pkt)
            return
        if self.drop_hook is not None and self.drop_hook(pkt):
            self.drop_hook = None
            self.dropped += 1
            return
        self._enqueue(self.links[(node, self.next_hop(node, pkt))], pkt)

    # -- observation -------------------------------------------------------

    def switch_ports(self) -> list[tuple[str, str, PortQueue]]:
        """(switch label, port label, queue) for every switch output port."""
        out = []
        for (src, dst), link in self.links.items():
            if not self.is_host(src):
                out.append((self.node_label(src), self.node_label(dst), link.queue))
        return out

    def tor_queue_totals(self) -> dict[str, int]:
        """Current total queued wire bytes per ToR switch."""
        return {self.node_label(t): cur for t, cur in self._tor_cur.items()}

    def max_tor_queue_bytes(self) -> int:
        return max(self._tor_peak.values(), default=0)

    def reset_peaks(self) -> None:
        for link in self.links.values():
            link.queue.peak_bytes = link.queue.total_bytes
            link.queue.sched_peak_bytes = link.queue.sched_payload_bytes
        for t, cur in self._tor_cur.items():
            self._tor_peak[t] = cur

    def downlink(self, host: int) -> Link:
        """The ToR output port feeding the given host."""
        return self.links[(self.tor_of(host), host)]

    def in_flight(self) -> int:
        """Packets injected but neither delivered nor dropped."""
        return self.injected - self.delivered - self.dropped

    def resident_packets(self) -> int:
        """Packets physically present: queued, serializing, or propagating."""
        queued = sum(len(link.queue) for link in self.links.values())
        serializing = sum(1 for link in self.links.values() if link.busy)
        return queued + serializing + self._propagating
