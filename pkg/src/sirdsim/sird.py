"""Credit-managed transport endpoints.

Receivers own congestion control: they grant credit (paced to their downlink)
against a global allocation bucket and two per-sender adaptive buckets, one
driven by a sender-congestion bit echoed in data packets and one by ECN marks.
Senders spend credit per message, keep the first min(BDP, size) bytes of small
messages unscheduled, and split their uplink between a fair-share rotation and
the configured policy.

All credit quantities are integer bytes; adaptive bucket sizes are floats
clamped to [min_bucket, BDP]. Invariant checks are always on and raise
InvariantViolation, which the CLI maps to a dedicated exit code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .engine import EventHandle, InvariantViolation, SimulationError, Simulator
from .fabric import Fabric, Packet, PacketKind, Range

TracerFn = Callable[[str, int, int, int, int, int, int], None]

_CREDIT_AUDIT_EVERY = 1024


# ---------------------------------------------------------------------------
# byte ranges


class RangeSet:
    """Sorted set of disjoint half-open byte ranges."""

    __slots__ = ("_r",)

    def __init__(self, ranges: Optional[list[Range]] = None):
        self._r: list[list[int]] = []
        if ranges:
            for s, e in ranges:
                self.add(s, e)

    def __bool__(self) -> bool:
        return bool(self._r)

    def total(self) -> int:
        return sum(e - s for s, e in self._r)

    def ranges(self) -> list[Range]:
        return [(s, e) for s, e in self._r]

    def add(self, s: int, e: int) -> int:
        """Insert [s, e); returns the number of bytes newly covered."""
        if e <= s:
            return 0
        out: list[list[int]] = []
        added = e - s
        placed = False
        for rs, re in self._r:
            if re < s or rs > e:
                if rs > e and not placed:
                    out.append([s, e])
                    placed = True
                out.append([rs, re])
            else:
                added -= min(re, e) - max(rs, s)
                s = min(s, rs)
                e = max(e, re)
        if not placed:
            out.append([s, e])
            out.sort()
        self._r = out
        return added

    def subtract(self, s: int, e: int) -> int:
        """Remove [s, e); returns the number of bytes removed."""
        if e <= s:
            return 0
        out: list[list[int]] = []
        removed = 0
        for rs, re in self._r:
            if re <= s or rs >= e:
                out.append([rs, re])
                continue
            removed += min(re, e) - max(rs, s)
            if rs < s:
                out.append([rs, s])
            if re > e:
                out.append([e, re])
        self._r = out
        return removed

    def overlap(self, s: int, e: int) -> int:
        """Bytes of [s, e) currently covered (no mutation)."""
        n = 0
        for rs, re in self._r:
            if re <= s or rs >= e:
                continue
            n += min(re, e) - max(rs, s)
        return n

    def take_first(self, max_bytes: int) -> Range:
        """Remove and return up to max_bytes from the lowest range."""
        rs, re = self._r[0]
        e = min(re, rs + max_bytes)
        if e == re:
            self._r.pop(0)
        else:
            self._r[0][0] = e
        return (rs, e)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ProtocolParams:
    """Transport constants; defaults model 100 Gbit/s hosts with jumbo frames."""

    bdp_bytes: int = 100_000
    global_bucket_bytes: int = 150_000
    sender_threshold_bytes: float = 50_000.0  # math.inf disables the sender loop
    net_threshold_bytes: int = 125_000
    unsched_threshold_bytes: int = 100_000
    aimd_gain: float = 0.08
    min_bucket_bytes: int = 9_000
    mss_bytes: int = 9_000
    pacer_rate_fraction: float = 0.98
    sender_fair_share_fraction: float = 0.5
    loss_timeout_ns: int = 1_000_000
    receiver_policy: str = "srpt"
    sender_policy: str = "srpt"

    def validate(self) -> None:
        if self.bdp_bytes < 1:
            raise SimulationError("bdp_bytes must be positive")
        if self.global_bucket_bytes < self.bdp_bytes:
            raise SimulationError("global_bucket_bytes must be at least bdp_bytes")
        if not (self.sender_threshold_bytes > 0):
            raise SimulationError("sender_threshold_bytes must be positive or inf")
        if self.net_threshold_bytes < 1:
            raise SimulationError("net_threshold_bytes must be positive")
        if self.unsched_threshold_bytes < 0:
            raise SimulationError("unsched_threshold_bytes must be non-negative")
        if not (0 < self.aimd_gain <= 1):
            raise SimulationError("aimd_gain must be in (0, 1]")
        if not (0 < self.min_bucket_bytes <= self.bdp_bytes):
            raise SimulationError("min_bucket_bytes must be in (0, bdp_bytes]")
        if self.mss_bytes < 1:
            raise SimulationError("mss_bytes must be positive")
        if not (0 < self.pacer_rate_fraction <= 1):
            raise SimulationError("pacer_rate_fraction must be in (0, 1]")
        if not (0 <= self.sender_fair_share_fraction <= 1):
            raise SimulationError("sender_fair_share_fraction must be in [0, 1]")
        if self.loss_timeout_ns < 1:
            raise SimulationError("loss_timeout_ns must be positive")
        for name in (self.receiver_policy, self.sender_policy):
            if name not in ("srpt", "rr"):
                raise SimulationError(f"unknown policy {name!r}")

    def unsched_prefix(self, size: int) -> int:
        """Bytes of a message that ship without credit."""
        if size <= self.unsched_threshold_bytes:
            return min(self.bdp_bytes, size)
        return 0


def min_global_bucket(sender_threshold_bytes: float, bdp_bytes: int) -> float:
    """Smallest global allocation that keeps any congested fan-in fully fed.

    The per-receiver share parked at one congested sender stays below the
    sender threshold regardless of fan-out, so one threshold of headroom over
    the pipe's worth of credit always suffices.
    """
    return bdp_bytes + sender_threshold_bytes


# ---------------------------------------------------------------------------
# adaptive buckets


@dataclass
class AimdState:
    """One DCTCP-style loop: EWMA of marked feedback drives the bucket size."""

    bucket: float
    alpha: float = 0.0
    window_acc: int = 0
    marked_acc: int = 0
    epoch_target: float = 0.0

    def __post_init__(self) -> None:
        if self.epoch_target <= 0:
            self.epoch_target = self.bucket


def aimd_update(state: AimdState, feedback_bytes: int, marked: bool, epoch_bytes: float,
                *, gain: float, mss_bytes: int, min_bucket: float, max_bucket: float) -> bool:
    """Account one feedback sample; close the epoch once it has seen epoch_bytes.

    On epoch close the marked fraction feeds the EWMA, a marked epoch decays
    the bucket multiplicatively by alpha/2, a clean epoch grows it by one MSS,
    and the result clamps to [min_bucket, max_bucket]. Returns True when the
    epoch closed.
    """
    if feedback_bytes <= 0:
        raise SimulationError("feedback_bytes must be positive")
    state.window_acc += feedback_bytes
    if marked:
        state.marked_acc += feedback_bytes
    if state.window_acc < epoch_bytes:
        return False
    frac = state.marked_acc / state.window_acc
    state.alpha = (1 - gain) * state.alpha + gain * frac
    if state.marked_acc > 0:
        state.bucket *= 1 - state.alpha / 2
    else:
        state.bucket += mss_bytes
    state.bucket = min(max(state.bucket, min_bucket), max_bucket)
    if not (min_bucket <= state.bucket <= max_bucket):
        raise InvariantViolation("bucket escaped its clamp range")
    state.window_acc = 0
    state.marked_acc = 0
    state.epoch_target = state.bucket
    return True


# ---------------------------------------------------------------------------
# policies


def rotation_pick(ids: list[int], cursor: int) -> int:
    """Next id after cursor in cyclic sorted order (round robin)."""
    ids = sorted(ids)
    for i in ids:
        if i > cursor:
            return i
    return ids[0]


# ---------------------------------------------------------------------------
# sender side


@dataclass
class OutMessage:
    msg_id: int
    dst: int
    size: int
    prefix: int
    unsched_pending: RangeSet = field(default_factory=RangeSet)
    sched_frontier: int = 0
    sched_resend: RangeSet = field(default_factory=RangeSet)
    credit: int = 0

    def remaining_to_send(self) -> int:
        return (self.unsched_pending.total() + self.sched_resend.total()
                + (self.size - self.sched_frontier))

    def sendable(self) -> bool:
        if self.unsched_pending:
            return True
        return self.credit > 0 and (bool(self.sched_resend) or self.sched_frontier < self.size)


class _Outbound:
    """Sender-side state toward one receiver."""

    __slots__ = ("msgs", "active", "credit_total")

    def __init__(self) -> None:
        self.msgs: dict[int, OutMessage] = {}
        self.active: dict[int, OutMessage] = {}
        self.credit_total = 0


class SenderHalf:
    def __init__(self, host_id: int, sim: Simulator, fabric: Fabric,
                 params: ProtocolParams, trace: Optional[TracerFn] = None):
        self.host_id = host_id
        self.sim = sim
        self.fabric = fabric
        self.params = params
        self.trace = trace
        self.out: dict[int, _Outbound] = {}
        self.active_dsts: dict[int, _Outbound] = {}
        self.credit_total = 0
        self._outstanding: Optional[Packet] = None
        self._fair_debt = 0.0
        self._fair_cursor = -1
        self._rr_cursor = -1
        self._audit_countdown = _CREDIT_AUDIT_EVERY

    # -- entry points --------------------------------------------------

    def start_message(self, msg_id: int, dst: int, size: int) -> None:
        p = self.params
        prefix = p.unsched_prefix(size)
        om = OutMessage(msg_id=msg_id, dst=dst, size=size, prefix=prefix,
                        sched_frontier=prefix)
        if prefix > 0:
            om.unsched_pending.add(0, prefix)
        ob = self.out.setdefault(dst, _Outbound())
        ob.msgs[msg_id] = om
        self._sync_active(dst, ob, om)
        if prefix == 0:
            # Fully scheduled message: announce demand with a zero-length packet.
            req = Packet(kind=PacketKind.DATA, src=self.host_id, dst=dst, msg_id=msg_id,
                         msg_size=size, unscheduled=True, lane=0,
                         csn=self.credit_total >= p.sender_threshold_bytes)
            self.fabric.send(req)
        self._pump()

    def on_credit(self, pkt: Packet) -> None:
        ob = self.out.get(pkt.src)
        om = ob.msgs.get(pkt.msg_id) if ob else None
        if om is None:
            raise InvariantViolation(f"credit for unknown message {pkt.msg_id}")
        om.credit += pkt.carries_credit
        for s, e in pkt.resend_sched:
            om.sched_resend.add(s, e)
        ob.credit_total += pkt.carries_credit
        self.credit_total += pkt.carries_credit
        self._sync_active(pkt.src, ob, om)
        self._audit_countdown -= 1
        if self._audit_countdown <= 0:
            self._audit_credit()
        self._pump()

    def on_resend(self, pkt: Packet) -> None:
        ob = self.out.get(pkt.src)
        om = ob.msgs.get(pkt.msg_id) if ob else None
        if om is None:
            raise InvariantViolation(f"resend request for unknown message {pkt.msg_id}")
        for s, e in pkt.resend_unsched:
            om.unsched_pending.add(s, e)
        self._sync_active(pkt.src, ob, om)
        self._pump()

    def on_data_sent(self, pkt: Packet) -> None:
        if pkt is self._outstanding:
            self._outstanding = None
            self._pump()

    # -- internals -------------------------------------------------------

    def _sync_active(self, dst: int, ob: _Outbound, om: OutMessage) -> None:
        if om.sendable():
            ob.active[om.msg_id] = om
        else:
            ob.active.pop(om.msg_id, None)
        if ob.active:
            self.active_dsts[dst] = ob
        else:
            self.active_dsts.pop(dst, None)

    def _audit_credit(self) -> None:
        self._audit_countdown = _CREDIT_AUDIT_EVERY
        total = sum(ob.credit_total for ob in self.out.values())
        per_msg = sum(om.credit for ob in self.out.values() for om in ob.msgs.values())
        if not (total == per_msg == self.credit_total):
            raise InvariantViolation("sender credit ledger out of sync")

    def _pick_message(self, ob: _Outbound) -> OutMessage:
        if self.params.sender_policy == "srpt":
            return min(ob.active.values(), key=lambda m: (m.remaining_to_send(), m.msg_id))
        return ob.msgs[min(ob.active)]

    def _pick_receiver(self) -> _Outbound:
        dsts = list(self.active_dsts)
        if len(dsts) == 1:
            return self.active_dsts[dsts[0]]
        self._fair_debt += self.params.sender_fair_share_fraction
        if self._fair_debt >= 1.0:
            self._fair_debt -= 1.0
            dst = rotation_pick(dsts, self._fair_cursor)
            self._fair_cursor = dst
            return self.active_dsts[dst]
        if self.params.sender_policy == "srpt":
            best_dst = min(dsts, key=lambda d: (
                min((m.remaining_to_send(), m.msg_id)
                    for m in self.active_dsts[d].active.values()),
                d))
            return self.active_dsts[best_dst]
        dst = rotation_pick(dsts, self._rr_cursor)
        self._rr_cursor = dst
        return self.active_dsts[dst]

    def _pump(self) -> None:
        """Emit the next data packet if the uplink slot is free."""
        if self._outstanding is not None or not self.active_dsts:
            return
        p = self.params
        ob = self._pick_receiver()
        om = self._pick_message(ob)
        congested = self.credit_total >= p.sender_threshold_bytes
        if om.unsched_pending:
            s, e = om.unsched_pending.take_first(p.mss_bytes)
            pkt = Packet(kind=PacketKind.DATA, src=self.host_id, dst=om.dst,
                         msg_id=om.msg_id, offset=s, length=e - s, msg_size=om.size,
                         unscheduled=True, lane=0, csn=congested)
        else:
            limit = min(p.mss_bytes, om.credit)
            if om.sched_resend:
                s, e = om.sched_resend.take_first(limit)
            else:
                s = om.sched_frontier
                e = s + min(limit, om.size - s)
                om.sched_frontier = e
            n = e - s
            om.credit -= n
            ob.credit_total -= n
            self.credit_total -= n
            if self.credit_total < 0:
                raise InvariantViolation("sender spent more credit than granted")
            pkt = Packet(kind=PacketKind.DATA, src=self.host_id, dst=om.dst,
                         msg_id=om.msg_id, offset=s, length=n, msg_size=om.size,
                         carries_credit=n, lane=1, csn=congested)
        self._sync_active(om.dst, ob, om)
        self._outstanding = pkt
        self.fabric.send(pkt)


# ---------------------------------------------------------------------------
# receiver side


@dataclass
class InMessage:
    src: int
    msg_id: int
    size: int
    prefix: int
    received: RangeSet = field(default_factory=RangeSet)
    outstanding_unsched: RangeSet = field(default_factory=RangeSet)
    outstanding_sched: RangeSet = field(default_factory=RangeSet)
    resend_pending: RangeSet = field(default_factory=RangeSet)
    granted_frontier: int = 0
    last_progress: int = 0
    timer: Optional[EventHandle] = None
    completed: bool = False

    def ungranted(self) -> int:
        return (self.size - self.granted_frontier) + self.resend_pending.total()

    def remaining(self) -> int:
        return self.size - self.received.total()


class _SenderEntry:
    """Receiver-side view of one sender with scheduled demand."""

    __slots__ = ("sb", "rem", "sender_aimd", "net_aimd", "pending")

    def __init__(self, bdp: float):
        self.sb = 0
        self.rem = 0
        self.sender_aimd = AimdState(bucket=bdp)
        self.net_aimd = AimdState(bucket=bdp)
        self.pending: dict[int, InMessage] = {}


class ReceiverHalf:
    def __init__(self, host_id: int, sim: Simulator, fabric: Fabric,
                 params: ProtocolParams, metrics=None, trace: Optional[TracerFn] = None):
        self.host_id = host_id
        self.sim = sim
        self.fabric = fabric
        self.params = params
        self.metrics = metrics
        self.trace = trace
        self.consumed = 0  # outstanding granted credit, bounded by the global bucket
        self._sb_sum = 0
        self.senders: dict[int, _SenderEntry] = {}
        self.msgs: dict[tuple[int, int], InMessage] = {}
        self.total_rem = 0
        self.reclaims = 0
        self.reclaimed_bytes = 0
        self._pacer_active = False
        self._rr_cursor = -1
        downlink = fabric.spec.host_link_gbps
        self.pacer_interval_ns = max(1, round(
            params.mss_bytes * 8 / (params.pacer_rate_fraction * downlink)))

    # -- demand registration ----------------------------------------------

    def _register(self, pkt: Packet) -> InMessage:
        p = self.params
        prefix = p.unsched_prefix(pkt.msg_size)
        m = InMessage(src=pkt.src, msg_id=pkt.msg_id, size=pkt.msg_size, prefix=prefix,
                      granted_frontier=prefix, last_progress=self.sim.now)
        if prefix > 0:
            m.outstanding_unsched.add(0, prefix)
        self.msgs[(pkt.src, pkt.msg_id)] = m
        remainder = pkt.msg_size - prefix
        if remainder > 0:
            e = self.senders.get(pkt.src)
            if e is None:
                e = self.senders[pkt.src] = _SenderEntry(float(p.bdp_bytes))
            e.rem += remainder
            e.pending[m.msg_id] = m
            self.total_rem += remainder
            self._ensure_pacer()
        self._arm_timer(m)
        return m

    def _ensure_pacer(self) -> None:
        if not self._pacer_active and self.total_rem > 0:
            self._pacer_active = True
            self.sim.schedule(self.sim.now, self._tick)

    def _tick(self) -> None:
        if self.total_rem <= 0:
            self._pacer_active = False
            return
        self._try_grant()
        self.sim.schedule_in(self.pacer_interval_ns, self._tick)

    # -- granting -----------------------------------------------------------

    def _eligible(self) -> list[tuple[int, _SenderEntry]]:
        p = self.params
        mss = p.mss_bytes
        out = []
        for src, e in self.senders.items():
            if e.rem <= 0:
                continue
            g = min(e.rem, mss)
            if self.consumed + g > p.global_bucket_bytes:
                continue
            if e.sb + g > min(e.sender_aimd.bucket, e.net_aimd.bucket):
                continue
            out.append((src, e))
        return out

    def _try_grant(self) -> bool:
        eligible = self._eligible()
        if not eligible:
            return False
        if self.params.receiver_policy == "srpt":
            best = None
            for src, e in eligible:
                m = min(e.pending.values(), key=lambda mm: (mm.remaining(), mm.msg_id))
                key = (m.remaining(), m.msg_id)
                if best is None or key < best[0]:
                    best = (key, src, e, m)
            _, src, e, m = best
        else:
            src = rotation_pick([s for s, _ in eligible], self._rr_cursor)
            self._rr_cursor = src
            e = self.senders[src]
            m = e.pending[min(e.pending)]
        self._grant(src, e, m)
        return True

    def _grant(self, src: int, e: _SenderEntry, m: InMessage) -> None:
        p = self.params
        g = min(p.mss_bytes, m.ungranted())
        if g <= 0 or self.consumed + g > p.global_bucket_bytes:
            raise InvariantViolation("grant gate recheck failed")
        resend: list[Range] = []
        left = g
        while left > 0 and m.resend_pending:
            s_, e_ = m.resend_pending.take_first(left)
            resend.append((s_, e_))
            m.outstanding_sched.add(s_, e_)
            left -= e_ - s_
        if left > 0:
            m.outstanding_sched.add(m.granted_frontier, m.granted_frontier + left)
            m.granted_frontier += left
        self.consumed += g
        self._sb_sum += g
        e.sb += g
        e.rem -= g
        self.total_rem -= g
        if e.rem < 0 or self.consumed > p.global_bucket_bytes:
            raise InvariantViolation("credit books corrupted by grant")
        if self.consumed != self._sb_sum:
            raise InvariantViolation("global consumed credit diverged from per-sender sum")
        if m.ungranted() == 0:
            e.pending.pop(m.msg_id, None)
        pkt = Packet(kind=PacketKind.CREDIT, src=self.host_id, dst=src, msg_id=m.msg_id,
                     carries_credit=g, resend_sched=tuple(resend), lane=0)
        if m.timer is None:
            self._arm_timer(m)
        if self.trace:
            self.trace("grant", self.host_id, src, m.msg_id, g, self.consumed, e.sb)
        self.fabric.send(pkt)

    # -- arrivals ------------------------------------------------------------

    def on_data(self, pkt: Packet) -> None:
        m = self.msgs.get((pkt.src, pkt.msg_id))
        if m is None:
            m = self._register(pkt)
        e = self.senders.get(pkt.src)
        event = "request"
        if pkt.length > 0:
            s, end = pkt.offset, pkt.offset + pkt.length
            returned = 0
            if m.outstanding_sched:
                returned = m.outstanding_sched.subtract(s, end)
            if returned > 0:
                if e is None:
                    raise InvariantViolation("scheduled data from sender without entry")
                self.consumed -= returned
                self._sb_sum -= returned
                e.sb -= returned
                if self.consumed < 0 or e.sb < 0:
                    raise InvariantViolation("credit return drove books negative")
                if self.consumed != self._sb_sum:
                    raise InvariantViolation("global consumed credit diverged from per-sender sum")
            if e is not None:
                p = self.params
                aimd_update(e.sender_aimd, pkt.length, pkt.csn, e.sender_aimd.epoch_target,
                            gain=p.aimd_gain, mss_bytes=p.mss_bytes,
                            min_bucket=p.min_bucket_bytes, max_bucket=p.bdp_bytes)
                aimd_update(e.net_aimd, pkt.length, pkt.ecn_ce, e.net_aimd.epoch_target,
                            gain=p.aimd_gain, mss_bytes=p.mss_bytes,
                            min_bucket=p.min_bucket_bytes, max_bucket=p.bdp_bytes)
            if m.outstanding_unsched:
                m.outstanding_unsched.subtract(s, end)
            new_bytes = m.received.add(s, end)
            if new_bytes > 0:
                m.last_progress = self.sim.now
                if self.metrics is not None:
                    self.metrics.on_payload(self.host_id, new_bytes)
            event = "unsched" if pkt.unscheduled else "data"
            if not m.completed and m.received.total() >= m.size:
                self._complete(m)
        if self.trace:
            sb = e.sb if e is not None else 0
            self.trace(event, pkt.src, self.host_id, pkt.msg_id, pkt.length,
                       self.consumed, sb)

    def _complete(self, m: InMessage) -> None:
        m.completed = True
        if m.timer is not None:
            m.timer.cancel()
            m.timer = None
        e = self.senders.get(m.src)
        if e is not None and m.msg_id in e.pending:
            leftover = m.ungranted()
            if leftover > 0:
                e.rem -= leftover
                self.total_rem -= leftover
            m.resend_pending = RangeSet()
            m.granted_frontier = m.size
            e.pending.pop(m.msg_id, None)
        if self.trace:
            sb = e.sb if e is not None else 0
            self.trace("complete", m.src, self.host_id, m.msg_id, m.size,
                       self.consumed, sb)
        if self.metrics is not None:
            self.metrics.on_complete(m.src, self.host_id, m.msg_id, self.sim.now)

    # -- loss ------------------------------------------------------------------

    def _arm_timer(self, m: InMessage) -> None:
        if m.completed or (not m.outstanding_sched and not m.outstanding_unsched):
            return
        deadline = max(m.last_progress + self.params.loss_timeout_ns, self.sim.now)
        m.timer = self.sim.schedule(deadline, lambda: self._timer_fired(m))

    def _timer_fired(self, m: InMessage) -> None:
        m.timer = None
        if m.completed:
            return
        deadline = m.last_progress + self.params.loss_timeout_ns
        if self.sim.now < deadline:
            self._arm_timer(m)
            return
        self._reclaim(m)
        m.last_progress = self.sim.now
        self._arm_timer(m)

    def _reclaim(self, m: InMessage) -> None:
        """Re-request every expected-but-missing byte range; take back its credit."""
        missing_sched = m.outstanding_sched.ranges()
        missing_unsched = m.outstanding_unsched.ranges()
        if missing_sched:
            e = self.senders[m.src]
            lost = 0
            for s, end in missing_sched:
                lost += end - s
                m.outstanding_sched.subtract(s, end)
                m.resend_pending.add(s, end)
            self.consumed -= lost
            self._sb_sum -= lost
            e.sb -= lost
            e.rem += lost
            self.total_rem += lost
            e.pending[m.msg_id] = m
            if self.consumed < 0 or e.sb < 0:
                raise InvariantViolation("reclaim drove credit books negative")
            self.reclaims += 1
            self.reclaimed_bytes += lost
            if self.trace:
                self.trace("reclaim", m.src, self.host_id, m.msg_id, lost,
                           self.consumed, e.sb)
            self._ensure_pacer()
        if missing_unsched:
            pkt = Packet(kind=PacketKind.RESEND, src=self.host_id, dst=m.src,
                         msg_id=m.msg_id, resend_unsched=tuple(missing_unsched), lane=0)
            if self.trace:
                e = self.senders.get(m.src)
                self.trace("rerequest", m.src, self.host_id, m.msg_id,
                           sum(e2 - s2 for s2, e2 in missing_unsched),
                           self.consumed, e.sb if e else 0)
            self.fabric.send(pkt)

    # -- audits -------------------------------------------------------------

    def audit(self) -> None:
        """Full cross-check of the credit books; cheap enough for run end."""
        sb = sum(e.sb for e in self.senders.values())
        if sb != self.consumed:
            raise InvariantViolation("audit: consumed != sum of per-sender consumed")
        if not (0 <= self.consumed <= self.params.global_bucket_bytes):
            raise InvariantViolation("audit: consumed outside [0, global bucket]")
        rem = sum(e.rem for e in self.senders.values())
        if rem != self.total_rem:
            raise InvariantViolation("audit: demand sum out of sync")


# ---------------------------------------------------------------------------
# host


class Host:
    """One endpoint: a sender half and a receiver half sharing the uplink."""

    def __init__(self, host_id: int, sim: Simulator, fabric: Fabric,
                 params: ProtocolParams, metrics=None, trace: Optional[TracerFn] = None):
        self.host_id = host_id
        self.sender = SenderHalf(host_id, sim, fabric, params, trace)
        self.receiver = ReceiverHalf(host_id, sim, fabric, params, metrics, trace)

    def start_message(self, msg_id: int, dst: int, size: int) -> None:
        self.sender.start_message(msg_id, dst, size)

    def on_packet(self, pkt: Packet) -> None:
        if pkt.kind is PacketKind.DATA:
            self.receiver.on_data(pkt)
        elif pkt.kind is PacketKind.CREDIT:
            self.sender.on_credit(pkt)
        else:
            self.sender.on_resend(pkt)
