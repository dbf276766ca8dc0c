"""One simulation run end to end: build, drive, audit, write artifacts.

A Runner owns the engine, fabric, hosts, and metrics for a single config.
Tests can inject messages directly and poke at component state before calling
run(); the CLI builds a Runner per config point and writes the CSV set.
"""

from __future__ import annotations

import os
from typing import Optional, TextIO

from .config import ConfigError, RunConfig, emit_config
from .engine import InvariantViolation, SimulationError, Simulator
from .fabric import Fabric, Packet, TopologySpec
from .metrics import Metrics
from .sird import Host, ProtocolParams
from . import workload as wl

SUMMARY_COLUMNS = [
    "max_goodput_gbps", "mean_tor_queue_bytes", "max_tor_queue_bytes",
    "p50_slowdown", "p99_slowdown",
    "p50_slowdown_A", "p99_slowdown_A", "p50_slowdown_B", "p99_slowdown_B",
    "p50_slowdown_C", "p99_slowdown_C", "p50_slowdown_D", "p99_slowdown_D",
]


def build_size_dist(cfg: RunConfig) -> wl.SizeDist:
    if cfg.size_dist == "fixed":
        return wl.fixed_dist(round(cfg.mean_size_bytes))
    if cfg.size_dist == "exponential":
        return wl.exponential_dist(cfg.mean_size_bytes)
    if cfg.size_dist == "lognormal":
        return wl.lognormal_dist(cfg.mean_size_bytes, cfg.sigma)
    if cfg.size_dist == "bimodal":
        return wl.bimodal_dist(cfg.bimodal_small_bytes, cfg.bimodal_large_bytes,
                               cfg.bimodal_small_prob)
    return wl.empirical_dist(wl.load_cdf_points(cfg.cdf_file))


class Runner:
    """Builds a run from a config and executes it with always-on invariants."""

    def __init__(self, cfg: RunConfig, out_dir: Optional[str] = None,
                 collect_trace: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = out_dir
        self.sim = Simulator(cfg.seed)
        spec = TopologySpec(
            hosts_per_tor=cfg.hosts_per_tor, num_tors=cfg.num_tors,
            num_spines=cfg.num_spines, host_link_gbps=cfg.host_link_gbps,
            spine_link_gbps=cfg.spine_link_gbps,
            host_link_prop_ns=cfg.host_link_prop_ns,
            tor_spine_prop_ns=cfg.tor_spine_prop_ns,
            mss_bytes=cfg.mss_bytes, header_bytes=cfg.header_bytes,
            rtt_intra_ns=cfg.rtt_intra_ns, rtt_inter_ns=cfg.rtt_inter_ns)
        self.fabric = Fabric(self.sim, spec, priority_lanes=cfg.priority_lanes,
                             ecn_threshold_bytes=cfg.net_threshold_bytes)
        self.params = ProtocolParams(
            bdp_bytes=cfg.bdp_bytes, global_bucket_bytes=cfg.global_bucket_bytes,
            sender_threshold_bytes=cfg.sender_threshold_bytes,
            net_threshold_bytes=cfg.net_threshold_bytes,
            unsched_threshold_bytes=cfg.unsched_threshold_bytes,
            aimd_gain=cfg.aimd_gain, min_bucket_bytes=cfg.min_bucket_bytes,
            mss_bytes=cfg.mss_bytes, pacer_rate_fraction=cfg.pacer_rate_fraction,
            sender_fair_share_fraction=cfg.sender_fair_share_fraction,
            loss_timeout_ns=cfg.loss_timeout_ns,
            receiver_policy=cfg.receiver_policy, sender_policy=cfg.sender_policy)
        self.params.validate()
        self.warmup_ns = cfg.effective_warmup_ns()
        self.metrics = Metrics(
            self.sim, self.fabric, mss_bytes=cfg.mss_bytes, bdp_bytes=cfg.bdp_bytes,
            warmup_ns=self.warmup_ns, goodput_window_ns=cfg.goodput_window_ns,
            sample_interval_ns=cfg.sample_interval_ns)

        self.trace_rows: Optional[list[tuple]] = [] if collect_trace else None
        tracer = self._trace if collect_trace else None
        self.hosts = [Host(i, self.sim, self.fabric, self.params, self.metrics, tracer)
                      for i in range(cfg.num_hosts)]
        self.fabric.deliver = self._deliver
        self.fabric.on_host_data_sent = self._on_host_data_sent
        self.metrics.credit_probe = self._credit_probe
        self.metrics.fleet_credit_budget = cfg.num_hosts * cfg.global_bucket_bytes

        # Empirical CDF problems are configuration problems, not runtime faults.
        try:
            self._dist = (build_size_dist(cfg)
                          if cfg.background_load_fraction() > 0 else None)
        except SimulationError as exc:
            raise ConfigError(str(exc)) from exc

        self._msg_seq = 0
        self._queues_file: Optional[TextIO] = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self._queues_file = open(os.path.join(out_dir, "queues.csv"), "w")
            self._queues_file.write("time_ns,switch,port,lane,bytes\n")
            self.metrics.queue_row_sink = self._queue_row

        self.summary: Optional[dict[str, float]] = None

    # -- wiring ---------------------------------------------------------------

    def _deliver(self, pkt: Packet) -> None:
        self.hosts[pkt.dst].on_packet(pkt)

    def _on_host_data_sent(self, host: int, pkt: Packet) -> None:
        self.hosts[host].sender.on_data_sent(pkt)

    def _trace(self, event: str, src: int, dst: int, msg_id: int,
               nbytes: int, b: int, sb: int) -> None:
        self.trace_rows.append((self.sim.now, event, src, dst, msg_id, nbytes, b, sb))

    def _credit_probe(self) -> tuple[int, int, int]:
        budget_per_host = self.params.global_bucket_bytes
        at_senders = sum(h.sender.credit_total for h in self.hosts)
        consumed = sum(h.receiver.consumed for h in self.hosts)
        at_receivers = budget_per_host * len(self.hosts) - consumed
        return at_receivers, consumed - at_senders, at_senders

    def _queue_row(self, now: int, switch: str, port: str, lane: int, nbytes: int) -> None:
        if nbytes > 0:
            self._queues_file.write(f"{now},{switch},{port},{lane},{nbytes}\n")

    # -- driving ----------------------------------------------------------------

    def inject_message(self, src: int, dst: int, size: int, at_ns: int = 0,
                       incast: bool = False) -> int:
        """Schedule one message start; returns its id. For tests and scenarios."""
        msg_id = self._msg_seq
        self._msg_seq += 1

        def fire() -> None:
            self.metrics.on_created(msg_id, src, dst, size, incast)
            self.hosts[src].start_message(msg_id, dst, size)

        self.sim.schedule(at_ns, fire)
        return msg_id

    def _launch(self, src: int, dst: int, size: int, incast: bool) -> None:
        msg_id = self._msg_seq
        self._msg_seq += 1
        self.metrics.on_created(msg_id, src, dst, size, incast)
        self.hosts[src].start_message(msg_id, dst, size)

    def run(self) -> dict[str, float]:
        cfg = self.cfg
        bg_load = cfg.background_load_fraction()
        if self._dist is not None and bg_load > 0:
            gap = wl.mean_interarrival_ns(bg_load, cfg.host_link_gbps,
                                          self._dist.mean_bytes)
            wl.PoissonAllToAll(self.sim, cfg.num_hosts, self._dist, gap,
                               cfg.duration_ns, self._launch).begin()
        if cfg.traffic_config == "incast":
            period = cfg.incast_period_ns or wl.incast_period_ns(
                cfg.incast_senders, cfg.incast_burst_bytes, cfg.incast_fraction,
                cfg.effective_load_fraction(), cfg.num_hosts, cfg.host_link_gbps)
            wl.IncastOverlay(self.sim, cfg.num_hosts, cfg.incast_senders,
                             cfg.incast_burst_bytes, period, cfg.duration_ns,
                             self._launch).begin()
        self.metrics.start_sampler(cfg.duration_ns)
        self.sim.schedule(self.warmup_ns, self.fabric.reset_peaks)
        self.sim.run_until(cfg.duration_ns)
        self.audit()
        self.summary = self.metrics.summary(cfg.num_hosts, cfg.duration_ns)
        return self.summary

    def audit(self) -> None:
        """End-of-run cross-checks; every failure raises InvariantViolation."""
        for host in self.hosts:
            host.receiver.audit()
            host.sender._audit_credit()
        if self.fabric.in_flight() != self.fabric.resident_packets():
            raise InvariantViolation(
                f"packet conservation: {self.fabric.in_flight()} in flight but "
                f"{self.fabric.resident_packets()} resident in the fabric")

    # -- artifacts ----------------------------------------------------------------

    def write_outputs(self) -> None:
        out = self.out_dir
        if out is None:
            raise SimulationError("runner was built without an output directory")

        with open(os.path.join(out, "messages.csv"), "w") as f:
            f.write("msg_id,src,dst,size,created_ns,completed_ns,slowdown,class\n")
            for rec in self.metrics.messages.values():
                if rec.completed_ns is None:
                    done, slow = "", ""
                else:
                    done = str(rec.completed_ns)
                    slow = f"{rec.slowdown:.6f}"
                f.write(f"{rec.msg_id},{rec.src},{rec.dst},{rec.size},"
                        f"{rec.created_ns},{done},{slow},{rec.size_class}\n")

        win = self.cfg.goodput_window_ns
        with open(os.path.join(out, "goodput.csv"), "w") as f:
            f.write("window_end_ns,host,gbps\n")
            by_window: dict[int, dict[int, int]] = {}
            for (host, idx), nbytes in self.metrics.window_bytes.items():
                by_window.setdefault(idx, {})[host] = nbytes
            n_win = -(-self.cfg.duration_ns // win)
            for idx in range(max(n_win, max(by_window, default=-1) + 1)):
                hosts = by_window.get(idx, {})
                for host in sorted(hosts):
                    f.write(f"{(idx + 1) * win},{host},{hosts[host] * 8 / win:.6f}\n")
                fleet = sum(hosts.values()) * 8 / win / self.cfg.num_hosts
                f.write(f"{(idx + 1) * win},-1,{fleet:.6f}\n")

        with open(os.path.join(out, "credit.csv"), "w") as f:
            f.write("time_ns,at_receivers,in_flight,at_senders\n")
            for t, at_r, fl, at_s in self.metrics.credit_samples:
                f.write(f"{t},{at_r},{fl},{at_s}\n")

        with open(os.path.join(out, "summary.csv"), "w") as f:
            f.write(",".join(SUMMARY_COLUMNS) + "\n")
            f.write(",".join(f"{self.summary[c]:.6f}" for c in SUMMARY_COLUMNS) + "\n")

        with open(os.path.join(out, "effective_config.txt"), "w") as f:
            f.write(emit_config(self.cfg))

        if self.trace_rows is not None:
            with open(os.path.join(out, "trace.txt"), "w") as f:
                for row in self.trace_rows:
                    f.write(",".join(str(x) for x in row) + "\n")

        if self._queues_file is not None:
            end = self.cfg.duration_ns
            for switch, port, queue in self.fabric.switch_ports():
                self._queues_file.write(f"{end},{switch},{port},peak,{queue.peak_bytes}\n")
            self._queues_file.close()
            self._queues_file = None

    def close(self) -> None:
        if self._queues_file is not None:
            self._queues_file.close()
            self._queues_file = None
