"""Open-loop traffic generation: Poisson all-to-all plus a periodic incast overlay.

Arrival processes are open loop: message starts are scheduled regardless of
transport backpressure. Each host draws independent exponential inter-arrival
gaps sized so that offered load hits the configured fraction of its link rate.
The incast overlay periodically picks a victim and a set of distinct senders
that each fire one fixed-size burst at it; its period is derived so incast
contributes a fixed fraction of total offered load.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Optional

from .engine import SimulationError, Simulator


class SizeDist:
    """Message size distribution; sizes are whole bytes >= 1."""

    def __init__(self, kind: str, mean: float, sampler: Callable[[random.Random], float]):
        self.kind = kind
        self.mean_bytes = mean
        self._sampler = sampler

    def sample(self, rng: random.Random) -> int:
        return max(1, round(self._sampler(rng)))


def fixed_dist(size_bytes: int) -> SizeDist:
    return SizeDist("fixed", float(size_bytes), lambda rng: size_bytes)


def exponential_dist(mean_bytes: float) -> SizeDist:
    return SizeDist("exponential", mean_bytes, lambda rng: rng.expovariate(1.0 / mean_bytes))


def lognormal_dist(mean_bytes: float, sigma: float) -> SizeDist:
    # Parameterized by the distribution mean: mu = ln(mean) - sigma^2 / 2.
    mu = math.log(mean_bytes) - sigma * sigma / 2
    return SizeDist("lognormal", mean_bytes, lambda rng: rng.lognormvariate(mu, sigma))


def bimodal_dist(small_bytes: int, large_bytes: int, small_prob: float) -> SizeDist:
    if not (0 < small_prob < 1):
        raise SimulationError("bimodal_small_prob must be in (0, 1)")
    mean = small_prob * small_bytes + (1 - small_prob) * large_bytes

    def draw(rng: random.Random) -> float:
        return small_bytes if rng.random() < small_prob else large_bytes

    return SizeDist("bimodal", mean, draw)


def load_cdf_points(path: str) -> list[tuple[float, float]]:
    """Parse 'size_bytes cumulative_probability' lines; both columns must rise."""
    points: list[tuple[float, float]] = []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise SimulationError(f"{path}:{lineno}: expected 'size prob'")
            try:
                size, prob = float(parts[0]), float(parts[1])
            except ValueError as exc:
                raise SimulationError(f"{path}:{lineno}: {exc}") from exc
            if points and (size <= points[-1][0] or prob <= points[-1][1]):
                raise SimulationError(f"{path}:{lineno}: columns must be strictly increasing")
            if not (0 < prob <= 1):
                raise SimulationError(f"{path}:{lineno}: probability out of range")
            points.append((size, prob))
    if not points or points[-1][1] != 1.0:
        raise SimulationError(f"{path}: cumulative probability must end at 1.0")
    return points


def empirical_dist(points: list[tuple[float, float]]) -> SizeDist:
    """Inverse-transform sampling, linear between points, an atom at the first."""
    s0, p0 = points[0]
    mean = s0 * p0
    for (sa, pa), (sb, pb) in zip(points, points[1:]):
        mean += (pb - pa) * (sa + sb) / 2

    def draw(rng: random.Random) -> float:
        u = rng.random()
        if u <= p0:
            return s0
        for (sa, pa), (sb, pb) in zip(points, points[1:]):
            if u <= pb:
                return sa + (sb - sa) * (u - pa) / (pb - pa)
        return points[-1][0]

    return SizeDist("empirical", mean, draw)


def mean_interarrival_ns(load_fraction: float, link_gbps: int, mean_size_bytes: float) -> float:
    """Per-host Poisson gap so offered bytes match the load fraction."""
    if load_fraction <= 0:
        return math.inf
    return mean_size_bytes * 8 / (load_fraction * link_gbps)


def incast_period_ns(num_senders: int, burst_bytes: int, fraction: float,
                     total_load_fraction: float, num_hosts: int, link_gbps: int) -> int:
    """Burst cadence that makes incast the given fraction of total offered load."""
    if fraction <= 0 or total_load_fraction <= 0:
        raise SimulationError("incast needs positive load and fraction")
    burst_bits = num_senders * burst_bytes * 8
    rate_bits_per_ns = fraction * total_load_fraction * num_hosts * link_gbps
    return round(burst_bits / rate_bits_per_ns)


StartFn = Callable[[int, int, int, bool], None]  # (src, dst, size, incast)


@dataclass
class PoissonAllToAll:
    """Independent per-host open-loop generators."""

    sim: Simulator
    num_hosts: int
    dist: SizeDist
    mean_gap_ns: float
    until_ns: int
    start: StartFn

    def begin(self) -> None:
        if not (self.mean_gap_ns > 0) or math.isinf(self.mean_gap_ns):
            return
        rng = self.sim.rng.stream("workload")
        for host in range(self.num_hosts):
            self._schedule_next(host, rng)

    def _schedule_next(self, host: int, rng: random.Random) -> None:
        gap = rng.expovariate(1.0 / self.mean_gap_ns)
        at = self.sim.now + max(1, round(gap))
        if at >= self.until_ns:
            return

        def fire() -> None:
            dst = rng.randrange(self.num_hosts - 1)
            if dst >= host:
                dst += 1
            self.start(host, dst, self.dist.sample(rng), False)
            self._schedule_next(host, rng)

        self.sim.schedule(at, fire)


@dataclass
class IncastOverlay:
    """Every period, distinct senders each fire one burst at a random victim."""

    sim: Simulator
    num_hosts: int
    num_senders: int
    burst_bytes: int
    period_ns: int
    until_ns: int
    start: StartFn

    def begin(self) -> None:
        if self.num_senders >= self.num_hosts:
            raise SimulationError("incast needs num_senders < num_hosts")
        self.sim.schedule(self.period_ns, self._fire)

    def _fire(self) -> None:
        rng = self.sim.rng.stream("incast")
        victim = rng.randrange(self.num_hosts)
        pool = [h for h in range(self.num_hosts) if h != victim]
        senders = rng.sample(pool, self.num_senders)
        for src in senders:
            self.start(src, victim, self.burst_bytes, True)
        nxt = self.sim.now + self.period_ns
        if nxt < self.until_ns:
            self.sim.schedule(nxt, self._fire)
