"""Run configuration: flat key = value files with byte-size suffixes.

Values accept decimal KB/MB suffixes and an xBDP suffix resolved against
bdp_bytes. Unknown keys, duplicate keys, type mismatches, and inconsistent
values are all fatal with a diagnostic naming the key and line.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass
from typing import Optional


class ConfigError(Exception):
    """Bad configuration input; the CLI maps this to its own exit code."""


# type tags: int, float, str, optint (int or 'auto'), inffloat (float or 'inf')
_KEY_TYPES: dict[str, str] = {
    # topology
    "hosts_per_tor": "int",
    "num_tors": "int",
    "num_spines": "int",
    "host_link_gbps": "int",
    "spine_link_gbps": "int",
    "host_link_prop_ns": "optint",
    "tor_spine_prop_ns": "optint",
    "mss_bytes": "int",
    "header_bytes": "int",
    "rtt_intra_ns": "int",
    "rtt_inter_ns": "int",
    # protocol
    "bdp_bytes": "int",
    "global_bucket_bytes": "int",
    "sender_threshold_bytes": "inffloat",
    "net_threshold_bytes": "int",
    "unsched_threshold_bytes": "int",
    "aimd_gain": "float",
    "min_bucket_bytes": "int",
    "pacer_rate_fraction": "float",
    "sender_fair_share_fraction": "float",
    "loss_timeout_ns": "int",
    "receiver_policy": "str",
    "sender_policy": "str",
    "priority_lanes": "int",
    # workload
    "traffic_config": "str",
    "size_dist": "str",
    "mean_size_bytes": "float",
    "sigma": "float",
    "bimodal_small_bytes": "int",
    "bimodal_large_bytes": "int",
    "bimodal_small_prob": "float",
    "cdf_file": "str",
    "applied_load_fraction": "float",
    "duration_ns": "int",
    "warmup_ns": "optint",
    "seed": "int",
    # incast overlay
    "incast_senders": "int",
    "incast_burst_bytes": "int",
    "incast_fraction": "float",
    "incast_period_ns": "int",
    # measurement
    "goodput_window_ns": "int",
    "sample_interval_ns": "int",
}

_CORE_LOAD_DIVISOR = 0.89 * 2
_WARMUP_RTTS = 10


@dataclass
class RunConfig:
    """One simulation run, fully resolved."""

    hosts_per_tor: int = 16
    num_tors: int = 9
    num_spines: int = 4
    host_link_gbps: int = 100
    spine_link_gbps: int = 400
    host_link_prop_ns: Optional[int] = None
    tor_spine_prop_ns: Optional[int] = None
    mss_bytes: int = 9000
    header_bytes: int = 100
    rtt_intra_ns: int = 5500
    rtt_inter_ns: int = 7500

    bdp_bytes: int = 100_000
    global_bucket_bytes: int = 150_000
    sender_threshold_bytes: float = 50_000.0
    net_threshold_bytes: int = 125_000
    unsched_threshold_bytes: int = 100_000
    aimd_gain: float = 0.08
    min_bucket_bytes: int = 9000
    pacer_rate_fraction: float = 0.98
    sender_fair_share_fraction: float = 0.5
    loss_timeout_ns: int = 1_000_000
    receiver_policy: str = "srpt"
    sender_policy: str = "srpt"
    priority_lanes: int = 2

    traffic_config: str = "balanced"
    size_dist: str = "lognormal"
    mean_size_bytes: float = 125_000.0
    sigma: float = 1.0
    bimodal_small_bytes: int = 3000
    bimodal_large_bytes: int = 2_500_000
    bimodal_small_prob: float = 0.9
    cdf_file: str = ""
    applied_load_fraction: float = 0.5
    duration_ns: int = 5_000_000
    warmup_ns: Optional[int] = None
    seed: int = 1

    incast_senders: int = 30
    incast_burst_bytes: int = 500_000
    incast_fraction: float = 0.07
    incast_period_ns: int = 0  # 0 means derive from the incast fraction

    goodput_window_ns: int = 100_000
    sample_interval_ns: int = 1000

    # -- derived views -------------------------------------------------------

    @property
    def num_hosts(self) -> int:
        return self.hosts_per_tor * self.num_tors

    def effective_load_fraction(self) -> float:
        """Offered load after the traffic-config transform."""
        if self.traffic_config == "core":
            return self.applied_load_fraction / _CORE_LOAD_DIVISOR
        return self.applied_load_fraction

    def background_load_fraction(self) -> float:
        load = self.effective_load_fraction()
        if self.traffic_config == "incast":
            return load * (1 - self.incast_fraction)
        return load

    def effective_warmup_ns(self) -> int:
        if self.warmup_ns is not None:
            return self.warmup_ns
        rtt = self.rtt_inter_ns if self.num_spines > 0 else self.rtt_intra_ns
        return _WARMUP_RTTS * rtt

    def validate(self) -> None:
        def bad(msg: str) -> ConfigError:
            return ConfigError(f"config invariant: {msg}")

        if self.global_bucket_bytes < self.bdp_bytes:
            raise bad("global_bucket_bytes must be at least bdp_bytes")
        if not (self.sender_threshold_bytes > 0):
            raise bad("sender_threshold_bytes must be positive or inf")
        if self.traffic_config not in ("balanced", "core", "incast"):
            raise bad(f"traffic_config {self.traffic_config!r} not one of balanced/core/incast")
        if self.size_dist not in ("fixed", "exponential", "lognormal", "bimodal", "empirical"):
            raise bad(f"size_dist {self.size_dist!r} unknown")
        if self.size_dist == "empirical":
            if not self.cdf_file:
                raise bad("size_dist = empirical requires cdf_file")
            if not os.path.isfile(self.cdf_file):
                raise bad(f"cdf_file {self.cdf_file!r} does not exist")
        if self.size_dist == "lognormal" and not (self.sigma > 0):
            raise bad("lognormal needs sigma > 0")
        if not (0 <= self.applied_load_fraction <= 1):
            raise bad("applied_load_fraction must be in [0, 1]")
        if self.mean_size_bytes < 1:
            raise bad("mean_size_bytes must be at least 1")
        if self.priority_lanes not in (1, 2):
            raise bad("priority_lanes must be 1 or 2")
        if self.receiver_policy not in ("srpt", "rr") or self.sender_policy not in ("srpt", "rr"):
            raise bad("policies must be srpt or rr")
        if self.duration_ns <= 0:
            raise bad("duration_ns must be positive")
        if self.effective_warmup_ns() >= self.duration_ns:
            raise bad("warmup_ns must be below duration_ns")
        if self.traffic_config == "incast":
            if not (0 < self.incast_fraction < 1):
                raise bad("incast_fraction must be in (0, 1)")
            if self.incast_senders >= self.num_hosts:
                raise bad("incast_senders must be below num_hosts")
            if self.applied_load_fraction <= 0 and self.incast_period_ns == 0:
                raise bad("incast period underivable at zero load; set incast_period_ns")
        if self.goodput_window_ns <= 0 or self.sample_interval_ns <= 0:
            raise bad("window and sample intervals must be positive")
        if self.num_tors > 1 and self.num_spines < 1:
            raise bad("multi-rack topologies need at least one spine")
        if not (0 < self.aimd_gain <= 1):
            raise bad("aimd_gain must be in (0, 1]")
        if not (0 < self.pacer_rate_fraction <= 1):
            raise bad("pacer_rate_fraction must be in (0, 1]")
        if not (0 <= self.sender_fair_share_fraction <= 1):
            raise bad("sender_fair_share_fraction must be in [0, 1]")


def _parse_scalar(key: str, raw: str, kind: str, bdp: Optional[int], where: str):
    val = raw.strip()
    low = val.lower()
    if kind == "str":
        return val
    if kind == "optint" and low == "auto":
        return None
    if kind == "inffloat" and low == "inf":
        return math.inf
    mult = 1.0
    num = val
    if low.endswith("xbdp"):
        if bdp is None:
            raise ConfigError(f"{where}: {key}: xBDP suffix needs bdp_bytes")
        mult = float(bdp)
        num = val[:-4]
    elif low.endswith("kb"):
        mult = 1e3
        num = val[:-2]
    elif low.endswith("mb"):
        mult = 1e6
        num = val[:-2]
    try:
        x = float(num) * mult
    except ValueError:
        raise ConfigError(f"{where}: {key}: expected a number, got {raw!r}") from None
    if kind in ("int", "optint"):
        if x != int(x):
            raise ConfigError(f"{where}: {key}: expected an integer, got {raw!r}")
        return int(x)
    return x


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    raw_pairs: dict[str, tuple[str, int]] = {}
    for lineno, rawline in enumerate(text.splitlines(), 1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_TYPES:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in raw_pairs:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{origin}:{lineno}: empty value for {key!r}")
        raw_pairs[key] = (value, lineno)

    # bdp first so xBDP suffixes elsewhere can resolve against it.
    bdp = RunConfig.bdp_bytes
    if "bdp_bytes" in raw_pairs:
        value, lineno = raw_pairs["bdp_bytes"]
        if value.lower().endswith("xbdp"):
            raise ConfigError(f"{origin}:{lineno}: bdp_bytes cannot use the xBDP suffix")
        bdp = _parse_scalar("bdp_bytes", value, "int", None, f"{origin}:{lineno}")

    fields = {}
    for key, (value, lineno) in raw_pairs.items():
        fields[key] = _parse_scalar(key, value, _KEY_TYPES[key], bdp, f"{origin}:{lineno}")

    cfg = RunConfig(**fields)
    _resolve_defaults(cfg, set(raw_pairs))
    cfg.validate()
    return cfg


def _resolve_defaults(cfg: RunConfig, given: set[str]) -> None:
    """Fill values whose defaults are relative to other keys."""
    if "global_bucket_bytes" not in given:
        cfg.global_bucket_bytes = round(1.5 * cfg.bdp_bytes)
    if "sender_threshold_bytes" not in given:
        cfg.sender_threshold_bytes = 0.5 * cfg.bdp_bytes
    if "net_threshold_bytes" not in given:
        cfg.net_threshold_bytes = round(1.25 * cfg.bdp_bytes)
    if "unsched_threshold_bytes" not in given:
        cfg.unsched_threshold_bytes = cfg.bdp_bytes
    if "min_bucket_bytes" not in given:
        cfg.min_bucket_bytes = cfg.mss_bytes
    if cfg.traffic_config == "core" and "spine_link_gbps" not in given:
        cfg.spine_link_gbps = 200


def parse_value(key: str, raw: str, bdp_bytes: Optional[int] = None):
    """Coerce one value string (sweep points, overrides) with the key's type rules."""
    if key not in _KEY_TYPES:
        raise ConfigError(f"unknown key {key!r}")
    return _parse_scalar(key, raw, _KEY_TYPES[key], bdp_bytes, "<value>")


def parse_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, origin=path)


def emit_config(cfg: RunConfig) -> str:
    """Effective config as text; parsing it back yields an equal RunConfig."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v == "":  # unset optional path; parsing an empty value is an error
            continue
        if v is None:
            v = "auto"
        elif isinstance(v, float) and math.isinf(v):
            v = "inf"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
