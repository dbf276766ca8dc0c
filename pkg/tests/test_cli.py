"""Command-line tests: artifacts, exit codes, sweeps, byte-level determinism."""

import filecmp
import os
import subprocess
import sys

import pytest

from sirdsim import cli
from sirdsim.engine import InvariantViolation, SimulationError

BASE_CONFIG = """
hosts_per_tor = 4
num_tors = 1
num_spines = 0
traffic_config = balanced
size_dist = fixed
mean_size_bytes = 27KB
applied_load_fraction = 0.5
duration_ns = 2000000
warmup_ns = 200000
seed = 5
"""

ARTIFACTS = ("messages.csv", "goodput.csv", "credit.csv", "queues.csv",
             "summary.csv", "effective_config.txt")

HEADERS = {
    "messages.csv": "msg_id,src,dst,size,created_ns,completed_ns,slowdown,class",
    "goodput.csv": "window_end_ns,host,gbps",
    "credit.csv": "time_ns,at_receivers,in_flight,at_senders",
    "queues.csv": "time_ns,switch,port,lane,bytes",
}


def write_config(tmp_path, text=BASE_CONFIG, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_run_writes_all_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 0
    assert "run complete:" in capsys.readouterr().out
    for name in ARTIFACTS:
        assert (out / name).exists(), name
    for name, header in HEADERS.items():
        assert (out / name).read_text().splitlines()[0] == header

    lines = (out / "messages.csv").read_text().splitlines()
    assert len(lines) > 100
    row = lines[1].split(",")
    assert len(row) == 8 and row[7] in "ABCD"

    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].split(",")[0] == "max_goodput_gbps"
    assert all(float(x) == float(x) or x == "nan" for x in summary[1].split(","))


def test_effective_config_reparses_to_the_same_run(tmp_path):
    from sirdsim.config import parse_config

    cfg_path = write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", cfg_path, "--out", str(out)]) == 0
    effective = parse_config(str(out / "effective_config.txt"))
    assert effective.hosts_per_tor == 4
    assert effective.mean_size_bytes == 27_000
    assert effective.seed == 5


def test_trace_flag_emits_protocol_events(tmp_path):
    # Sizes above the unscheduled threshold so the credit machinery shows up.
    cfg = write_config(tmp_path, BASE_CONFIG.replace(
        "mean_size_bytes = 27KB", "mean_size_bytes = 150KB"))
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out), "--trace"]) == 0
    rows = [line.split(",") for line in (out / "trace.txt").read_text().splitlines()]
    assert rows
    assert all(len(r) == 8 for r in rows)
    events = {r[1] for r in rows}
    assert events <= {"request", "grant", "data", "unsched", "complete",
                      "reclaim", "rerequest"}
    assert {"grant", "data", "complete"} <= events
    times = [int(r[0]) for r in rows]
    assert times == sorted(times)


def test_run_is_byte_deterministic_across_processes(tmp_path):
    cfg = write_config(tmp_path)
    dirs = []
    for name in ("a", "b"):
        out = tmp_path / name
        dirs.append(out)
        proc = subprocess.run(
            [sys.executable, "-m", "sirdsim.cli", "run", cfg,
             "--out", str(out), "--trace"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    for name in ARTIFACTS + ("trace.txt",):
        assert filecmp.cmp(dirs[0] / name, dirs[1] / name, shallow=False), name


def test_seed_override_changes_the_run(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli.main(["run", cfg, "--seed", "1", "--out", str(out1)]) == 0
    assert cli.main(["run", cfg, "--seed", "2", "--out", str(out2)]) == 0
    assert (out1 / "messages.csv").read_text() != (out2 / "messages.csv").read_text()


def test_heavy_load_run_keeps_invariants(tmp_path):
    cfg = write_config(tmp_path, """
hosts_per_tor = 4
num_tors = 1
num_spines = 0
traffic_config = balanced
size_dist = bimodal
bimodal_small_bytes = 3KB
bimodal_large_bytes = 600KB
bimodal_small_prob = 0.8
applied_load_fraction = 0.95
duration_ns = 2000000
warmup_ns = 200000
seed = 2
""")
    assert cli.main(["run", cfg, "--out", str(tmp_path / "out")]) == 0


# ---------------------------------------------------------------------------
# failure exits


@pytest.mark.parametrize(
    "mutate",
    [
        lambda text: text.replace("hosts_per_tor = 4", "hosts_per_tor = many"),
        lambda text: text.replace("hosts_per_tor = 4", "frobnicate = 7"),
        lambda text: text + "global_bucket_bytes = 90KB\n",
        lambda text: text + "duration_ns = 100\nwarmup_ns = 200\n",
    ],
)
def test_bad_configs_exit_2(tmp_path, capsys, mutate):
    cfg = write_config(tmp_path, mutate(BASE_CONFIG))
    assert cli.main(["run", cfg, "--out", str(tmp_path / "out")]) == 2
    assert "config error:" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.cfg")]) == 2
    assert "cannot read config file" in capsys.readouterr().err


def test_malformed_cdf_file_exits_2(tmp_path, capsys):
    cdf = tmp_path / "sizes.cdf"
    cdf.write_text("1000 0.5\n9000 0.9\n")  # never reaches 1.0
    cfg = write_config(tmp_path, BASE_CONFIG.replace(
        "size_dist = fixed", f"size_dist = empirical\ncdf_file = {cdf}"))
    assert cli.main(["run", cfg, "--out", str(tmp_path / "out")]) == 2
    assert "must end at 1.0" in capsys.readouterr().err


@pytest.mark.parametrize("exc", [InvariantViolation("books diverged"),
                                 SimulationError("wedged")])
def test_runtime_faults_exit_3(tmp_path, capsys, monkeypatch, exc):
    def broken_run(self):
        raise exc

    monkeypatch.setattr(cli.Runner, "run", broken_run)
    cfg = write_config(tmp_path)
    assert cli.main(["run", cfg, "--out", str(tmp_path / "out")]) == 3
    err = capsys.readouterr().err
    assert "books diverged" in err or "wedged" in err


# ---------------------------------------------------------------------------
# sweeps

SWEEP_CONFIG = BASE_CONFIG.replace("duration_ns = 2000000", "duration_ns = 800000") \
                          .replace("warmup_ns = 200000", "warmup_ns = 100000") \
                          .replace("applied_load_fraction = 0.5",
                                   "applied_load_fraction = 0.3")


def test_sweep_writes_point_dirs_and_sweep_csv(tmp_path):
    cfg = write_config(tmp_path, SWEEP_CONFIG)
    out = tmp_path / "sweep"
    assert cli.main(["sweep", cfg, "--axis", "global_bucket_bytes",
                     "--values", "100KB,1.5xBDP", "--out", str(out)]) == 0

    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("axis,value,max_goodput_gbps,")
    assert lines[0].endswith(",status")
    assert len(lines) == 3
    for line, value in zip(lines[1:], ("100000", "150000")):
        cells = line.split(",")
        assert cells[0] == "global_bucket_bytes"
        assert cells[1] == value
        assert cells[-1] == "ok"
        float(cells[2])  # goodput parses
        point = out / f"global_bucket_bytes={value}"
        for name in ARTIFACTS:
            assert (point / name).exists(), name


def test_sweep_point_matches_standalone_run(tmp_path):
    cfg = write_config(tmp_path, SWEEP_CONFIG)
    out = tmp_path / "sweep"
    assert cli.main(["sweep", cfg, "--axis", "global_bucket_bytes",
                     "--values", "150KB", "--out", str(out)]) == 0

    solo_cfg = write_config(tmp_path, SWEEP_CONFIG + "global_bucket_bytes = 150KB\n",
                            name="solo.cfg")
    solo = tmp_path / "solo"
    assert cli.main(["run", solo_cfg, "--out", str(solo)]) == 0

    point = out / "global_bucket_bytes=150000"
    for name in ("messages.csv", "goodput.csv", "credit.csv", "summary.csv"):
        assert filecmp.cmp(point / name, solo / name, shallow=False), name


def test_sweep_priority_lanes(tmp_path):
    cfg = write_config(tmp_path, SWEEP_CONFIG)
    out = tmp_path / "lanes"
    assert cli.main(["sweep", cfg, "--axis", "priority_lanes",
                     "--values", "1,2", "--out", str(out)]) == 0
    assert (out / "priority_lanes=1" / "summary.csv").exists()
    assert (out / "priority_lanes=2" / "summary.csv").exists()


def test_sweep_sender_threshold_accepts_inf(tmp_path):
    cfg = write_config(tmp_path, SWEEP_CONFIG)
    out = tmp_path / "sthr"
    assert cli.main(["sweep", cfg, "--axis", "sender_threshold_bytes",
                     "--values", "50KB,inf", "--out", str(out)]) == 0
    assert (out / "sender_threshold_bytes=50000.0" / "summary.csv").exists()
    assert (out / "sender_threshold_bytes=inf" / "summary.csv").exists()


def test_sweep_records_per_point_config_failures(tmp_path, capsys):
    cfg = write_config(tmp_path, SWEEP_CONFIG)
    out = tmp_path / "sweep"
    code = cli.main(["sweep", cfg, "--axis", "global_bucket_bytes",
                     "--values", "150KB,90KB", "--out", str(out)])
    assert code == 2  # the 90 KB point violates the bucket >= pipe invariant
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[1].split(",")[1] == "150000" and lines[1].endswith(",ok")
    assert lines[2].split(",")[1] == "90000" and lines[2].endswith(",error:config")
    assert (out / "global_bucket_bytes=150000" / "summary.csv").exists()
    assert not (out / "global_bucket_bytes=90000" / "summary.csv").exists()


@pytest.mark.parametrize(
    "argv_tail,needle",
    [
        (["--axis", "mss_bytes", "--values", "9000"], "cannot sweep"),
        (["--axis", "global_bucket_bytes", "--values", "lots"], "config error"),
        (["--axis", "global_bucket_bytes", "--values", " , "], "--values is empty"),
    ],
)
def test_bad_sweep_requests_exit_2(tmp_path, capsys, argv_tail, needle):
    cfg = write_config(tmp_path, SWEEP_CONFIG)
    assert cli.main(["sweep", cfg, "--out", str(tmp_path / "x")] + argv_tail) == 2
    assert needle in capsys.readouterr().err


def test_sweep_outputs_are_deterministic(tmp_path):
    cfg = write_config(tmp_path, SWEEP_CONFIG)
    outs = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        outs.append(out)
        assert cli.main(["sweep", cfg, "--axis", "applied_load_fraction",
                         "--values", "0.2,0.4", "--out", str(out)]) == 0
    assert filecmp.cmp(outs[0] / "sweep.csv", outs[1] / "sweep.csv", shallow=False)
    for point in ("applied_load_fraction=0.2", "applied_load_fraction=0.4"):
        assert filecmp.cmp(outs[0] / point / "messages.csv",
                           outs[1] / point / "messages.csv", shallow=False)
