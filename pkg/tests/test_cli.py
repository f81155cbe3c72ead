"""CLI tests: flags, exit codes, report stability, the parse tool."""

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from greencorridor import nmea
from greencorridor.scenario import Scenario, demo_scenario

CLI = [sys.executable, "-m", "greencorridor.cli"]


def run_cli(*args, **kwargs):
    return subprocess.run(CLI + list(args), capture_output=True, text=True, **kwargs)


@pytest.fixture(scope="module")
def demo_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("scenario") / "demo.scenario.json"
    demo_scenario().to_file(path)
    return path


class TestHelp:
    def test_subcommands_listed(self):
        out = run_cli("--help")
        assert out.returncode == 0
        for sub in ("run", "serve", "parse", "demo"):
            assert sub in out.stdout

    def test_run_flags_documented_with_defaults(self):
        out = run_cli("run", "--help")
        assert out.returncode == 0
        for token in ("--mode", "--seed", "--out", "default: out"):
            assert token in out.stdout

    def test_serve_flags_documented_with_defaults(self):
        out = run_cli("serve", "--help")
        for token in ("--listen", "--speed", "127.0.0.1:8088", "default: 1.0"):
            assert token in out.stdout


class TestDemo:
    def test_demo_writes_valid_scenario(self, tmp_path):
        target = tmp_path / "demo.json"
        out = run_cli("demo", "--out", str(target))
        assert out.returncode == 0
        scenario = Scenario.from_file(target)  # validates on load
        assert scenario.name == "demo"
        assert len(scenario.data["graph"]["nodes"]) == 16
        assert len(scenario.data["graph"]["signals"]) == 4


class TestRun:
    def test_missing_file_exit_1_with_path(self):
        out = run_cli("run", "/nonexistent/path.json")
        assert out.returncode == 1
        assert "/nonexistent/path.json" in out.stderr

    def test_invalid_scenario_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        data = demo_scenario().data
        bad.write_text(json.dumps({**data, "surprise": 1}))
        out = run_cli("run", str(bad))
        assert out.returncode == 2
        assert "invalid scenario" in out.stderr

    def test_two_modes_print_comparison(self, demo_file, tmp_path):
        out = run_cli("run", str(demo_file), "--mode", "baseline", "--mode", "auto",
                      "--out", str(tmp_path))
        assert out.returncode == 0
        assert "travel time delta" in out.stdout
        assert "AMB1" in out.stdout and "AMB2" in out.stdout
        reports = sorted(tmp_path.glob("*.report.json"))
        logs = sorted(tmp_path.glob("*.events.jsonl"))
        assert len(reports) == 2 and len(logs) == 2

    def test_reports_byte_stable_for_fixed_seed(self, demo_file, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out_dir in (out_a, out_b):
            result = run_cli("run", str(demo_file), "--mode", "auto", "--seed", "7",
                             "--out", str(out_dir))
            assert result.returncode == 0
        pairs = list(zip(sorted(out_a.iterdir()), sorted(out_b.iterdir())))
        assert len(pairs) == 2
        for a, b in pairs:
            assert a.read_bytes() == b.read_bytes(), f"{a.name} differs"

    def test_seed_override_changes_outputs(self, demo_file, tmp_path):
        data = json.loads(demo_file.read_text())
        data["sms"]["loss_probability"] = 0.3
        lossy = tmp_path / "lossy.json"
        lossy.write_text(json.dumps(data))
        a = run_cli("run", str(lossy), "--seed", "1", "--out", str(tmp_path / "s1"))
        b = run_cli("run", str(lossy), "--seed", "2", "--out", str(tmp_path / "s2"))
        assert a.stdout != b.stdout


class TestParse:
    def test_three_valid_lines(self, tmp_path):
        lines = [nmea.make_gga(48.0 + i * 0.001, 11.5, 3600.0 + i) for i in range(3)]
        corpus = tmp_path / "ok.nmea"
        corpus.write_text("\r\n".join(lines) + "\r\n")
        out = run_cli("parse", str(corpus))
        assert out.returncode == 0
        assert out.stdout.strip().endswith("3 ok, 0 rejected")

    def test_corrupted_checksum_counted(self, tmp_path):
        good = nmea.make_gga(48.0, 11.5, 3600.0)
        bad = good[:-1] + ("0" if good[-1] != "0" else "1")
        corpus = tmp_path / "mixed.nmea"
        corpus.write_text(good + "\n" + bad + "\n")
        out = run_cli("parse", str(corpus))
        assert "ChecksumMismatch" in out.stdout
        assert out.stdout.strip().endswith("1 ok, 1 rejected")

    def test_empty_file(self, tmp_path):
        corpus = tmp_path / "empty.nmea"
        corpus.write_text("")
        out = run_cli("parse", str(corpus))
        assert out.stdout.strip().endswith("0 ok, 0 rejected")

    def test_unreadable_file_exit_1(self):
        out = run_cli("parse", "/nonexistent.nmea")
        assert out.returncode == 1


class TestServePacing:
    def test_speed_factor_scales_wall_clock(self, tmp_path):
        # 6 s horizon at speed 20 finishes in ~0.3 s of simulation pacing
        data = json.loads(json.dumps(demo_scenario().data))
        data["sim"]["horizon_s"] = 6.0
        scen = tmp_path / "short.json"
        scen.write_text(json.dumps(data))
        proc = subprocess.Popen(
            CLI + ["serve", str(scen), "--listen", "127.0.0.1:8199",
                   "--speed", "20", "--out", str(tmp_path)],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        try:
            import httpx
            deadline = time.monotonic() + 10.0
            started = None
            finished = None
            while time.monotonic() < deadline:
                try:
                    status = httpx.get("http://127.0.0.1:8199/api/status", timeout=1.0).json()
                except Exception:
                    time.sleep(0.05)
                    continue
                if started is None and status["now_s"] > 0:
                    started = time.monotonic() - status["now_s"] / 20.0
                if status["finished"]:
                    finished = time.monotonic()
                    break
                time.sleep(0.02)
            assert finished is not None, "simulation never finished"
            elapsed = finished - started
            # 6 sim seconds at x20 is 0.30 s; allow generous slack for polling
            assert 0.2 <= elapsed <= 1.0, f"pacing off: {elapsed:.2f}s wall"
        finally:
            proc.terminate()
            proc.wait(timeout=5)
