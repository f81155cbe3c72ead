"""Command line entry points: run, serve, parse, demo."""

from __future__ import annotations

import argparse
import json
import signal as os_signal
import sys
import threading
import time
from pathlib import Path

from . import nmea
from .api import ApiContext, make_server
from .scenario import Scenario, demo_scenario
from .sim import ScenarioInvalid, Simulation

MODE_FLAGS = {"baseline": "BASELINE", "auto": "AUTO_PREEMPT", "operator": "OPERATOR"}

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greencorridor",
        description="Emergency-vehicle green-corridor platform: deterministic "
                    "traffic simulation, control room service and NMEA tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run", help="run a scenario and write metrics plus the event log",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_run.add_argument("scenario", help="scenario JSON file")
    p_run.add_argument("--mode", action="append", choices=sorted(MODE_FLAGS),
                       default=None,
                       help="override the scenario mode; repeat to compare runs "
                            "(default: the scenario's own mode)")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed (default: scenario seed)")
    p_run.add_argument("--out", default="out",
                       help="directory for reports and event logs")

    p_serve = sub.add_parser(
        "serve", help="run the simulation in real time behind the operator HTTP API",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_serve.add_argument("scenario", help="scenario JSON file")
    p_serve.add_argument("--listen", default="127.0.0.1:8088",
                         help="host:port for the HTTP API")
    p_serve.add_argument("--speed", type=float, default=1.0,
                         help="wall-clock speed factor (10 = ten sim seconds per second)")
    p_serve.add_argument("--mode", choices=sorted(MODE_FLAGS), default=None,
                         help="override the scenario mode (default: scenario mode)")
    p_serve.add_argument("--seed", type=int, default=None,
                         help="override the scenario seed (default: scenario seed)")
    p_serve.add_argument("--out", default="out",
                         help="directory for the event log flushed on shutdown")

    p_parse = sub.add_parser(
        "parse", help="decode an NMEA sentence file, one sentence per line",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_parse.add_argument("file", help="text file of NMEA sentences")

    p_demo = sub.add_parser(
        "demo", help="write the bundled 4x4 demo scenario",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_demo.add_argument("--out", default="demo.scenario.json",
                        help="where to write the scenario file")
    return parser


def _load_scenario(path: str) -> Scenario:
    file = Path(path)
    if not file.is_file():
        raise FileNotFoundError(f"scenario file not found: {file}")
    return Scenario.from_file(file)


def _print_metrics(metrics) -> None:
    d = metrics.to_dict()
    print(f"scenario {d['scenario']}  mode {d['mode']}  seed {d['seed']}"
          f"  completed {'yes' if d['completed'] else 'NO'}")
    print(f"{'ambulance':<12} {'travel_s':>9} {'stops':>6} {'arrived':>8}")
    for amb_id, row in d["ambulances"].items():
        travel = "-" if row["travel_time_s"] is None else f"{row['travel_time_s']:.2f}"
        arrived = "yes" if row["arrive_s"] is not None else "no"
        print(f"{amb_id:<12} {travel:>9} {row['stops']:>6} {arrived:>8}")
    msg = d["messages"]
    print(f"messages: sent {msg['sent']}, delivered {msg['delivered']}, "
          f"lost {msg['lost']}, dropped {msg['dropped_busy']}")
    pre = d["preempts"]
    print(f"preempts: {pre['requests']} requests, {pre['releases']} releases")


def cmd_run(args) -> int:
    try:
        scenario = _load_scenario(args.scenario)
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except ScenarioInvalid as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    modes = [MODE_FLAGS[m] for m in args.mode] if args.mode else [scenario.sim_config().mode]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for mode in modes:
        cfg = scenario.sim_config(mode=mode, seed=args.seed)
        sim = Simulation(scenario, cfg)
        metrics = sim.run()
        results[mode] = metrics
        stem = f"{scenario.name}-{mode.lower()}-seed{cfg.seed}"
        report_path = out_dir / f"{stem}.report.json"
        with open(report_path, "w", encoding="ascii") as fh:
            json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        sim.events.write_jsonl(out_dir / f"{stem}.events.jsonl")
        _print_metrics(metrics)
        print(f"report: {report_path}")
        print()
    if len(results) > 1:
        names = list(results)
        first, second = results[names[0]], results[names[1]]
        deltas = []
        for amb_id in sorted(second.per_ambulance):
            a = second.per_ambulance[amb_id].travel_time_s
            b = first.per_ambulance[amb_id].travel_time_s
            if a is None or b is None:
                deltas.append(f"{amb_id} n/a")
            else:
                deltas.append(f"{amb_id} {a - b:+.2f} s")
        print(f"travel time delta ({names[1]} - {names[0]}): " + "; ".join(deltas))
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        scenario = _load_scenario(args.scenario)
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except ScenarioInvalid as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    mode = MODE_FLAGS[args.mode] if args.mode else None
    sim = Simulation(scenario, scenario.sim_config(mode=mode, seed=args.seed))

    host, _, port_text = args.listen.rpartition(":")
    static_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    ctx = ApiContext(
        sim.room,
        clock=lambda: sim.now,
        static_dir=static_dir if static_dir.is_dir() else None,
        status=lambda: {
            "scenario": scenario.name,
            "mode": sim.cfg.mode,
            "now_s": sim.now,
            "horizon_s": sim.cfg.horizon_s,
            "finished": sim.finished,
        },
    )
    try:
        server = make_server(ctx, host or "127.0.0.1", int(port_text))
    except OSError as exc:
        print(f"cannot listen on {args.listen}: {exc}", file=sys.stderr)
        return EXIT_IO

    stop = threading.Event()

    def pace():
        wall_start = time.monotonic()
        while not stop.is_set() and not sim.finished:
            target = wall_start + (sim.now + sim.cfg.dt_s) / args.speed
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            sim.step()

    runner = threading.Thread(target=pace, daemon=True)
    runner.start()
    print(f"serving {scenario.name} on http://{args.listen}  "
          f"(mode {sim.cfg.mode}, speed x{args.speed})")

    def shutdown(*_):
        raise KeyboardInterrupt

    os_signal.signal(os_signal.SIGTERM, shutdown)
    try:
        server.serve_forever(poll_interval=0.2)
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        ctx.stopping.set()
        runner.join(timeout=5.0)
        server.shutdown()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / f"{scenario.name}-serve.events.jsonl"
        sim.events.write_jsonl(log_path)
        print(f"\nevent log flushed to {log_path}")
    return EXIT_OK


def cmd_parse(args) -> int:
    path = Path(args.file)
    try:
        text = path.read_text(encoding="ascii", errors="replace")
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_IO
    ok = rejected = 0
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            decoded = nmea.parse_sentence(line)
        except nmea.NmeaError as exc:
            print(f"{type(exc).__name__}: {line}")
            rejected += 1
            continue
        if isinstance(decoded, nmea.Unsupported):
            print(f"Unsupported({decoded.sentence_type}): {line}")
            rejected += 1
        elif decoded.has_fix():
            print(f"{decoded.source_sentence} lat={decoded.latitude:.6f} "
                  f"lon={decoded.longitude:.6f} utc={decoded.utc_time:.1f}")
            ok += 1
        else:
            print(f"{decoded.source_sentence} no-fix utc={decoded.utc_time:.1f}")
            ok += 1
    print(f"{ok} ok, {rejected} rejected")
    return EXIT_OK


def cmd_demo(args) -> int:
    scenario = demo_scenario()
    out = Path(args.out)
    scenario.to_file(out)
    print(f"wrote {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "serve": cmd_serve, "parse": cmd_parse, "demo": cmd_demo}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
