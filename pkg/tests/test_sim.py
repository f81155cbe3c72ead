"""Scenario engine tests: kinematics, GPS synthesis, modes, determinism."""

import json
import math

import pytest

from greencorridor import nmea, roadnet
from greencorridor.scenario import Scenario, demo_scenario
from greencorridor.sim import ScenarioInvalid, SimConfig, Simulation, run

LAT_PER_M = 1.0 / (math.pi / 180.0 * 6_371_000.0)
LON_PER_M = LAT_PER_M  # at the equator


def line_scenario(signal_green_offset_s: float = None, queue: int = 0,
                  horizon: float = 300.0) -> Scenario:
    """a -> b -> c with a signal at b whose approach turns green at a known time.

    With signal_green_offset_s None the approach from 'a' is always green.
    Otherwise a cross-street phase holds red until the given instant
    (yellow 3 + all-red 1 included in the arithmetic: green onset is exact).
    """
    nodes = {
        "a": {"lat": 0.0, "lon": 0.0},
        "b": {"lat": 600.0 * LAT_PER_M, "lon": 0.0},
        "c": {"lat": 1200.0 * LAT_PER_M, "lon": 0.0},
        "x": {"lat": 600.0 * LAT_PER_M, "lon": -100.0 * LON_PER_M},
    }
    edges = [
        {"from": "a", "to": "b", "length_m": 600.0, "speed_mps": 10.0},
        {"from": "b", "to": "c", "length_m": 600.0, "speed_mps": 10.0},
        {"from": "x", "to": "b", "length_m": 100.0, "speed_mps": 10.0},
    ]
    if signal_green_offset_s is None:
        phases = [{"green": ["a"], "green_s": 1000.0}]
    else:
        phases = [
            {"green": ["x"], "green_s": signal_green_offset_s - 4.0},
            {"green": ["a"], "green_s": 30.0},
        ]
    signal = {
        "id": "SB", "node": "b", "phases": phases,
        "yellow_s": 3.0, "all_red_s": 1.0,
        "initial_queues": {"a": queue},
    }
    data = {
        "name": "line",
        "graph": {"nodes": nodes, "edges": edges,
                  "hospitals": {"c": "End"}, "signals": [signal]},
        "ambulances": [{"id": "AMB1", "start_node": "a"}],
        "sms": {"latency_min_s": 0.0, "latency_max_s": 0.0, "loss_probability": 0.0},
        "sim": {"dt_s": 0.1, "horizon_s": horizon, "seed": 1, "mode": "BASELINE"},
        "control_room": {"lead_time_s": 20.0, "passage_margin_s": 10.0},
    }
    return Scenario(data)


class TestVehicleKinematics:
    def test_green_throughout_free_flow_arrival(self):
        sc = line_scenario(signal_green_offset_s=None)
        metrics, _ = run(sc)
        m = metrics.per_ambulance["AMB1"]
        assert m.travel_time_s == pytest.approx(120.0, abs=1e-6)
        assert m.stops_count == 0
        assert m.waits_s == {}

    def test_red_with_ten_seconds_remaining_waits_ten(self):
        # approach green onset at t=70, arrival at t=60
        sc = line_scenario(signal_green_offset_s=70.0)
        metrics, _ = run(sc)
        m = metrics.per_ambulance["AMB1"]
        assert m.waits_s["SB"] == pytest.approx(10.0, abs=0.001)
        assert m.stops_count == 1
        assert m.travel_time_s == pytest.approx(130.0, abs=0.001)

    def test_queue_adds_discharge_time(self):
        # queue 3 at 2 s per vehicle: wait = remaining red 10 + 6
        sc = line_scenario(signal_green_offset_s=70.0, queue=3)
        metrics, _ = run(sc)
        m = metrics.per_ambulance["AMB1"]
        assert m.waits_s["SB"] == pytest.approx(16.0, abs=0.2)
        assert m.travel_time_s == pytest.approx(136.0, abs=0.2)

    def test_node_pass_times_recorded(self):
        sc = line_scenario(signal_green_offset_s=None)
        sim = Simulation(sc)
        metrics = sim.run()
        m = metrics.per_ambulance["AMB1"]
        assert m.node_pass_times["b"] == pytest.approx(60.0, abs=1e-6)
        assert m.node_pass_times["c"] == pytest.approx(120.0, abs=1e-6)


class TestSynthesizeFix:
    def test_vehicle_at_node(self):
        sc = line_scenario()
        sim = Simulation(sc)
        v = sim.vehicles["AMB1"]
        fix = nmea.parse_sentence(
            __import__("greencorridor.sim", fromlist=["synthesize_fix"])
            .synthesize_fix(v, sim.graph, 0.0).decode().strip())
        assert fix.latitude == pytest.approx(0.0, abs=1e-6)
        assert fix.longitude == pytest.approx(0.0, abs=1e-6)

    def test_mid_edge_midpoint(self):
        from greencorridor.sim import synthesize_fix
        sc = line_scenario()
        sim = Simulation(sc)
        v = sim.vehicles["AMB1"]
        v.dist_on_edge_m = 300.0
        fix = nmea.parse_sentence(synthesize_fix(v, sim.graph, 30.0).decode().strip())
        midpoint = (sim.graph.nodes["a"][0] + sim.graph.nodes["b"][0]) / 2
        assert fix.latitude == pytest.approx(midpoint, abs=1e-6)

    def test_every_synthesized_sentence_parses(self):
        from greencorridor.sim import synthesize_fix
        sc = demo_scenario()
        sim = Simulation(sc)
        for _ in range(100):
            sim.step()
        for amb_id, v in sim.vehicles.items():
            decoded = nmea.parse_sentence(synthesize_fix(v, sim.graph, sim.now).decode().strip())
            assert isinstance(decoded, nmea.GeoPosition)
            assert decoded.fix_quality == 1


class TestModes:
    def test_no_signal_route_identical_in_all_modes(self):
        nodes = {"a": {"lat": 0.0, "lon": 0.0}, "b": {"lat": 0.01, "lon": 0.0}}
        data = {
            "name": "plain",
            "graph": {"nodes": nodes,
                      "edges": [{"from": "a", "to": "b", "length_m": 1112.0, "speed_mps": 10.0}],
                      "hospitals": {"b": "H"}, "signals": []},
            "ambulances": [{"id": "AMB1", "start_node": "a"}],
            "sim": {"dt_s": 0.1, "horizon_s": 200.0, "seed": 3},
        }
        sc = Scenario(data)
        times = []
        for mode in ("BASELINE", "AUTO_PREEMPT", "OPERATOR"):
            metrics, _ = run(sc, sc.sim_config(mode=mode))
            times.append(metrics.per_ambulance["AMB1"].travel_time_s)
        assert times[0] == times[1] == times[2]

    def test_single_red_auto_strictly_better(self):
        sc = line_scenario(signal_green_offset_s=70.0)
        base, _ = run(sc, sc.sim_config(mode="BASELINE"))
        auto, _ = run(sc, sc.sim_config(mode="AUTO_PREEMPT"))
        t_base = base.per_ambulance["AMB1"].travel_time_s
        t_auto = auto.per_ambulance["AMB1"].travel_time_s
        assert base.per_ambulance["AMB1"].stops_count >= 1
        assert t_auto < t_base

    def test_benefit_monotone_on_demo(self):
        sc = demo_scenario()
        base, _ = run(sc, sc.sim_config(mode="BASELINE"))
        auto, _ = run(sc, sc.sim_config(mode="AUTO_PREEMPT"))
        for amb_id in base.per_ambulance:
            tb = base.per_ambulance[amb_id].travel_time_s
            ta = auto.per_ambulance[amb_id].travel_time_s
            assert ta <= tb
            if base.per_ambulance[amb_id].stops_count >= 1:
                assert ta < tb

    def test_zero_stop_corridor_on_demo(self):
        sc = demo_scenario()
        auto, _ = run(sc, sc.sim_config(mode="AUTO_PREEMPT"))
        for amb_id, m in auto.per_ambulance.items():
            assert m.stops_count == 0, f"{amb_id} stopped under preemption"


class TestDeterminism:
    def test_identical_logs_and_reports(self):
        sc = demo_scenario()
        runs = []
        for _ in range(2):
            metrics, log = run(sc, sc.sim_config(mode="AUTO_PREEMPT", seed=7))
            log_bytes = "\n".join(r.to_json() for r in log.read(0))
            report = json.dumps(metrics.to_dict(), sort_keys=True)
            runs.append((log_bytes, report))
        assert runs[0] == runs[1]

    def test_different_seed_changes_transport_timing(self):
        sc = demo_scenario()
        sc.data["sms"]["loss_probability"] = 0.3
        a, _ = run(sc, sc.sim_config(seed=1))
        b, _ = run(sc, sc.sim_config(seed=2))
        assert (a.messages_lost, a.messages_delivered) != (b.messages_lost, b.messages_delivered)

    def test_dt_robustness(self):
        sc = demo_scenario()
        times = {}
        for dt in (0.1, 0.05):
            sc.data["sim"]["dt_s"] = dt
            sc2 = Scenario(sc.data)
            metrics, _ = run(sc2, sc2.sim_config(mode="AUTO_PREEMPT"))
            times[dt] = {k: v.travel_time_s for k, v in metrics.per_ambulance.items()}
        for amb_id in times[0.1]:
            assert abs(times[0.1][amb_id] - times[0.05][amb_id]) < 2 * 0.1


class TestConservation:
    def test_sent_equals_delivered_lost_dropped(self):
        sc = demo_scenario()
        sc.data["sms"]["loss_probability"] = 0.2
        sc2 = Scenario(sc.data)
        metrics, _ = run(sc2, sc2.sim_config(mode="AUTO_PREEMPT", seed=11))
        assert metrics.messages_lost > 0
        assert metrics.messages_sent == (
            metrics.messages_delivered + metrics.messages_lost + metrics.messages_dropped_busy
        )


class TestScenarioValidation:
    def test_unknown_field_rejected(self):
        sc = demo_scenario()
        data = dict(sc.data)
        data["surprise"] = True
        with pytest.raises(ScenarioInvalid):
            Scenario(data)

    def test_dangling_edge_rejected(self):
        sc = demo_scenario()
        data = json.loads(json.dumps(sc.data))
        data["graph"]["edges"].append(
            {"from": "n00", "to": "ghost", "length_m": 10.0, "speed_mps": 1.0})
        with pytest.raises(ScenarioInvalid):
            Scenario(data)

    def test_phase_over_non_approach_rejected(self):
        sc = demo_scenario()
        data = json.loads(json.dumps(sc.data))
        data["graph"]["signals"][0]["phases"][0]["green"] = ["n33"]
        with pytest.raises(ScenarioInvalid):
            Scenario(data)

    def test_unknown_pinned_hospital_rejected(self):
        sc = demo_scenario()
        data = json.loads(json.dumps(sc.data))
        data["ambulances"][0]["pinned_hospital"] = "n00"
        with pytest.raises(ScenarioInvalid):
            Scenario(data)

    def test_bad_mode_rejected(self):
        with pytest.raises(ScenarioInvalid):
            SimConfig(mode="TURBO")
