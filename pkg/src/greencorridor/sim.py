"""Deterministic discrete-time scenario engine.

One fixed per-tick order - SMS network, control room, signal controllers,
approach queues, vehicles, then the 1 Hz GPS/device pass - means a seed
plus a scenario fully determines every event, message and metric.
Background traffic is a per-approach queue that drains while green; the
ambulance always obeys red lights so the preemption benefit is the
difference between modes, not a rule change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .control_room import ControlRoom, EventLog
from .device import DeviceConfig, TelemetryDevice
from .modem import Sim900Modem, SmsNetwork
from . import nmea, roadnet
from .roadnet import RoadGraph, Route
from .signals import TrafficController

MODES = ("BASELINE", "AUTO_PREEMPT", "OPERATOR")
_EPS = 1e-9


class ScenarioInvalid(Exception):
    """Scenario failed validation; the message states the precise reason."""


@dataclass
class SimConfig:
    dt_s: float = 0.1
    horizon_s: float = 300.0
    seed: int = 0
    mode: str = "AUTO_PREEMPT"
    latency_min_s: float = 0.0
    latency_max_s: float = 0.0
    loss_probability: float = 0.0
    queue_discharge_s: float = 2.0

    def __post_init__(self):
        if self.dt_s <= 0:
            raise ScenarioInvalid("sim.dt_s must be positive")
        if self.horizon_s <= 0:
            raise ScenarioInvalid("sim.horizon_s must be positive")
        if self.mode not in MODES:
            raise ScenarioInvalid(f"sim.mode must be one of {MODES}")
        if self.queue_discharge_s <= 0:
            raise ScenarioInvalid("sim.queue_discharge_s must be positive")


@dataclass
class VehicleState:
    """Ambulance kinematics along its fixed route."""

    ambulance_id: str
    route: Route
    edge_index: int = 0
    dist_on_edge_m: float = 0.0
    stopped: bool = False
    stops_count: int = 0
    depart_time: float = 0.0
    arrive_time: Optional[float] = None
    waits: dict[str, float] = field(default_factory=dict)
    node_pass_times: dict[str, float] = field(default_factory=dict)
    final_fix_sent: bool = False

    @property
    def arrived(self) -> bool:
        return self.arrive_time is not None

    def position(self, g: RoadGraph) -> tuple[float, float]:
        nodes = self.route.nodes
        if self.arrived or self.edge_index >= len(nodes) - 1:
            return g.nodes[nodes[-1]]
        a = g.nodes[nodes[self.edge_index]]
        b = g.nodes[nodes[self.edge_index + 1]]
        edge = g.edges[(nodes[self.edge_index], nodes[self.edge_index + 1])]
        frac = self.dist_on_edge_m / edge.length_m
        return (a[0] + (b[0] - a[0]) * frac, a[1] + (b[1] - a[1]) * frac)


@dataclass
class AmbulanceMetrics:
    ambulance_id: str
    depart_s: float
    arrive_s: Optional[float]
    travel_time_s: Optional[float]
    stops_count: int
    waits_s: dict[str, float]
    node_pass_times: dict[str, float]


@dataclass
class RunMetrics:
    scenario_name: str
    mode: str
    seed: int
    per_ambulance: dict[str, AmbulanceMetrics]
    messages_sent: int
    messages_delivered: int
    messages_lost: int
    messages_dropped_busy: int
    preempt_requests: int
    preempt_releases: int
    parse_rejects: int
    completed: bool
    end_time_s: float

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_name,
            "mode": self.mode,
            "seed": self.seed,
            "completed": self.completed,
            "end_time_s": round(self.end_time_s, 3),
            "ambulances": {
                amb_id: {
                    "depart_s": m.depart_s,
                    "arrive_s": None if m.arrive_s is None else round(m.arrive_s, 3),
                    "travel_time_s": None if m.travel_time_s is None else round(m.travel_time_s, 3),
                    "stops": m.stops_count,
                    "waits_s": {k: round(v, 3) for k, v in sorted(m.waits_s.items())},
                    "node_pass_times": {k: round(v, 3) for k, v in sorted(m.node_pass_times.items())},
                }
                for amb_id, m in sorted(self.per_ambulance.items())
            },
            "messages": {
                "sent": self.messages_sent,
                "delivered": self.messages_delivered,
                "lost": self.messages_lost,
                "dropped_busy": self.messages_dropped_busy,
            },
            "preempts": {
                "requests": self.preempt_requests,
                "releases": self.preempt_releases,
            },
            "parse_rejects": self.parse_rejects,
        }


def synthesize_fix(vehicle: VehicleState, g: RoadGraph, now: float,
                   epoch_offset_s: float = 0.0) -> bytes:
    """One valid GGA sentence at the vehicle's interpolated position."""
    lat, lon = vehicle.position(g)
    utc = (epoch_offset_s + now) % 86400.0
    return (nmea.make_gga(lat, lon, utc) + "\r\n").encode("ascii")


class Simulation:
    """A scenario instance: build once, step deterministically, read metrics."""

    def __init__(self, scenario: "Scenario", cfg: Optional[SimConfig] = None):
        self.scenario = scenario
        self.cfg = cfg or scenario.sim_config()
        self.graph = scenario.build_graph()
        self.controllers = scenario.build_controllers()
        self.network = SmsNetwork(
            latency_min=self.cfg.latency_min_s,
            latency_max=self.cfg.latency_max_s,
            loss_probability=self.cfg.loss_probability,
            rng_seed=self.cfg.seed,
        )
        self.epoch = scenario.epoch
        self.room = ControlRoom(
            graph=self.graph,
            controllers=self.controllers,
            lead_time_s=scenario.lead_time_s,
            passage_margin_s=scenario.passage_margin_s,
            stale_after_s=scenario.stale_after_s,
            auto_dispatch=self.cfg.mode == "AUTO_PREEMPT",
            pinned_hospitals=scenario.pinned_hospitals(),
            epoch=self.epoch,
        )
        self.vehicles: dict[str, VehicleState] = {}
        self.devices: dict[str, TelemetryDevice] = {}
        self._epoch_offset_s = (
            self.epoch - self.epoch.replace(hour=0, minute=0, second=0, microsecond=0)
        ).total_seconds()
        for amb in scenario.ambulances:
            route = self._route_for(amb)
            self.vehicles[amb["id"]] = VehicleState(ambulance_id=amb["id"], route=route)
            modem = Sim900Modem(
                self.network,
                source_addr=amb["msisdn"],
                clock=lambda: self.now,
            )
            dev_cfg = DeviceConfig(
                ambulance_id=amb["id"],
                control_room_number=scenario.control_room_number,
                hospital_number=scenario.hospital_number,
            )
            self.devices[amb["id"]] = TelemetryDevice(dev_cfg, modem, epoch=self.epoch)
        # background traffic: queued vehicles per (controller, approach)
        self.queues: dict[tuple[str, str], float] = dict(scenario.initial_queues())
        self.now = 0.0
        self._tick = 0
        self._next_gps_s = 1.0
        self.finished = False
        self._finalized = False

    def _route_for(self, amb: dict) -> Route:
        start = amb["start_node"]
        pinned = amb.get("pinned_hospital")
        if pinned:
            return roadnet.shortest_path(self.graph, start, pinned)
        _, route = roadnet.nearest_hospital(self.graph, start)
        return route

    @property
    def events(self) -> EventLog:
        return self.room.events

    # -- per-tick phases ----------------------------------------------------

    def step(self) -> None:
        """Advance exactly one dt tick in the fixed phase order.

        The whole tick runs under the control room lock so concurrent API
        readers (serve mode) observe consistent states, never mid-tick ones.
        """
        if self.finished:
            return
        with self.room.lock:
            self._tick += 1
            self.now = self._tick * self.cfg.dt_s
            now = self.now
            self._deliver_sms(now)
            self.room.dispatch(now)
            for cid in sorted(self.controllers):
                self.controllers[cid].step(self.cfg.dt_s)
            self.room.observe_signals(now)
            self._drain_queues()
            for amb_id in sorted(self.vehicles):
                self._step_vehicle(self.vehicles[amb_id], self.cfg.dt_s, now - self.cfg.dt_s)
            if now + _EPS >= self._next_gps_s:
                gps_second = self._next_gps_s
                self._next_gps_s += 1.0
                self._gps_and_device_pass(gps_second)
            if self._run_complete() or now + _EPS >= self.cfg.horizon_s:
                self.finished = True

    def _deliver_sms(self, now: float) -> None:
        for env in self.network.deliver_due(now):
            if env.to_addr == self.scenario.control_room_number:
                self.room.ingest_message(env.body, now)
            else:
                self.room.note_hospital_copy(env.body, now)

    def _drain_queues(self) -> None:
        rate = self.cfg.dt_s / self.cfg.queue_discharge_s
        for (cid, approach), remaining in self.queues.items():
            if remaining > 0 and approach in self.controllers[cid].green_approaches():
                self.queues[(cid, approach)] = max(0.0, remaining - rate)

    def _queue_blocked(self, cid: str, approach: str) -> bool:
        return self.queues.get((cid, approach), 0.0) > _EPS

    def _step_vehicle(self, v: VehicleState, dt: float, start_time: float) -> None:
        if v.arrived:
            return
        g = self.graph
        nodes = v.route.nodes
        remaining = dt
        while remaining > _EPS and not v.arrived:
            edge = g.edges[(nodes[v.edge_index], nodes[v.edge_index + 1])]
            next_node = nodes[v.edge_index + 1]
            dist_left = edge.length_m - v.dist_on_edge_m
            time_to_node = dist_left / edge.speed_mps
            if time_to_node > remaining:
                v.dist_on_edge_m += edge.speed_mps * remaining
                if v.stopped:
                    v.stopped = False
                remaining = 0.0
                break
            cid = g.intersections.get(next_node)
            if cid is not None:
                approach = nodes[v.edge_index]
                green = approach in self.controllers[cid].green_approaches()
                if not green or self._queue_blocked(cid, approach):
                    # drive up to the stop line, then wait out the tick
                    v.dist_on_edge_m = edge.length_m
                    remaining -= time_to_node
                    if not v.stopped:
                        v.stopped = True
                        v.stops_count += 1
                    v.waits[cid] = v.waits.get(cid, 0.0) + remaining
                    remaining = 0.0
                    break
                if v.stopped:
                    # a waiting vehicle reacts when it samples the green:
                    # it crosses at this tick's end and rolls from the next
                    v.waits[cid] = v.waits.get(cid, 0.0) + remaining
                    v.stopped = False
                    v.node_pass_times[next_node] = start_time + dt
                    v.edge_index += 1
                    v.dist_on_edge_m = 0.0
                    if v.edge_index >= len(nodes) - 1:
                        v.arrive_time = start_time + dt
                    remaining = 0.0
                    break
            # cross into the node
            remaining -= time_to_node
            v.stopped = False
            crossed_at = start_time + (dt - remaining)
            v.node_pass_times[next_node] = crossed_at
            v.edge_index += 1
            v.dist_on_edge_m = 0.0
            if v.edge_index >= len(nodes) - 1:
                v.arrive_time = crossed_at

    def _gps_and_device_pass(self, second: float) -> None:
        window_start = second - 1.0
        for amb_id in sorted(self.devices):
            vehicle = self.vehicles[amb_id]
            if vehicle.arrived and vehicle.final_fix_sent:
                continue
            sentence = synthesize_fix(vehicle, self.graph, second, self._epoch_offset_s)
            device = self.devices[amb_id]
            device.run_parse_window([(second - 0.001, sentence)], window_start)
            sent = device.tick(second)
            if vehicle.arrived and sent:
                vehicle.final_fix_sent = True

    def _run_complete(self) -> bool:
        if not all(v.arrived for v in self.vehicles.values()):
            return False
        if not all(v.final_fix_sent for v in self.vehicles.values()):
            return False
        return not self.network.in_flight

    # -- whole-run driver ---------------------------------------------------

    def run(self) -> RunMetrics:
        while not self.finished:
            self.step()
        return self.finish()

    def finish(self) -> RunMetrics:
        """Drain transport, release outstanding holds, freeze metrics."""
        if not self._finalized:
            self.network.drain()  # undelivered messages still count exactly once
            self.room.finalize(self.now)
            self._finalized = True
        per_amb: dict[str, AmbulanceMetrics] = {}
        for amb_id in sorted(self.vehicles):
            v = self.vehicles[amb_id]
            per_amb[amb_id] = AmbulanceMetrics(
                ambulance_id=amb_id,
                depart_s=v.depart_time,
                arrive_s=v.arrive_time,
                travel_time_s=None if v.arrive_time is None else v.arrive_time - v.depart_time,
                stops_count=v.stops_count,
                waits_s=dict(v.waits),
                node_pass_times=dict(v.node_pass_times),
            )
        sent = sum(d.state.messages_sent for d in self.devices.values())
        dropped = sum(d.state.messages_dropped_busy for d in self.devices.values())
        kinds = [r.kind for r in self.events.read(0)]
        return RunMetrics(
            scenario_name=self.scenario.name,
            mode=self.cfg.mode,
            seed=self.cfg.seed,
            per_ambulance=per_amb,
            messages_sent=sent + dropped,
            messages_delivered=self.network.delivered,
            messages_lost=self.network.lost,
            messages_dropped_busy=dropped,
            preempt_requests=kinds.count("PREEMPT_SENT"),
            preempt_releases=kinds.count("RELEASE_SENT"),
            parse_rejects=self.room.parse_rejects,
            completed=all(v.arrived for v in self.vehicles.values()),
            end_time_s=self.now,
        )


def run(scenario: "Scenario", cfg: Optional[SimConfig] = None) -> tuple[RunMetrics, EventLog]:
    """Execute the whole pipeline; returns metrics plus the event log."""
    sim = Simulation(scenario, cfg)
    metrics = sim.run()
    return metrics, sim.events
