"""Scenario files: schema, validation, loading and the bundled demo city.

A scenario is one self-contained JSON document (graph, signals, ambulances,
transport and timing parameters) so any run is reproducible from a single
file plus a seed. Unknown fields are rejected, and semantic cross-checks
(dangling edges, phases over unknown approaches, ...) fail with a precise
reason before anything runs.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import jsonschema

from . import roadnet
from .roadnet import Edge, RoadGraph
from .signals import Phase, PhasePlan, TrafficController, conflicts_from_phases
from .sim import MODES, ScenarioInvalid, SimConfig

_NODE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lat", "lon"],
    "properties": {
        "lat": {"type": "number", "minimum": -90, "maximum": 90},
        "lon": {"type": "number", "minimum": -180, "maximum": 180},
    },
}

_EDGE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["from", "to", "length_m", "speed_mps"],
    "properties": {
        "from": {"type": "string"},
        "to": {"type": "string"},
        "length_m": {"type": "number", "exclusiveMinimum": 0},
        "speed_mps": {"type": "number", "exclusiveMinimum": 0},
    },
}

_SIGNAL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "node", "phases"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "node": {"type": "string"},
        "phases": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["green", "green_s"],
                "properties": {
                    "green": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "green_s": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "yellow_s": {"type": "number", "exclusiveMinimum": 0},
        "all_red_s": {"type": "number", "exclusiveMinimum": 0},
        "conflicts": {
            "type": "array",
            "items": {
                "type": "array",
                "minItems": 2,
                "maxItems": 2,
                "items": {"type": "string"},
            },
        },
        "initial_queues": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
    },
}

SCENARIO_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "graph", "ambulances", "sim"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "epoch": {"type": "string", "pattern": r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$"},
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nodes", "edges"],
            "properties": {
                "nodes": {"type": "object", "minProperties": 1,
                          "additionalProperties": _NODE_SCHEMA},
                "edges": {"type": "array", "items": _EDGE_SCHEMA},
                "hospitals": {"type": "object", "additionalProperties": {"type": "string"}},
                "signals": {"type": "array", "items": _SIGNAL_SCHEMA},
            },
        },
        "ambulances": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "start_node"],
                "properties": {
                    "id": {"type": "string", "pattern": "^[A-Za-z0-9_-]{1,16}$"},
                    "start_node": {"type": "string"},
                    "pinned_hospital": {"type": ["string", "null"]},
                    "msisdn": {"type": "string", "pattern": r"^\+?[0-9]{3,15}$"},
                },
            },
        },
        "sms": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "control_room_number": {"type": "string", "pattern": r"^\+?[0-9]{3,15}$"},
                "hospital_number": {"type": "string", "pattern": r"^\+?[0-9]{3,15}$"},
                "latency_min_s": {"type": "number", "minimum": 0},
                "latency_max_s": {"type": "number", "minimum": 0},
                "loss_probability": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt_s": {"type": "number", "exclusiveMinimum": 0},
                "horizon_s": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "mode": {"enum": list(MODES)},
                "queue_discharge_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "control_room": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lead_time_s": {"type": "number", "minimum": 0},
                "passage_margin_s": {"type": "number", "minimum": 0},
                "stale_after_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


class Scenario:
    """A validated scenario document with builders for the live objects."""

    def __init__(self, data: dict):
        try:
            jsonschema.validate(data, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path)
            raise ScenarioInvalid(f"schema: {exc.message} (at {path or 'root'})") from exc
        self.data = data
        self._cross_validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- validated views -----------------------------------------------------

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def epoch(self) -> datetime:
        stamp = self.data.get("epoch", "2020-01-01T00:00:00Z")
        return datetime.strptime(stamp, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)

    @property
    def ambulances(self) -> list[dict]:
        out = []
        for i, amb in enumerate(self.data["ambulances"]):
            entry = dict(amb)
            entry.setdefault("pinned_hospital", None)
            entry.setdefault("msisdn", f"+1555000{i + 1:04d}")
            out.append(entry)
        return out

    @property
    def control_room_number(self) -> str:
        return self.data.get("sms", {}).get("control_room_number", "+1000001")

    @property
    def hospital_number(self) -> str:
        return self.data.get("sms", {}).get("hospital_number", "+1000002")

    @property
    def lead_time_s(self) -> float:
        return self.data.get("control_room", {}).get("lead_time_s", 20.0)

    @property
    def passage_margin_s(self) -> float:
        return self.data.get("control_room", {}).get("passage_margin_s", 10.0)

    @property
    def stale_after_s(self) -> float:
        return self.data.get("control_room", {}).get("stale_after_s", 3.0)

    def sim_config(self, mode: str | None = None, seed: int | None = None) -> SimConfig:
        sim = self.data.get("sim", {})
        sms = self.data.get("sms", {})
        return SimConfig(
            dt_s=sim.get("dt_s", 0.1),
            horizon_s=sim.get("horizon_s", 300.0),
            seed=sim.get("seed", 0) if seed is None else seed,
            mode=sim.get("mode", "AUTO_PREEMPT") if mode is None else mode,
            latency_min_s=sms.get("latency_min_s", 0.0),
            latency_max_s=sms.get("latency_max_s", 0.0),
            loss_probability=sms.get("loss_probability", 0.0),
            queue_discharge_s=sim.get("queue_discharge_s", 2.0),
        )

    def pinned_hospitals(self) -> dict[str, str]:
        return {a["id"]: a["pinned_hospital"] for a in self.ambulances if a["pinned_hospital"]}

    def initial_queues(self) -> dict[tuple[str, str], float]:
        queues: dict[tuple[str, str], float] = {}
        for sig in self.data["graph"].get("signals", []):
            for approach, count in sorted(sig.get("initial_queues", {}).items()):
                queues[(sig["id"], approach)] = float(count)
        return queues

    # -- builders -------------------------------------------------------------

    def build_graph(self) -> RoadGraph:
        g = self.data["graph"]
        edges = [
            Edge(src=e["from"], dst=e["to"], length_m=e["length_m"], speed_mps=e["speed_mps"])
            for e in g["edges"]
        ]
        intersections = {sig["node"]: sig["id"] for sig in g.get("signals", [])}
        return RoadGraph(
            nodes={n: (v["lat"], v["lon"]) for n, v in g["nodes"].items()},
            edges=edges,
            intersections=intersections,
            hospitals=g.get("hospitals", {}),
        )

    def build_controllers(self) -> dict[str, TrafficController]:
        graph = self.build_graph()
        controllers: dict[str, TrafficController] = {}
        for sig in self.data["graph"].get("signals", []):
            approaches = {e.src for e in graph.edges.values() if e.dst == sig["node"]}
            phases = tuple(
                Phase(frozenset(p["green"]), p["green_s"]) for p in sig["phases"]
            )
            conflicts = (
                frozenset(frozenset(pair) for pair in sig["conflicts"])
                if "conflicts" in sig
                else conflicts_from_phases(p.green for p in phases)
            )
            plan = PhasePlan(
                phases=phases,
                yellow_s=sig.get("yellow_s", 3.0),
                all_red_s=sig.get("all_red_s", 1.0),
                conflicts=conflicts,
            )
            controllers[sig["id"]] = TrafficController(sig["id"], plan, approaches)
        return controllers

    # -- semantic checks --------------------------------------------------------

    def _cross_validate(self) -> None:
        g = self.data["graph"]
        nodes = g["nodes"]
        for e in g["edges"]:
            for end in (e["from"], e["to"]):
                if end not in nodes:
                    raise ScenarioInvalid(f"edge {e['from']}->{e['to']}: unknown node {end!r}")
            if e["from"] == e["to"]:
                raise ScenarioInvalid(f"edge {e['from']}->{e['to']} is a self-loop")
        for hospital in g.get("hospitals", {}):
            if hospital not in nodes:
                raise ScenarioInvalid(f"hospital at unknown node {hospital!r}")
        in_neighbors: dict[str, set] = {}
        for e in g["edges"]:
            in_neighbors.setdefault(e["to"], set()).add(e["from"])
        seen_ids: set[str] = set()
        seen_nodes: set[str] = set()
        for sig in g.get("signals", []):
            if sig["id"] in seen_ids:
                raise ScenarioInvalid(f"duplicate controller id {sig['id']!r}")
            if sig["node"] in seen_nodes:
                raise ScenarioInvalid(f"two controllers on node {sig['node']!r}")
            seen_ids.add(sig["id"])
            seen_nodes.add(sig["node"])
            if sig["node"] not in nodes:
                raise ScenarioInvalid(f"signal {sig['id']}: unknown node {sig['node']!r}")
            approaches = in_neighbors.get(sig["node"], set())
            for phase in sig["phases"]:
                for a in phase["green"]:
                    if a not in approaches:
                        raise ScenarioInvalid(
                            f"signal {sig['id']}: {a!r} is not an approach of {sig['node']}"
                        )
            for a in sig.get("initial_queues", {}):
                if a not in approaches:
                    raise ScenarioInvalid(
                        f"signal {sig['id']}: queue on unknown approach {a!r}"
                    )
        ids = set()
        for amb in self.data["ambulances"]:
            if amb["id"] in ids:
                raise ScenarioInvalid(f"duplicate ambulance id {amb['id']!r}")
            ids.add(amb["id"])
            if amb["start_node"] not in nodes:
                raise ScenarioInvalid(f"ambulance {amb['id']}: unknown start {amb['start_node']!r}")
            pinned = amb.get("pinned_hospital")
            if pinned is not None and pinned not in g.get("hospitals", {}):
                raise ScenarioInvalid(f"ambulance {amb['id']}: unknown hospital {pinned!r}")
        if not g.get("hospitals"):
            raise ScenarioInvalid("scenario needs at least one hospital")
        sms = self.data.get("sms", {})
        if sms.get("latency_max_s", 0.0) < sms.get("latency_min_s", 0.0):
            raise ScenarioInvalid("sms.latency_max_s < sms.latency_min_s")
        self.sim_config()  # SimConfig __post_init__ re-checks the numeric ranges


def demo_scenario(name: str = "demo") -> Scenario:
    """The bundled 4x4 grid city: fast interior arterials, slow periphery,
    four signalized interior intersections, two hospitals, two ambulances."""
    base_lat, base_lon, spacing = 28.6, 77.2, 0.005
    fast, slow = 15.0, 7.0
    nodes: dict[str, dict] = {}
    for r in range(4):
        for c in range(4):
            nodes[f"n{r}{c}"] = {"lat": base_lat + spacing * r, "lon": base_lon + spacing * c}

    def length(a: str, b: str) -> float:
        return round(roadnet.haversine_m(nodes[a]["lat"], nodes[a]["lon"],
                                         nodes[b]["lat"], nodes[b]["lon"]), 1)

    edges = []
    for r in range(4):
        for c in range(4):
            here = f"n{r}{c}"
            if c < 3:  # horizontal, along row r
                other = f"n{r}{c + 1}"
                speed = fast if r in (1, 2) else slow
                edges.append({"from": here, "to": other, "length_m": length(here, other),
                              "speed_mps": speed})
                edges.append({"from": other, "to": here, "length_m": length(here, other),
                              "speed_mps": speed})
            if r < 3:  # vertical, along column c
                other = f"n{r + 1}{c}"
                speed = fast if c in (1, 2) else slow
                edges.append({"from": here, "to": other, "length_m": length(here, other),
                              "speed_mps": speed})
                edges.append({"from": other, "to": here, "length_m": length(here, other),
                              "speed_mps": speed})

    signals = []
    for r in (1, 2):
        for c in (1, 2):
            node = f"n{r}{c}"
            ns = [f"n{r - 1}{c}", f"n{r + 1}{c}"]
            ew = [f"n{r}{c - 1}", f"n{r}{c + 1}"]
            signals.append({
                "id": f"S{r}{c}",
                "node": node,
                "phases": [
                    {"green": ew, "green_s": 40.0},
                    {"green": ns, "green_s": 40.0},
                ],
                "yellow_s": 3.0,
                "all_red_s": 1.0,
                "initial_queues": {a: 2 for a in ns + ew},
            })

    data = {
        "name": name,
        "epoch": "2020-01-01T00:00:00Z",
        "graph": {
            "nodes": nodes,
            "edges": edges,
            "hospitals": {"n13": "City Hospital", "n31": "General Hospital"},
            "signals": signals,
        },
        "ambulances": [
            {"id": "AMB1", "start_node": "n10"},
            {"id": "AMB2", "start_node": "n02"},
        ],
        "sms": {
            "control_room_number": "+1000001",
            "hospital_number": "+1000002",
            "latency_min_s": 0.3,
            "latency_max_s": 0.9,
            "loss_probability": 0.0,
        },
        "sim": {
            "dt_s": 0.1,
            "horizon_s": 300.0,
            "seed": 7,
            "mode": "AUTO_PREEMPT",
            "queue_discharge_s": 2.0,
        },
        "control_room": {
            "lead_time_s": 20.0,
            "passage_margin_s": 10.0,
            "stale_after_s": 3.0,
        },
    }
    return Scenario(data)
