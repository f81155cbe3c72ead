"""Traffic control room: SMS ingestion, tracking, corridors, arbitration.

Everything the room learns arrives as delivered text messages; everything
it decides leaves as preempt/release commands to signal controllers. All
state changes append to one gapless, immutable event log so a run can be
audited or replayed, and the operator API reads snapshot-consistent state
under the same lock that serializes inputs.
"""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Optional

from . import roadnet
from .device import parse_maps_link
from .roadnet import RoadGraph, Route
from .signals import NoSuchRequest, PreemptRequest, TrafficController, UnknownApproach

ARRIVAL_RADIUS_M = 5.0
PASS_EPSILON_M = 1.0

_BODY_RE = re.compile(
    r"^([A-Za-z0-9_-]{1,16}) "
    r"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z) "
    r"(https://maps\.google\.com/maps\?q=\S+)$"
)

EVENT_KINDS = (
    "MSG_RECEIVED",
    "TRACK_UPDATED",
    "ROUTE_SET",
    "PREEMPT_SENT",
    "RELEASE_SENT",
    "SIGNAL_CHANGED",
    "ARRIVED",
    "OPERATOR_ACTION",
)


class ControlRoomError(Exception):
    pass


class Rejected(ControlRoomError):
    """Operator command referenced an unknown entity."""


@dataclass(frozen=True)
class EventRecord:
    seq: int
    time: float
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "time": self.time, "kind": self.kind, "payload": self.payload},
            sort_keys=True,
            separators=(",", ":"),
        )


class EventLog:
    """Append-only, gapless-seq record store. One writer, many readers."""

    def __init__(self):
        self._records: list[EventRecord] = []
        self._cond = threading.Condition()

    def append(self, time: float, kind: str, payload: dict) -> EventRecord:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._cond:
            record = EventRecord(seq=len(self._records), time=time, kind=kind, payload=payload)
            self._records.append(record)
            self._cond.notify_all()
        return record

    def read(self, from_seq: int = 0) -> list[EventRecord]:
        with self._cond:
            return self._records[from_seq:]

    def wait_for(self, from_seq: int, timeout: float = 10.0) -> list[EventRecord]:
        """Block until records at/after from_seq exist (or timeout); then read."""
        with self._cond:
            self._cond.wait_for(lambda: len(self._records) > from_seq, timeout=timeout)
            return self._records[from_seq:]

    def __len__(self) -> int:
        with self._cond:
            return len(self._records)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for record in self.read(0):
                fh.write(record.to_json())
                fh.write("\n")


@dataclass
class CorridorEntry:
    """Lifecycle of one (ambulance, intersection) preemption window."""

    controller_id: str
    node: str
    approach: str
    offset_m: float
    eta: float
    activate_at: float
    release_by: float
    state: str = "IDLE"  # IDLE | REQUESTED | RELEASED
    preempts_sent: int = 0
    releases_sent: int = 0


@dataclass(frozen=True)
class CorridorPlan:
    ambulance_id: str
    entries: tuple[tuple[str, str, float, float], ...]  # (controller, approach, activate, release_by)


@dataclass
class AmbulanceTrack:
    ambulance_id: str
    fixes: list[tuple[float, float, float]] = field(default_factory=list)  # (t, lat, lon)
    matched_node: Optional[str] = None
    matched_dist_m: float = math.inf
    destination: Optional[str] = None
    pinned_hospital: Optional[str] = None
    route: Optional[Route] = None
    progress_m: float = 0.0
    arrived: bool = False
    stale_rejects: int = 0
    corridor: dict[str, CorridorEntry] = field(default_factory=dict)

    @property
    def last_fix(self) -> Optional[tuple[float, float, float]]:
        return self.fixes[-1] if self.fixes else None

    def status(self, now: float, stale_after_s: float) -> str:
        if self.arrived:
            return "ARRIVED"
        if self.fixes and now - self.fixes[-1][0] > stale_after_s:
            return "STALE"
        return "ACTIVE"


def _local_xy(lat: float, lon: float, lat0: float, lon0: float) -> tuple[float, float]:
    k = math.pi / 180.0 * roadnet.EARTH_RADIUS_M
    return ((lon - lon0) * math.cos(math.radians(lat0)) * k, (lat - lat0) * k)


def route_progress_m(g: RoadGraph, route: Route, lat: float, lon: float) -> float:
    """Arc-length along the route polyline of the fix's nearest projection.

    A flat local projection is plenty at desk scale; the result feeds
    passed/ahead decisions and ETA refinement, not navigation.
    """
    lat0, lon0 = g.nodes[route.nodes[0]]
    px, py = _local_xy(lat, lon, lat0, lon0)
    best_d2 = math.inf
    best_arc = 0.0
    for i in range(len(route.nodes) - 1):
        ax, ay = _local_xy(*g.nodes[route.nodes[i]], lat0, lon0)
        bx, by = _local_xy(*g.nodes[route.nodes[i + 1]], lat0, lon0)
        vx, vy = bx - ax, by - ay
        seg2 = vx * vx + vy * vy
        t = 0.0 if seg2 == 0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / seg2))
        qx, qy = ax + t * vx, ay + t * vy
        d2 = (px - qx) ** 2 + (py - qy) ** 2
        if d2 < best_d2 - 1e-9:
            best_d2 = d2
            seg_len = route.arrival_offsets_m[i + 1] - route.arrival_offsets_m[i]
            best_arc = route.arrival_offsets_m[i] + t * seg_len
    return best_arc


def _progress_time_s(route: Route, progress_m: float) -> float:
    """Free-flow time offset corresponding to an arc-length along the route."""
    offsets_m = route.arrival_offsets_m
    offsets_s = route.arrival_offsets_s
    if progress_m <= 0:
        return 0.0
    for i in range(len(offsets_m) - 1):
        if progress_m <= offsets_m[i + 1]:
            seg_m = offsets_m[i + 1] - offsets_m[i]
            seg_s = offsets_s[i + 1] - offsets_s[i]
            frac = 0.0 if seg_m == 0 else (progress_m - offsets_m[i]) / seg_m
            return offsets_s[i] + frac * seg_s
    return offsets_s[-1]


class ControlRoom:
    """Single authority wiring tracks to signal controllers."""

    def __init__(
        self,
        graph: RoadGraph,
        controllers: dict[str, TrafficController],
        lead_time_s: float = 20.0,
        passage_margin_s: float = 10.0,
        stale_after_s: float = 3.0,
        auto_dispatch: bool = True,
        pinned_hospitals: Optional[dict[str, str]] = None,
        epoch: Optional[datetime] = None,
    ):
        if lead_time_s + passage_margin_s <= 0:
            raise ValueError("lead_time + passage_margin must be positive")
        self.graph = graph
        self.controllers = controllers
        self.lead_time_s = lead_time_s
        self.passage_margin_s = passage_margin_s
        self.stale_after_s = stale_after_s
        self.auto_dispatch = auto_dispatch
        self.pinned_hospitals = dict(pinned_hospitals or {})
        self.epoch = epoch or datetime(2020, 1, 1, tzinfo=timezone.utc)
        self.events = EventLog()
        self.tracks: dict[str, AmbulanceTrack] = {}
        self.parse_rejects = 0
        self._lock = threading.RLock()
        self._signal_snapshots: dict[str, tuple] = {}

    @property
    def lock(self) -> threading.RLock:
        """Serializes ticks and operator commands; reads see whole states."""
        return self._lock

    # -- ingestion ---------------------------------------------------------

    def _sim_seconds(self, stamp: str) -> float:
        parsed = datetime.strptime(stamp, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
        return (parsed - self.epoch).total_seconds()

    def ingest_message(self, body: str, received_at: float) -> str:
        """Feed one delivered SMS body. Returns accepted | stale | rejected."""
        with self._lock:
            match = _BODY_RE.match(body)
            coords = None
            if match:
                try:
                    coords = parse_maps_link(match.group(3))
                    fix_time = self._sim_seconds(match.group(2))
                except ValueError:
                    coords = None
            if match is None or coords is None:
                self.parse_rejects += 1
                self.events.append(received_at, "MSG_RECEIVED",
                                   {"accepted": False, "reason": "malformed", "body": body})
                return "rejected"
            ambulance_id = match.group(1)
            lat, lon = coords
            track = self.tracks.get(ambulance_id)
            if track is None:
                track = AmbulanceTrack(ambulance_id=ambulance_id)
                track.pinned_hospital = self.pinned_hospitals.get(ambulance_id)
                self.tracks[ambulance_id] = track
            if track.fixes and fix_time <= track.fixes[-1][0]:
                track.stale_rejects += 1
                self.events.append(received_at, "MSG_RECEIVED",
                                   {"accepted": False, "reason": "stale",
                                    "ambulance": ambulance_id, "fix_time": fix_time})
                return "stale"
            track.fixes.append((fix_time, lat, lon))
            self.events.append(received_at, "MSG_RECEIVED",
                               {"accepted": True, "ambulance": ambulance_id,
                                "fix_time": fix_time})
            self._apply_fix(track, lat, lon, received_at)
            return "accepted"

    def note_hospital_copy(self, body: str, received_at: float) -> None:
        """The hospital is a passive recipient; its copies only hit the log."""
        with self._lock:
            self.events.append(received_at, "MSG_RECEIVED",
                               {"accepted": True, "recipient": "hospital", "body": body})

    def _apply_fix(self, track: AmbulanceTrack, lat: float, lon: float, now: float) -> None:
        track.matched_node, track.matched_dist_m = roadnet.map_match(self.graph, lat, lon)
        if track.route is None and not track.arrived:
            self._assign_route(track, now)
        if track.route is not None:
            progress = route_progress_m(self.graph, track.route, lat, lon)
            track.progress_m = max(track.progress_m, progress)
            self._replan_corridor(track, now)
        self.events.append(now, "TRACK_UPDATED", {
            "ambulance": track.ambulance_id,
            "lat": lat,
            "lon": lon,
            "fix_time": track.fixes[-1][0],
            "matched_node": track.matched_node,
            "progress_m": round(track.progress_m, 3),
            "status": "ARRIVED" if track.arrived else "ACTIVE",
        })
        if track.route is not None and not track.arrived:
            if track.progress_m >= track.route.total_length_m - ARRIVAL_RADIUS_M:
                self._mark_arrived(track, now)

    def _assign_route(self, track: AmbulanceTrack, now: float) -> Optional[Route]:
        start = track.matched_node
        try:
            if track.pinned_hospital is not None:
                hospital = track.pinned_hospital
                if hospital not in self.graph.hospitals:
                    raise Rejected(f"unknown hospital {hospital!r}")
                route = roadnet.shortest_path(self.graph, start, hospital)
            else:
                hospital, route = roadnet.nearest_hospital(self.graph, start)
        except (roadnet.RoutingError, Rejected):
            return None
        track.destination = hospital
        track.route = route
        track.progress_m = 0.0
        track.corridor = {}
        self.events.append(now, "ROUTE_SET", {
            "ambulance": track.ambulance_id,
            "hospital": hospital,
            "nodes": list(route.nodes),
            "total_time_s": round(route.total_time_s, 3),
            "total_length_m": round(route.total_length_m, 3),
        })
        return route

    def _mark_arrived(self, track: AmbulanceTrack, now: float) -> None:
        track.arrived = True
        self.events.append(now, "ARRIVED", {
            "ambulance": track.ambulance_id,
            "node": track.destination,
        })
        for entry in self._sorted_entries(track):
            if entry.state == "REQUESTED":
                self._send_release(track, entry, now, reason="arrived")

    # -- corridor planning -------------------------------------------------

    def plan_corridor(self, track: AmbulanceTrack, now: float) -> CorridorPlan:
        """(Re)compute preemption windows ahead of the ambulance."""
        with self._lock:
            self._replan_corridor(track, now)
            entries = tuple(
                (e.controller_id, e.approach, e.activate_at, e.release_by)
                for e in self._sorted_entries(track)
                if e.offset_m > track.progress_m + PASS_EPSILON_M
            )
            return CorridorPlan(ambulance_id=track.ambulance_id, entries=entries)

    def _replan_corridor(self, track: AmbulanceTrack, now: float) -> None:
        if track.route is None:
            return
        progress_s = _progress_time_s(track.route, track.progress_m)
        # position is known as of the fix instant, not the delivery instant
        anchor = track.fixes[-1][0] if track.fixes else now
        for sig in roadnet.route_intersections(self.graph, track.route):
            if sig.arrival_offset_m <= track.progress_m + PASS_EPSILON_M:
                continue  # already behind the ambulance
            eta = anchor + (sig.arrival_offset_s - progress_s)
            entry = track.corridor.get(sig.controller_id)
            if entry is None:
                entry = CorridorEntry(
                    controller_id=sig.controller_id,
                    node=sig.node,
                    approach=sig.approach_edge[0],
                    offset_m=sig.arrival_offset_m,
                    eta=eta,
                    activate_at=eta - self.lead_time_s,
                    release_by=eta + self.passage_margin_s,
                )
                track.corridor[sig.controller_id] = entry
            else:
                entry.eta = eta
                entry.activate_at = eta - self.lead_time_s
                entry.release_by = eta + self.passage_margin_s

    @staticmethod
    def _sorted_entries(track: AmbulanceTrack) -> list[CorridorEntry]:
        return sorted(track.corridor.values(), key=lambda e: e.offset_m)

    # -- command dispatch ----------------------------------------------------

    def dispatch(self, now: float) -> list[tuple[str, str, str]]:
        """Issue due preempt/release commands. Returns (verb, controller, ambulance)."""
        with self._lock:
            issued: list[tuple[str, str, str]] = []
            if not self.auto_dispatch:
                return issued
            requests: list[tuple[float, str, AmbulanceTrack, CorridorEntry]] = []
            for amb_id in sorted(self.tracks):
                track = self.tracks[amb_id]
                if track.route is None or track.arrived:
                    continue
                for entry in self._sorted_entries(track):
                    passed = track.progress_m >= entry.offset_m + PASS_EPSILON_M
                    if entry.state == "REQUESTED":
                        if passed:
                            self._send_release(track, entry, now, reason="passed")
                            issued.append(("release", entry.controller_id, amb_id))
                        elif now >= entry.release_by:
                            self._send_release(track, entry, now, reason="timeout")
                            issued.append(("release", entry.controller_id, amb_id))
                    elif not passed and now >= entry.activate_at:
                        if entry.state == "RELEASED" and now >= entry.release_by:
                            continue  # window expired; wait for a fresh eta
                        requests.append((entry.eta, amb_id, track, entry))
            # ascending (eta, ambulance id): the arbitration order, never random
            for eta, amb_id, track, entry in sorted(requests, key=lambda r: (r[0], r[1])):
                self._send_preempt(track, entry, now)
                issued.append(("preempt", entry.controller_id, amb_id))
            return issued

    def _send_preempt(self, track: AmbulanceTrack, entry: CorridorEntry, now: float) -> None:
        controller = self.controllers[entry.controller_id]
        req = PreemptRequest(
            ambulance_id=track.ambulance_id,
            approach=entry.approach,
            requested_at=now,
            eta=entry.eta,
        )
        controller.request_preempt(req)
        entry.state = "REQUESTED"
        entry.preempts_sent += 1
        self.events.append(now, "PREEMPT_SENT", {
            "controller": entry.controller_id,
            "ambulance": track.ambulance_id,
            "approach": entry.approach,
            "eta": round(entry.eta, 3),
        })

    def _send_release(self, track: AmbulanceTrack, entry: CorridorEntry, now: float,
                      reason: str) -> None:
        controller = self.controllers[entry.controller_id]
        try:
            controller.release_preempt(track.ambulance_id)
        except NoSuchRequest:
            pass  # an operator released it first; the pair is already logged
        else:
            self.events.append(now, "RELEASE_SENT", {
                "controller": entry.controller_id,
                "ambulance": track.ambulance_id,
                "reason": reason,
            })
            entry.releases_sent += 1
        entry.state = "RELEASED"

    def finalize(self, now: float) -> None:
        """End of run: release anything still held so every preempt pairs up."""
        with self._lock:
            for amb_id in sorted(self.tracks):
                track = self.tracks[amb_id]
                for entry in self._sorted_entries(track):
                    if entry.state == "REQUESTED":
                        self._send_release(track, entry, now, reason="final")
            for cid in sorted(self.controllers):
                controller = self.controllers[cid]
                pending = [r.ambulance_id for r in controller.queue if r.operator]
                if controller.active is not None and controller.active.operator:
                    pending.append(controller.active.ambulance_id)
                for op_id in pending:
                    controller.release_preempt(op_id)
                    self.events.append(now, "RELEASE_SENT", {
                        "controller": cid, "ambulance": op_id, "reason": "final",
                    })

    # -- signal observation --------------------------------------------------

    def observe_signals(self, now: float) -> None:
        """Emit SIGNAL_CHANGED whenever a controller's visible state moved."""
        with self._lock:
            for cid in sorted(self.controllers):
                snap = self.controllers[cid].snapshot()
                key = (snap["mode"], tuple(snap["green"]), snap["active_ambulance"])
                if self._signal_snapshots.get(cid) != key:
                    self._signal_snapshots[cid] = key
                    self.events.append(now, "SIGNAL_CHANGED", {
                        "controller": cid,
                        "mode": snap["mode"],
                        "green": snap["green"],
                        "active_ambulance": snap["active_ambulance"],
                    })

    # -- operator API ----------------------------------------------------------

    def operator_preempt(self, controller_id: str, approach: str, now: float,
                         operator_id: str = "operator") -> None:
        with self._lock:
            controller = self.controllers.get(controller_id)
            if controller is None:
                raise Rejected(f"unknown controller {controller_id!r}")
            req = PreemptRequest(
                ambulance_id=f"op:{operator_id}",
                approach=approach,
                requested_at=now,
                eta=now,
                operator=True,
            )
            try:
                controller.request_preempt(req)
            except UnknownApproach as exc:
                self.events.append(now, "OPERATOR_ACTION", {
                    "operator": operator_id, "action": "preempt",
                    "controller": controller_id, "approach": approach,
                    "result": "rejected",
                })
                raise Rejected(str(exc)) from exc
            self.events.append(now, "OPERATOR_ACTION", {
                "operator": operator_id, "action": "preempt",
                "controller": controller_id, "approach": approach,
                "result": "applied",
            })
            self.events.append(now, "PREEMPT_SENT", {
                "controller": controller_id,
                "ambulance": f"op:{operator_id}",
                "approach": approach,
                "eta": round(now, 3),
            })

    def operator_release(self, controller_id: str, now: float,
                         operator_id: str = "operator") -> None:
        with self._lock:
            controller = self.controllers.get(controller_id)
            if controller is None:
                raise Rejected(f"unknown controller {controller_id!r}")
            if controller.active is None:
                # no hold yet: allow cancelling the operator's own pending
                # request, but never someone else's queued ambulance
                pending = [r for r in controller.queue if r.operator]
                if not pending:
                    raise Rejected(f"controller {controller_id} holds no preempt")
                for request in pending:
                    controller.release_preempt(request.ambulance_id)
                self.events.append(now, "OPERATOR_ACTION", {
                    "operator": operator_id, "action": "release",
                    "controller": controller_id, "result": "cancelled-pending",
                })
                return
            held_by = controller.active.ambulance_id
            controller.release_preempt(held_by)
            for track in self.tracks.values():
                entry = track.corridor.get(controller_id)
                if entry is not None and track.ambulance_id == held_by \
                        and entry.state == "REQUESTED":
                    entry.state = "RELEASED"
            self.events.append(now, "OPERATOR_ACTION", {
                "operator": operator_id, "action": "release",
                "controller": controller_id, "result": "applied",
            })
            self.events.append(now, "RELEASE_SENT", {
                "controller": controller_id,
                "ambulance": held_by,
                "reason": "operator",
            })

    def operator_pin_route(self, ambulance_id: str, hospital: str, now: float,
                           operator_id: str = "operator") -> None:
        with self._lock:
            track = self.tracks.get(ambulance_id)
            if track is None:
                raise Rejected(f"unknown ambulance {ambulance_id!r}")
            if hospital not in self.graph.hospitals:
                raise Rejected(f"unknown hospital {hospital!r}")
            for entry in self._sorted_entries(track):
                if entry.state == "REQUESTED":
                    self._send_release(track, entry, now, reason="rerouted")
            track.pinned_hospital = hospital
            track.route = None
            track.corridor = {}
            track.progress_m = 0.0
            self.events.append(now, "OPERATOR_ACTION", {
                "operator": operator_id, "action": "pin_route",
                "ambulance": ambulance_id, "hospital": hospital,
                "result": "applied",
            })
            if track.matched_node is not None:
                self._assign_route(track, now)
                if track.route is not None and track.fixes:
                    _, lat, lon = track.fixes[-1]
                    track.progress_m = route_progress_m(self.graph, track.route, lat, lon)
                    self._replan_corridor(track, now)

    # -- API snapshots -----------------------------------------------------------

    def ambulances_summary(self, now: float) -> list[dict]:
        with self._lock:
            out = []
            for amb_id in sorted(self.tracks):
                track = self.tracks[amb_id]
                eta_s = None
                if track.route is not None and not track.arrived:
                    eta_s = round(
                        track.route.total_time_s - _progress_time_s(track.route, track.progress_m),
                        3,
                    )
                last = track.last_fix
                out.append({
                    "id": amb_id,
                    "last_fix": None if last is None else
                        {"time": last[0], "lat": last[1], "lon": last[2]},
                    "status": track.status(now, self.stale_after_s),
                    "destination": track.destination,
                    "matched_node": track.matched_node,
                    "progress_m": round(track.progress_m, 3),
                    "eta_s": eta_s,
                })
            return out

    def signals_summary(self) -> list[dict]:
        with self._lock:
            return [self.controllers[cid].snapshot() for cid in sorted(self.controllers)]

    def graph_summary(self) -> dict:
        g = self.graph
        return {
            "nodes": {n: {"lat": g.nodes[n][0], "lon": g.nodes[n][1]} for n in sorted(g.nodes)},
            "edges": [
                {"from": e.src, "to": e.dst, "length_m": e.length_m, "speed_mps": e.speed_mps}
                for e in sorted(g.edges.values(), key=lambda e: (e.src, e.dst))
            ],
            "hospitals": {n: g.hospitals[n] for n in sorted(g.hospitals)},
            "signals": {n: g.intersections[n] for n in sorted(g.intersections)},
        }
