"""Road graph, hospital registry, time-shortest routing and map matching.

Edge weight is travel time (length / speed); with uniform speeds this is
also the shortest distance. All tie-breaks are total so repeated calls
return identical routes: equal-cost paths resolve to the lexicographically
smallest node sequence, equal-time hospitals to the smallest node id.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

EARTH_RADIUS_M = 6_371_000.0


class RoutingError(Exception):
    pass


class Unreachable(RoutingError):
    """No directed path between the requested nodes."""


class NoHospital(RoutingError):
    """The graph has no hospitals registered."""


class AllUnreachable(RoutingError):
    """No hospital can be reached from the given node."""


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters, mean Earth radius 6 371 000 m."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return EARTH_RADIUS_M * 2 * math.asin(math.sqrt(a))


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    length_m: float
    speed_mps: float

    @property
    def travel_time_s(self) -> float:
        return self.length_m / self.speed_mps


@dataclass(frozen=True)
class Route:
    """A node path plus cumulative free-flow offsets per node."""

    nodes: tuple[str, ...]
    total_length_m: float
    total_time_s: float
    arrival_offsets_s: tuple[float, ...]
    arrival_offsets_m: tuple[float, ...]


@dataclass(frozen=True)
class RouteSignal:
    """One signalized intersection along a route, in traversal order."""

    node: str
    controller_id: str
    approach_edge: tuple[str, str]
    arrival_offset_s: float
    arrival_offset_m: float


class RoadGraph:
    """Immutable-after-load directed road graph with annotations."""

    def __init__(
        self,
        nodes: Mapping[str, tuple[float, float]],
        edges: Iterable[Edge],
        intersections: Mapping[str, str] = (),
        hospitals: Mapping[str, str] = (),
    ):
        self.nodes: dict[str, tuple[float, float]] = dict(nodes)
        self.edges: dict[tuple[str, str], Edge] = {}
        self.adjacency: dict[str, list[Edge]] = {n: [] for n in self.nodes}
        for e in edges:
            if e.src not in self.nodes or e.dst not in self.nodes:
                raise ValueError(f"edge {e.src}->{e.dst} references unknown node")
            if e.length_m <= 0 or e.speed_mps <= 0:
                raise ValueError(f"edge {e.src}->{e.dst} needs positive length and speed")
            self.edges[(e.src, e.dst)] = e
            self.adjacency[e.src].append(e)
        for lst in self.adjacency.values():
            lst.sort(key=lambda e: e.dst)
        self.intersections: dict[str, str] = dict(intersections)
        for node in self.intersections:
            if node not in self.nodes:
                raise ValueError(f"intersection {node} is not a graph node")
        self.hospitals: dict[str, str] = dict(hospitals)
        for node in self.hospitals:
            if node not in self.nodes:
                raise ValueError(f"hospital node {node} is not a graph node")

    def _route_from_path(self, path: tuple[str, ...]) -> Route:
        offsets_s = [0.0]
        offsets_m = [0.0]
        for a, b in zip(path, path[1:]):
            edge = self.edges[(a, b)]
            offsets_s.append(offsets_s[-1] + edge.travel_time_s)
            offsets_m.append(offsets_m[-1] + edge.length_m)
        return Route(
            nodes=path,
            total_length_m=offsets_m[-1],
            total_time_s=offsets_s[-1],
            arrival_offsets_s=tuple(offsets_s),
            arrival_offsets_m=tuple(offsets_m),
        )


def shortest_path(g: RoadGraph, src: str, dst: str) -> Route:
    """Time-minimal route; equal costs resolve to the lexicographically
    smallest node sequence. Raises Unreachable when no directed path exists."""
    if src not in g.nodes or dst not in g.nodes:
        raise KeyError(f"unknown node in {src!r}->{dst!r}")
    if src == dst:
        return g._route_from_path((src,))
    # heap entries carry the whole path: on cost ties the tuple comparison
    # settles the lexicographic order. Fine at desk scale.
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (src,))]
    done: set[str] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        if node == dst:
            return g._route_from_path(path)
        done.add(node)
        for edge in g.adjacency[node]:
            if edge.dst not in done:
                heapq.heappush(heap, (cost + edge.travel_time_s, path + (edge.dst,)))
    raise Unreachable(f"no path {src} -> {dst}")


def nearest_hospital(g: RoadGraph, from_node: str) -> tuple[str, Route]:
    """Hospital with minimum travel time from ``from_node``; ties by node id."""
    if not g.hospitals:
        raise NoHospital("graph has no hospitals")
    best: Optional[tuple[float, str, Route]] = None
    for hospital in sorted(g.hospitals):
        try:
            route = shortest_path(g, from_node, hospital)
        except Unreachable:
            continue
        if best is None or route.total_time_s < best[0]:
            best = (route.total_time_s, hospital, route)
    if best is None:
        raise AllUnreachable(f"no hospital reachable from {from_node}")
    return best[1], best[2]


def map_match(g: RoadGraph, latitude: float, longitude: float) -> tuple[str, float]:
    """Nearest graph node by great-circle distance; ties by smallest node id."""
    if not g.nodes:
        raise ValueError("empty graph")
    best_node = None
    best_dist = math.inf
    for node in sorted(g.nodes):
        lat, lon = g.nodes[node]
        d = haversine_m(latitude, longitude, lat, lon)
        if d < best_dist:
            best_node, best_dist = node, d
    return best_node, best_dist


def route_intersections(g: RoadGraph, route: Route) -> list[RouteSignal]:
    """Signalized nodes along the route (start node excluded), path order."""
    out: list[RouteSignal] = []
    for i in range(1, len(route.nodes)):
        node = route.nodes[i]
        controller = g.intersections.get(node)
        if controller is None:
            continue
        out.append(
            RouteSignal(
                node=node,
                controller_id=controller,
                approach_edge=(route.nodes[i - 1], node),
                arrival_offset_s=route.arrival_offsets_s[i],
                arrival_offset_m=route.arrival_offsets_m[i],
            )
        )
    return out
