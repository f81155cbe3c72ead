"""Routing, hospital selection and map-matching tests.

shortest_path is cross-checked against exhaustive simple-path enumeration
on small random graphs, including the lexicographic tie-break.
"""

import itertools
import math
import random

import pytest

from greencorridor import roadnet
from greencorridor.roadnet import Edge, RoadGraph


def brute_force_paths(g: RoadGraph, src: str, dst: str):
    """Yield (cost, node_tuple) for every simple path src->dst."""
    def walk(node, visited, cost, path):
        if node == dst:
            yield cost, tuple(path)
            return
        for edge in g.adjacency[node]:
            if edge.dst not in visited:
                visited.add(edge.dst)
                path.append(edge.dst)
                yield from walk(edge.dst, visited, cost + edge.travel_time_s, path)
                path.pop()
                visited.remove(edge.dst)
    yield from walk(src, {src}, 0.0, [src])


def brute_force_best(g: RoadGraph, src: str, dst: str):
    best = None
    for cost, path in brute_force_paths(g, src, dst):
        if best is None or (cost, path) < best:
            best = (cost, path)
    return best


def random_graph(rng: random.Random, n_nodes: int) -> RoadGraph:
    names = [f"v{i}" for i in range(n_nodes)]
    nodes = {name: (rng.uniform(-1, 1), rng.uniform(-1, 1)) for name in names}
    edges = []
    for a, b in itertools.permutations(names, 2):
        if rng.random() < 0.35:
            edges.append(Edge(a, b, length_m=rng.choice([100.0, 200.0, 300.0, 400.0]),
                              speed_mps=rng.choice([5.0, 10.0])))
    return RoadGraph(nodes, edges)


def grid_graph() -> RoadGraph:
    nodes = {
        "a": (0.0, 0.0), "b": (0.0, 0.01), "c": (0.01, 0.0), "d": (0.01, 0.01),
    }
    edges = [
        Edge("a", "b", 1000.0, 20.0),  # fast long arm: 50 s
        Edge("b", "d", 1000.0, 20.0),
        Edge("a", "c", 600.0, 5.0),    # slow short arm: 120 s
        Edge("c", "d", 600.0, 5.0),
    ]
    return RoadGraph(nodes, edges, hospitals={"d": "General"})


class TestShortestPath:
    def test_identity_path(self):
        g = grid_graph()
        route = roadnet.shortest_path(g, "a", "a")
        assert route.nodes == ("a",)
        assert route.total_length_m == 0.0
        assert route.total_time_s == 0.0

    def test_diamond_picks_time_minimal_arm(self):
        g = grid_graph()
        route = roadnet.shortest_path(g, "a", "d")
        # brute force: fast arm 100 s beats slow arm 240 s
        cost, path = brute_force_best(g, "a", "d")
        assert route.nodes == path == ("a", "b", "d")
        assert route.total_time_s == pytest.approx(cost)

    def test_unreachable(self):
        g = RoadGraph({"a": (0, 0), "b": (0, 1)}, [Edge("b", "a", 10.0, 1.0)])
        with pytest.raises(roadnet.Unreachable):
            roadnet.shortest_path(g, "a", "b")

    def test_offsets_cumulative(self):
        g = grid_graph()
        route = roadnet.shortest_path(g, "a", "d")
        assert route.arrival_offsets_s == (0.0, 50.0, 100.0)
        assert route.arrival_offsets_m == (0.0, 1000.0, 2000.0)

    def test_oracle_equivalence_small_graphs(self):
        # exhaustive oracle over 100 seeded random graphs with <= 8 nodes
        for seed in range(100):
            rng = random.Random(seed)
            g = random_graph(rng, rng.randint(2, 8))
            names = sorted(g.nodes)
            src, dst = rng.sample(names, 2)
            best = brute_force_best(g, src, dst)
            if best is None:
                with pytest.raises(roadnet.Unreachable):
                    roadnet.shortest_path(g, src, dst)
                continue
            route = roadnet.shortest_path(g, src, dst)
            assert route.total_time_s == pytest.approx(best[0], abs=1e-9)
            assert route.nodes == best[1], f"tie-break differs at seed {seed}"

    def test_triangle_property(self):
        rng = random.Random(424)
        g = random_graph(rng, 7)
        names = sorted(g.nodes)
        for src, dst, k in itertools.permutations(names, 3):
            try:
                direct = roadnet.shortest_path(g, src, dst).total_time_s
            except roadnet.Unreachable:
                continue
            try:
                via = (roadnet.shortest_path(g, src, k).total_time_s
                       + roadnet.shortest_path(g, k, dst).total_time_s)
            except roadnet.Unreachable:
                continue
            assert direct <= via + 1e-9

    def test_repeated_calls_identical(self):
        rng = random.Random(99)
        g = random_graph(rng, 8)
        names = sorted(g.nodes)
        for src, dst in itertools.permutations(names, 2):
            try:
                first = roadnet.shortest_path(g, src, dst).nodes
            except roadnet.Unreachable:
                continue
            assert roadnet.shortest_path(g, src, dst).nodes == first


class TestNearestHospital:
    def test_single_hospital(self):
        g = grid_graph()
        hospital, route = roadnet.nearest_hospital(g, "a")
        assert hospital == "d"
        assert route.nodes == ("a", "b", "d")

    def test_picks_minimum_time(self):
        nodes = {"s": (0, 0), "h1": (0, 1), "h2": (1, 0)}
        edges = [Edge("s", "h1", 1000.0, 10.0), Edge("s", "h2", 900.0, 10.0)]
        g = RoadGraph(nodes, edges, hospitals={"h1": "A", "h2": "B"})
        hospital, route = roadnet.nearest_hospital(g, "s")
        assert hospital == "h2"
        assert route.total_time_s == pytest.approx(90.0)

    def test_matches_per_hospital_brute_force(self):
        for seed in range(100):
            rng = random.Random(1000 + seed)
            g = random_graph(rng, rng.randint(3, 8))
            names = sorted(g.nodes)
            hospitals = rng.sample(names, min(3, len(names) - 1))
            g = RoadGraph(g.nodes, g.edges.values(),
                          hospitals={h: f"H-{h}" for h in hospitals})
            src = next(n for n in names if n not in hospitals)
            best = None
            for h in sorted(hospitals):
                found = brute_force_best(g, src, h)
                if found and (best is None or found[0] < best[0]):
                    best = (found[0], h)
            if best is None:
                with pytest.raises(roadnet.AllUnreachable):
                    roadnet.nearest_hospital(g, src)
            else:
                hospital, route = roadnet.nearest_hospital(g, src)
                assert (route.total_time_s, hospital) == pytest.approx(best)

    def test_tie_breaks_by_node_id(self):
        nodes = {"s": (0, 0), "a": (0, 1), "b": (1, 0)}
        edges = [Edge("s", "a", 100.0, 10.0), Edge("s", "b", 100.0, 10.0)]
        g = RoadGraph(nodes, edges, hospitals={"b": "B", "a": "A"})
        hospital, _ = roadnet.nearest_hospital(g, "s")
        assert hospital == "a"

    def test_no_hospital(self):
        g = RoadGraph({"a": (0, 0)}, [])
        with pytest.raises(roadnet.NoHospital):
            roadnet.nearest_hospital(g, "a")

    def test_all_unreachable(self):
        g = RoadGraph({"a": (0, 0), "h": (1, 1)}, [], hospitals={"h": "H"})
        with pytest.raises(roadnet.AllUnreachable):
            roadnet.nearest_hospital(g, "a")


class TestMapMatch:
    def test_exact_node_distance_zero(self):
        g = grid_graph()
        node, dist = roadnet.map_match(g, 0.01, 0.01)
        assert node == "d"
        assert dist == 0.0

    def test_tie_smaller_id(self):
        g = RoadGraph({"a": (0.0, 0.0), "b": (0.0, 0.002)}, [])
        node, _ = roadnet.map_match(g, 0.0, 0.001)
        assert node == "a"

    def test_haversine_oracle_1000m(self):
        # one degree of latitude is 111.19 km at R=6371 km, so 1000 m is
        # 1000 / 111194.9 degrees; verified against an independent formula
        dlat = 1000.0 / (math.pi / 180.0 * 6_371_000.0)
        g = RoadGraph({"a": (0.0, 0.0), "b": (dlat, 0.0)}, [])
        node, dist = roadnet.map_match(g, dlat, 0.0)
        assert node == "b" and dist == 0.0
        _, dist_other = roadnet.map_match(RoadGraph({"a": (0.0, 0.0)}, []), dlat, 0.0)
        assert dist_other == pytest.approx(1000.0, abs=1.0)

    def test_distance_zero_iff_coincident(self):
        g = grid_graph()
        _, d = roadnet.map_match(g, 0.005, 0.005)
        assert d > 0.0


class TestRouteIntersections:
    def make_signalized(self):
        nodes = {"a": (0, 0), "b": (0, 0.01), "c": (0, 0.02), "d": (0, 0.03)}
        edges = [Edge("a", "b", 500.0, 10.0), Edge("b", "c", 600.0, 10.0),
                 Edge("c", "d", 700.0, 10.0)]
        return RoadGraph(nodes, edges,
                         intersections={"a": "SA", "b": "SB", "c": "SC"},
                         hospitals={"d": "H"})

    def test_start_node_excluded(self):
        g = self.make_signalized()
        route = roadnet.shortest_path(g, "a", "d")
        sigs = roadnet.route_intersections(g, route)
        assert [s.node for s in sigs] == ["b", "c"]
        assert [s.controller_id for s in sigs] == ["SB", "SC"]
        assert [s.approach_edge for s in sigs] == [("a", "b"), ("b", "c")]

    def test_offsets_hand_computed(self):
        g = self.make_signalized()
        route = roadnet.shortest_path(g, "a", "d")
        sigs = roadnet.route_intersections(g, route)
        # 500/10 = 50 s to b, + 600/10 = 110 s to c
        assert [s.arrival_offset_s for s in sigs] == [pytest.approx(50.0), pytest.approx(110.0)]
        assert [s.arrival_offset_m for s in sigs] == [pytest.approx(500.0), pytest.approx(1100.0)]

    def test_unsignalized_route_empty(self):
        g = grid_graph()
        route = roadnet.shortest_path(g, "a", "d")
        assert roadnet.route_intersections(g, route) == []
