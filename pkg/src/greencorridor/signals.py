"""Per-intersection traffic signal controller with a safe preemption protocol.

Normal operation cycles the phase plan (green, then yellow, then all-red).
A preemption request for an already-green approach is held immediately;
any other request waits out a full yellow + all-red clearance before its
approach turns green. Waiting requests are served in ascending priority
key order: operator requests first, then by (eta, ambulance id) - never
randomly, and never by interrupting an active hold.

Approaches are identified by the upstream node id of the entering edge.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional


class SignalError(Exception):
    pass


class UnknownApproach(SignalError):
    pass


class NoSuchRequest(SignalError):
    pass


class SignalMode(enum.Enum):
    NORMAL = "NORMAL"
    TO_PREEMPT = "TO_PREEMPT"
    PREEMPT = "PREEMPT"
    RECOVER = "RECOVER"


class Interval(enum.Enum):
    GREEN = "GREEN"
    YELLOW = "YELLOW"
    ALL_RED = "ALL_RED"


@dataclass(frozen=True)
class Phase:
    green: frozenset[str]
    green_s: float


@dataclass(frozen=True)
class PhasePlan:
    phases: tuple[Phase, ...]
    yellow_s: float = 3.0
    all_red_s: float = 1.0
    conflicts: frozenset[frozenset[str]] = frozenset()

    def __post_init__(self):
        if not self.phases:
            raise ValueError("plan needs at least one phase")
        if self.yellow_s <= 0 or self.all_red_s <= 0:
            raise ValueError("clearance durations must be positive")
        for phase in self.phases:
            if phase.green_s <= 0:
                raise ValueError("phase durations must be positive")
            for pair in self.conflicts:
                if pair <= phase.green:
                    raise ValueError(f"phase green set {set(phase.green)} contains conflict {set(pair)}")

    @property
    def clearance_s(self) -> float:
        return self.yellow_s + self.all_red_s

    @property
    def cycle_s(self) -> float:
        return sum(p.green_s + self.yellow_s + self.all_red_s for p in self.phases)

    def compatible(self, a: str, b: str) -> bool:
        return a == b or frozenset((a, b)) not in self.conflicts


def conflicts_from_phases(phases: Iterable[frozenset[str]]) -> frozenset[frozenset[str]]:
    """Default conflict table: approaches never green together conflict."""
    phases = [frozenset(p) for p in phases]
    approaches = sorted(set().union(*phases)) if phases else []
    pairs = set()
    for i, a in enumerate(approaches):
        for b in approaches[i + 1:]:
            if not any(a in p and b in p for p in phases):
                pairs.add(frozenset((a, b)))
    return frozenset(pairs)


def make_two_phase_plan(
    group_a: Iterable[str],
    group_b: Iterable[str],
    green_s: float = 30.0,
    yellow_s: float = 3.0,
    all_red_s: float = 1.0,
) -> PhasePlan:
    """The stock two-phase plan: each group green in turn, cross pairs conflict."""
    a, b = frozenset(group_a), frozenset(group_b)
    return PhasePlan(
        phases=(Phase(a, green_s), Phase(b, green_s)),
        yellow_s=yellow_s,
        all_red_s=all_red_s,
        conflicts=conflicts_from_phases([a, b]),
    )


@dataclass(frozen=True, order=True)
class PreemptRequest:
    """Sort order is the arbitration order: operators first, then (eta, id)."""

    sort_index: tuple = field(init=False, repr=False)
    ambulance_id: str = field(compare=False)
    approach: str = field(compare=False)
    requested_at: float = field(compare=False)
    eta: float = field(compare=False)
    operator: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "sort_index", (0 if self.operator else 1, self.eta, self.ambulance_id)
        )

    @property
    def priority_key(self):
        return self.sort_index


class TrafficController:
    """One intersection's signal heads, advanced by the simulation clock."""

    def __init__(self, controller_id: str, plan: PhasePlan, approaches: Iterable[str]):
        self.id = controller_id
        self.plan = plan
        self.approaches = frozenset(approaches)
        for phase in plan.phases:
            if not phase.green <= self.approaches:
                raise ValueError(f"{controller_id}: phase greens not in approach set")
        self.mode = SignalMode.NORMAL
        self.interval = Interval.GREEN
        self.phase_index = 0
        self.remaining = plan.phases[0].green_s
        self.active: Optional[PreemptRequest] = None
        self.queue: list[PreemptRequest] = []
        self.hold_greens: frozenset[str] = frozenset()

    # -- observation ------------------------------------------------------

    def green_approaches(self) -> frozenset[str]:
        if self.mode is SignalMode.NORMAL and self.interval is Interval.GREEN:
            return self.plan.phases[self.phase_index].green
        if self.mode is SignalMode.PREEMPT:
            return self.hold_greens
        return frozenset()

    def countdown_s(self) -> Optional[float]:
        return None if math.isinf(self.remaining) else self.remaining

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "mode": self.mode.value,
            "green": sorted(self.green_approaches()),
            "countdown_s": self.countdown_s(),
            "active_ambulance": self.active.ambulance_id if self.active else None,
            "queued": [r.ambulance_id for r in sorted(self.queue)],
        }

    # -- dynamics ---------------------------------------------------------

    def step(self, dt: float) -> None:
        if dt <= 0:
            raise ValueError("dt must be positive")
        # the epsilon absorbs sub-nanosecond float residue from odd step sizes
        while dt > 1e-9 and not math.isinf(self.remaining):
            if self.remaining > dt + 1e-9:
                self.remaining -= dt
                return
            dt -= self.remaining
            self._advance()

    def _advance(self) -> None:
        if self.mode is SignalMode.NORMAL:
            if self.interval is Interval.GREEN:
                self.interval = Interval.YELLOW
                self.remaining = self.plan.yellow_s
            elif self.interval is Interval.YELLOW:
                self.interval = Interval.ALL_RED
                self.remaining = self.plan.all_red_s
            else:
                self.phase_index = (self.phase_index + 1) % len(self.plan.phases)
                self.interval = Interval.GREEN
                self.remaining = self.plan.phases[self.phase_index].green_s
        elif self.mode is SignalMode.TO_PREEMPT:
            if self.queue:
                self._serve_next()
            else:  # everything already cleared, no one left to serve
                self._resume_normal()
        elif self.mode is SignalMode.RECOVER:
            self._resume_normal()
        else:  # PREEMPT holds until released
            self.remaining = math.inf

    def _resume_normal(self) -> None:
        self.mode = SignalMode.NORMAL
        self.phase_index = 0
        self.interval = Interval.GREEN
        self.remaining = self.plan.phases[0].green_s
        self.hold_greens = frozenset()

    def _serve_next(self) -> None:
        req = min(self.queue)
        self.queue.remove(req)
        self.active = req
        self.mode = SignalMode.PREEMPT
        self.remaining = math.inf
        # after a full clearance everything is red: a maximal compatible set
        # around the held approach may turn green together.
        chosen = [req.approach]
        for a in sorted(self.approaches):
            if a != req.approach and all(self.plan.compatible(a, c) for c in chosen):
                chosen.append(a)
        self.hold_greens = frozenset(chosen)

    # -- commands ---------------------------------------------------------

    def request_preempt(self, req: PreemptRequest) -> None:
        if req.approach not in self.approaches:
            raise UnknownApproach(f"{self.id}: no approach {req.approach!r}")
        if self.mode is SignalMode.PREEMPT:
            if (
                self.active is not None
                and self.active.ambulance_id == req.ambulance_id
                and self.active.approach == req.approach
            ):
                self.active = req  # refreshed eta, hold unchanged
            else:
                self._enqueue(req)
            return
        if self.mode is SignalMode.TO_PREEMPT:
            self._enqueue(req)
            return
        # NORMAL or RECOVER
        greens_now = self.green_approaches()
        if req.approach in greens_now:
            # already green: hold right away, keeping the compatible greens
            # that are up; adding new ones here would dodge clearance.
            self.active = req
            self.mode = SignalMode.PREEMPT
            self.hold_greens = greens_now
            self.remaining = math.inf
        else:
            self._enqueue(req)
            self.mode = SignalMode.TO_PREEMPT
            self.remaining = self.plan.clearance_s
            self.hold_greens = frozenset()

    def _enqueue(self, req: PreemptRequest) -> None:
        self.queue = [r for r in self.queue if r.ambulance_id != req.ambulance_id]
        self.queue.append(req)
        self.queue.sort()

    def release_preempt(self, ambulance_id: str) -> None:
        if self.active is not None and self.active.ambulance_id == ambulance_id:
            self.active = None
            if self.queue:
                nxt = min(self.queue)
                if nxt.approach in self.hold_greens:
                    # next approach is already green: hand the hold over
                    self.queue.remove(nxt)
                    self.active = nxt
                else:
                    self.mode = SignalMode.TO_PREEMPT
                    self.remaining = self.plan.clearance_s
                    self.hold_greens = frozenset()
            else:
                self.mode = SignalMode.RECOVER
                self.remaining = self.plan.clearance_s
                self.hold_greens = frozenset()
            return
        before = len(self.queue)
        self.queue = [r for r in self.queue if r.ambulance_id != ambulance_id]
        if len(self.queue) == before:
            raise NoSuchRequest(f"{self.id}: no request by {ambulance_id!r}")
