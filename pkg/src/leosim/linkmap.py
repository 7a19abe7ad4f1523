"""Mapping of control-interface classes onto available satellite links.

Each interface class carries a one-way latency budget and a set of
allowed link kinds; selection picks the fastest qualifying link and
falls back (flagged degraded) when no link meets the budget. The
scheduler enforces strict class priority with authentication traffic
first, and withholds delay-tolerant classes entirely while congested
or in eclipse.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .topology import Link, LinkKind


class InterfaceClass(enum.Enum):
    """O-RAN control interface classes, plus authentication flows."""

    AUTH = "AUTH"
    E2 = "E2"
    F1 = "F1"
    NG = "NG"
    A1 = "A1"
    O1 = "O1"

    @property
    def priority(self) -> int:
        """Scheduling priority; lower is served first."""
        return _PRIORITY[self]

    @property
    def latency_target(self) -> float:
        """One-way delivery budget in seconds."""
        return _TARGET[self]

    @property
    def preferred_target(self) -> float:
        """Tighter budget the class prefers when links allow it."""
        return _PREFERRED[self]

    @property
    def allowed_link_kinds(self) -> frozenset[LinkKind]:
        return _ALLOWED[self]

    @property
    def delay_tolerant(self) -> bool:
        """Classes withheld under congestion or eclipse."""
        return self in (InterfaceClass.A1, InterfaceClass.O1)

    @property
    def prefers_isl(self) -> bool:
        """Fast-loop classes stay on ISLs whenever one meets the
        budget, even if a ground link is momentarily faster."""
        return self is InterfaceClass.E2


_PRIORITY = {
    InterfaceClass.AUTH: 0,
    InterfaceClass.E2: 1,
    InterfaceClass.F1: 2,
    InterfaceClass.NG: 3,
    InterfaceClass.A1: 4,
    InterfaceClass.O1: 5,
}

_TARGET = {
    InterfaceClass.AUTH: 0.020,
    InterfaceClass.E2: 0.020,
    InterfaceClass.F1: 0.010,
    InterfaceClass.NG: 0.100,
    InterfaceClass.A1: 1.0,
    InterfaceClass.O1: 1.0,
}

_PREFERRED = {
    InterfaceClass.AUTH: 0.010,
    InterfaceClass.E2: 0.010,
    InterfaceClass.F1: 0.010,
    InterfaceClass.NG: 0.100,
    InterfaceClass.A1: 1.0,
    InterfaceClass.O1: 1.0,
}

_ALLOWED = {
    InterfaceClass.AUTH: frozenset({LinkKind.ISL, LinkKind.GSL}),
    InterfaceClass.E2: frozenset({LinkKind.ISL, LinkKind.GSL}),
    InterfaceClass.F1: frozenset({LinkKind.ISL, LinkKind.GSL}),
    InterfaceClass.NG: frozenset({LinkKind.GSL}),
    InterfaceClass.A1: frozenset({LinkKind.GSL}),
    InterfaceClass.O1: frozenset({LinkKind.GSL}),
}


class SchedulerMode(enum.Enum):
    NORMAL = "normal"
    CONGESTED = "congested"
    ECLIPSE = "eclipse"


class UpdateKind(enum.Enum):
    FULL_UPLOAD = "full_upload"
    DIFFERENTIAL_UPDATE = "differential_update"


@dataclass(frozen=True)
class ControlMessage:
    """A typed control-plane message awaiting link assignment."""

    msg_id: int
    interface: InterfaceClass
    src: int
    dst: int
    size: int  # bytes
    created_at: float
    credential: str = ""
    term: int = 0

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("message size must be positive")


@dataclass(frozen=True)
class LinkMapDecision:
    """Outcome of mapping one message onto the available links."""

    msg_id: int
    link: Link | None
    expected_delay: float | None
    degraded: bool
    reason: str


def _selection_key(link: Link):
    kind_rank = 0 if link.kind is LinkKind.ISL else 1
    lo, hi = sorted((link.endpoint_a, link.endpoint_b))
    return (link.one_way_delay, kind_rank, lo, hi)


def select_link(msg: ControlMessage, available: Sequence[Link]) -> LinkMapDecision:
    """Choose the fastest allowed link within the class budget.

    Ties break ISL over GSL, then lowest endpoint ids. Classes with
    prefers_isl never land on a ground link while an ISL meets the
    budget. When nothing meets the budget the overall fastest allowed
    link is returned with degraded=True; with no allowed link at all,
    the decision is NONE and degraded.
    """
    allowed = [lk for lk in available if lk.kind in msg.interface.allowed_link_kinds]
    if not allowed:
        return LinkMapDecision(
            msg_id=msg.msg_id,
            link=None,
            expected_delay=None,
            degraded=True,
            reason="no allowed link",
        )
    target = msg.interface.latency_target
    qualifying = [lk for lk in allowed if lk.one_way_delay <= target]
    if msg.interface.prefers_isl:
        isl_qualifying = [lk for lk in qualifying if lk.kind is LinkKind.ISL]
        if isl_qualifying:
            qualifying = isl_qualifying
    if qualifying:
        best = min(qualifying, key=_selection_key)
        return LinkMapDecision(
            msg_id=msg.msg_id,
            link=best,
            expected_delay=best.one_way_delay,
            degraded=False,
            reason="within target",
        )
    best = min(allowed, key=_selection_key)
    return LinkMapDecision(
        msg_id=msg.msg_id,
        link=best,
        expected_delay=best.one_way_delay,
        degraded=True,
        reason="fallback to slower control",
    )


def schedule(
    queue: Sequence[ControlMessage],
    capacity: int,
    mode: SchedulerMode = SchedulerMode.NORMAL,
) -> list[ControlMessage]:
    """Order the queue by strict class priority and take `capacity`.

    Within a class, FIFO by (created_at, msg_id). In congested or
    eclipse mode the delay-tolerant classes are withheld entirely and
    consume no capacity.
    """
    if capacity < 0:
        raise ValueError("capacity must be nonnegative")
    eligible = [
        m
        for m in queue
        if mode is SchedulerMode.NORMAL or not m.interface.delay_tolerant
    ]
    ordered = sorted(
        eligible, key=lambda m: (m.interface.priority, m.created_at, m.msg_id)
    )
    return ordered[:capacity]


def gate_model_update(anomaly_score: float, threshold: float) -> UpdateKind:
    """Full state upload at or above the anomaly threshold, else a
    lightweight differential update."""
    for name, v in (("anomaly_score", anomaly_score), ("threshold", threshold)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    if anomaly_score >= threshold:
        return UpdateKind.FULL_UPLOAD
    return UpdateKind.DIFFERENTIAL_UPDATE


def write_decisions_csv(path, rows: Sequence[tuple[float, int, str, str, float | None, bool]]) -> None:
    """Decision log: time_s,msg_id,class,chosen_kind,expected_delay_s,degraded."""
    with open(path, "w", newline="\n") as fh:
        fh.write("time_s,msg_id,class,chosen_kind,expected_delay_s,degraded\n")
        for time_s, msg_id, cls, kind, delay, degraded in rows:
            delay_s = "" if delay is None else format(delay, ".9f")
            fh.write(f"{time_s:g},{msg_id},{cls},{kind},{delay_s},{int(degraded)}\n")
