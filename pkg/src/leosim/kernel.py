"""Deterministic simulation kernel.

Two clocks: topology advances in dt steps (snapshots are frozen
between steps), while the control plane runs an event-driven inner
loop at exact event times within a sub-window of each step. All event
processing is totally ordered by (time, node id, sequence), so a
scenario with a fixed seed reproduces its trace byte for byte.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, fields as dc_fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import protocol
from .clusters import (
    Cluster,
    NodeMetrics,
    QuorumNotMet,
    ScoreWeights,
    degree_norms,
    elect_leader,
    form_clusters,
    node_score,
    telemetry_freshness,
)
from .ephemeris import (
    ConstellationEphemeris,
    GroundStation,
    default_ground_stations,
    generate_walker,
    load_ground_stations,
    parse_tle,
)
from .linkmap import (
    ControlMessage,
    InterfaceClass,
    LinkMapDecision,
    SchedulerMode,
    schedule,
    select_link,
)
from .metrics import MeanStdSeries
from .protocol import (
    Action,
    BroadcastSnapshot,
    CastVote,
    ElectionCall,
    ElectionWon,
    Event,
    HeartbeatReceived,
    HeartbeatTimeout,
    InterNodeEvent,
    LinkUp,
    NodeState,
    PolicyUpdate,
    QuorumLost,
    QuorumRestored,
    RejectUpdate,
    RequestSync,
    Role,
    SendHeartbeat,
    StartElection,
    SyncRequest,
    SyncSnapshot,
    VoteGranted,
    handle_event,
)
from .scenario import ConfigError, FaultKind, Scenario
from .topology import (
    EpisodeTracker,
    LinkEpisode,
    TopologySnapshot,
    ThresholdKind,
    build_snapshot,
)

GROUND_CREDENTIAL = "ground-control"


def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (frozenset, set)):
        return sorted(_jsonable(v) for v in value)
    if isinstance(value, Role):
        return value.value
    return value


def _describe(obj) -> dict:
    out = {"kind": type(obj).__name__}
    for f in dc_fields(obj):
        out[f.name] = _jsonable(getattr(obj, f.name))
    return out


class EventTrace:
    """Append-only, totally ordered record of protocol activity.

    Construct with enabled=False to skip record building when only
    engine counters matter (bulk property sweeps).
    """

    def __init__(self, enabled: bool = True):
        self.records: list[dict] = []
        self.enabled = enabled
        self._seq = 0

    def append(
        self,
        *,
        time: float,
        node: int,
        event,
        role_before: Role,
        role_after: Role,
        actions: Sequence[Action],
    ) -> dict | None:
        if not self.enabled:
            return None
        record = {
            "seq": self._seq,
            "time": time,
            "node": node,
            "event": _describe(event) if event is not None else {"kind": "Tick"},
            "role_before": role_before.value,
            "role_after": role_after.value,
            "actions": [_describe(a) for a in actions],
        }
        self._seq += 1
        self.records.append(record)
        return record

    def write_jsonl(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
                fh.write("\n")


@dataclass(frozen=True)
class Delivery:
    """Outcome of carrying one message over its chosen link."""

    delivered: bool
    at_time: float | None = None
    reason: str = ""


def deliver(
    msg: ControlMessage,
    decision: LinkMapDecision,
    link_up_at_send: bool,
    link_up_at_arrival: bool,
) -> Delivery:
    """Propagation-only delivery: arrival is send time plus the
    decision's expected delay; the message is dropped when no link was
    chosen or the link is absent at either endpoint instant."""
    if decision.link is None or decision.expected_delay is None:
        return Delivery(delivered=False, reason="no link")
    if not link_up_at_send:
        return Delivery(delivered=False, reason="link down at send")
    if not link_up_at_arrival:
        return Delivery(delivered=False, reason="link lost in flight")
    return Delivery(delivered=True, at_time=msg.created_at + decision.expected_delay)


class MeshNetwork:
    """Static full-mesh link model for protocol-only simulations.

    Uniform one-way delay, per-pair drop windows, and per-node halt
    windows; suitable as the link_delay provider of a ControlPlane.
    """

    def __init__(self, nodes: Sequence[int], delay: float):
        self.nodes = set(nodes)
        self.base_delay = delay
        self._pair_down: dict[tuple[int, int], list[tuple[float, float]]] = {}
        self._node_down: dict[int, list[tuple[float, float]]] = {}

    def drop_link(self, a: int, b: int, start: float, end: float) -> None:
        key = (min(a, b), max(a, b))
        self._pair_down.setdefault(key, []).append((start, end))

    def halt_node(self, node: int, start: float, end: float) -> None:
        self._node_down.setdefault(node, []).append((start, end))

    def node_up(self, node: int, t: float) -> bool:
        return not any(s <= t < e for s, e in self._node_down.get(node, []))

    def delay(self, a: int, b: int, t: float) -> float | None:
        if a not in self.nodes or b not in self.nodes or a == b:
            return None
        if not (self.node_up(a, t) and self.node_up(b, t)):
            return None
        key = (min(a, b), max(a, b))
        if any(s <= t < e for s, e in self._pair_down.get(key, [])):
            return None
        return self.base_delay


# Heap entry tags, in deliberate order: deliveries before timers when
# simultaneous at the same node.
_TAG_DELIVER = 0
_TAG_HEARTBEAT = 1
_TAG_TIMER = 2


class ControlPlane:
    """Event-driven engine hosting the protocol machines of one or
    more disjoint clusters.

    link_delay(a, b, t) returns the current one-way delay in seconds,
    or None when no usable link exists; it is consulted at send and at
    arrival, so links that vanish mid-flight drop the message.
    """

    def __init__(
        self,
        clusters: Sequence[Cluster],
        link_delay: Callable[[int, int, float], float | None],
        params=None,
        *,
        trace: EventTrace | None = None,
        scores: Mapping[int, float] | None = None,
        credentials: Mapping[int, str] | None = None,
        registry: set[str] | None = None,
        initial: Mapping[int, NodeState] | None = None,
        cycle: float | None = None,
        timeout_multiplier: int | None = None,
        loss_rate: float = 0.0,
        loss_rng: random.Random | None = None,
    ):
        self.clusters = {c.cluster_id: c for c in clusters}
        self.link_delay = link_delay
        self.cycle = cycle if cycle is not None else getattr(params, "cycle", protocol.DEFAULT_CYCLE)
        self.timeout_multiplier = (
            timeout_multiplier
            if timeout_multiplier is not None
            else getattr(params, "timeout_multiplier", protocol.DEFAULT_TIMEOUT_MULTIPLIER)
        )
        self.trace = trace if trace is not None else EventTrace()
        self.loss_rate = loss_rate
        self.loss_rng = loss_rng if loss_rng is not None else random.Random(0)

        self.node_cluster: dict[int, int] = {}
        for c in clusters:
            for n in c.members:
                self.node_cluster[n] = c.cluster_id
        members = sorted(self.node_cluster)
        self.scores = {n: (scores or {}).get(n, 0.0) for n in members}
        self.credentials = dict(credentials) if credentials else {n: f"tok-{n}" for n in members}
        if registry is None:
            registry = set(self.credentials.values()) | {GROUND_CREDENTIAL}
        self.registry = registry

        self.states: dict[int, NodeState] = {}
        for n in members:
            base = (initial or {}).get(n)
            if base is None:
                base = NodeState(node_id=n)
            self.states[n] = replace(
                base,
                node_id=n,
                cluster_id=self.node_cluster[n],
                role=Role.FOLLOWER,
                credential=self.credentials[n],
                trusted_tokens=frozenset(self.registry),
                score=self.scores[n],
                quorum_size=self.clusters[self.node_cluster[n]].quorum_size,
                voted_for=None,
                votes_received=frozenset(),
                partitioned=False,
            )

        # Rank within a cluster by descending score; the timeout
        # stagger separates would-be candidates deterministically.
        self.ranks: dict[int, int] = {}
        for c in clusters:
            ordered = sorted(c.members, key=lambda n: (-self.scores[n], n))
            for rank, n in enumerate(ordered):
                self.ranks[n] = rank

        self.halted: set[int] = set()
        self._heap: list[tuple[float, int, int, int, object]] = []
        self._seq = 0
        self._timer_gen: dict[int, int] = {n: 0 for n in members}
        self._quorum_ok: dict[int, bool] = {n: True for n in members}
        self._cluster_quorum_ok: dict[int, bool] = {cid: True for cid in self.clusters}
        self._quorum_open: dict[int, float] = {}

        self.promotions: list[dict] = []
        self.quorum_intervals: list[dict] = []
        self.reject_counts: dict[str, int] = {}
        self.dropped_messages = 0
        self.alerts = 0

    # -- scheduling ------------------------------------------------

    def _push(self, time: float, tag: int, node: int, payload) -> None:
        heapq.heappush(self._heap, (time, node, tag, self._seq, payload))
        self._seq += 1

    def _stagger(self, node: int) -> float:
        base = self.ranks[node] * protocol.STAGGER_FRACTION * self.cycle
        state = self.states[node]
        if state.role is Role.CANDIDATE:
            # Retry salt: spreads repeat candidacies of the same term.
            n = len(self.clusters[state.cluster_id].members)
            salt = (node * 2654435761 + state.term * 40503) % max(n, 1)
            base += salt * protocol.STAGGER_FRACTION * self.cycle
        return base

    def _arm_timer(self, node: int) -> None:
        state = self.states[node]
        if node in self.halted or state.role in (Role.LEADER, Role.LOCAL_ONLY):
            return
        due = (
            state.last_heartbeat_seen
            + self.timeout_multiplier * self.cycle
            + self._stagger(node)
        )
        self._timer_gen[node] += 1
        self._push(due, _TAG_TIMER, node, self._timer_gen[node])

    def _arm_heartbeat(self, node: int, at: float) -> None:
        self._push(at, _TAG_HEARTBEAT, node, None)

    # -- bootstrap and administrative elections --------------------

    def bootstrap(
        self,
        now: float,
        metrics: Mapping[int, Mapping[int, NodeMetrics]],
        weights: ScoreWeights,
    ) -> None:
        """Run the formation-time election in every cluster and start
        heartbeats and failover timers.

        Elections are decided first, then promotions are driven in
        ascending leader id so trace records keep the (time, node, seq)
        order.
        """
        elected: list[tuple[int, int]] = []  # (leader, cluster_id)
        for cid in sorted(self.clusters):
            cluster = self.clusters[cid]
            alive = sorted(n for n in cluster.members if n not in self.halted)
            cluster.synchronized = set(alive)
            carried = [self.states[n].term for n in cluster.members]
            cluster.term = max([cluster.term] + carried)
            for n in sorted(cluster.members):
                self.states[n] = replace(
                    self.states[n], term=cluster.term, last_heartbeat_seen=now
                )
            cluster_metrics = metrics.get(cid, {})
            try:
                leader = elect_leader(cluster, cluster_metrics, weights, eligible=alive)
            except (QuorumNotMet, KeyError):
                cluster.leader = None
                continue
            for n in sorted(cluster.members):
                self.states[n] = replace(self.states[n], term=cluster.term)
            self.states[leader] = replace(
                self.states[leader],
                role=Role.CANDIDATE,
                voted_for=leader,
                votes_received=frozenset({leader}),
            )
            elected.append((leader, cid))
        for leader, cid in sorted(elected):
            self._handle(
                leader,
                ElectionWon(
                    cluster_id=cid,
                    term=self.clusters[cid].term,
                    sender=leader,
                    credential=self.credentials[leader],
                ),
                now,
            )
        for n in sorted(self.states):
            if n not in self.halted and self.states[n].role is not Role.LEADER:
                self._arm_timer(n)
        self.refresh_quorum(now)

    # -- event processing ------------------------------------------

    def run_until(self, t_end: float) -> None:
        """Process every scheduled occurrence with time <= t_end."""
        while self._heap and self._heap[0][0] <= t_end:
            time, node, tag, _, payload = heapq.heappop(self._heap)
            if tag == _TAG_DELIVER:
                self._process_delivery(node, time, payload)
            elif tag == _TAG_HEARTBEAT:
                self._process_heartbeat_due(node, time)
            else:
                self._process_timer(node, time, payload)

    def _process_delivery(self, dst: int, now: float, payload) -> None:
        event, sender = payload
        if dst in self.halted:
            self.dropped_messages += 1
            return
        if sender >= 0 and self.link_delay(sender, dst, now) is None:
            self.dropped_messages += 1  # link lost in flight
            return
        self._handle(dst, event, now)

    def _process_heartbeat_due(self, node: int, now: float) -> None:
        state = self.states[node]
        if node in self.halted or state.role is not Role.LEADER:
            return
        if now - state.last_heartbeat_sent < self.cycle - 1e-12:
            self._arm_heartbeat(node, state.last_heartbeat_sent + self.cycle)
            return
        self.states[node] = replace(state, last_heartbeat_sent=now)
        self.trace.append(
            time=now,
            node=node,
            event=None,
            role_before=state.role,
            role_after=state.role,
            actions=[SendHeartbeat()],
        )
        self._fan_out_heartbeat(node, now)
        self._arm_heartbeat(node, now + self.cycle)

    def _process_timer(self, node: int, now: float, gen: int) -> None:
        if gen != self._timer_gen[node] or node in self.halted:
            return
        state = self.states[node]
        if state.role in (Role.LEADER, Role.LOCAL_ONLY):
            return
        due = (
            state.last_heartbeat_seen
            + self.timeout_multiplier * self.cycle
            + self._stagger(node)
        )
        if now + 1e-12 < due:
            self._timer_gen[node] += 1
            self._push(due, _TAG_TIMER, node, self._timer_gen[node])
            return
        self._handle(node, HeartbeatTimeout(), now)

    def _handle(self, node: int, event: Event, now: float) -> None:
        state = self.states[node]
        new_state, actions = handle_event(state, event, now)
        self.states[node] = new_state
        self.trace.append(
            time=now,
            node=node,
            event=event,
            role_before=state.role,
            role_after=new_state.role,
            actions=actions,
        )
        if new_state.role is Role.LEADER and state.role is not Role.LEADER:
            self._note_promotion(node, new_state.term, now)
        for action in actions:
            self._apply_action(node, action, now)
        self._arm_timer(node)

    def _note_promotion(self, node: int, term: int, now: float) -> None:
        cid = self.node_cluster[node]
        self.clusters[cid].leader = node
        self.clusters[cid].term = max(self.clusters[cid].term, term)
        self.promotions.append(
            {"time": now, "node": node, "term": term, "cluster_id": cid}
        )
        self._arm_heartbeat(node, now + self.cycle)

    def _apply_action(self, node: int, action: Action, now: float) -> None:
        state = self.states[node]
        cid = self.node_cluster[node]
        cred = self.credentials[node]
        if isinstance(action, SendHeartbeat):
            self._fan_out_heartbeat(node, now)
        elif isinstance(action, StartElection):
            for peer in self._peers(node):
                self._send(
                    node,
                    peer,
                    ElectionCall(
                        cluster_id=cid,
                        term=action.term,
                        sender=node,
                        credential=cred,
                        candidate=node,
                        score=self.scores[node],
                    ),
                    now,
                )
        elif isinstance(action, CastVote):
            self._send(
                node,
                action.candidate,
                VoteGranted(
                    cluster_id=cid,
                    term=action.term,
                    sender=node,
                    credential=cred,
                    voter=node,
                ),
                now,
            )
        elif isinstance(action, BroadcastSnapshot):
            for peer in self._peers(node):
                self._send(
                    node,
                    peer,
                    SyncSnapshot(
                        cluster_id=cid,
                        term=state.term,
                        sender=node,
                        credential=cred,
                        version=state.state_version,
                        replica=dict(state.replica),
                    ),
                    now,
                )
        elif isinstance(action, RequestSync):
            for peer in self._peers(node):
                self._send(
                    node,
                    peer,
                    SyncRequest(
                        cluster_id=cid,
                        term=state.term,
                        sender=node,
                        credential=cred,
                        requester=node,
                    ),
                    now,
                )
        elif isinstance(action, RejectUpdate):
            self.reject_counts[action.reason] = self.reject_counts.get(action.reason, 0) + 1
        elif isinstance(action, protocol.EmitAlert):
            self.alerts += 1

    def _fan_out_heartbeat(self, node: int, now: float) -> None:
        state = self.states[node]
        cid = self.node_cluster[node]
        for peer in self._peers(node):
            self._send(
                node,
                peer,
                HeartbeatReceived(
                    cluster_id=cid,
                    term=state.term,
                    sender=node,
                    credential=self.credentials[node],
                    version=state.state_version,
                ),
                now,
            )

    def _peers(self, node: int) -> list[int]:
        cluster = self.clusters[self.node_cluster[node]]
        return [n for n in sorted(cluster.members) if n != node]

    def _send(self, src: int, dst: int, event: InterNodeEvent, now: float) -> None:
        if src in self.halted:
            return
        delay = self.link_delay(src, dst, now)
        if delay is None:
            self.dropped_messages += 1
            return
        if self.loss_rate > 0.0 and self.loss_rng.random() < self.loss_rate:
            self.dropped_messages += 1
            return
        self._push(now + delay, _TAG_DELIVER, dst, (event, src))

    # -- faults, injections, quorum --------------------------------

    def set_halted(self, node: int, halted: bool, now: float) -> None:
        if node not in self.states:
            return
        if halted:
            self.halted.add(node)
            self.refresh_quorum(now)
            return
        self.halted.discard(node)
        self.states[node] = replace(self.states[node], partitioned=True)
        self._handle(node, LinkUp(peer=node), now)
        self.refresh_quorum(now)

    def notify_link_change(self, a: int, b: int, up: bool, now: float) -> None:
        """Feed LinkDown/LinkUp to both endpoints if they are members."""
        for node, peer in sorted(((a, b), (b, a))):
            if node in self.states and node not in self.halted:
                event = LinkUp(peer=peer) if up else protocol.LinkDown(peer=peer)
                self._handle(node, event, now)
        self.refresh_quorum(now)

    def revoke_credential(self, node: int, now: float) -> None:
        token = self.credentials.get(node)
        if token is None:
            return
        self.registry.discard(token)
        frozen = frozenset(self.registry)
        for n in sorted(self.states):
            self.states[n] = replace(self.states[n], trusted_tokens=frozen)

    def inject_policy_update(
        self, target: int, payload: Mapping, signed: bool, now: float
    ) -> None:
        """Ground-originated update, modeled as arriving directly at
        the target node."""
        if target not in self.states or target in self.halted:
            self.dropped_messages += 1
            return
        event = PolicyUpdate(
            cluster_id=self.node_cluster[target],
            term=self.states[target].term,
            sender=-1,
            credential=GROUND_CREDENTIAL if signed else None,
            payload=dict(payload),
        )
        self._handle(target, event, now)

    def refresh_quorum(self, now: float) -> None:
        """Recompute per-node reachability components and feed quorum
        transitions to the machines in ascending node order."""
        transitions: list[tuple[int, Event]] = []
        for cid in sorted(self.clusters):
            cluster = self.clusters[cid]
            alive = [n for n in sorted(cluster.members) if n not in self.halted]
            components = self._components(alive, now)
            comp_of = {}
            for comp in components:
                for n in comp:
                    comp_of[n] = comp
            best: set[int] = set()
            if cluster.leader is not None and cluster.leader in comp_of:
                best = comp_of[cluster.leader]
            elif components:
                best = max(components, key=lambda c: (len(c), -min(c)))
            cluster.synchronized = set(best)
            cluster_ok = any(len(c) >= cluster.quorum_size for c in components)
            self._mark_cluster_quorum(cid, cluster_ok, now)
            for n in sorted(cluster.members):
                if n in self.halted:
                    continue
                ok = len(comp_of.get(n, set())) >= cluster.quorum_size
                was_ok = self._quorum_ok[n]
                if ok and not was_ok:
                    self._quorum_ok[n] = True
                    transitions.append((n, QuorumRestored()))
                elif not ok and was_ok:
                    self._quorum_ok[n] = False
                    transitions.append((n, QuorumLost()))
        for n, event in sorted(transitions, key=lambda item: item[0]):
            self._handle(n, event, now)

    def _mark_cluster_quorum(self, cid: int, ok: bool, now: float) -> None:
        was = self._cluster_quorum_ok[cid]
        if ok and not was:
            self._cluster_quorum_ok[cid] = True
            start = self._quorum_open.pop(cid, now)
            self.quorum_intervals.append({"cluster_id": cid, "start": start, "end": now})
        elif not ok and was:
            self._cluster_quorum_ok[cid] = False
            self._quorum_open[cid] = now

    def finalize(self, now: float) -> None:
        for cid in sorted(self._quorum_open):
            self.quorum_intervals.append(
                {"cluster_id": cid, "start": self._quorum_open[cid], "end": now}
            )
        self._quorum_open.clear()

    def _components(self, alive: Sequence[int], now: float) -> list[set[int]]:
        remaining = set(alive)
        components = []
        for seed in alive:
            if seed not in remaining:
                continue
            comp = {seed}
            remaining.discard(seed)
            queue = [seed]
            while queue:
                cur = queue.pop(0)
                for other in sorted(remaining):
                    if self.link_delay(cur, other, now) is not None:
                        comp.add(other)
                        remaining.discard(other)
                        queue.append(other)
            components.append(comp)
        return components

    def shift_timers(self, gap: float) -> None:
        """Advance heartbeat bookkeeping across a steady-state gap
        between simulated sub-windows."""
        if gap <= 0:
            return
        for n in sorted(self.states):
            s = self.states[n]
            seen = s.last_heartbeat_seen + gap
            sent = s.last_heartbeat_sent
            if sent != float("-inf"):
                sent += gap
            self.states[n] = replace(s, last_heartbeat_seen=seen, last_heartbeat_sent=sent)
        for n in sorted(self.states):
            if self.states[n].role is Role.LEADER and n not in self.halted:
                self._arm_heartbeat(n, self.states[n].last_heartbeat_sent + self.cycle)
            else:
                self._arm_timer(n)

    def leader_of(self, cid: int) -> int | None:
        leaders = [
            n
            for n in sorted(self.clusters[cid].members)
            if self.states[n].role is Role.LEADER and n not in self.halted
        ]
        return leaders[0] if leaders else None


# --- Scenario-driven runs ------------------------------------------


@dataclass
class RunResult:
    """Everything a scenario run produces, ready for export."""

    scenario: Scenario
    trace: EventTrace
    cluster_rows: list[tuple[float, int, int, str, int]]
    episodes: list[LinkEpisode]
    degree: list[MeanStdSeries]
    gsl_samples: list[float]
    isl_rtt_samples: list[float]
    decision_rows: list[tuple[float, int, str, str, float | None, bool]]
    summary: dict
    failovers: list[dict]
    quorum_intervals: list[dict]
    promotions: list[dict]
    snapshots: list[TopologySnapshot]


def _load_constellation(scenario: Scenario, strict_tle: bool = False):
    if scenario.walker is not None:
        w = scenario.walker
        return generate_walker(
            w.total, w.planes, w.phasing, w.inclination_deg, w.altitude_km, scenario.epoch
        )
    if scenario.tle_path is not None:
        with open(scenario.tle_path) as fh:
            elements = parse_tle(fh.read(), strict=strict_tle)
        if not elements:
            raise ConfigError(f"no usable TLE records in {scenario.tle_path}")
        return elements
    raise ConfigError("scenario has no constellation source")


def _load_stations(scenario: Scenario) -> list[GroundStation]:
    if scenario.stations_path == "none":
        return []
    if scenario.stations_path is None:
        return default_ground_stations()
    return load_ground_stations(scenario.stations_path)


class _SnapshotHolder:
    """Mutable cell so link_delay closures see the current snapshot."""

    snapshot: TopologySnapshot | None = None


def _make_link_delay(holder: _SnapshotHolder, scenario: Scenario):
    ctl_threshold = scenario.topology.isl_rtt_threshold
    halts = [f for f in scenario.faults if f.kind is FaultKind.NODE_HALT]
    drops = [f for f in scenario.faults if f.kind is FaultKind.LINK_DROP]

    def link_delay(a: int, b: int, t: float) -> float | None:
        for f in halts:
            if f.node in (a, b) and f.active(t):
                return None
        if drops:
            key = (a, b) if a < b else (b, a)
            for f in drops:
                if f.pair == key and f.active(t):
                    return None
        snap = holder.snapshot
        if snap is None:
            return None
        link = snap.isl_adjacency.get(a, {}).get(b)
        if link is None or link.rtt >= ctl_threshold:
            return None
        return link.one_way_delay

    return link_delay


def _mask_snapshot(snap: TopologySnapshot, t: float, scenario: Scenario) -> TopologySnapshot:
    """Remove links suppressed by active faults at time t."""
    drops = {f.pair for f in scenario.faults if f.kind is FaultKind.LINK_DROP and f.active(t)}
    halted = {f.node for f in scenario.faults if f.kind is FaultKind.NODE_HALT and f.active(t)}
    blacked: set[int] = set()
    for f in scenario.faults:
        if f.kind is FaultKind.GSL_BLACKOUT and f.active(t):
            blacked |= f.stations
    if not drops and not halted and not blacked:
        return snap
    adjacency: dict[int, dict] = {sat: {} for sat in snap.isl_adjacency}
    for a in sorted(snap.isl_adjacency):
        for b in sorted(snap.isl_adjacency[a]):
            if a >= b:
                continue
            if (a, b) in drops or a in halted or b in halted:
                continue
            link = snap.isl_adjacency[a][b]
            adjacency[a][b] = link
            adjacency[b][a] = link
    gsl = [
        lk
        for lk in snap.gsl_links
        if lk.endpoint_a not in blacked and lk.endpoint_b not in halted
    ]
    return TopologySnapshot(time=snap.time, isl_adjacency=adjacency, gsl_links=gsl)


def _formation_metrics(
    clusters: Sequence[Cluster],
    adjacency,
    scenario: Scenario,
    t: float,
    last_report: Mapping[int, float],
) -> tuple[dict[int, dict[int, NodeMetrics]], dict[int, float]]:
    weights = scenario.cluster.weights
    horizon = scenario.cluster.staleness_horizon_cycles * scenario.protocol.cycle
    by_cluster: dict[int, dict[int, NodeMetrics]] = {}
    scores: dict[int, float] = {}
    for cluster in clusters:
        members = sorted(cluster.members)
        norms = degree_norms(members, adjacency, scenario.topology.isl_rtt_threshold)
        metrics = {}
        for n in members:
            age = t - last_report.get(n, t)
            metrics[n] = NodeMetrics(
                node_id=n,
                isl_degree_norm=norms[n],
                compute_avail=min(1.0, max(0.0, scenario.cluster.compute_avail.get(n, 1.0))),
                telemetry_freshness=telemetry_freshness(age, horizon),
            )
            scores[n] = node_score(metrics[n], weights)
        by_cluster[cluster.cluster_id] = metrics
    return by_cluster, scores


_RESERVOIR_CAP = 2_000_000


def run(
    scenario: Scenario,
    *,
    strict_tle: bool = False,
    collect_decisions: bool = False,
    protocol_enabled: bool = True,
) -> RunResult:
    """Execute a scenario: per-dt topology, event-driven control plane,
    fault and policy-update injection, streaming statistics.

    With protocol_enabled=False only the topology pipeline runs, which
    is what the pure Fig-2-style statistics need.
    """
    elements = _load_constellation(scenario, strict_tle)
    eph = ConstellationEphemeris(elements, scenario.epoch, scenario.include_j2)
    stations = _load_stations(scenario)

    ctl_threshold = scenario.topology.isl_rtt_threshold
    rtt_needed = [ctl_threshold]
    for tau in scenario.degree_thresholds:
        rtt_needed.append(tau if scenario.threshold_kind is ThresholdKind.RTT else 2.0 * tau)
    snap_params = replace(scenario.topology, isl_rtt_threshold=max(rtt_needed))

    trace = EventTrace()
    rng = random.Random(scenario.seed)
    loss_rng = random.Random(scenario.seed + 1)
    credentials = {sid: f"tok-{sid}" for sid in eph.sat_ids}
    registry: set[str] = set(credentials.values()) | {GROUND_CREDENTIAL}

    tracker = EpisodeTracker(dt=scenario.dt, min_duration=scenario.outputs.episode_min_s)
    degree_acc: list[dict] = [
        {"threshold": tau, "times": [], "means": [], "stds": []}
        for tau in scenario.degree_thresholds
    ]
    gsl_samples: list[float] = []
    isl_samples: list[float] = []
    isl_seen = 0
    cluster_rows: list[tuple[float, int, int, str, int]] = []
    decision_rows: list[tuple[float, int, str, str, float | None, bool]] = []
    kept_snapshots: list[TopologySnapshot] = []
    keep_snaps = len(eph) * scenario.num_steps <= 200_000

    holder = _SnapshotHolder()
    link_delay = _make_link_delay(holder, scenario)
    plane: ControlPlane | None = None
    generations: list[dict] = []
    persistent: dict[int, NodeState] = {}
    last_report: dict[int, float] = {}
    pending_recluster = False
    msg_counter = 0

    transitions: list[tuple[float, int, str, object]] = []
    for i, f in enumerate(scenario.faults):
        transitions.append((f.time, 0, "fault_start", f))
        if f.duration != float("inf"):
            transitions.append((f.end, 1, "fault_end", f))
    for i, p in enumerate(scenario.policy_updates):
        transitions.append((p.time, 2, "inject", p))
    transitions.sort(key=lambda item: (item[0], item[1], str(item[3])))
    trans_idx = 0

    inner_len = scenario.protocol.cycles_per_step * scenario.protocol.cycle
    cycle = scenario.protocol.cycle

    for step in range(scenario.num_steps):
        t = step * scenario.dt
        states = eph.states_at(t)
        snapshot = build_snapshot(states, stations, snap_params)
        masked = _mask_snapshot(snapshot, t, scenario)
        holder.snapshot = snapshot
        if keep_snaps:
            kept_snapshots.append(masked)

        ctl_pairs = set()
        for a in masked.isl_adjacency:
            for b, link in masked.isl_adjacency[a].items():
                if a < b and link.rtt < ctl_threshold:
                    ctl_pairs.add((a, b))
        tracker.observe(step, ctl_pairs)
        for a, b in sorted(ctl_pairs):
            rtt = masked.isl_adjacency[a][b].rtt
            isl_seen += 1
            if len(isl_samples) < _RESERVOIR_CAP:
                isl_samples.append(rtt)
            else:
                j = rng.randrange(isl_seen)
                if j < _RESERVOIR_CAP:
                    isl_samples[j] = rtt
        for acc in degree_acc:
            tau = acc["threshold"]
            counts = []
            for sat in sorted(masked.isl_adjacency):
                nbrs = masked.isl_adjacency[sat]
                if scenario.threshold_kind is ThresholdKind.RTT:
                    counts.append(sum(1 for lk in nbrs.values() if lk.rtt < tau))
                else:
                    counts.append(sum(1 for lk in nbrs.values() if lk.one_way_delay < tau))
            arr = np.asarray(counts, dtype=float)
            acc["times"].append(t)
            acc["means"].append(float(arr.mean()) if arr.size else 0.0)
            acc["stds"].append(float(arr.std()) if arr.size else 0.0)
        for lk in masked.gsl_links:
            gsl_samples.append(lk.rtt)

        if not protocol_enabled:
            continue

        if plane is not None and step > 0:
            plane.shift_timers(scenario.dt - inner_len)
            # Transitions that fell into the steady-state gap apply at
            # the new window start, against the outgoing plane.
            while trans_idx < len(transitions) and transitions[trans_idx][0] <= t:
                _, _, kind, obj = transitions[trans_idx]
                trans_idx += 1
                _apply_transition(plane, kind, obj, t)

        halted_now = {
            f.node
            for f in scenario.faults
            if f.kind is FaultKind.NODE_HALT and f.active(t)
        }
        recluster = plane is None or step % scenario.cluster.recluster_steps == 0 or pending_recluster
        if recluster:
            if plane is not None:
                plane.finalize(t)
                persistent = dict(plane.states)
            clusters = form_clusters(
                masked.isl_adjacency, scenario.cluster.max_size, ctl_threshold
            )
            metrics_by_cluster, scores = _formation_metrics(
                clusters, masked.isl_adjacency, scenario, t, last_report
            )
            plane = ControlPlane(
                clusters,
                link_delay,
                trace=trace,
                scores=scores,
                credentials=credentials,
                registry=registry,
                initial=persistent,
                cycle=cycle,
                timeout_multiplier=scenario.protocol.timeout_multiplier,
                loss_rate=scenario.protocol.loss_rate,
                loss_rng=loss_rng,
            )
            plane.halted = set(halted_now)
            plane.bootstrap(t, metrics_by_cluster, scenario.cluster.weights)
            generations.append(
                {"start": t, "plane": plane, "node_cluster": dict(plane.node_cluster)}
            )
            pending_recluster = False

        window_end = t + inner_len
        while trans_idx < len(transitions) and transitions[trans_idx][0] <= window_end:
            when, _, kind, obj = transitions[trans_idx]
            trans_idx += 1
            when = max(when, t)
            plane.run_until(when)
            _apply_transition(plane, kind, obj, when)
        plane.run_until(window_end)

        for n in sorted(plane.states):
            if n not in plane.halted:
                last_report[n] = t
                plane.states[n] = protocol.buffer_telemetry(plane.states[n], [t, n])

        if not all(plane._cluster_quorum_ok.values()):
            pending_recluster = True

        for cid in sorted(plane.clusters):
            cluster = plane.clusters[cid]
            for n in sorted(cluster.members):
                st = plane.states[n]
                role = "halted" if n in plane.halted else st.role.value
                cluster_rows.append((t, cid, n, role, st.term))

        if collect_decisions:
            msg_counter = _collect_decisions(
                scenario, plane, masked, t, msg_counter, decision_rows
            )

    if plane is not None:
        final_time = (scenario.num_steps - 1) * scenario.dt + inner_len
        plane.finalize(final_time)
    episodes = tracker.finish()

    degree_series = [
        MeanStdSeries(
            name=f"isl_degree_{scenario.threshold_kind.value}_{acc['threshold']:g}",
            times=tuple(acc["times"]),
            means=tuple(acc["means"]),
            stds=tuple(acc["stds"]),
        )
        for acc in degree_acc
    ]

    promotions = [p for g in generations for p in g["plane"].promotions]
    failovers = _extract_failovers(scenario, generations)
    quorum_intervals = [q for g in generations for q in g["plane"].quorum_intervals]
    reject_counts: dict[str, int] = {}
    dropped = 0
    alerts = 0
    for g in generations:
        pl = g["plane"]
        dropped += pl.dropped_messages
        alerts += pl.alerts
        for reason, count in pl.reject_counts.items():
            reject_counts[reason] = reject_counts.get(reason, 0) + count

    summary = {
        "elections": len(promotions),
        "failovers": len(failovers),
        "rejected_updates": reject_counts.get("credential", 0),
        "rejected_total": sum(reject_counts.values()),
        "dropped_messages": dropped,
        "alerts": alerts,
        "quorum_loss_intervals": len(quorum_intervals),
        "quorum_loss_total_s": sum(q["end"] - q["start"] for q in quorum_intervals),
    }

    return RunResult(
        scenario=scenario,
        trace=trace,
        cluster_rows=cluster_rows,
        episodes=episodes,
        degree=degree_series,
        gsl_samples=gsl_samples,
        isl_rtt_samples=isl_samples,
        decision_rows=decision_rows,
        summary=summary,
        failovers=failovers,
        quorum_intervals=quorum_intervals,
        promotions=promotions,
        snapshots=kept_snapshots,
    )


def _collect_decisions(
    scenario: Scenario,
    plane: ControlPlane,
    masked: TopologySnapshot,
    t: float,
    msg_counter: int,
    rows: list,
) -> int:
    """Synthetic per-step control workload routed through link
    selection and the priority scheduler."""
    eval_classes = [InterfaceClass(c) for c in scenario.linkmap.eval_classes]
    intra = [c for c in eval_classes if c in (InterfaceClass.AUTH, InterfaceClass.E2, InterfaceClass.F1)]
    ground = [c for c in eval_classes if c in (InterfaceClass.NG, InterfaceClass.A1, InterfaceClass.O1)]

    gsl_by_sat: dict[int, list] = {}
    for lk in masked.gsl_links:
        gsl_by_sat.setdefault(lk.endpoint_b, []).append(lk)

    queue: list[ControlMessage] = []
    candidates: dict[int, list] = {}
    for cid in sorted(plane.clusters):
        leader = plane.leader_of(cid)
        if leader is None:
            continue
        for peer in plane._peers(leader):
            if peer in plane.halted:
                continue
            isl = masked.isl_adjacency.get(leader, {}).get(peer)
            avail = ([isl] if isl is not None else []) + sorted(
                gsl_by_sat.get(leader, []), key=lambda lk: (lk.distance, lk.endpoint_a)
            )
            for cls in intra:
                msg = ControlMessage(
                    msg_id=msg_counter, interface=cls, src=leader, dst=peer,
                    size=256, created_at=t,
                )
                msg_counter += 1
                queue.append(msg)
                candidates[msg.msg_id] = avail
    for sat in sorted(masked.isl_adjacency):
        avail = sorted(gsl_by_sat.get(sat, []), key=lambda lk: (lk.distance, lk.endpoint_a))
        for cls in ground:
            msg = ControlMessage(
                msg_id=msg_counter, interface=cls, src=sat, dst=-1,
                size=256, created_at=t,
            )
            msg_counter += 1
            queue.append(msg)
            candidates[msg.msg_id] = avail

    in_eclipse = any(start <= t < end for start, end in scenario.eclipse_windows)
    capacity = scenario.linkmap.capacity_per_tick
    if in_eclipse:
        mode = SchedulerMode.ECLIPSE
    elif len(queue) > capacity:
        mode = SchedulerMode.CONGESTED
    else:
        mode = SchedulerMode.NORMAL
    for msg in schedule(queue, capacity, mode):
        decision = select_link(msg, candidates[msg.msg_id])
        kind = decision.link.kind.value if decision.link is not None else "NONE"
        rows.append(
            (t, msg.msg_id, msg.interface.value, kind, decision.expected_delay, decision.degraded)
        )
    return msg_counter


def _apply_transition(plane: ControlPlane, kind: str, obj, now: float) -> None:
    if kind == "fault_start":
        f = obj
        if f.kind is FaultKind.NODE_HALT:
            plane.set_halted(f.node, True, now)
        elif f.kind is FaultKind.LINK_DROP:
            plane.notify_link_change(f.pair[0], f.pair[1], False, now)
        elif f.kind is FaultKind.CREDENTIAL_REVOKE:
            plane.revoke_credential(f.node, now)
    elif kind == "fault_end":
        f = obj
        if f.kind is FaultKind.NODE_HALT:
            if f.node in plane.halted:
                plane.set_halted(f.node, False, now)
        elif f.kind is FaultKind.LINK_DROP:
            plane.notify_link_change(f.pair[0], f.pair[1], True, now)
    else:
        p = obj
        plane.inject_policy_update(p.target, p.payload, p.signed, now)


def _extract_failovers(scenario: Scenario, generations: list[dict]) -> list[dict]:
    """Match leader halts to the next promotion in the same cluster."""
    failovers = []
    for f in scenario.faults:
        if f.kind is not FaultKind.NODE_HALT:
            continue
        gen = None
        for g in generations:
            if g["start"] <= f.time:
                gen = g
            else:
                break
        if gen is None:
            continue
        cid = gen["node_cluster"].get(f.node)
        if cid is None:
            continue
        promos = [p for p in gen["plane"].promotions if p["cluster_id"] == cid]
        before = [p for p in promos if p["time"] <= f.time]
        if not before or before[-1]["node"] != f.node:
            continue
        after = [p for p in promos if p["time"] > f.time and p["node"] != f.node]
        if after:
            failovers.append(
                {
                    "cluster_id": cid,
                    "halted_leader": f.node,
                    "new_leader": after[0]["node"],
                    "halt_time": f.time,
                    "promotion_time": after[0]["time"],
                    "latency": after[0]["time"] - f.time,
                }
            )
    return failovers
