"""Leader failover protocol: a pure per-node state machine.

Each node reduces (state, event, now) to (new state, actions) with no
side effects, so traces are reproducible and transitions testable in
isolation. Elections use term-numbered majority voting: a node grants
at most one vote per term, self-votes are internal bookkeeping, and a
candidate defers to a same-term rival with a strictly higher score.
Credentials are an abstract token registry, not real cryptography:
inter-node events whose token is missing or untrusted are rejected
without touching state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

from .clusters import Cluster, NodeMetrics, QuorumNotMet, ScoreWeights, elect_leader

DEFAULT_CYCLE = 0.100  # seconds of simulated time per control cycle
DEFAULT_TIMEOUT_MULTIPLIER = 3
TELEMETRY_BUFFER_SIZE = 32
# Per-rank candidacy stagger, as a fraction of the control cycle. Ranks
# are assigned by descending score so the best follower times out first.
STAGGER_FRACTION = 0.02


class InvariantViolation(RuntimeError):
    """A transition attempted to decrease the term or state version."""


class Role(Enum):
    LEADER = "leader"
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    REJOINING = "rejoining"
    LOCAL_ONLY = "local_only"


# --- Events ---

@dataclass(frozen=True, kw_only=True)
class Event:
    """Base for everything fed to handle_event."""


@dataclass(frozen=True, kw_only=True)
class InterNodeEvent(Event):
    """An event that crossed a link: carries cluster, term, credential."""

    cluster_id: int = 0
    term: int = 0
    sender: int = -1
    credential: str | None = None


@dataclass(frozen=True, kw_only=True)
class HeartbeatReceived(InterNodeEvent):
    version: int = 0


@dataclass(frozen=True, kw_only=True)
class ElectionCall(InterNodeEvent):
    candidate: int = -1
    score: float = 0.0


@dataclass(frozen=True, kw_only=True)
class VoteGranted(InterNodeEvent):
    voter: int = -1


@dataclass(frozen=True, kw_only=True)
class ElectionWon(InterNodeEvent):
    pass


@dataclass(frozen=True, kw_only=True)
class SyncRequest(InterNodeEvent):
    requester: int = -1


@dataclass(frozen=True, kw_only=True)
class SyncSnapshot(InterNodeEvent):
    version: int = 0
    replica: Mapping = field(default_factory=dict)


@dataclass(frozen=True, kw_only=True)
class PolicyUpdate(InterNodeEvent):
    payload: Mapping = field(default_factory=dict)


@dataclass(frozen=True, kw_only=True)
class HeartbeatTimeout(Event):
    pass


@dataclass(frozen=True, kw_only=True)
class LinkDown(Event):
    peer: int = -1


@dataclass(frozen=True, kw_only=True)
class LinkUp(Event):
    peer: int = -1


@dataclass(frozen=True, kw_only=True)
class QuorumLost(Event):
    pass


@dataclass(frozen=True, kw_only=True)
class QuorumRestored(Event):
    pass


@dataclass(frozen=True, kw_only=True)
class IntegrityAlarm(Event):
    pass


# --- Actions ---

@dataclass(frozen=True)
class Action:
    pass


@dataclass(frozen=True)
class SendHeartbeat(Action):
    pass


@dataclass(frozen=True)
class StartElection(Action):
    term: int


@dataclass(frozen=True)
class CastVote(Action):
    term: int
    candidate: int


@dataclass(frozen=True)
class BroadcastSnapshot(Action):
    pass


@dataclass(frozen=True)
class ApplySnapshot(Action):
    version: int


@dataclass(frozen=True)
class RequestSync(Action):
    pass


@dataclass(frozen=True)
class RejectUpdate(Action):
    reason: str


@dataclass(frozen=True)
class DisableReconfiguration(Action):
    pass


@dataclass(frozen=True)
class EmitAlert(Action):
    message: str = ""


@dataclass(frozen=True)
class NoOp(Action):
    pass


@dataclass(frozen=True, kw_only=True)
class NodeState:
    """Full per-node protocol state. Treat as immutable; replica maps
    are replaced wholesale, never mutated in place."""

    node_id: int
    cluster_id: int = 0
    role: Role = Role.FOLLOWER
    term: int = 0
    state_version: int = 0
    replica: Mapping = field(default_factory=dict)
    last_heartbeat_seen: float = 0.0
    last_heartbeat_sent: float = float("-inf")
    voted_for: int | None = None
    votes_received: frozenset[int] = frozenset()
    buffered_telemetry: tuple = ()
    credential: str = ""
    trusted_tokens: frozenset[str] = frozenset()
    score: float = 0.0
    quorum_size: int = 1
    partitioned: bool = False


def credential_ok(state: NodeState, event: InterNodeEvent) -> bool:
    """The abstract credential predicate: token is registered."""
    return event.credential is not None and event.credential in state.trusted_tokens


def buffer_telemetry(state: NodeState, report) -> NodeState:
    """Retain the report, keeping only the most recent entries."""
    buf = (state.buffered_telemetry + (report,))[-TELEMETRY_BUFFER_SIZE:]
    return replace(state, buffered_telemetry=buf)


def heartbeat_due(
    state: NodeState,
    now: float,
    cycle: float,
    timeout_multiplier: int = DEFAULT_TIMEOUT_MULTIPLIER,
    stagger: float = 0.0,
) -> bool:
    """Leader: a heartbeat is due every cycle. Follower/candidate/
    rejoining: the failover timer fires after timeout_multiplier
    missed cycles (plus any deterministic stagger)."""
    if cycle <= 0:
        raise ValueError("cycle must be positive")
    slack = 1e-12  # float rounding at cycle boundaries
    if state.role is Role.LEADER:
        return now - state.last_heartbeat_sent >= cycle - slack
    if state.role is Role.LOCAL_ONLY:
        return False
    return now - state.last_heartbeat_seen >= timeout_multiplier * cycle + stagger - slack


def _become_leader(state: NodeState, now: float) -> tuple[NodeState, list[Action]]:
    replica = dict(state.replica)
    if state.buffered_telemetry:
        # Replay buffered telemetry into the replica before the first
        # heartbeat goes out.
        replica["telemetry_replay"] = state.buffered_telemetry
    new = replace(
        state,
        role=Role.LEADER,
        replica=replica,
        state_version=state.state_version + 1,
        last_heartbeat_sent=now,
        partitioned=False,
    )
    return new, [SendHeartbeat(), BroadcastSnapshot()]


def _start_candidacy(state: NodeState, now: float) -> tuple[NodeState, list[Action]]:
    new_term = state.term + 1
    new = replace(
        state,
        role=Role.CANDIDATE,
        term=new_term,
        voted_for=state.node_id,
        votes_received=frozenset({state.node_id}),
        last_heartbeat_seen=now,
    )
    actions: list[Action] = [StartElection(new_term)]
    if len(new.votes_received) >= new.quorum_size:
        # Singleton cluster: the self-vote already carries the quorum.
        new, more = _become_leader(new, now)
        actions.extend(more)
    return new, actions


def _adopt_term(state: NodeState, term: int) -> NodeState:
    role = state.role
    if role in (Role.LEADER, Role.CANDIDATE):
        role = Role.FOLLOWER
    return replace(
        state,
        term=term,
        role=role,
        voted_for=None,
        votes_received=frozenset(),
    )


def handle_event(
    state: NodeState, event: Event, now: float
) -> tuple[NodeState, list[Action]]:
    """Apply one event; returns the successor state and output actions.

    Deterministic and side-effect free. Inter-node events are gated
    on the credential registry first, then on term staleness; an event
    with a newer term advances the local term before dispatch.
    """
    prior = state
    if isinstance(event, InterNodeEvent):
        if not credential_ok(state, event):
            return state, [RejectUpdate("credential")]
        if event.term < state.term:
            return state, [RejectUpdate("stale term")]
        if event.term > state.term:
            state = _adopt_term(state, event.term)

    new_state, actions = _dispatch(state, event, now)
    if new_state.term < prior.term or new_state.state_version < prior.state_version:
        raise InvariantViolation(
            f"node {prior.node_id}: term {prior.term}->{new_state.term}, "
            f"version {prior.state_version}->{new_state.state_version}"
        )
    return new_state, actions


def _dispatch(state: NodeState, event: Event, now: float) -> tuple[NodeState, list[Action]]:
    role = state.role

    if isinstance(event, HeartbeatReceived):
        if role is Role.LOCAL_ONLY:
            return state, [NoOp()]
        if role is Role.LEADER:
            # Same-term duplicate leader is impossible under the voting
            # rules; seeing one is worth an alarm, not a step-down.
            return state, [EmitAlert("duplicate leader heartbeat")]
        new = replace(
            state,
            role=state.role if role is Role.REJOINING else Role.FOLLOWER,
            last_heartbeat_seen=now,
            votes_received=frozenset(),
        )
        if event.version > new.state_version and role is not Role.REJOINING:
            return new, [RequestSync()]
        return new, []

    if isinstance(event, ElectionCall):
        if role is Role.LOCAL_ONLY:
            return state, [NoOp()]
        if role in (Role.FOLLOWER, Role.REJOINING):
            if state.voted_for in (None, event.candidate):
                new = replace(
                    state, voted_for=event.candidate, last_heartbeat_seen=now
                )
                return new, [CastVote(state.term, event.candidate)]
            return state, [RejectUpdate("already voted")]
        if role is Role.CANDIDATE:
            rival_rank = (event.score, -event.candidate)
            own_rank = (state.score, -state.node_id)
            if state.votes_received == {state.node_id} and rival_rank > own_rank:
                # Defer: abandon the candidacy (the self-vote was never
                # sent anywhere) and spend this term's vote on the rival.
                new = replace(
                    state,
                    role=Role.FOLLOWER,
                    voted_for=event.candidate,
                    votes_received=frozenset(),
                    last_heartbeat_seen=now,
                )
                return new, [CastVote(state.term, event.candidate)]
            return state, [RejectUpdate("already voted")]
        return state, [RejectUpdate("already voted")]  # leader at same term

    if isinstance(event, VoteGranted):
        if role is not Role.CANDIDATE:
            return state, [NoOp()]
        votes = state.votes_received | {event.voter}
        new = replace(state, votes_received=votes)
        if len(votes) >= state.quorum_size:
            return _become_leader(new, now)
        return new, []

    if isinstance(event, ElectionWon):
        if role is Role.CANDIDATE:
            return _become_leader(state, now)
        return state, [NoOp()]

    if isinstance(event, SyncRequest):
        if role is Role.LEADER:
            return state, [BroadcastSnapshot()]
        return state, [NoOp()]

    if isinstance(event, SyncSnapshot):
        if role in (Role.LOCAL_ONLY, Role.LEADER):
            return state, [NoOp()]
        if event.version < state.state_version:
            return state, [RejectUpdate("stale version")]
        new = replace(
            state,
            role=Role.FOLLOWER,
            replica=dict(event.replica),
            state_version=event.version,
            last_heartbeat_seen=now,
            partitioned=False,
        )
        return new, [ApplySnapshot(event.version)]

    if isinstance(event, PolicyUpdate):
        if role is Role.LOCAL_ONLY:
            return state, [RejectUpdate("reconfiguration disabled")]
        if role is Role.LEADER:
            merged = dict(state.replica)
            merged.update(event.payload)
            new = replace(
                state, replica=merged, state_version=state.state_version + 1
            )
            return new, [BroadcastSnapshot()]
        return state, [RejectUpdate("not leader")]

    if isinstance(event, HeartbeatTimeout):
        if role in (Role.FOLLOWER, Role.CANDIDATE, Role.REJOINING):
            if state.trusted_tokens and state.credential not in state.trusted_tokens:
                # A node whose own credential was revoked may not stand
                # for election; it can still follow a valid leader. An
                # empty registry means credentials are not modeled.
                return replace(state, last_heartbeat_seen=now), [NoOp()]
            return _start_candidacy(state, now)
        return state, [NoOp()]

    if isinstance(event, IntegrityAlarm):
        if role is Role.LEADER:
            new = replace(state, role=Role.FOLLOWER, last_heartbeat_seen=now)
            return new, [EmitAlert("integrity check failed; stepping down")]
        return state, [EmitAlert("integrity check failed")]

    if isinstance(event, LinkDown):
        return replace(state, partitioned=True), []

    if isinstance(event, LinkUp):
        if state.partitioned and role is not Role.LEADER:
            new = replace(
                state,
                role=Role.REJOINING,
                partitioned=False,
                last_heartbeat_seen=now,
            )
            return new, [RequestSync()]
        return state, []

    if isinstance(event, QuorumLost):
        if role is Role.LOCAL_ONLY:
            return state, [NoOp()]
        return replace(state, role=Role.LOCAL_ONLY), [DisableReconfiguration()]

    if isinstance(event, QuorumRestored):
        if role is Role.LOCAL_ONLY:
            new = replace(state, role=Role.FOLLOWER, last_heartbeat_seen=now)
            return new, []
        return state, [NoOp()]

    return state, [NoOp()]


def candidacy_stagger(rank: int, cycle: float = DEFAULT_CYCLE) -> float:
    """Deterministic timeout offset for the rank-th best candidate."""
    return rank * STAGGER_FRACTION * cycle


def promote_follower(
    cluster: Cluster,
    candidates: Sequence[int],
    metrics: Mapping[int, NodeMetrics],
    weights: ScoreWeights,
    credential_valid,
) -> int:
    """Pick the replacement leader among credentialed candidates.

    Filters the candidate set by the credential predicate, then
    delegates to the score-based election. Raises QuorumNotMet when
    fewer valid candidates remain than the quorum; telemetry replay
    happens when the chosen node's machine processes its promotion.
    """
    valid = [c for c in candidates if credential_valid(c)]
    if len(valid) < cluster.quorum_size:
        raise QuorumNotMet(
            f"{len(valid)} credentialed candidates < quorum {cluster.quorum_size}"
        )
    return elect_leader(cluster, metrics, weights, eligible=valid)
