"""Control-cluster formation, node scoring, leader election, quorum.

Clusters grow by deterministic greedy BFS over the qualifying ISL
graph; leaders are the argmax of a weighted score over the
state-synchronized members, ties broken by lowest node id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .topology import Link


class QuorumNotMet(RuntimeError):
    """Fewer synchronized members than the strict-majority quorum."""


@dataclass(frozen=True)
class NodeMetrics:
    """Scoring inputs for one node, each normalized to [0, 1]."""

    node_id: int
    isl_degree_norm: float
    compute_avail: float
    telemetry_freshness: float

    def __post_init__(self):
        for name in ("isl_degree_norm", "compute_avail", "telemetry_freshness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class ScoreWeights:
    """Convex weights over the three scoring inputs."""

    w_conn: float = 1.0 / 3.0
    w_comp: float = 1.0 / 3.0
    w_fresh: float = 1.0 / 3.0

    def __post_init__(self):
        if min(self.w_conn, self.w_comp, self.w_fresh) < 0.0:
            raise ValueError("weights must be nonnegative")
        total = self.w_conn + self.w_comp + self.w_fresh
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, expected 1")


@dataclass
class Cluster:
    """A control cluster: membership, leadership, and sync status."""

    cluster_id: int
    members: frozenset[int]
    leader: int | None = None
    term: int = 0
    synchronized: set[int] = field(default_factory=set)

    def __post_init__(self):
        if self.leader is not None and self.leader not in self.members:
            raise ValueError("leader must be a member")
        if not set(self.synchronized) <= set(self.members):
            raise ValueError("synchronized must be a subset of members")

    @property
    def quorum_size(self) -> int:
        """Strict majority of full membership."""
        return len(self.members) // 2 + 1


def form_clusters(
    isl_adjacency: Mapping[int, Mapping[int, Link]],
    max_size: int,
    rtt_threshold: float | None = None,
) -> list[Cluster]:
    """Partition all nodes into clusters by greedy BFS growth.

    Seeds at the lowest unassigned node id, expands breadth-first over
    qualifying edges in ascending-id order, and stops at max_size.
    Isolated nodes become singleton clusters. Every node lands in
    exactly one cluster; non-singleton clusters are connected.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")

    def qualifies(link: Link) -> bool:
        return rtt_threshold is None or link.rtt < rtt_threshold

    assigned: set[int] = set()
    clusters: list[Cluster] = []
    for seed in sorted(isl_adjacency):
        if seed in assigned:
            continue
        members = [seed]
        assigned.add(seed)
        queue = [seed]
        while queue and len(members) < max_size:
            node = queue.pop(0)
            for nbr in sorted(isl_adjacency[node]):
                if nbr in assigned or not qualifies(isl_adjacency[node][nbr]):
                    continue
                members.append(nbr)
                assigned.add(nbr)
                queue.append(nbr)
                if len(members) >= max_size:
                    break
        member_set = frozenset(members)
        clusters.append(
            Cluster(
                cluster_id=len(clusters),
                members=member_set,
                synchronized=set(member_set),
            )
        )
    return clusters


def node_score(metrics: NodeMetrics, weights: ScoreWeights) -> float:
    """Weighted combination of connectivity, compute, and freshness."""
    return (
        weights.w_conn * metrics.isl_degree_norm
        + weights.w_comp * metrics.compute_avail
        + weights.w_fresh * metrics.telemetry_freshness
    )


def elect_leader(
    cluster: Cluster,
    metrics: Mapping[int, NodeMetrics],
    weights: ScoreWeights,
    eligible: Sequence[int] | None = None,
) -> int:
    """Elect the highest-scoring synchronized member, bump the term.

    `eligible`, when given, restricts the candidate set (it must be a
    subset of the synchronized members). Ties break to the lowest
    node id. Raises QuorumNotMet when the candidate set is smaller
    than the quorum.
    """
    candidates = sorted(cluster.synchronized if eligible is None else eligible)
    if not set(candidates) <= cluster.synchronized:
        raise ValueError("eligible nodes must be synchronized members")
    if len(candidates) < cluster.quorum_size:
        raise QuorumNotMet(
            f"{len(candidates)} candidates < quorum {cluster.quorum_size}"
        )
    best = min(candidates, key=lambda n: (-node_score(metrics[n], weights), n))
    cluster.leader = best
    cluster.term += 1
    return best


def check_quorum(cluster: Cluster) -> bool:
    """True iff the synchronized set is a strict majority of members."""
    return len(cluster.synchronized) >= cluster.quorum_size


def degree_norms(
    members: Sequence[int],
    isl_adjacency: Mapping[int, Mapping[int, Link]],
    rtt_threshold: float | None = None,
) -> dict[int, float]:
    """Qualifying ISL degree of each member over the cluster maximum.

    Zero everywhere when no member has a qualifying link.
    """
    degrees = {}
    for node in members:
        nbrs = isl_adjacency.get(node, {})
        if rtt_threshold is None:
            degrees[node] = len(nbrs)
        else:
            degrees[node] = sum(1 for lk in nbrs.values() if lk.rtt < rtt_threshold)
    top = max(degrees.values(), default=0)
    if top == 0:
        return {node: 0.0 for node in members}
    return {node: deg / top for node, deg in degrees.items()}


def telemetry_freshness(age: float, staleness_horizon: float) -> float:
    """Linear decay from 1 at age zero to 0 at the staleness horizon."""
    if staleness_horizon <= 0:
        raise ValueError("staleness_horizon must be positive")
    return max(0.0, 1.0 - age / staleness_horizon)


def write_clusters_csv(path, rows: Sequence[tuple[float, int, int, str, int]]) -> None:
    """Assignment dump: time_s,cluster_id,node_id,role,term."""
    with open(path, "w", newline="\n") as fh:
        fh.write("time_s,cluster_id,node_id,role,term\n")
        for time_s, cluster_id, node_id, role, term in rows:
            fh.write(f"{time_s:g},{cluster_id},{node_id},{role},{term}\n")
