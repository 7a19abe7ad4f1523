"""Time-varying link topology: ISL/GSL qualification, delays, episodes.

An ISL exists between two satellites when the segment between them
clears the grazing sphere and the propagation RTT is under threshold;
a GSL exists when the satellite sits above a station's elevation mask.
Candidate pruning uses spatial cell hashing and is lossless: output is
identical to the quadratic scan.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .constants import EARTH_RADIUS_M, SPEED_OF_LIGHT
from .ephemeris import GroundStation, StateVector, ground_station_position
from .metrics import MeanStdSeries


class LinkKind(enum.Enum):
    ISL = "ISL"
    GSL = "GSL"


class ThresholdKind(enum.Enum):
    RTT = "rtt"
    ONE_WAY = "one_way"


@dataclass(frozen=True)
class Link:
    """A point-in-time link between two nodes.

    For GSL links endpoint_a is the station id and endpoint_b the
    satellite id.
    """

    kind: LinkKind
    endpoint_a: int
    endpoint_b: int
    distance: float  # meters

    @property
    def one_way_delay(self) -> float:
        return self.distance / SPEED_OF_LIGHT

    @property
    def rtt(self) -> float:
        return 2.0 * self.distance / SPEED_OF_LIGHT


@dataclass(frozen=True)
class LinkEpisode:
    """A maximal run of consecutive snapshots over which a pair is linked."""

    pair: tuple[int, int]  # (min id, max id)
    start_step: int
    end_step: int
    duration: float  # seconds, inclusive of both end steps


@dataclass(frozen=True)
class TopologyParams:
    """Qualification thresholds for snapshot construction."""

    isl_rtt_threshold: float = 0.010  # seconds
    min_elevation_deg: float = 25.0
    grazing_altitude: float = 80_000.0  # meters
    max_isl_per_sat: int | None = None  # optional antenna cap


@dataclass
class TopologySnapshot:
    """All qualifying links at one time instant.

    isl_adjacency has an entry for every satellite, including isolated
    ones; entries map neighbor id to the Link record.
    """

    time: float
    isl_adjacency: dict[int, dict[int, "Link"]]
    gsl_links: list["Link"]

    def isl_links(self) -> list["Link"]:
        """Unique ISL records, one per unordered pair, sorted by ids."""
        out = []
        for a in sorted(self.isl_adjacency):
            for b in sorted(self.isl_adjacency[a]):
                if a < b:
                    out.append(self.isl_adjacency[a][b])
        return out

    def isl_pair_set(self) -> set[tuple[int, int]]:
        return {(a, b) for a in self.isl_adjacency for b in self.isl_adjacency[a] if a < b}


def one_way_delay(distance: float) -> float:
    """Propagation delay in seconds for a path of `distance` meters."""
    if distance < 0:
        raise ValueError("distance must be nonnegative")
    return distance / SPEED_OF_LIGHT


def has_line_of_sight(
    p1: Sequence[float], p2: Sequence[float], grazing_altitude: float
) -> bool:
    """True iff the segment p1-p2 clears the grazing sphere.

    The grazing sphere is Earth radius plus `grazing_altitude`; the
    test is the minimum distance from Earth center to the segment.
    """
    return _segment_min_distance(p1, p2) > EARTH_RADIUS_M + grazing_altitude


def _segment_min_distance(p1: Sequence[float], p2: Sequence[float]) -> float:
    a = np.asarray(p1, dtype=float)
    d = np.asarray(p2, dtype=float) - a
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.linalg.norm(a))
    t = min(1.0, max(0.0, float(-(a @ d)) / dd))
    return float(np.linalg.norm(a + t * d))


def elevation_angle(gs_pos: Sequence[float], sat_pos: Sequence[float]) -> float:
    """Elevation of the satellite above the station's horizon, degrees.

    Defined as 90 degrees minus the angle between the local zenith
    (the station position direction) and the station-to-satellite
    vector.
    """
    gs = np.asarray(gs_pos, dtype=float)
    to_sat = np.asarray(sat_pos, dtype=float) - gs
    gs_norm = np.linalg.norm(gs)
    to_norm = np.linalg.norm(to_sat)
    if gs_norm == 0.0 or to_norm == 0.0:
        raise ValueError("station at origin or satellite at station")
    cos_zenith = float(gs @ to_sat) / (gs_norm * to_norm)
    cos_zenith = min(1.0, max(-1.0, cos_zenith))
    return 90.0 - math.degrees(math.acos(cos_zenith))


def slant_range(
    altitude: float, elevation_deg: float, radius: float = EARTH_RADIUS_M
) -> float:
    """Station-to-satellite distance at a given elevation, meters."""
    r = radius + altitude
    el = math.radians(elevation_deg)
    return -radius * math.sin(el) + math.sqrt(r * r - (radius * math.cos(el)) ** 2)


def _isl_index_pairs(
    positions: np.ndarray, rtt_threshold: float, grazing_altitude: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index pairs (i < j) of qualifying ISLs plus their distances.

    Cell hashing at the effective maximum range; a pair can qualify
    only if its distance is strictly below both the RTT-derived range
    and the longest chord that still clears the grazing sphere, so
    pairs in non-adjacent cells are safely excluded.
    """
    n = len(positions)
    empty = (np.array([], dtype=int), np.array([], dtype=int), np.array([]))
    if n < 2:
        return empty
    grazing_radius = EARTH_RADIUS_M + grazing_altitude
    radii = np.linalg.norm(positions, axis=1)
    r_max = float(radii.max())
    if r_max <= grazing_radius:
        return empty
    range_rtt = SPEED_OF_LIGHT * rtt_threshold / 2.0
    max_chord = 2.0 * math.sqrt(r_max * r_max - grazing_radius * grazing_radius)
    max_range = min(range_rtt, max_chord)
    if max_range <= 0.0:
        return empty

    cells = np.floor(positions / max_range).astype(np.int64)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for idx, key in enumerate(map(tuple, cells)):
        buckets.setdefault(key, []).append(idx)

    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    cand_i: list[np.ndarray] = []
    cand_j: list[np.ndarray] = []
    for key, members in buckets.items():
        idxs = np.array(members)
        for off in offsets:
            nkey = (key[0] + off[0], key[1] + off[1], key[2] + off[2])
            if nkey < key:
                continue  # the symmetric visit handles this cell pair
            if nkey == key:
                if len(idxs) > 1:
                    ii, jj = np.triu_indices(len(idxs), k=1)
                    cand_i.append(idxs[ii])
                    cand_j.append(idxs[jj])
                continue
            other = buckets.get(nkey)
            if other is None:
                continue
            oth = np.array(other)
            cand_i.append(np.repeat(idxs, len(oth)))
            cand_j.append(np.tile(oth, len(idxs)))
    if not cand_i:
        return empty
    ii = np.concatenate(cand_i)
    jj = np.concatenate(cand_j)
    swap = ii > jj
    ii[swap], jj[swap] = jj[swap], ii[swap]

    p1 = positions[ii]
    p2 = positions[jj]
    diff = p2 - p1
    dist = np.linalg.norm(diff, axis=1)
    keep = dist < range_rtt
    ii, jj, p1, p2, diff, dist = ii[keep], jj[keep], p1[keep], p2[keep], diff[keep], dist[keep]
    if len(ii) == 0:
        return empty

    # Minimum distance from Earth center to each segment.
    dd = np.einsum("ij,ij->i", diff, diff)
    t = np.clip(-np.einsum("ij,ij->i", p1, diff) / np.where(dd == 0.0, 1.0, dd), 0.0, 1.0)
    closest = p1 + t[:, None] * diff
    keep = np.linalg.norm(closest, axis=1) > grazing_radius
    ii, jj, dist = ii[keep], jj[keep], dist[keep]

    order = np.lexsort((jj, ii))
    return ii[order], jj[order], dist[order]


def build_snapshot(
    states: Sequence[StateVector],
    stations: Sequence[GroundStation],
    params: TopologyParams,
) -> TopologySnapshot:
    """Qualify every ISL and GSL at the states' shared time instant."""
    if not states:
        return TopologySnapshot(time=0.0, isl_adjacency={}, gsl_links=[])
    times = {s.time for s in states}
    if len(times) != 1:
        raise ValueError("states must share one time instant")
    time = times.pop()
    sat_ids = [s.sat_id for s in states]
    positions = np.array([s.position_ecef for s in states])

    adjacency: dict[int, dict[int, Link]] = {sid: {} for sid in sat_ids}
    ii, jj, dist = _isl_index_pairs(
        positions, params.isl_rtt_threshold, params.grazing_altitude
    )
    for i, j, d in zip(ii, jj, dist):
        a, b = sat_ids[i], sat_ids[j]
        if a > b:
            a, b = b, a
        link = Link(kind=LinkKind.ISL, endpoint_a=a, endpoint_b=b, distance=float(d))
        adjacency[a][b] = link
        adjacency[b][a] = link
    if params.max_isl_per_sat is not None:
        adjacency = _apply_isl_cap(adjacency, params.max_isl_per_sat)

    gsl_links: list[Link] = []
    min_el = params.min_elevation_deg
    for gs in stations:
        gs_pos = np.array(ground_station_position(gs))
        to_sat = positions - gs_pos
        dist_gs = np.linalg.norm(to_sat, axis=1)
        gs_norm = float(np.linalg.norm(gs_pos))
        cos_zenith = (to_sat @ gs_pos) / np.where(dist_gs == 0.0, 1.0, dist_gs) / gs_norm
        elev = 90.0 - np.degrees(np.arccos(np.clip(cos_zenith, -1.0, 1.0)))
        for k in np.nonzero(elev >= min_el)[0]:
            gsl_links.append(
                Link(
                    kind=LinkKind.GSL,
                    endpoint_a=gs.gs_id,
                    endpoint_b=sat_ids[k],
                    distance=float(dist_gs[k]),
                )
            )
    return TopologySnapshot(time=time, isl_adjacency=adjacency, gsl_links=gsl_links)


def _apply_isl_cap(
    adjacency: dict[int, dict[int, Link]], cap: int
) -> dict[int, dict[int, Link]]:
    """Keep a link only if both endpoints rank it within their best `cap`.

    Ranking is by (distance, neighbor id); the mutual rule keeps the
    adjacency symmetric.
    """
    keep: dict[int, set[int]] = {}
    for sat, nbrs in adjacency.items():
        ranked = sorted(nbrs, key=lambda b: (nbrs[b].distance, b))
        keep[sat] = set(ranked[:cap])
    capped: dict[int, dict[int, Link]] = {sid: {} for sid in adjacency}
    for sat, nbrs in adjacency.items():
        for b, link in nbrs.items():
            if b in keep[sat] and sat in keep[b]:
                capped[sat][b] = link
    return capped


class EpisodeTracker:
    """Streaming fold of per-step linked-pair sets into episodes.

    Feed each step's pair set in order; any missed step ends the
    episode for pairs not present. Duration counts inclusive steps.
    """

    def __init__(self, dt: float, min_duration: float = 0.0):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = dt
        self.min_duration = min_duration
        self._active: dict[tuple[int, int], list[int]] = {}
        self._done: list[LinkEpisode] = []

    def observe(self, step: int, pairs: Iterable[tuple[int, int]]) -> None:
        for pair in pairs:
            if pair[0] > pair[1]:
                pair = (pair[1], pair[0])
            run = self._active.get(pair)
            if run is not None and run[1] == step - 1:
                run[1] = step
            else:
                if run is not None:
                    self._close(pair, run)
                self._active[pair] = [step, step]

    def _close(self, pair: tuple[int, int], run: list[int]) -> None:
        duration = (run[1] - run[0] + 1) * self.dt
        if duration >= self.min_duration:
            self._done.append(
                LinkEpisode(pair=pair, start_step=run[0], end_step=run[1], duration=duration)
            )

    def finish(self) -> list[LinkEpisode]:
        for pair in sorted(self._active):
            self._close(pair, self._active[pair])
        self._active.clear()
        return sorted(self._done, key=lambda ep: (ep.pair, ep.start_step))


def track_link_episodes(
    snapshots: Sequence[TopologySnapshot],
    min_duration: float = 0.0,
    dt: float | None = None,
) -> list[LinkEpisode]:
    """Extract ISL visibility episodes from uniformly spaced snapshots."""
    if not snapshots:
        return []
    if dt is None:
        if len(snapshots) < 2:
            raise ValueError("dt is required for a single snapshot")
        dt = snapshots[1].time - snapshots[0].time
    tracker = EpisodeTracker(dt=dt, min_duration=min_duration)
    for step, snap in enumerate(snapshots):
        tracker.observe(step, snap.isl_pair_set())
    return tracker.finish()


def degree_series(
    snapshots: Sequence[TopologySnapshot],
    thresholds: Sequence[float],
    threshold_kind: ThresholdKind = ThresholdKind.RTT,
) -> list[MeanStdSeries]:
    """Per-threshold mean/std of per-satellite qualifying ISL counts.

    A neighbor qualifies when its link latency (RTT or one-way, per
    `threshold_kind`) is strictly below the threshold. Snapshots must
    have been built with a qualification threshold at least as loose
    as the largest requested here.
    """
    if not snapshots:
        raise ValueError("need at least one snapshot")
    out = []
    for threshold in thresholds:
        times, means, stds = [], [], []
        for snap in snapshots:
            counts = []
            for sat in sorted(snap.isl_adjacency):
                nbrs = snap.isl_adjacency[sat]
                if threshold_kind is ThresholdKind.RTT:
                    count = sum(1 for lk in nbrs.values() if lk.rtt < threshold)
                else:
                    count = sum(1 for lk in nbrs.values() if lk.one_way_delay < threshold)
                counts.append(count)
            arr = np.array(counts, dtype=float)
            times.append(snap.time)
            means.append(float(arr.mean()) if len(arr) else 0.0)
            stds.append(float(arr.std()) if len(arr) else 0.0)
        out.append(
            MeanStdSeries(
                name=f"isl_degree_{threshold_kind.value}_{threshold:g}",
                times=tuple(times),
                means=tuple(means),
                stds=tuple(stds),
            )
        )
    return out


def gsl_rtt_samples(
    snapshots: Sequence[TopologySnapshot],
    stations: Sequence[GroundStation] | None = None,
) -> list[float]:
    """RTT of every visible station-satellite pair at every step."""
    wanted = None if stations is None else {gs.gs_id for gs in stations}
    samples = []
    for snap in snapshots:
        for link in snap.gsl_links:
            if wanted is None or link.endpoint_a in wanted:
                samples.append(link.rtt)
    return samples


def write_links_csv(path, snapshots: Sequence[TopologySnapshot]) -> None:
    """ISL link dump: time_s,sat_a,sat_b,distance_m,owd_s."""
    with open(path, "w", newline="\n") as fh:
        fh.write("time_s,sat_a,sat_b,distance_m,owd_s\n")
        for snap in snapshots:
            for link in snap.isl_links():
                fh.write(
                    f"{snap.time:g},{link.endpoint_a},{link.endpoint_b},"
                    f"{link.distance:.3f},{link.one_way_delay:.9f}\n"
                )


def write_episodes_csv(path, episodes: Sequence[LinkEpisode], dt: float, t0: float = 0.0) -> None:
    """Episode dump: sat_a,sat_b,start_s,end_s,duration_s."""
    with open(path, "w", newline="\n") as fh:
        fh.write("sat_a,sat_b,start_s,end_s,duration_s\n")
        for ep in episodes:
            start_s = t0 + ep.start_step * dt
            end_s = t0 + ep.end_step * dt
            fh.write(f"{ep.pair[0]},{ep.pair[1]},{start_s:g},{end_s:g},{ep.duration:g}\n")
