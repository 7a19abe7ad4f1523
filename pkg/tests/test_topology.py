"""Link qualification, snapshots, episodes, and topology statistics."""

import math
import random

import numpy as np
import pytest

from leosim.constants import EARTH_RADIUS_M, SPEED_OF_LIGHT
from leosim.ephemeris import (
    DEFAULT_EPOCH,
    ConstellationEphemeris,
    GroundStation,
    StateVector,
    generate_walker,
    ground_station_position,
)
from leosim.topology import (
    EpisodeTracker,
    Link,
    LinkKind,
    ThresholdKind,
    TopologyParams,
    TopologySnapshot,
    build_snapshot,
    degree_series,
    elevation_angle,
    gsl_rtt_samples,
    has_line_of_sight,
    one_way_delay,
    slant_range,
    track_link_episodes,
    write_episodes_csv,
    write_links_csv,
)

from conftest import oracle_gsl_links, oracle_isl_pairs, oracle_episodes


def snap_from_positions(positions, time=0.0, stations=(), params=None):
    states = [
        StateVector(sat_id=i, time=time, position_eci=tuple(p), position_ecef=tuple(p))
        for i, p in enumerate(positions)
    ]
    return build_snapshot(states, stations, params or TopologyParams())


class TestDelay:
    def test_zero_distance(self):
        assert one_way_delay(0.0) == 0.0

    def test_scaled_speed_of_light(self):
        assert one_way_delay(2_997_924.58) == pytest.approx(1e-2, rel=1e-12)

    def test_nadir_gsl_at_180km(self):
        owd = one_way_delay(180e3)
        assert owd == pytest.approx(6.004e-4, rel=1e-3)
        assert 2 * owd == pytest.approx(1.2008e-3, rel=1e-3)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            one_way_delay(-1.0)

    def test_monotone_in_distance(self):
        rng = random.Random(1)
        distances = sorted(rng.uniform(0, 1e7) for _ in range(100))
        delays = [one_way_delay(d) for d in distances]
        assert delays == sorted(delays)


class TestLineOfSight:
    def test_antipodal_blocked(self):
        r = EARTH_RADIUS_M + 550e3
        assert not has_line_of_sight((r, 0, 0), (-r, 0, 0), 80e3)

    def test_close_neighbors_clear(self):
        r = EARTH_RADIUS_M + 550e3
        th = math.radians(1.0)
        p1 = (r, 0.0, 0.0)
        p2 = (r * math.cos(th), r * math.sin(th), 0.0)
        assert has_line_of_sight(p1, p2, 80e3)

    def test_grazing_boundary_geometry(self):
        # Two satellites at 550 km separated by the maximum central angle
        # that clears an 80 km grazing shell: the chord's closest approach
        # to Earth center equals the grazing radius to within a meter.
        r = EARTH_RADIUS_M + 550e3
        grazing_radius = EARTH_RADIUS_M + 80e3
        half = math.acos(grazing_radius / r)
        p1 = (r * math.cos(-half), r * math.sin(-half), 0.0)
        p2 = (r * math.cos(half), r * math.sin(half), 0.0)
        midpoint_dist = abs(r * math.cos(half))
        assert midpoint_dist == pytest.approx(grazing_radius, abs=1.0)

    def test_los_flips_across_boundary(self):
        r = EARTH_RADIUS_M + 550e3
        half = math.acos((EARTH_RADIUS_M + 80e3) / r)
        for eps, expected in ((-1e-6, True), (1e-6, False)):
            th = half + eps
            p1 = (r * math.cos(-th), r * math.sin(-th), 0.0)
            p2 = (r * math.cos(th), r * math.sin(th), 0.0)
            assert has_line_of_sight(p1, p2, 80e3) is expected


class TestElevation:
    def test_zenith(self):
        gs = ground_station_position(GroundStation(gs_id=0, latitude=0, longitude=0))
        sat = (gs[0] + 550e3, gs[1], gs[2])
        assert elevation_angle(gs, sat) == pytest.approx(90.0)

    def test_horizon(self):
        gs = ground_station_position(GroundStation(gs_id=0, latitude=0, longitude=0))
        sat = (gs[0], gs[1] + 2000e3, gs[2])
        assert elevation_angle(gs, sat) == pytest.approx(0.0, abs=1e-9)

    def test_against_tangent_oracle(self):
        # Independent route: for a central angle g between station and
        # sub-satellite point, tan(el) = (cos g - R/r) / sin g.
        gs = ground_station_position(GroundStation(gs_id=0, latitude=0, longitude=0))
        gamma = math.radians(10.0)
        r = EARTH_RADIUS_M + 550e3
        sat = (r * math.cos(gamma), r * math.sin(gamma), 0.0)
        expected = math.degrees(
            math.atan((math.cos(gamma) - EARTH_RADIUS_M / r) / math.sin(gamma))
        )
        got = elevation_angle(gs, sat)
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(20.312, abs=1e-3)

    def test_slant_range_endpoints(self):
        assert slant_range(550e3, 90.0) == pytest.approx(550e3, rel=1e-12)
        expected_horizon = math.sqrt((EARTH_RADIUS_M + 2000e3) ** 2 - EARTH_RADIUS_M**2)
        assert slant_range(2000e3, 0.0) == pytest.approx(expected_horizon, rel=1e-12)


class TestBuildSnapshot:
    def test_single_satellite_no_stations(self):
        snap = snap_from_positions([(EARTH_RADIUS_M + 550e3, 0, 0)])
        assert snap.isl_adjacency == {0: {}}
        assert snap.gsl_links == []

    def test_two_sats_1000km_apart(self):
        r = EARTH_RADIUS_M + 550e3
        th = 1_000e3 / r  # arc angle for ~1000 km chord (close enough)
        chord = 2 * r * math.sin(th / 2)
        p1 = (r, 0.0, 0.0)
        p2 = (r * math.cos(th), r * math.sin(th), 0.0)
        snap = snap_from_positions([p1, p2])
        link = snap.isl_adjacency[0][1]
        assert link.distance == pytest.approx(chord, rel=1e-9)
        assert link.rtt == pytest.approx(2 * chord / SPEED_OF_LIGHT, rel=1e-12)
        assert link.rtt == pytest.approx(6.67e-3, rel=2e-2)

    def test_symmetry_and_no_self_links(self):
        els = generate_walker(20, 4, 1, 53.0, 550.0)
        eph = ConstellationEphemeris(els)
        snap = build_snapshot(
            eph.states_at(0.0), [], TopologyParams(isl_rtt_threshold=0.050)
        )
        for a, nbrs in snap.isl_adjacency.items():
            assert a not in nbrs
            for b, link in nbrs.items():
                assert snap.isl_adjacency[b][a].distance == link.distance

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_quadratic_oracle(self, seed):
        rng = random.Random(seed)
        total = rng.choice([12, 20, 40, 50])
        planes = rng.choice([p for p in (2, 4, 5) if total % p == 0])
        els = generate_walker(total, planes, rng.randrange(planes), 53.0, rng.choice([550, 1200]))
        eph = ConstellationEphemeris(els)
        stations = [GroundStation(gs_id=k, latitude=lat, longitude=lon) for k, (lat, lon) in
                    enumerate([(0.0, 0.0), (45.0, 90.0), (-30.0, -120.0)])]
        params = TopologyParams(isl_rtt_threshold=rng.choice([0.01, 0.03]), min_elevation_deg=25.0)
        t = rng.uniform(0, 3600)
        states = eph.states_at(t)
        snap = build_snapshot(states, stations, params)

        positions = {s.sat_id: s.position_ecef for s in states}
        expected = oracle_isl_pairs(positions, params.isl_rtt_threshold, params.grazing_altitude)
        got = {
            (a, b): snap.isl_adjacency[a][b].distance
            for a in snap.isl_adjacency
            for b in snap.isl_adjacency[a]
            if a < b
        }
        assert set(got) == set(expected)
        for pair, dist in expected.items():
            assert got[pair] == pytest.approx(dist, rel=1e-12)

        st_pos = {gs.gs_id: ground_station_position(gs) for gs in stations}
        expected_gsl = oracle_gsl_links(positions, st_pos, params.min_elevation_deg)
        got_gsl = {(lk.endpoint_a, lk.endpoint_b): lk.distance for lk in snap.gsl_links}
        assert set(got_gsl) == set(expected_gsl)

    def test_threshold_monotone_nesting(self):
        els = generate_walker(40, 5, 1, 53.0, 550.0)
        eph = ConstellationEphemeris(els)
        states = eph.states_at(1800.0)
        sets = []
        for tau in (0.005, 0.010, 0.030, 0.100):
            snap = build_snapshot(states, [], TopologyParams(isl_rtt_threshold=tau))
            sets.append(snap.isl_pair_set())
        for smaller, larger in zip(sets, sets[1:]):
            assert smaller <= larger

    def test_isl_cap_symmetric(self):
        els = generate_walker(30, 5, 1, 53.0, 1200.0)
        eph = ConstellationEphemeris(els)
        snap = build_snapshot(
            eph.states_at(0.0),
            [],
            TopologyParams(isl_rtt_threshold=0.050, max_isl_per_sat=3),
        )
        for a, nbrs in snap.isl_adjacency.items():
            assert len(nbrs) <= 3
            for b in nbrs:
                assert a in snap.isl_adjacency[b]

    def test_mixed_times_rejected(self):
        sv = lambda i, t: StateVector(i, t, (7e6, 0, 0), (7e6, 0, 0))
        with pytest.raises(ValueError):
            build_snapshot([sv(0, 0.0), sv(1, 60.0)], [], TopologyParams())


class TestEpisodes:
    def run_tracker(self, linked_by_step, dt=60.0, min_duration=0.0):
        tracker = EpisodeTracker(dt=dt, min_duration=min_duration)
        for step, pairs in enumerate(linked_by_step):
            tracker.observe(step, pairs)
        return tracker.finish()

    def test_continuous_run(self):
        eps = self.run_tracker([{(1, 2)}] * 10)
        assert len(eps) == 1
        assert eps[0].duration == pytest.approx(600.0)
        assert (eps[0].start_step, eps[0].end_step) == (0, 9)

    def test_gap_splits_episode(self):
        steps = [{(1, 2)}] * 5 + [set()] + [{(1, 2)}] * 4
        eps = self.run_tracker(steps)
        assert [(e.start_step, e.end_step) for e in eps] == [(0, 4), (6, 9)]

    def test_min_duration_filter(self):
        steps = [{(1, 2)}, set(), {(1, 2)}, {(1, 2)}]
        eps = self.run_tracker(steps, dt=60.0, min_duration=120.0)
        assert [(e.start_step, e.end_step) for e in eps] == [(2, 3)]

    def test_single_step_counts_dt(self):
        eps = self.run_tracker([{(3, 7)}], dt=60.0)
        assert eps[0].duration == pytest.approx(60.0)

    def test_episode_partition_covers_linked_steps(self):
        rng = random.Random(9)
        steps = [
            {(a, b) for a, b in [(0, 1), (1, 2), (0, 2)] if rng.random() < 0.5}
            for _ in range(50)
        ]
        eps = self.run_tracker(steps)
        covered = {}
        for e in eps:
            for s in range(e.start_step, e.end_step + 1):
                covered.setdefault(e.pair, set()).add(s)
        linked = {}
        for s, pairs in enumerate(steps):
            for pair in pairs:
                linked.setdefault(pair, set()).add(s)
        assert covered == linked

    @pytest.mark.parametrize("seed", range(3))
    def test_walker_episodes_match_oracle(self, seed):
        rng = random.Random(100 + seed)
        els = generate_walker(20, 4, rng.randrange(4), 53.0, 550.0)
        eph = ConstellationEphemeris(els)
        params = TopologyParams(isl_rtt_threshold=0.012)
        dt = 60.0
        linked_by_step = []
        snapshots = []
        for step in range(120):
            snap = build_snapshot(eph.states_at(step * dt), [], params)
            snapshots.append(snap)
            linked_by_step.append(snap.isl_pair_set())
        episodes = track_link_episodes(snapshots, min_duration=60.0)
        expected = oracle_episodes(linked_by_step, dt, min_duration=60.0)
        got = [(e.pair, e.start_step, e.end_step, e.duration) for e in episodes]
        assert sorted(got) == expected

    def test_requires_dt_for_single_snapshot(self):
        snap = snap_from_positions([(7e6, 0, 0)])
        with pytest.raises(ValueError):
            track_link_episodes([snap])
        assert track_link_episodes([snap], dt=60.0) == []


class TestDegreeSeries:
    def test_single_satellite_zero(self):
        snap = snap_from_positions([(7e6, 0, 0)])
        (series,) = degree_series([snap], [0.010])
        assert series.means == (0.0,)
        assert series.stds == (0.0,)

    def test_complete_clique(self):
        r = EARTH_RADIUS_M + 550e3
        # Four satellites within ~60 km of each other: a 4-clique.
        offs = [0.0, 1e-4, 2e-4, 3e-4]
        snap = snap_from_positions(
            [(r * math.cos(o), r * math.sin(o), 0.0) for o in offs]
        )
        (series,) = degree_series([snap], [0.010])
        assert series.means == (3.0,)
        assert series.stds == (0.0,)

    def test_one_way_vs_rtt_kind(self):
        els = generate_walker(20, 4, 1, 53.0, 550.0)
        eph = ConstellationEphemeris(els)
        snap = build_snapshot(eph.states_at(0.0), [], TopologyParams(isl_rtt_threshold=0.100))
        (rtt_series,) = degree_series([snap], [0.010], ThresholdKind.RTT)
        (owd_series,) = degree_series([snap], [0.010], ThresholdKind.ONE_WAY)
        # One-way 10 ms admits everything RTT 10 ms does, and then some.
        assert owd_series.means[0] >= rtt_series.means[0]


class TestGslSamples:
    def test_empty_when_no_visibility(self):
        snap = snap_from_positions([(EARTH_RADIUS_M + 550e3, 0, 0)])
        assert gsl_rtt_samples([snap]) == []

    def test_nadir_sample_550km(self):
        gs = GroundStation(gs_id=0, latitude=0.0, longitude=0.0)
        states = [
            StateVector(
                sat_id=0,
                time=0.0,
                position_eci=(EARTH_RADIUS_M + 550e3, 0, 0),
                position_ecef=(EARTH_RADIUS_M + 550e3, 0, 0),
            )
        ]
        snap = build_snapshot(states, [gs], TopologyParams())
        samples = gsl_rtt_samples([snap])
        assert min(samples) == pytest.approx(3.669e-3, rel=1e-3)

    def test_station_filter(self):
        link_a = Link(LinkKind.GSL, 0, 5, 1e6)
        link_b = Link(LinkKind.GSL, 1, 5, 2e6)
        snap = TopologySnapshot(time=0.0, isl_adjacency={5: {}}, gsl_links=[link_a, link_b])
        only_a = gsl_rtt_samples([snap], [GroundStation(gs_id=0, latitude=0, longitude=0)])
        assert only_a == [link_a.rtt]


class TestCsvExports:
    def test_links_csv_schema(self, tmp_path):
        r = EARTH_RADIUS_M + 550e3
        snap = snap_from_positions([(r, 0, 0), (r * math.cos(0.01), r * math.sin(0.01), 0)])
        path = tmp_path / "links.csv"
        write_links_csv(path, [snap])
        lines = path.read_text().splitlines()
        assert lines[0] == "time_s,sat_a,sat_b,distance_m,owd_s"
        assert lines[1].startswith("0,0,1,")

    def test_episodes_csv_schema(self, tmp_path):
        tracker = EpisodeTracker(dt=60.0)
        tracker.observe(0, [(1, 2)])
        tracker.observe(1, [(1, 2)])
        path = tmp_path / "eps.csv"
        write_episodes_csv(path, tracker.finish(), dt=60.0)
        lines = path.read_text().splitlines()
        assert lines[0] == "sat_a,sat_b,start_s,end_s,duration_s"
        assert lines[1] == "1,2,0,60,120"
