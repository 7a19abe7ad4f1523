"""Acceptance suite.

One test per criterion; each prints a PASS line with the measured
quantities. Criteria 9-11 reproduce published-figure statistics and
need a real TLE snapshot from around 2024-11-11: set LEOSIM_TLE to the
file path to enable them (and LEOSIM_FULL_SCALE=1 to acknowledge the
full-constellation runtime).
"""

import itertools
import json
import math
import os
import random
import time as time_mod

import numpy as np
import pytest

from leosim.clusters import Cluster, NodeMetrics, ScoreWeights
from leosim.constants import EARTH_RADIUS_M, SPEED_OF_LIGHT
from leosim.ephemeris import (
    ConstellationEphemeris,
    generate_walker,
    parse_tle,
)
from leosim.kernel import ControlPlane, EventTrace, MeshNetwork, run
from leosim.linkmap import ControlMessage, InterfaceClass, SchedulerMode, schedule, select_link
from leosim.metrics import histogram_pdf, percentiles
from leosim.protocol import Role
from leosim.scenario import build_scenario
from leosim.topology import (
    LinkKind,
    TopologyParams,
    build_snapshot,
    one_way_delay,
    slant_range,
    track_link_episodes,
)
from leosim.ephemeris import solve_kepler, elements_to_state

from conftest import basic_walker_scenario, oracle_episodes, oracle_isl_pairs
from test_kernel import make_plane, metrics_for

CYCLE = 0.1
TIMEOUT_MULTIPLIER = 3
FAILOVER_BOUND = (TIMEOUT_MULTIPLIER + 1) * CYCLE


def report(criterion, detail):
    print(f"[criterion {criterion}] PASS - {detail}")


def test_criterion_01_kepler_and_propagation():
    started = time_mod.monotonic()
    rng = random.Random(20241111)
    worst = 0.0
    for _ in range(10_000):
        m = rng.uniform(0.0, 2 * math.pi)
        e = rng.uniform(0.0, 0.9)
        ecc_anom = solve_kepler(m, e)
        worst = max(worst, abs(ecc_anom - e * math.sin(ecc_anom) - m))
    assert worst < 1e-12

    (el,) = generate_walker(1, 1, 0, 53.0, 550.0)
    a = el.semi_major_axis
    for t in np.linspace(0.0, el.period, 40):
        radius = np.linalg.norm(elements_to_state(el, float(t)).position_eci)
        assert abs(radius - a) <= 1e-6 * a

    p0 = np.array(elements_to_state(el, 0.0).position_eci)
    p1 = np.array(elements_to_state(el, el.period).position_eci)
    assert np.linalg.norm(p1 - p0) <= 1e-6 * np.linalg.norm(p0)

    elapsed = time_mod.monotonic() - started
    assert elapsed < 5.0
    report(1, f"max residual {worst:.2e}, radius and period checks, {elapsed:.2f}s")


def test_criterion_02_delay_physics():
    expected = {180e3: 1.2008e-3, 550e3: 3.669e-3, 2000e3: 13.342e-3}
    for altitude, rtt_ms in expected.items():
        rtt = 2 * one_way_delay(altitude)
        assert abs(rtt - rtt_ms) / rtt_ms < 1e-3, altitude
    horizon_rtt = 2 * slant_range(2000e3, 0.0) / SPEED_OF_LIGHT
    assert 35e-3 <= horizon_rtt <= 38e-3
    report(
        2,
        "nadir RTTs 1.2008/3.669/13.342 ms within 0.1%, "
        f"2000 km horizon RTT {horizon_rtt * 1e3:.2f} ms in [35, 38]",
    )


def test_criterion_03_topology_oracle_equivalence():
    started = time_mod.monotonic()
    rng = random.Random(77)
    for case in range(20):
        total = rng.choice([12, 16, 20, 24, 30, 40, 50])
        planes = rng.choice([p for p in (2, 3, 4, 5) if total % p == 0])
        phasing = rng.randrange(planes)
        altitude = rng.choice([550.0, 800.0, 1200.0])
        els = generate_walker(total, planes, phasing, 53.0, altitude)
        eph = ConstellationEphemeris(els)
        params = TopologyParams(isl_rtt_threshold=rng.choice([0.010, 0.025]))
        dt = 60.0
        steps = 20
        snapshots = []
        linked_by_step = []
        for step in range(steps):
            snap = build_snapshot(eph.states_at(step * dt), [], params)
            snapshots.append(snap)
            linked_by_step.append(snap.isl_pair_set())
            positions = {
                s.sat_id: s.position_ecef for s in eph.states_at(step * dt)
            }
            expected = oracle_isl_pairs(
                positions, params.isl_rtt_threshold, params.grazing_altitude
            )
            got = {
                (a, b): snap.isl_adjacency[a][b].distance
                for a in snap.isl_adjacency
                for b in snap.isl_adjacency[a]
                if a < b
            }
            assert set(got) == set(expected), f"case {case} step {step}"
            for pair, dist in expected.items():
                assert abs(got[pair] - dist) <= 1e-6

        episodes = track_link_episodes(snapshots, min_duration=60.0)
        expected_eps = oracle_episodes(linked_by_step, dt, min_duration=60.0)
        got_eps = [(e.pair, e.start_step, e.end_step, e.duration) for e in episodes]
        assert sorted(got_eps) == expected_eps, f"case {case}"
    elapsed = time_mod.monotonic() - started
    assert elapsed < 30.0
    report(3, f"20 constellations, snapshots+episodes exact vs oracle, {elapsed:.1f}s")


def test_criterion_04_threshold_monotonicity():
    rng = random.Random(88)
    checked = 0
    for _ in range(6):
        total = rng.choice([20, 40])
        els = generate_walker(total, 4, rng.randrange(4), 53.0, 550.0)
        eph = ConstellationEphemeris(els)
        thresholds = sorted(rng.uniform(0.002, 0.12) for _ in range(4))
        for step in range(6):
            states = eph.states_at(step * 300.0)
            previous = None
            for tau in thresholds:
                snap = build_snapshot(states, [], TopologyParams(isl_rtt_threshold=tau))
                pairs = snap.isl_pair_set()
                if previous is not None:
                    assert previous <= pairs
                previous = pairs
                checked += 1
    report(4, f"{checked} snapshot/threshold combinations nested")


def _safety_scenario(index):
    rng = random.Random(982_340 + index)
    n = rng.randint(4, 12)
    nodes = list(range(n))
    delay = rng.uniform(0.001, 0.012)
    scores = {k: round(rng.uniform(0.1, 1.0), 3) for k in nodes}
    trace = EventTrace(enabled=True)
    mesh = MeshNetwork(nodes, delay)
    cluster = Cluster(cluster_id=0, members=frozenset(nodes), synchronized=set(nodes))
    plane = ControlPlane(
        [cluster], mesh.delay, trace=trace, scores=scores,
        cycle=CYCLE, timeout_multiplier=TIMEOUT_MULTIPLIER,
    )
    plane.bootstrap(0.0, metrics_for(scores), ScoreWeights())
    plane.run_until(1.0)
    family = index % 4
    leader0 = plane.leader_of(0)
    halt_time = round(1.0 + rng.uniform(0.0, 0.05), 4)
    quorum_persists = False

    if family == 0:
        # Clean leader halt; everyone else stays connected.
        mesh.halt_node(leader0, halt_time, 100.0)
        plane.set_halted(leader0, True, halt_time)
        quorum_persists = True
    elif family == 1:
        # Leader halt plus one follower halt shortly after.
        follower = rng.choice([k for k in nodes if k != leader0])
        mesh.halt_node(leader0, halt_time, 100.0)
        plane.set_halted(leader0, True, halt_time)
        other_time = halt_time + 0.01
        mesh.halt_node(follower, other_time, 100.0)
        plane.set_halted(follower, True, other_time)
        quorum_persists = (n - 2) >= (n // 2 + 1)
    elif family == 2:
        # Full partition for one second, then heal.
        for a, b in itertools.combinations(nodes, 2):
            mesh.drop_link(a, b, halt_time, halt_time + 1.0)
        plane.notify_link_change(nodes[0], nodes[1], False, halt_time)
        plane.run_until(halt_time + 1.0)
        plane.notify_link_change(nodes[0], nodes[1], True, halt_time + 1.0)
    else:
        # Random link chaos: safety checks only.
        for _ in range(rng.randint(1, 4)):
            a, b = rng.sample(nodes, 2)
            start = 1.0 + rng.uniform(0.0, 1.0)
            mesh.drop_link(a, b, start, start + rng.uniform(0.2, 1.5))
            plane.notify_link_change(a, b, False, start)
    plane.run_until(4.0)
    return plane, trace, family, leader0, halt_time, quorum_persists


def test_criterion_05_failover_safety_sweep():
    started = time_mod.monotonic()
    scenarios = 1000
    bound_checked = 0
    partitions_checked = 0
    for index in range(scenarios):
        plane, trace, family, leader0, halt_time, quorum_persists = _safety_scenario(index)

        # Election safety: never two leaders in one (cluster, term).
        terms = [(p["cluster_id"], p["term"]) for p in plane.promotions]
        assert len(terms) == len(set(terms)), f"scenario {index}: duplicate leader term"

        if family in (0, 1) and quorum_persists:
            after = [p for p in plane.promotions if p["time"] > halt_time]
            assert after, f"scenario {index}: no failover"
            latency = after[0]["time"] - halt_time
            assert latency <= FAILOVER_BOUND + 1e-9, (
                f"scenario {index}: failover {latency:.3f}s > bound"
            )
            bound_checked += 1

        if family == 2:
            # Below quorum: no cluster-scope actions while partitioned.
            for rec in trace.records:
                if halt_time < rec["time"] < halt_time + 1.0:
                    kinds = {a["kind"] for a in rec["actions"]}
                    assert not kinds & {"SendHeartbeat", "BroadcastSnapshot"}, (
                        f"scenario {index}: cluster-scope action below quorum: {rec}"
                    )
            partitions_checked += 1

        # Structural: local-only nodes never emit cluster-scope actions.
        for rec in trace.records:
            if rec["role_before"] == "local_only":
                kinds = {a["kind"] for a in rec["actions"]}
                assert not kinds & {"SendHeartbeat", "BroadcastSnapshot"}

    elapsed = time_mod.monotonic() - started
    assert elapsed < 60.0
    report(
        5,
        f"{scenarios} scenarios: 0 duplicate-term leaders, "
        f"{bound_checked} failovers within {FAILOVER_BOUND:.1f}s, "
        f"{partitions_checked} partitions silent below quorum, {elapsed:.1f}s",
    )


def test_criterion_06_credential_gate():
    rng = random.Random(4242)
    injected = 0
    rejected_total = 0
    for trial in range(50):
        n = rng.randint(3, 7)
        plane, _ = make_plane(list(range(n)))
        plane.run_until(0.5)
        versions_before = {k: plane.states[k].state_version for k in range(n)}
        count = rng.randint(1, 8)
        for k in range(count):
            target = rng.randrange(n)
            signed = False
            plane.inject_policy_update(target, {"tamper": k}, signed, 0.5 + 0.001 * k)
        plane.run_until(0.6)
        injected += count
        rejected_total += plane.reject_counts.get("credential", 0)
        for k in range(n):
            state = plane.states[k]
            assert "tamper" not in state.replica
            # Version changes only from legitimate broadcasts, which a
            # quiet post-bootstrap cluster does not produce here.
            assert state.state_version == versions_before[k]
    assert rejected_total == injected
    report(6, f"{injected} unsigned/tampered updates, 100% rejected, versions unchanged")


def test_criterion_07_linkmap_exhaustive():
    def link(kind, owd_ms, a, b):
        from leosim.topology import Link

        return Link(kind, a, b, owd_ms * 1e-3 * SPEED_OF_LIGHT)

    candidates = [
        link(LinkKind.ISL, 7, 0, 1),
        link(LinkKind.ISL, 15, 2, 3),
        link(LinkKind.GSL, 12, 4, 5),
        link(LinkKind.GSL, 25, 6, 7),
    ]
    cases = 0
    for r in range(len(candidates) + 1):
        for subset in itertools.combinations(candidates, r):
            for cls in InterfaceClass:
                msg = ControlMessage(
                    msg_id=cases, interface=cls, src=0, dst=1, size=64, created_at=0.0
                )
                decision = select_link(msg, list(subset))
                allowed = [lk for lk in subset if lk.kind in cls.allowed_link_kinds]
                qualifying = [
                    lk for lk in allowed if lk.one_way_delay <= cls.latency_target
                ]
                if qualifying:
                    assert not decision.degraded
                    assert decision.expected_delay <= cls.latency_target
                else:
                    assert decision.degraded
                if cls is InterfaceClass.E2:
                    isl_ok = [lk for lk in qualifying if lk.kind is LinkKind.ISL]
                    if isl_ok:
                        assert decision.link.kind is LinkKind.ISL
                cases += 1

    rng = random.Random(31)
    schedule_cases = 0
    for _ in range(200):
        queue = [
            ControlMessage(
                msg_id=i,
                interface=rng.choice(list(InterfaceClass)),
                src=0,
                dst=1,
                size=64,
                created_at=rng.choice([0.0, 1.0]),
            )
            for i in range(rng.randrange(0, 10))
        ]
        capacity = rng.randrange(0, 12)
        mode = rng.choice(list(SchedulerMode))
        expected = sorted(
            [m for m in queue if mode is SchedulerMode.NORMAL or not m.interface.delay_tolerant],
            key=lambda m: (m.interface.priority, m.created_at, m.msg_id),
        )[:capacity]
        assert schedule(queue, capacity, mode) == expected
        schedule_cases += 1
    report(7, f"{cases} subset/class selections and {schedule_cases} schedules verified")


def test_criterion_08_determinism(tmp_path):
    scn = basic_walker_scenario()
    scn["faults"] = [
        {"time_s": 60.0, "kind": "node_halt", "node": 2, "duration_s": 120},
        {"time_s": 120.0, "kind": "link_drop", "a": 0, "b": 1, "duration_s": 60},
    ]
    scn["policy_updates"] = [
        {"time_s": 60.2, "target": 0, "signed": False, "payload": {"x": 1}}
    ]
    scenario, problems = build_scenario(scn)
    assert not problems
    results = [run(scenario, collect_decisions=True) for _ in range(2)]
    files = []
    for i, result in enumerate(results):
        d = tmp_path / f"run{i}"
        d.mkdir()
        result.trace.write_jsonl(d / "trace.jsonl")
        from leosim.metrics import ecdf, write_ecdf_csv, write_mean_std_csv

        if result.gsl_samples:
            write_ecdf_csv(d / "gsl.csv", ecdf(result.gsl_samples))
        for series in result.degree:
            write_mean_std_csv(d / f"{series.name}.csv", series)
        (d / "summary.json").write_text(json.dumps(result.summary, sort_keys=True))
        files.append(sorted(d.iterdir()))
    for f1, f2 in zip(*files):
        assert f1.name == f2.name
        assert f1.read_bytes() == f2.read_bytes(), f1.name
    compared = len(files[0])
    report(8, f"two runs, {compared} output files byte-identical")


# --- Published-figure reproduction (data-dependent) -----------------

TLE_ENV = "LEOSIM_TLE"
FULL_SCALE_ENV = "LEOSIM_FULL_SCALE"

needs_tle = pytest.mark.skipif(
    TLE_ENV not in os.environ,
    reason=f"set {TLE_ENV} to a TLE snapshot near 2024-11-11 to run",
)
needs_full_scale = pytest.mark.skipif(
    os.environ.get(FULL_SCALE_ENV) != "1",
    reason=f"set {FULL_SCALE_ENV}=1 to acknowledge the full-constellation runtime",
)


@pytest.fixture(scope="module")
def full_window_result():
    scn = {
        "constellation": {"tle": os.environ[TLE_ENV]},
        "window": {"epoch": "2024-11-11T00:00:00Z", "duration_s": 43_200, "dt_s": 60},
        "thresholds": {"isl_rtt_ms": 10, "degree_thresholds_ms": [10, 100]},
        "outputs": {"episode_min_s": 60, "hist_bin_s": 60},
        "seed": 1,
    }
    scenario, problems = build_scenario(scn)
    assert not problems, problems
    started = time_mod.monotonic()
    result = run(scenario, protocol_enabled=False)
    return result, time_mod.monotonic() - started


@needs_tle
@needs_full_scale
def test_criterion_09_isl_duration_pdf(full_window_result):
    result, _ = full_window_result
    durations_min = [ep.duration / 60.0 for ep in result.episodes]
    assert durations_min, "no episodes found"
    hist = histogram_pdf(durations_min, 1.0)
    mode_bin = hist.bin_lefts[int(np.argmax(hist.densities))]
    median = float(np.median(durations_min))
    assert 3.0 <= mode_bin + 0.5 <= 7.0 or 3.0 <= median <= 7.0
    long_lived = sum(1 for d in durations_min if d > 60.0)
    assert long_lived > 0
    report(9, f"episode mode bin {mode_bin}-{mode_bin + 1} min, median {median:.1f} min, "
              f"{long_lived} episodes over an hour")


@needs_tle
@needs_full_scale
def test_criterion_10_rtt_percentiles(full_window_result):
    result, elapsed = full_window_result
    isl = percentiles(result.isl_rtt_samples, [5, 50, 95]).values
    gsl = percentiles(result.gsl_samples, [5, 50, 95]).values
    for got, ref in zip(isl, (4e-3, 14.7e-3, 21.7e-3)):
        assert abs(got - ref) / ref <= 0.30, f"ISL percentile {got} vs {ref}"
    for got, ref in zip(gsl, (5e-3, 12.3e-3, 16.7e-3)):
        assert abs(got - ref) / ref <= 0.30, f"GSL percentile {got} vs {ref}"
    assert elapsed < 900.0
    report(10, f"ISL P5/50/95 {[f'{v*1e3:.1f}' for v in isl]} ms, "
               f"GSL {[f'{v*1e3:.1f}' for v in gsl]} ms, run {elapsed:.0f}s")


@needs_tle
@needs_full_scale
def test_criterion_11_degree_order_of_magnitude(full_window_result):
    result, _ = full_window_result
    ten_ms = result.degree[0]
    overall_mean = float(np.mean(ten_ms.means))
    assert 100.0 <= overall_mean <= 2000.0
    report(11, f"mean qualifying-ISL count at 10 ms RTT: {overall_mean:.0f}")
