"""Shared test helpers: TLE construction and brute-force oracles.

The oracles here are deliberately independent re-derivations (plain
O(n^2) scans, closed-form trigonometry) used to cross-check the
library's optimized paths.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import yaml

C_LIGHT = 299_792_458.0
EARTH_R = 6_371_000.0


def tle_checksum(line: str) -> int:
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


def make_tle(
    sat_id: int = 44713,
    name: str | None = "TESTSAT-1",
    epoch_year: int = 24,
    epoch_day: float = 316.50000000,
    inclination_deg: float = 53.0537,
    raan_deg: float = 120.4703,
    ecc7: str = "0001450",
    argp_deg: float = 90.4521,
    mean_anomaly_deg: float = 269.6631,
    mean_motion_rev_day: float = 15.06391399,
) -> str:
    """Build a checksummed 2-line (optionally named 3-line) record."""
    line1 = (
        f"1 {sat_id:05d}U 19074A   {epoch_year:02d}{epoch_day:012.8f} "
        f" .00000000  00000-0  00000-0 0  999"
    )
    assert len(line1) == 68, len(line1)
    line1 += str(tle_checksum(line1))
    line2 = (
        f"2 {sat_id:05d} {inclination_deg:8.4f} {raan_deg:8.4f} {ecc7} "
        f"{argp_deg:8.4f} {mean_anomaly_deg:8.4f} {mean_motion_rev_day:11.8f}"
        f"56353"
    )
    assert len(line2) == 68, len(line2)
    line2 += str(tle_checksum(line2))
    if name is None:
        return f"{line1}\n{line2}\n"
    return f"{name}\n{line1}\n{line2}\n"


def oracle_segment_clears_sphere(p1, p2, radius: float) -> bool:
    """Minimum segment-to-origin distance via parametric minimization."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    d = p2 - p1
    denom = float(d @ d)
    if denom == 0.0:
        return float(np.linalg.norm(p1)) > radius
    t = -float(p1 @ d) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p1 + t * d)) > radius


def oracle_isl_pairs(positions_by_id: dict, rtt_threshold: float, grazing_alt: float):
    """Quadratic scan of every satellite pair."""
    ids = sorted(positions_by_id)
    pairs = {}
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            pa, pb = positions_by_id[a], positions_by_id[b]
            dist = float(np.linalg.norm(np.asarray(pb) - np.asarray(pa)))
            rtt = 2.0 * dist / C_LIGHT
            if rtt >= rtt_threshold:
                continue
            if not oracle_segment_clears_sphere(pa, pb, EARTH_R + grazing_alt):
                continue
            pairs[(a, b)] = dist
    return pairs


def oracle_gsl_links(positions_by_id: dict, station_positions: dict, min_elev_deg: float):
    """All station-satellite pairs above the elevation mask."""
    links = {}
    for gs_id in sorted(station_positions):
        g = np.asarray(station_positions[gs_id], dtype=float)
        for sat_id in sorted(positions_by_id):
            s = np.asarray(positions_by_id[sat_id], dtype=float)
            to_sat = s - g
            cosz = float(g @ to_sat) / (np.linalg.norm(g) * np.linalg.norm(to_sat))
            elev = 90.0 - math.degrees(math.acos(max(-1.0, min(1.0, cosz))))
            if elev >= min_elev_deg:
                links[(gs_id, sat_id)] = float(np.linalg.norm(to_sat))
    return links


def oracle_episodes(linked_by_step: list[set], dt: float, min_duration: float):
    """Re-scan the full pair/step boolean matrix for maximal runs."""
    all_pairs = sorted(set().union(*linked_by_step)) if linked_by_step else []
    episodes = []
    for pair in all_pairs:
        run_start = None
        for step, linked in enumerate(linked_by_step):
            if pair in linked:
                if run_start is None:
                    run_start = step
            else:
                if run_start is not None:
                    episodes.append((pair, run_start, step - 1))
                    run_start = None
        if run_start is not None:
            episodes.append((pair, run_start, len(linked_by_step) - 1))
    out = []
    for pair, start, end in episodes:
        duration = (end - start + 1) * dt
        if duration >= min_duration:
            out.append((pair, start, end, duration))
    return sorted(out)


def oracle_kepler_bisect(mean_anomaly: float, ecc: float, tol: float = 1e-10) -> float:
    """Bisection on E - e*sin(E) - M over [0, 2*pi]."""
    m = mean_anomaly % (2 * math.pi)

    def f(ecc_anom):
        return ecc_anom - ecc * math.sin(ecc_anom) - m

    lo, hi = 0.0, 2 * math.pi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario mapping to a YAML file, returning its path."""

    def _write(mapping, name="scenario.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(mapping))
        return path

    return _write


def basic_walker_scenario(**overrides):
    """A small, fast Walker scenario mapping; override keys as needed."""
    scn = {
        "constellation": {
            "walker": {
                "total": 12,
                "planes": 3,
                "phasing": 1,
                "inclination_deg": 53.0,
                "altitude_km": 550.0,
            }
        },
        "window": {"duration_s": 300, "dt_s": 60},
        "stations": "none",
        "thresholds": {"isl_rtt_ms": 40, "degree_thresholds_ms": [10, 40]},
        "cluster": {"max_size": 6, "recluster_steps": 50},
        "protocol": {"cycle_ms": 100, "timeout_multiplier": 3, "cycles_per_step": 10},
        "seed": 11,
    }
    scn.update(overrides)
    return scn
