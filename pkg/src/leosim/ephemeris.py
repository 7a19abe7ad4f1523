"""Orbit ephemerides: TLE parsing, Walker generation, two-body propagation.

Propagation is Keplerian from mean elements, with optional J2 secular
drift of RAAN and argument of perigee. Earth is a sphere of radius
6,371 km for all ground-site geometry; frames are ECI and ECEF related
by a single Z rotation at Earth's rotation rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .constants import (
    EARTH_RADIUS_EQUATORIAL_M,
    EARTH_RADIUS_M,
    EARTH_ROTATION_RATE,
    J2_EARTH,
    MU_EARTH,
    SECONDS_PER_DAY,
)

TWO_PI = 2.0 * math.pi

# Default scenario epoch: start of the reference 12-hour analysis window.
DEFAULT_EPOCH = datetime(2024, 11, 11, 0, 0, 0, tzinfo=timezone.utc)


class TleError(ValueError):
    """A TLE record could not be parsed."""

    def __init__(self, message: str, record_index: int):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


class ChecksumMismatch(TleError):
    """Mod-10 line checksum does not match the trailing digit."""


class MalformedLine(TleError):
    """Line has the wrong length or a field failed to parse."""


class NonConvergence(RuntimeError):
    """Kepler iteration hit its cap without meeting tolerance."""


class InvalidWalker(ValueError):
    """Walker pattern parameters are inconsistent."""


@dataclass(frozen=True)
class OrbitalElements:
    """Mean orbital elements of one satellite.

    Angles are radians normalized to [0, 2*pi); mean_motion is rad/s.
    """

    sat_id: int
    epoch: datetime
    inclination: float
    raan: float
    eccentricity: float
    arg_perigee: float
    mean_anomaly: float
    mean_motion: float

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(f"eccentricity {self.eccentricity} outside [0, 1)")
        if self.mean_motion <= 0.0:
            raise ValueError(f"mean_motion {self.mean_motion} must be positive")
        for name in ("inclination", "raan", "arg_perigee", "mean_anomaly"):
            object.__setattr__(self, name, getattr(self, name) % TWO_PI)

    @property
    def semi_major_axis(self) -> float:
        """Semi-major axis in meters, from the vis-viva relation."""
        return (MU_EARTH / self.mean_motion**2) ** (1.0 / 3.0)

    @property
    def period(self) -> float:
        """Orbital period in seconds."""
        return TWO_PI / self.mean_motion


@dataclass(frozen=True)
class StateVector:
    """Propagated position of one satellite at one time instant."""

    sat_id: int
    time: float  # seconds since scenario epoch
    position_eci: tuple[float, float, float]
    position_ecef: tuple[float, float, float]


@dataclass(frozen=True)
class GroundStation:
    """A ground site on the spherical Earth model."""

    gs_id: int
    latitude: float  # degrees, [-90, 90]
    longitude: float  # degrees, [-180, 180)
    altitude: float = 0.0  # meters above the reference sphere

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude < 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180)")


def _line_checksum(line: str) -> int:
    """Mod-10 checksum: digits count their value, '-' counts one."""
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


def _decode_epoch(year_field: str, day_field: str) -> datetime:
    yy = int(year_field)
    year = yy + 2000 if yy < 57 else yy + 1900
    day = float(day_field)
    return datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=day - 1.0)


def _parse_record(line1: str, line2: str, index: int) -> OrbitalElements:
    for lineno, line in ((1, line1), (2, line2)):
        if len(line) != 69:
            raise MalformedLine(f"line {lineno} has length {len(line)}, expected 69", index)
        expected = line[68]
        if not expected.isdigit() or _line_checksum(line) != int(expected):
            raise ChecksumMismatch(
                f"line {lineno} checksum {_line_checksum(line)} != {expected!r}", index
            )
    try:
        sat_id = int(line1[2:7])
        epoch = _decode_epoch(line1[18:20], line1[20:32])
        inclination = math.radians(float(line2[8:16]))
        raan = math.radians(float(line2[17:25]))
        eccentricity = float("0." + line2[26:33].strip())
        arg_perigee = math.radians(float(line2[34:42]))
        mean_anomaly = math.radians(float(line2[43:51]))
        revs_per_day = float(line2[52:63])
        mean_motion = revs_per_day * TWO_PI / SECONDS_PER_DAY
    except (TypeError, ValueError) as exc:
        raise MalformedLine(str(exc), index) from exc
    try:
        return OrbitalElements(
            sat_id=sat_id,
            epoch=epoch,
            inclination=inclination,
            raan=raan,
            eccentricity=eccentricity,
            arg_perigee=arg_perigee,
            mean_anomaly=mean_anomaly,
            mean_motion=mean_motion,
        )
    except ValueError as exc:
        raise MalformedLine(str(exc), index) from exc


def parse_tle(text: str, strict: bool = True) -> list[OrbitalElements]:
    """Parse 2-line or 3-line (name + two lines) TLE records.

    Records with a bad checksum, wrong line length, or an unparseable
    field raise in strict mode and are skipped otherwise. The error
    carries the zero-based record index.
    """
    lines = [ln.rstrip("\r\n") for ln in text.splitlines()]
    out: list[OrbitalElements] = []
    index = 0
    i = 0
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("1 "):
            line2 = lines[i + 1] if i + 1 < len(lines) else ""
            try:
                if not line2.startswith("2 "):
                    raise MalformedLine("line 1 not followed by a line 2", index)
                out.append(_parse_record(line, line2, index))
            except TleError:
                if strict:
                    raise
            index += 1
            i += 2
        else:
            # Name line; the record itself starts on the next line.
            i += 1
    return out


def solve_kepler(mean_anomaly: float, eccentricity: float, max_iter: int = 50) -> float:
    """Solve Kepler's equation E - e*sin(E) = M by Newton iteration.

    Returns the eccentric anomaly in [0, 2*pi) with residual below
    1e-12 rad. Raises NonConvergence if the iteration cap is hit.
    """
    if not 0.0 <= eccentricity < 1.0:
        raise ValueError(f"eccentricity {eccentricity} outside [0, 1)")
    m = mean_anomaly % TWO_PI
    e = eccentricity
    ecc_anom = m + e * math.sin(m)
    for _ in range(max_iter):
        f = ecc_anom - e * math.sin(ecc_anom) - m
        if abs(f) < 1e-13:
            return ecc_anom % TWO_PI
        ecc_anom -= f / (1.0 - e * math.cos(ecc_anom))
    raise NonConvergence(f"Kepler iteration did not converge for M={m}, e={e}")


def _solve_kepler_array(mean_anomaly: np.ndarray, eccentricity: np.ndarray) -> np.ndarray:
    """Vectorized Newton solve; same tolerance as the scalar path."""
    m = np.mod(mean_anomaly, TWO_PI)
    ecc_anom = m + eccentricity * np.sin(m)
    for _ in range(50):
        f = ecc_anom - eccentricity * np.sin(ecc_anom) - m
        if np.all(np.abs(f) < 1e-13):
            break
        ecc_anom = ecc_anom - f / (1.0 - eccentricity * np.cos(ecc_anom))
    return np.mod(ecc_anom, TWO_PI)


def gmst_rad(when: datetime) -> float:
    """Greenwich mean sidereal time from a simplified polynomial, radians.

    Simplified in the sense that UTC stands in for UT1; adequate for
    topology statistics, documented so runs are reproducible.
    """
    if when.tzinfo is not None:
        when = when.astimezone(timezone.utc).replace(tzinfo=None)
    day_seconds = when.hour * 3600 + when.minute * 60 + when.second + when.microsecond / 1e6
    jd = when.toordinal() + 1721424.5 + day_seconds / SECONDS_PER_DAY
    d = jd - 2451545.0
    t = d / 36525.0
    gmst_deg = (
        280.46061837 + 360.98564736629 * d + 0.000387933 * t * t - t * t * t / 38710000.0
    )
    return math.radians(gmst_deg % 360.0)


def eci_to_ecef(
    position_eci: Sequence[float], t: float, theta0: float = 0.0
) -> tuple[float, float, float]:
    """Rotate an ECI position into ECEF at scenario time t seconds.

    The rotation angle is theta0 + EARTH_ROTATION_RATE * t about +Z,
    with theta0 the Earth rotation angle at the scenario epoch.
    """
    theta = theta0 + EARTH_ROTATION_RATE * t
    cth, sth = math.cos(theta), math.sin(theta)
    x, y, z = position_eci
    return (cth * x + sth * y, -sth * x + cth * y, z)


def _j2_rates(elements: OrbitalElements) -> tuple[float, float]:
    """Secular RAAN and argument-of-perigee drift rates (rad/s)."""
    a = elements.semi_major_axis
    p = a * (1.0 - elements.eccentricity**2)
    factor = J2_EARTH * (EARTH_RADIUS_EQUATORIAL_M / p) ** 2 * elements.mean_motion
    cos_i = math.cos(elements.inclination)
    raan_dot = -1.5 * factor * cos_i
    argp_dot = 0.75 * factor * (5.0 * cos_i * cos_i - 1.0)
    return raan_dot, argp_dot


def elements_to_state(
    elements: OrbitalElements,
    t: float,
    include_j2: bool = False,
    theta0: float | None = None,
) -> StateVector:
    """Propagate elements by t seconds past their epoch.

    Two-body propagation of the mean anomaly, Kepler solve, perifocal
    to ECI rotation, and a Z rotation into ECEF. theta0 defaults to
    the GMST of the elements' own epoch.
    """
    a = elements.semi_major_axis
    e = elements.eccentricity
    raan = elements.raan
    argp = elements.arg_perigee
    if include_j2:
        raan_dot, argp_dot = _j2_rates(elements)
        raan = (raan + raan_dot * t) % TWO_PI
        argp = (argp + argp_dot * t) % TWO_PI
    mean_anom = elements.mean_anomaly + elements.mean_motion * t
    ecc_anom = solve_kepler(mean_anom, e)
    true_anom = 2.0 * math.atan2(
        math.sqrt(1.0 + e) * math.sin(ecc_anom / 2.0),
        math.sqrt(1.0 - e) * math.cos(ecc_anom / 2.0),
    )
    radius = a * (1.0 - e * math.cos(ecc_anom))
    x_pf = radius * math.cos(true_anom)
    y_pf = radius * math.sin(true_anom)

    cos_o, sin_o = math.cos(raan), math.sin(raan)
    cos_i, sin_i = math.cos(elements.inclination), math.sin(elements.inclination)
    cos_w, sin_w = math.cos(argp), math.sin(argp)
    # Rz(raan) @ Rx(inc) @ Rz(argp) applied to the perifocal position.
    xi = (cos_o * cos_w - sin_o * sin_w * cos_i) * x_pf + (
        -cos_o * sin_w - sin_o * cos_w * cos_i
    ) * y_pf
    yi = (sin_o * cos_w + cos_o * sin_w * cos_i) * x_pf + (
        -sin_o * sin_w + cos_o * cos_w * cos_i
    ) * y_pf
    zi = (sin_w * sin_i) * x_pf + (cos_w * sin_i) * y_pf

    if theta0 is None:
        theta0 = gmst_rad(elements.epoch)
    ecef = eci_to_ecef((xi, yi, zi), t, theta0)
    return StateVector(
        sat_id=elements.sat_id,
        time=t,
        position_eci=(xi, yi, zi),
        position_ecef=ecef,
    )


def ground_station_position(gs: GroundStation) -> tuple[float, float, float]:
    """ECEF position of a ground station on the spherical Earth."""
    r = EARTH_RADIUS_M + gs.altitude
    lat = math.radians(gs.latitude)
    lon = math.radians(gs.longitude)
    return (
        r * math.cos(lat) * math.cos(lon),
        r * math.cos(lat) * math.sin(lon),
        r * math.sin(lat),
    )


def generate_walker(
    total_sats: int,
    planes: int,
    phasing: int,
    inclination_deg: float,
    altitude_km: float,
    epoch: datetime = DEFAULT_EPOCH,
) -> list[OrbitalElements]:
    """Generate a circular Walker-delta pattern.

    RAANs are spread evenly over 360 degrees, satellites evenly within
    each plane, and adjacent planes are phase-offset by
    phasing * 360 / total_sats degrees.
    """
    if planes < 1 or total_sats < 1 or total_sats % planes != 0:
        raise InvalidWalker(f"planes {planes} must divide total_sats {total_sats}")
    if not 0 <= phasing < planes:
        raise InvalidWalker(f"phasing {phasing} outside [0, {planes})")
    per_plane = total_sats // planes
    a = EARTH_RADIUS_M + altitude_km * 1000.0
    mean_motion = math.sqrt(MU_EARTH / a**3)
    inclination = math.radians(inclination_deg)
    out = []
    for plane in range(planes):
        raan = plane * TWO_PI / planes
        phase_offset = plane * phasing * TWO_PI / total_sats
        for slot in range(per_plane):
            out.append(
                OrbitalElements(
                    sat_id=plane * per_plane + slot,
                    epoch=epoch,
                    inclination=inclination,
                    raan=raan,
                    eccentricity=0.0,
                    arg_perigee=0.0,
                    mean_anomaly=slot * TWO_PI / per_plane + phase_offset,
                    mean_motion=mean_motion,
                )
            )
    return out


class ConstellationEphemeris:
    """Vectorized propagation of a whole constellation on a time grid.

    Binds a scenario epoch so that all satellites share one time axis
    and one Earth rotation angle, regardless of per-record TLE epochs.
    """

    def __init__(
        self,
        elements: Iterable[OrbitalElements],
        scenario_epoch: datetime = DEFAULT_EPOCH,
        include_j2: bool = False,
    ):
        elements = list(elements)
        if not elements:
            raise ValueError("empty constellation")
        self.elements = elements
        self.scenario_epoch = scenario_epoch
        self.include_j2 = include_j2
        self.theta0 = gmst_rad(scenario_epoch)
        self.sat_ids = [el.sat_id for el in elements]

        self._a = np.array([el.semi_major_axis for el in elements])
        self._e = np.array([el.eccentricity for el in elements])
        self._inc = np.array([el.inclination for el in elements])
        self._raan0 = np.array([el.raan for el in elements])
        self._argp0 = np.array([el.arg_perigee for el in elements])
        self._m0 = np.array([el.mean_anomaly for el in elements])
        self._n = np.array([el.mean_motion for el in elements])
        # Offset from each record's own epoch to the scenario epoch.
        self._dt0 = np.array(
            [(scenario_epoch - el.epoch).total_seconds() for el in elements]
        )
        if include_j2:
            rates = [_j2_rates(el) for el in elements]
            self._raan_dot = np.array([r[0] for r in rates])
            self._argp_dot = np.array([r[1] for r in rates])
        else:
            self._raan_dot = np.zeros(len(elements))
            self._argp_dot = np.zeros(len(elements))

    def __len__(self) -> int:
        return len(self.elements)

    def positions_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """ECI and ECEF positions (n, 3) at scenario time t seconds."""
        dt = self._dt0 + t
        raan = self._raan0 + self._raan_dot * dt
        argp = self._argp0 + self._argp_dot * dt
        mean_anom = self._m0 + self._n * dt
        ecc_anom = _solve_kepler_array(mean_anom, self._e)
        e = self._e
        true_anom = 2.0 * np.arctan2(
            np.sqrt(1.0 + e) * np.sin(ecc_anom / 2.0),
            np.sqrt(1.0 - e) * np.cos(ecc_anom / 2.0),
        )
        radius = self._a * (1.0 - e * np.cos(ecc_anom))
        x_pf = radius * np.cos(true_anom)
        y_pf = radius * np.sin(true_anom)

        cos_o, sin_o = np.cos(raan), np.sin(raan)
        cos_i, sin_i = np.cos(self._inc), np.sin(self._inc)
        cos_w, sin_w = np.cos(argp), np.sin(argp)
        eci = np.empty((len(self.elements), 3))
        eci[:, 0] = (cos_o * cos_w - sin_o * sin_w * cos_i) * x_pf + (
            -cos_o * sin_w - sin_o * cos_w * cos_i
        ) * y_pf
        eci[:, 1] = (sin_o * cos_w + cos_o * sin_w * cos_i) * x_pf + (
            -sin_o * sin_w + cos_o * cos_w * cos_i
        ) * y_pf
        eci[:, 2] = (sin_w * sin_i) * x_pf + (cos_w * sin_i) * y_pf

        theta = self.theta0 + EARTH_ROTATION_RATE * t
        cth, sth = math.cos(theta), math.sin(theta)
        ecef = np.empty_like(eci)
        ecef[:, 0] = cth * eci[:, 0] + sth * eci[:, 1]
        ecef[:, 1] = -sth * eci[:, 0] + cth * eci[:, 1]
        ecef[:, 2] = eci[:, 2]
        return eci, ecef

    def states_at(self, t: float) -> list[StateVector]:
        """StateVector objects at scenario time t seconds."""
        eci, ecef = self.positions_at(t)
        return [
            StateVector(
                sat_id=sid,
                time=t,
                position_eci=tuple(eci[k]),
                position_ecef=tuple(ecef[k]),
            )
            for k, sid in enumerate(self.sat_ids)
        ]


def load_ground_stations(path: str | Path) -> list[GroundStation]:
    """Load stations from CSV with header gs_id,lat_deg,lon_deg,alt_m."""
    with open(path, newline="") as fh:
        return _read_station_rows(fh)


def default_ground_stations() -> list[GroundStation]:
    """The built-in set of 33 stations spread across inhabited latitudes."""
    ref = resources.files("leosim.data").joinpath("ground_stations.csv")
    with ref.open(newline="") as fh:
        return _read_station_rows(fh)


def _read_station_rows(fh) -> list[GroundStation]:
    reader = csv.DictReader(fh)
    required = {"gs_id", "lat_deg", "lon_deg", "alt_m"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise ValueError(f"station CSV must have header columns {sorted(required)}")
    stations = []
    for row in reader:
        stations.append(
            GroundStation(
                gs_id=int(row["gs_id"]),
                latitude=float(row["lat_deg"]),
                longitude=float(row["lon_deg"]),
                altitude=float(row["alt_m"]),
            )
        )
    return stations
