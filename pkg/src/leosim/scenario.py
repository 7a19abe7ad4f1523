"""Scenario files: the single config surface for simulation runs.

Scenarios are YAML (JSON also parses) with these top-level keys:
constellation, window, stations, thresholds, cluster, protocol,
linkmap, faults, policy_updates, eclipse_windows, seed. Every key has
a default except the constellation source.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .clusters import ScoreWeights
from .ephemeris import DEFAULT_EPOCH
from .topology import ThresholdKind, TopologyParams


class ConfigError(ValueError):
    """Scenario is structurally or semantically invalid."""


class FaultKind(enum.Enum):
    LINK_DROP = "link_drop"
    NODE_HALT = "node_halt"
    GSL_BLACKOUT = "gsl_blackout"
    CREDENTIAL_REVOKE = "credential_revoke"


@dataclass(frozen=True)
class FaultEvent:
    """One scheduled disruption; revocations are permanent."""

    time: float
    kind: FaultKind
    duration: float = math.inf
    pair: tuple[int, int] | None = None
    node: int | None = None
    stations: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("fault duration must be positive")

    @property
    def end(self) -> float:
        return self.time + self.duration

    def active(self, t: float) -> bool:
        return self.time <= t < self.end


@dataclass(frozen=True)
class PolicyInjection:
    """A ground-originated policy update aimed at one node."""

    time: float
    target: int
    signed: bool
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WalkerSpec:
    total: int
    planes: int
    phasing: int
    inclination_deg: float
    altitude_km: float


@dataclass(frozen=True)
class ProtocolParams:
    cycle: float = 0.100  # seconds
    timeout_multiplier: int = 3
    cycles_per_step: int = 10
    loss_rate: float = 0.0  # seeded random drop probability per message


@dataclass(frozen=True)
class ClusterParams:
    max_size: int = 8
    recluster_steps: int = 10
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    staleness_horizon_cycles: int = 10
    compute_avail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LinkmapParams:
    capacity_per_tick: int = 16
    eval_classes: tuple[str, ...] = ("AUTH", "E2", "F1", "NG", "A1", "O1")


@dataclass(frozen=True)
class OutputParams:
    episode_min_s: float = 60.0  # discard shorter ISL episodes
    hist_bin_s: float = 60.0  # ISL duration histogram bin width


@dataclass(frozen=True)
class Scenario:
    """Fully resolved simulation configuration."""

    walker: WalkerSpec | None
    tle_path: str | None
    epoch: datetime
    duration: float
    dt: float
    stations_path: str | None  # None = built-in default, "none" = no stations
    topology: TopologyParams
    degree_thresholds: tuple[float, ...]  # seconds
    threshold_kind: ThresholdKind
    cluster: ClusterParams
    protocol: ProtocolParams
    linkmap: LinkmapParams
    faults: tuple[FaultEvent, ...]
    policy_updates: tuple[PolicyInjection, ...]
    eclipse_windows: tuple[tuple[float, float], ...]
    include_j2: bool
    seed: int
    outputs: OutputParams = field(default_factory=OutputParams)
    altitude_sweep_km: tuple[float, ...] = ()
    export_links: bool = False
    source_text: str = ""  # raw file contents, copied into run outputs

    @property
    def num_steps(self) -> int:
        return int(self.duration / self.dt) + 1


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file; raises ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file {path} does not exist")
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario is not valid YAML/JSON: {exc}") from exc
    scenario, problems = build_scenario(raw, base_dir=path.parent)
    if problems:
        raise ConfigError("; ".join(problems))
    assert scenario is not None
    return Scenario(**{**scenario.__dict__, "source_text": text})


def validate_file(path: str | Path) -> list[str]:
    """All diagnostics for a scenario file; empty means valid."""
    path = Path(path)
    if not path.exists():
        return [f"scenario file {path} does not exist"]
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        return [f"scenario is not valid YAML/JSON: {exc}"]
    _, problems = build_scenario(raw, base_dir=path.parent)
    return problems


def build_scenario(raw, base_dir: Path | None = None) -> tuple[Scenario | None, list[str]]:
    """Resolve raw mapping into a Scenario, collecting diagnostics."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        return None, ["scenario must be a mapping"]

    def fail(msg: str) -> None:
        problems.append(msg)

    constellation = raw.get("constellation")
    walker = None
    tle_path = None
    if not isinstance(constellation, dict):
        fail("constellation: required mapping with `walker` or `tle`")
    else:
        if "walker" in constellation:
            w = constellation["walker"]
            try:
                walker = WalkerSpec(
                    total=int(w["total"]),
                    planes=int(w["planes"]),
                    phasing=int(w.get("phasing", 0)),
                    inclination_deg=float(w.get("inclination_deg", 53.0)),
                    altitude_km=float(w.get("altitude_km", 550.0)),
                )
            except (KeyError, TypeError, ValueError) as exc:
                fail(f"constellation.walker: {exc}")
            if walker is not None:
                if walker.planes < 1 or walker.total < 1 or walker.total % walker.planes:
                    fail(
                        f"constellation.walker.planes: {walker.planes} must divide "
                        f"total {walker.total}"
                    )
                if not 0 <= walker.phasing < max(walker.planes, 1):
                    fail(f"constellation.walker.phasing: {walker.phasing} outside [0, planes)")
        elif "tle" in constellation:
            tle_path = str(constellation["tle"])
            if base_dir is not None and not Path(tle_path).is_absolute():
                tle_path = str(base_dir / tle_path)
            if not Path(tle_path).exists():
                fail(f"constellation.tle: file {tle_path} does not exist")
        else:
            fail("constellation: needs `walker` or `tle`")

    window = raw.get("window", {}) or {}
    epoch = DEFAULT_EPOCH
    if "epoch" in window:
        try:
            epoch = datetime.fromisoformat(str(window["epoch"]).replace("Z", "+00:00"))
            if epoch.tzinfo is None:
                epoch = epoch.replace(tzinfo=timezone.utc)
        except ValueError as exc:
            fail(f"window.epoch: {exc}")
    duration = _num(window, "duration_s", 3600.0, problems, "window.duration_s")
    dt = _num(window, "dt_s", 60.0, problems, "window.dt_s")
    if dt is not None and dt <= 0:
        fail("window.dt_s: must be positive")
    if duration is not None and duration < 0:
        fail("window.duration_s: must be nonnegative")

    stations_path = raw.get("stations")
    if stations_path is not None and str(stations_path).lower() != "none":
        stations_path = str(stations_path)
        if base_dir is not None and not Path(stations_path).is_absolute():
            stations_path = str(base_dir / stations_path)
        if not Path(stations_path).exists():
            fail(f"stations: file {stations_path} does not exist")
    elif stations_path is not None:
        stations_path = "none"

    th = raw.get("thresholds", {}) or {}
    isl_rtt_ms = _num(th, "isl_rtt_ms", 10.0, problems, "thresholds.isl_rtt_ms")
    min_elev = _num(th, "min_elevation_deg", 25.0, problems, "thresholds.min_elevation_deg")
    grazing_km = _num(th, "grazing_altitude_km", 80.0, problems, "thresholds.grazing_altitude_km")
    max_isl = th.get("max_isl_per_sat")
    if max_isl is not None:
        try:
            max_isl = int(max_isl)
            if max_isl < 1:
                fail("thresholds.max_isl_per_sat: must be >= 1")
        except (TypeError, ValueError):
            fail("thresholds.max_isl_per_sat: must be an integer")
            max_isl = None
    if isl_rtt_ms is not None and isl_rtt_ms <= 0:
        fail("thresholds.isl_rtt_ms: must be positive")
    degree_ms = th.get("degree_thresholds_ms", [10.0, 100.0])
    try:
        degree_thresholds = tuple(float(x) / 1000.0 for x in degree_ms)
    except (TypeError, ValueError):
        fail("thresholds.degree_thresholds_ms: must be a list of numbers")
        degree_thresholds = (0.010, 0.100)
    kind_raw = str(th.get("threshold_kind", "rtt")).lower()
    if kind_raw not in ("rtt", "one_way"):
        fail("thresholds.threshold_kind: must be `rtt` or `one_way`")
        kind_raw = "rtt"
    threshold_kind = ThresholdKind.RTT if kind_raw == "rtt" else ThresholdKind.ONE_WAY

    cl = raw.get("cluster", {}) or {}
    weights = ScoreWeights()
    if "weights" in cl:
        wraw = cl["weights"] or {}
        try:
            weights = ScoreWeights(
                w_conn=float(wraw.get("conn", 1.0 / 3.0)),
                w_comp=float(wraw.get("comp", 1.0 / 3.0)),
                w_fresh=float(wraw.get("fresh", 1.0 / 3.0)),
            )
        except (TypeError, ValueError) as exc:
            fail(f"cluster.weights: {exc}")
    max_size = int(_num(cl, "max_size", 8, problems, "cluster.max_size") or 8)
    if max_size < 1:
        fail("cluster.max_size: must be >= 1")
    recluster_steps = int(_num(cl, "recluster_steps", 10, problems, "cluster.recluster_steps") or 10)
    if recluster_steps < 1:
        fail("cluster.recluster_steps: must be >= 1")
    horizon = int(_num(cl, "staleness_horizon_cycles", 10, problems, "cluster.staleness_horizon_cycles") or 10)
    compute_avail = cl.get("compute_avail", {}) or {}
    if not isinstance(compute_avail, dict):
        fail("cluster.compute_avail: must be a mapping node -> [0, 1]")
        compute_avail = {}
    else:
        try:
            compute_avail = {int(k): float(v) for k, v in compute_avail.items()}
        except (TypeError, ValueError):
            fail("cluster.compute_avail: must map node ids to numbers")
            compute_avail = {}

    pr = raw.get("protocol", {}) or {}
    cycle_ms = _num(pr, "cycle_ms", 100.0, problems, "protocol.cycle_ms")
    if cycle_ms is not None and not 10.0 <= cycle_ms <= 1000.0:
        fail("protocol.cycle_ms: must be within [10, 1000]")
    timeout_multiplier = int(_num(pr, "timeout_multiplier", 3, problems, "protocol.timeout_multiplier") or 3)
    if timeout_multiplier < 1:
        fail("protocol.timeout_multiplier: must be >= 1")
    cycles_per_step = int(_num(pr, "cycles_per_step", 10, problems, "protocol.cycles_per_step") or 10)
    if cycles_per_step < 1:
        fail("protocol.cycles_per_step: must be >= 1")
    loss_rate = _num(pr, "loss_rate", 0.0, problems, "protocol.loss_rate")
    if loss_rate is not None and not 0.0 <= loss_rate < 1.0:
        fail("protocol.loss_rate: must be in [0, 1)")
    if (
        cycle_ms is not None
        and dt is not None
        and cycles_per_step * cycle_ms / 1000.0 > dt + 1e-9
    ):
        fail("protocol.cycles_per_step: inner window exceeds dt_s")

    lm = raw.get("linkmap", {}) or {}
    capacity = int(_num(lm, "capacity_per_tick", 16, problems, "linkmap.capacity_per_tick") or 16)
    if capacity < 0:
        fail("linkmap.capacity_per_tick: must be nonnegative")
    eval_classes = tuple(str(c).upper() for c in lm.get("eval_classes", ["AUTH", "E2", "F1", "NG", "A1", "O1"]))
    for c in eval_classes:
        if c not in ("AUTH", "E2", "F1", "NG", "A1", "O1"):
            fail(f"linkmap.eval_classes: unknown class {c}")

    faults: list[FaultEvent] = []
    for i, f in enumerate(raw.get("faults", []) or []):
        try:
            faults.append(_parse_fault(f))
        except (KeyError, TypeError, ValueError) as exc:
            fail(f"faults[{i}]: {exc}")

    injections: list[PolicyInjection] = []
    for i, p in enumerate(raw.get("policy_updates", []) or []):
        try:
            injections.append(
                PolicyInjection(
                    time=float(p["time_s"]),
                    target=int(p["target"]),
                    signed=bool(p.get("signed", True)),
                    payload=dict(p.get("payload", {}) or {}),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            fail(f"policy_updates[{i}]: {exc}")

    eclipse: list[tuple[float, float]] = []
    for i, w in enumerate(raw.get("eclipse_windows", []) or []):
        try:
            start, end = float(w["start_s"]), float(w["end_s"])
            if end <= start:
                raise ValueError("end_s must exceed start_s")
            eclipse.append((start, end))
        except (KeyError, TypeError, ValueError) as exc:
            fail(f"eclipse_windows[{i}]: {exc}")

    out_raw = raw.get("outputs", {}) or {}
    episode_min = _num(out_raw, "episode_min_s", 60.0, problems, "outputs.episode_min_s")
    hist_bin = _num(out_raw, "hist_bin_s", 60.0, problems, "outputs.hist_bin_s")
    if hist_bin is not None and hist_bin <= 0:
        fail("outputs.hist_bin_s: must be positive")
    if episode_min is not None and episode_min < 0:
        fail("outputs.episode_min_s: must be nonnegative")

    sweep = raw.get("altitude_sweep_km", []) or []
    try:
        altitude_sweep = tuple(float(x) for x in sweep)
    except (TypeError, ValueError):
        fail("altitude_sweep_km: must be a list of numbers")
        altitude_sweep = ()

    seed = raw.get("seed", 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        fail("seed: must be an integer")
        seed = 0

    if problems:
        return None, problems

    scenario = Scenario(
        walker=walker,
        tle_path=tle_path,
        epoch=epoch,
        duration=float(duration),
        dt=float(dt),
        stations_path=stations_path,
        topology=TopologyParams(
            isl_rtt_threshold=float(isl_rtt_ms) / 1000.0,
            min_elevation_deg=float(min_elev),
            grazing_altitude=float(grazing_km) * 1000.0,
            max_isl_per_sat=max_isl,
        ),
        degree_thresholds=degree_thresholds,
        threshold_kind=threshold_kind,
        cluster=ClusterParams(
            max_size=max_size,
            recluster_steps=recluster_steps,
            weights=weights,
            staleness_horizon_cycles=horizon,
            compute_avail=compute_avail,
        ),
        protocol=ProtocolParams(
            cycle=float(cycle_ms) / 1000.0,
            timeout_multiplier=timeout_multiplier,
            cycles_per_step=cycles_per_step,
            loss_rate=float(loss_rate),
        ),
        linkmap=LinkmapParams(capacity_per_tick=capacity, eval_classes=eval_classes),
        faults=tuple(sorted(faults, key=lambda f: (f.time, f.kind.value))),
        policy_updates=tuple(sorted(injections, key=lambda p: (p.time, p.target))),
        eclipse_windows=tuple(eclipse),
        include_j2=bool(raw.get("j2", False)),
        seed=seed,
        outputs=OutputParams(episode_min_s=float(episode_min), hist_bin_s=float(hist_bin)),
        altitude_sweep_km=altitude_sweep,
        export_links=bool(raw.get("export_links", False)),
    )
    return scenario, []


def _parse_fault(f: dict) -> FaultEvent:
    kind = FaultKind(str(f["kind"]).lower())
    time = float(f["time_s"])
    if kind is FaultKind.CREDENTIAL_REVOKE:
        duration = math.inf
    else:
        duration = float(f["duration_s"])
    pair = None
    node = None
    stations: frozenset[int] = frozenset()
    if kind is FaultKind.LINK_DROP:
        a, b = int(f["a"]), int(f["b"])
        pair = (min(a, b), max(a, b))
    elif kind in (FaultKind.NODE_HALT, FaultKind.CREDENTIAL_REVOKE):
        node = int(f["node"])
    elif kind is FaultKind.GSL_BLACKOUT:
        stations = frozenset(int(s) for s in f["stations"])
    return FaultEvent(
        time=time, kind=kind, duration=duration, pair=pair, node=node, stations=stations
    )


def _num(mapping: dict, key: str, default, problems: list[str], label: str):
    value = mapping.get(key, default)
    try:
        return float(value)
    except (TypeError, ValueError):
        problems.append(f"{label}: must be a number")
        return None
