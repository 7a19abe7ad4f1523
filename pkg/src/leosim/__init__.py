"""leosim: deterministic LEO constellation topology and control-plane
failover simulator.

Subpackages by concern: ephemeris (TLE parsing, Walker patterns,
two-body propagation), topology (link qualification and statistics),
clusters (formation, scoring, election), protocol (the failover state
machine), linkmap (interface-class to link mapping and scheduling),
kernel (deterministic event-driven runs), metrics (summary statistics
and CSV output), cli (command-line surface).
"""

__version__ = "0.1.0"

from .clusters import (
    Cluster,
    NodeMetrics,
    QuorumNotMet,
    ScoreWeights,
    check_quorum,
    elect_leader,
    form_clusters,
    node_score,
)
from .ephemeris import (
    ChecksumMismatch,
    ConstellationEphemeris,
    GroundStation,
    InvalidWalker,
    MalformedLine,
    NonConvergence,
    OrbitalElements,
    StateVector,
    TleError,
    elements_to_state,
    eci_to_ecef,
    generate_walker,
    ground_station_position,
    parse_tle,
    solve_kepler,
)
from .kernel import ControlPlane, EventTrace, MeshNetwork, RunResult, deliver, run
from .linkmap import (
    ControlMessage,
    InterfaceClass,
    LinkMapDecision,
    SchedulerMode,
    UpdateKind,
    gate_model_update,
    schedule,
    select_link,
)
from .metrics import EmptyInput, ecdf, histogram_pdf, percentiles
from .protocol import NodeState, Role, handle_event, heartbeat_due, promote_follower
from .scenario import ConfigError, FaultEvent, FaultKind, Scenario, load_scenario
from .topology import (
    Link,
    LinkEpisode,
    LinkKind,
    TopologyParams,
    TopologySnapshot,
    ThresholdKind,
    build_snapshot,
    degree_series,
    elevation_angle,
    gsl_rtt_samples,
    has_line_of_sight,
    one_way_delay,
    slant_range,
    track_link_episodes,
)
