"""Command-line entry point.

Subcommands: topology (Fig-2-style link statistics), cluster-sim
(control-plane trace and failover summary), linkmap-eval (interface
to link mapping decisions), validate (scenario diagnostics).

Exit codes: 0 success, 1 configuration error, 2 runtime error. Every
command writes into one run directory containing a copy of the
scenario, the outputs, and a manifest; outputs are byte-identical
across reruns of the same scenario.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time as time_mod
from dataclasses import replace
from pathlib import Path

from . import __version__
from .clusters import write_clusters_csv
from .kernel import RunResult, run
from .linkmap import write_decisions_csv
from .metrics import (
    ecdf,
    histogram_pdf,
    percentiles,
    write_ecdf_csv,
    write_histogram_csv,
    write_mean_std_csv,
    write_percentiles_csv,
)
from .scenario import ConfigError, Scenario, load_scenario, validate_file
from .topology import write_episodes_csv, write_links_csv

FULL_SCALE_SATS = 1000


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures get a distinct code
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leosim",
        description="Deterministic LEO constellation and control-plane simulator",
    )
    parser.set_defaults(command=None)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario file (YAML or JSON)")
        p.add_argument("--out", default=None, help="run output directory")
        p.add_argument("--threads", type=int, default=1, help="geometry worker hint")
        p.add_argument(
            "--strict-tle",
            action="store_true",
            help="fail on malformed TLE records instead of skipping them",
        )
        p.add_argument(
            "--allow-large",
            action="store_true",
            help="acknowledge multi-minute runtime for constellations over "
            f"{FULL_SCALE_SATS} satellites",
        )

    p_top = sub.add_parser("topology", help="link topology statistics over the window")
    common(p_top)
    p_top.set_defaults(func=_cmd_topology)

    p_sim = sub.add_parser("cluster-sim", help="cluster control and failover simulation")
    common(p_sim)
    p_sim.set_defaults(func=_cmd_cluster_sim)

    p_lm = sub.add_parser("linkmap-eval", help="interface-to-link mapping decisions")
    common(p_lm)
    p_lm.set_defaults(func=_cmd_linkmap_eval)

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("--scenario", required=True)
    p_val.set_defaults(func=_cmd_validate)
    return parser


def _run_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get("LEOSIM_OUT", "runs"))
        out = root / f"{command}-{Path(args.scenario).stem}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _guard_scale(scenario: Scenario, args) -> None:
    size = scenario.walker.total if scenario.walker else None
    if size is None and scenario.tle_path:
        with open(scenario.tle_path) as fh:
            size = sum(1 for line in fh if line.startswith("2 "))
    if size and size > FULL_SCALE_SATS and not args.allow_large:
        raise ConfigError(
            f"constellation has {size} satellites; rerun with --allow-large "
            "to acknowledge the multi-minute runtime"
        )


def _write_manifest(out: Path, args, scenario: Scenario, wall_s: float, outputs: list[str]) -> None:
    manifest = {
        "tool": "leosim",
        "version": __version__,
        "python": sys.version.split()[0],
        "command": args.command,
        "scenario_sha256": hashlib.sha256(scenario.source_text.encode()).hexdigest(),
        "seed": scenario.seed,
        "wall_seconds": round(wall_s, 3),
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _copy_scenario(out: Path, scenario: Scenario) -> None:
    (out / "scenario.yaml").write_text(scenario.source_text)


def _cmd_topology(args) -> int:
    scenario = load_scenario(args.scenario)
    _guard_scale(scenario, args)
    out = _run_dir(args, "topology")
    started = time_mod.monotonic()
    result = run(scenario, strict_tle=args.strict_tle, protocol_enabled=False)
    outputs = _write_topology_outputs(out, scenario, result)

    for alt in scenario.altitude_sweep_km:
        if scenario.walker is None:
            raise ConfigError("altitude_sweep_km requires a walker constellation")
        swept = replace(
            scenario,
            walker=replace(scenario.walker, altitude_km=alt),
            altitude_sweep_km=(),
        )
        alt_result = run(swept, protocol_enabled=False)
        name = f"gsl_rtt_ecdf_{alt:g}km.csv"
        if alt_result.gsl_samples:
            write_ecdf_csv(out / name, ecdf(alt_result.gsl_samples))
            outputs.append(name)

    _copy_scenario(out, scenario)
    _write_manifest(out, args, scenario, time_mod.monotonic() - started, outputs)
    print(f"topology outputs written to {out}")
    return 0


def _write_topology_outputs(out: Path, scenario: Scenario, result: RunResult) -> list[str]:
    outputs = []
    durations = [ep.duration for ep in result.episodes]
    write_histogram_csv(
        out / "isl_duration_hist.csv", histogram_pdf(durations, scenario.outputs.hist_bin_s)
    )
    outputs.append("isl_duration_hist.csv")
    write_episodes_csv(out / "episodes.csv", result.episodes, dt=scenario.dt)
    outputs.append("episodes.csv")
    for series, tau in zip(result.degree, scenario.degree_thresholds):
        name = f"isl_degree_{scenario.threshold_kind.value}_{tau * 1000:g}ms.csv"
        write_mean_std_csv(out / name, series)
        outputs.append(name)
    if result.gsl_samples:
        write_ecdf_csv(out / "gsl_rtt_ecdf.csv", ecdf(result.gsl_samples))
        outputs.append("gsl_rtt_ecdf.csv")
        write_percentiles_csv(
            out / "gsl_rtt_percentiles.csv",
            percentiles(result.gsl_samples, [5, 50, 95]),
        )
        outputs.append("gsl_rtt_percentiles.csv")
    if result.isl_rtt_samples:
        write_percentiles_csv(
            out / "isl_rtt_percentiles.csv",
            percentiles(result.isl_rtt_samples, [5, 50, 95]),
        )
        outputs.append("isl_rtt_percentiles.csv")
    if scenario.export_links and result.snapshots:
        write_links_csv(out / "links.csv", result.snapshots)
        outputs.append("links.csv")
    return outputs


def _cmd_cluster_sim(args) -> int:
    scenario = load_scenario(args.scenario)
    _guard_scale(scenario, args)
    out = _run_dir(args, "cluster-sim")
    started = time_mod.monotonic()
    result = run(scenario, strict_tle=args.strict_tle)
    outputs = []

    result.trace.write_jsonl(out / "trace.jsonl")
    outputs.append("trace.jsonl")
    write_clusters_csv(out / "clusters.csv", result.cluster_rows)
    outputs.append("clusters.csv")

    with open(out / "summary.csv", "w", newline="\n") as fh:
        fh.write("metric,value\n")
        for key in sorted(result.summary):
            fh.write(f"{key},{result.summary[key]:g}\n")
    outputs.append("summary.csv")

    with open(out / "failovers.csv", "w", newline="\n") as fh:
        fh.write("cluster_id,halted_leader,new_leader,halt_time_s,promotion_time_s,latency_s\n")
        for f in result.failovers:
            fh.write(
                f"{f['cluster_id']},{f['halted_leader']},{f['new_leader']},"
                f"{f['halt_time']:g},{f['promotion_time']:.6f},{f['latency']:.6f}\n"
            )
    outputs.append("failovers.csv")

    with open(out / "quorum_loss.csv", "w", newline="\n") as fh:
        fh.write("cluster_id,start_s,end_s\n")
        for q in result.quorum_intervals:
            fh.write(f"{q['cluster_id']},{q['start']:.6f},{q['end']:.6f}\n")
    outputs.append("quorum_loss.csv")

    _copy_scenario(out, scenario)
    _write_manifest(out, args, scenario, time_mod.monotonic() - started, outputs)
    print(f"cluster-sim outputs written to {out}")
    return 0


def _cmd_linkmap_eval(args) -> int:
    scenario = load_scenario(args.scenario)
    _guard_scale(scenario, args)
    out = _run_dir(args, "linkmap-eval")
    started = time_mod.monotonic()
    result = run(scenario, strict_tle=args.strict_tle, collect_decisions=True)
    outputs = []

    write_decisions_csv(out / "decisions.csv", result.decision_rows)
    outputs.append("decisions.csv")

    per_class: dict[str, dict] = {}
    for _, _, cls, kind, delay, degraded in result.decision_rows:
        agg = per_class.setdefault(
            cls, {"count": 0, "degraded": 0, "unrouted": 0, "delay_sum": 0.0, "routed": 0}
        )
        agg["count"] += 1
        agg["degraded"] += int(degraded)
        if delay is None:
            agg["unrouted"] += 1
        else:
            agg["routed"] += 1
            agg["delay_sum"] += delay
    with open(out / "linkmap_summary.csv", "w", newline="\n") as fh:
        fh.write("class,count,degraded,unrouted,mean_delay_s\n")
        for cls in sorted(per_class):
            agg = per_class[cls]
            mean = agg["delay_sum"] / agg["routed"] if agg["routed"] else 0.0
            fh.write(f"{cls},{agg['count']},{agg['degraded']},{agg['unrouted']},{mean:.9f}\n")
    outputs.append("linkmap_summary.csv")

    _copy_scenario(out, scenario)
    _write_manifest(out, args, scenario, time_mod.monotonic() - started, outputs)
    print(f"linkmap-eval outputs written to {out}")
    return 0


def _cmd_validate(args) -> int:
    problems = validate_file(args.scenario)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 1
    print("scenario OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
