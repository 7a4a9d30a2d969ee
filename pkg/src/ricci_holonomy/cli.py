"""Command-line runner: ``ricci-holonomy run <config>`` and ``ricci-holonomy list``.

A config is a YAML (or JSON) mapping describing one scenario, or a mapping
with a ``scenarios`` list.  Each scenario integrates the flow of one catalog
model, runs the selected checks and contributes rows to a JSON report and a
CSV summary.

Exit status: 0 all checks pass, 1 some check fails, 2 config error,
3 flow extinction (a partial report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .catalog import get_model, model_names, catalog_models, polyline_loop
from .checks import (
    CHECKS,
    CheckReport,
    Residual,
    ToleranceSet,
    check_ambrose_singer,
    check_curvature_identities,
    check_flow_invariants,
    check_full_holonomy,
    check_holonomy_velocity,
    check_structure_constancy,
    check_transport_evolution,
    sample_points,
)
from .errors import ConfigurationError, ExtinctionError
from .flow import integrate_flow, integrate_uhlenbeck

__all__ = ["SCHEMA_ID", "Scenario", "load_config", "run_scenarios", "list_catalog", "main"]

log = logging.getLogger(__name__)

SCHEMA_ID = "ricci-holonomy/check-report/v1"
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_EXTINCTION = 0, 1, 2, 3
CSV_COLUMNS = ("scenario", "check_id", "residual", "value", "tolerance", "verdict")

SCENARIO_KEYS = {
    "name", "model", "theta0", "t0", "T", "grid_size", "loops", "checks", "tolerances",
    "seed", "eps", "h_t", "steps", "segment", "velocity_loop",
}


@dataclass
class Scenario:
    name: str
    model: str
    theta0: list
    t0: float
    T: float
    grid_size: int = 5
    loops: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    eps: list = field(default_factory=lambda: [1e-2, 5e-3])
    h_t: float = 1e-3
    steps: int = 2000
    segment: list | None = None
    velocity_loop: str | None = None

    def provenance(self) -> dict:
        return {
            "model": self.model, "theta0": self.theta0, "t0": self.t0, "T": self.T,
            "grid_size": self.grid_size, "loops": [lp if isinstance(lp, str) else dict(lp) for lp in self.loops],
            "checks": self.checks, "tolerances": self.tolerances, "seed": self.seed, "eps": self.eps,
            "h_t": self.h_t, "steps": self.steps, "segment": self.segment, "velocity_loop": self.velocity_loop,
        }


# --------------------------------------------------------------------------
# config parsing


def _line_index(node, path=(), out=None) -> dict:
    """Map key paths of a composed YAML tree to 1-based source lines."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Context:
    def __init__(self, lines: dict, source: str):
        self.lines = lines
        self.source = source

    def error(self, path, message) -> ConfigurationError:
        where = ".".join(str(p) if not isinstance(p, int) else f"[{p}]" for p in path).replace(".[", "[")
        line = None
        for k in range(len(path), -1, -1):
            if tuple(path[:k]) in self.lines:
                line = self.lines[tuple(path[:k])]
                break
        loc = f"{self.source}:{line}" if line else self.source
        return ConfigurationError(f"{loc}: {where or '<root>'}: {message}")


def _number(ctx, path, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ctx.error(path, f"expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ctx.error(path, f"expected an integer, got {value!r}")
    return kind(value)


def _parse_scenario(ctx, raw, path, index) -> Scenario:
    if not isinstance(raw, dict):
        raise ctx.error(path, "scenario must be a mapping")
    unknown = sorted(set(raw) - SCENARIO_KEYS)
    if unknown:
        raise ctx.error(path + (unknown[0],), f"unknown field (allowed: {', '.join(sorted(SCENARIO_KEYS))})")
    if "model" not in raw:
        raise ctx.error(path, "missing required field 'model'")
    name = raw["model"]
    if name not in model_names():
        raise ctx.error(path + ("model",), f"unknown model {name!r}; known: {', '.join(model_names())}")
    model = get_model(name)
    theta0 = raw.get("theta0", list(map(float, model.default_theta)))
    if not isinstance(theta0, list) or len(theta0) != len(model.default_theta):
        raise ctx.error(path + ("theta0",), f"expected a list of {len(model.default_theta)} numbers")
    theta0 = [_number(ctx, path + ("theta0", i), v) for i, v in enumerate(theta0)]
    if not model.admissible(np.array(theta0)):
        raise ctx.error(path + ("theta0",), f"coefficients {theta0} are not admissible for {name}")
    T = _number(ctx, path + ("T",), raw.get("T", 0.2))
    t0 = _number(ctx, path + ("t0",), raw.get("t0", 0.5 * T))
    if not (T > 0 and 0 <= t0 <= T):
        raise ctx.error(path + ("t0",), f"need 0 <= t0 <= T and T > 0 (t0={t0}, T={T})")
    grid = _number(ctx, path + ("grid_size",), raw.get("grid_size", 5), int)
    if grid < 5:
        raise ctx.error(path + ("grid_size",), "grid_size must be at least 5")

    loops = raw.get("loops", list(model.loops))
    if not isinstance(loops, list) or not loops:
        raise ctx.error(path + ("loops",), "expected a nonempty list of loop labels or inline loops")
    for i, lp in enumerate(loops):
        if isinstance(lp, str):
            if lp not in model.loops:
                raise ctx.error(path + ("loops", i), f"unknown loop {lp!r}; {name} has {', '.join(model.loops)}")
        elif isinstance(lp, dict):
            if "vertices" not in lp:
                raise ctx.error(path + ("loops", i), "inline loop needs 'vertices'")
            if set(lp) - {"label", "vertices"}:
                raise ctx.error(path + ("loops", i), "inline loop allows only 'label' and 'vertices'")
        else:
            raise ctx.error(path + ("loops", i), "loop must be a label or a mapping")

    checks = raw.get("checks", "all")
    if checks == "all":
        checks = [c for c in CHECKS if c != "structure_constancy" or model.parallel_structures]
    if not isinstance(checks, list) or not checks:
        raise ctx.error(path + ("checks",), "expected 'all' or a nonempty list of check ids")
    for i, c in enumerate(checks):
        if c not in CHECKS:
            raise ctx.error(path + ("checks", i), f"unknown check {c!r}; known: {', '.join(CHECKS)}")
        if c == "structure_constancy" and not model.parallel_structures:
            raise ctx.error(path + ("checks", i), f"{name} has no parallel structures")

    tolerances = raw.get("tolerances", {})
    if isinstance(tolerances, (int, float)) and not isinstance(tolerances, bool):
        tolerances = {"default": float(tolerances)}
    if not isinstance(tolerances, dict):
        raise ctx.error(path + ("tolerances",), "expected a number or a mapping of residual name to tolerance")
    tolerances = {k: _number(ctx, path + ("tolerances", k), v) for k, v in tolerances.items()}

    eps = raw.get("eps", [1e-2, 5e-3])
    if not isinstance(eps, list) or len(eps) != 2:
        raise ctx.error(path + ("eps",), "expected two square sizes")
    eps = [_number(ctx, path + ("eps", i), v) for i, v in enumerate(eps)]
    h_t = _number(ctx, path + ("h_t",), raw.get("h_t", 1e-3))
    if not 1e-4 <= h_t <= 1e-2:
        raise ctx.error(path + ("h_t",), "h_t must lie in [1e-4, 1e-2]")
    steps = _number(ctx, path + ("steps",), raw.get("steps", 2000), int)
    if steps < 2 or steps % 2:
        raise ctx.error(path + ("steps",), "steps must be an even integer >= 2")
    segment = raw.get("segment")
    if segment is not None and (not isinstance(segment, list) or len(segment) != 2):
        raise ctx.error(path + ("segment",), "segment is [start, end]")
    vloop = raw.get("velocity_loop")
    if vloop is not None and vloop not in model.loops:
        raise ctx.error(path + ("velocity_loop",), f"unknown loop {vloop!r}")
    return Scenario(
        name=str(raw.get("name", f"{name}_{index}")), model=name, theta0=theta0, t0=t0, T=T, grid_size=grid,
        loops=loops, checks=list(checks), tolerances=tolerances,
        seed=_number(ctx, path + ("seed",), raw.get("seed", 0), int), eps=eps, h_t=h_t, steps=steps,
        segment=segment, velocity_loop=vloop,
    )


def load_config(path) -> list[Scenario]:
    """Parse a config file into scenarios; errors carry file, line and field."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: parse error: {exc}") from exc
    ctx = _Context(_line_index(node) if node is not None else {}, str(path))
    if not isinstance(raw, dict):
        raise ctx.error((), "config must be a mapping")
    if "scenarios" in raw:
        if set(raw) - {"scenarios"}:
            raise ctx.error((sorted(set(raw) - {"scenarios"})[0],), "only 'scenarios' is allowed at top level")
        items = raw["scenarios"]
        if not isinstance(items, list) or not items:
            raise ctx.error(("scenarios",), "expected a nonempty list")
        scenarios = [_parse_scenario(ctx, s, ("scenarios", i), i) for i, s in enumerate(items)]
    else:
        scenarios = [_parse_scenario(ctx, raw, (), 0)]
    names = [s.name for s in scenarios]
    for i, n in enumerate(names):
        if names.index(n) != i:
            raise ctx.error(("scenarios", i, "name"), f"duplicate scenario name {n!r}")
    return scenarios


# --------------------------------------------------------------------------
# execution


def _resolve_loops(model, sc: Scenario):
    out = []
    for i, lp in enumerate(sc.loops):
        if isinstance(lp, str):
            out.append(model.loops[lp])
        else:
            loop = polyline_loop(model.basepoint, lp["vertices"], lp.get("label", f"inline_{i}"))
            loop.validate()
            model.check_point(np.array(loop.points()))
            out.append(loop)
    return out


def _jobs_for(sc: Scenario, model, flow, frame, tol):
    """Callables for the scenario's checks, in request order."""
    times = np.linspace(0.0, sc.T, sc.grid_size)
    if not np.any(np.isclose(times, sc.t0)):
        times = np.sort(np.append(times, sc.t0))
    loops = _resolve_loops(model, sc)
    pts = sample_points(model, seed=sc.seed)
    t_mid = float(np.clip(sc.t0, sc.h_t, sc.T - sc.h_t))
    if sc.segment is not None:
        from .catalog import LineSegment

        segment = LineSegment(np.asarray(sc.segment[0], float), np.asarray(sc.segment[1], float))
    else:
        segment = loops[0].segments[0]
    vloop = model.loops[sc.velocity_loop] if sc.velocity_loop else loops[0]
    table = {
        "curvature_identities": lambda: check_curvature_identities(model, flow, [0.0, sc.t0, sc.T], pts, tol),
        "flow_invariants": lambda: check_flow_invariants(model, flow, frame, tol),
        "ambrose_singer": lambda: check_ambrose_singer(model, flow, sc.t0, tuple(sc.eps), pts, tol),
        "transport_evolution": lambda: check_transport_evolution(model, flow, segment, t_mid, sc.h_t, tolerances=tol),
        "holonomy_velocity": lambda: check_holonomy_velocity(model, flow, frame, vloop, times, steps=sc.steps, tolerances=tol),
        "full_holonomy": lambda: check_full_holonomy(model, flow, frame, loops, times, sc.steps, tol),
        "structure_constancy": lambda: check_structure_constancy(model, flow, frame, tol),
    }
    return [(c, table[c]) for c in sc.checks]


def _extinction_report(sc: Scenario, exc: ExtinctionError) -> CheckReport:
    shortfall = sc.T - exc.stop_time if exc.stop_time >= sc.t0 else exc.stop_time
    info = {"stop_time": exc.stop_time, "critical_time": exc.critical_time}
    if exc.partial is not None:
        info["partial_times"] = [float(exc.partial.times[0]), float(exc.partial.times[-1])]
        info["partial_theta_end"] = exc.partial.thetas[-1]
    return CheckReport(
        "flow_extinction", sc.model, {"T": sc.T, "t0": sc.t0, "theta0": sc.theta0},
        [Residual("horizon_shortfall", abs(shortfall), 0.0)], [str(exc)], info,
    )


def run_scenarios(scenarios, jobs: int = 1, tolerance_scale: float = 1.0, seed: int | None = None):
    """Run scenarios; returns ``(records, status)`` with records in config order."""
    prepared = []
    status = EXIT_PASS
    for sc in scenarios:
        if seed is not None:
            sc.seed = seed
        model = get_model(sc.model)
        tol = ToleranceSet(dict(sc.tolerances), tolerance_scale)
        try:
            flow = integrate_flow(model, sc.theta0, sc.T, sc.t0)
        except ExtinctionError as exc:
            log.warning("%s: %s", sc.name, exc)
            prepared.append((sc, [("flow_extinction", lambda exc=exc, sc=sc: _extinction_report(sc, exc))]))
            status = EXIT_EXTINCTION
            continue
        frame = integrate_uhlenbeck(flow, model.basepoint, sc.t0)
        prepared.append((sc, _jobs_for(sc, model, flow, frame, tol)))

    flat = [(sc, cid, fn) for sc, items in prepared for cid, fn in items]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(fn) for _, _, fn in flat]
            reports = [f.result() for f in futures]
    else:
        reports = [fn() for _, _, fn in flat]

    records = []
    for (sc, _, _), rep in zip(flat, reports):
        d = rep.to_dict()
        d["scenario"] = sc.name
        d["scenario_parameters"] = sc.provenance()
        records.append(d)
        if rep.verdict != "pass" and status == EXIT_PASS:
            status = EXIT_FAIL
    return records, status


def render_report(records) -> str:
    return json.dumps({"schema_id": SCHEMA_ID, "reports": records}, indent=2, sort_keys=True) + "\n"


def render_summary(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        for r in rec["residuals"]:
            w.writerow([rec["scenario"], rec["check_id"], r["name"], repr(r["value"]), repr(r["tolerance"]),
                        "pass" if r["passed"] else "fail"])
    return buf.getvalue()


def list_catalog() -> str:
    lines = []
    for m in catalog_models():
        h = m.holonomy
        tags = ",".join(m.tags()) or "-"
        closed = "yes" if m.closed_form_flow is not None else "no"
        lines.append(
            f"{m.name} ({m.description})  dim={m.dim}  holonomy={h.family} (algebra dim {h.algebra_dim})  "
            f"tags={tags}  closed_form_flow={closed}  loops={','.join(m.loops)}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ricci-holonomy", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the scenarios of a config file")
    run.add_argument("config")
    run.add_argument("--tolerance-scale", type=float, default=1.0)
    run.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    run.add_argument("--seed", type=int, default=None, help="override every scenario seed")
    run.add_argument("--report", default=None, help="JSON report path (default <config stem>.report.json)")
    run.add_argument("--summary", default=None, help="CSV summary path (default <config stem>.summary.csv)")
    sub.add_parser("list", help="list catalog models")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        sys.stdout.write(list_catalog())
        return EXIT_PASS
    if args.tolerance_scale <= 0 or args.jobs < 1:
        sys.stderr.write("error: --tolerance-scale must be positive and --jobs at least 1\n")
        return EXIT_CONFIG
    try:
        scenarios = load_config(args.config)
    except ConfigurationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    records, status = run_scenarios(scenarios, args.jobs, args.tolerance_scale, args.seed)
    stem = Path(args.config).with_suffix("")
    report = Path(args.report or f"{stem}.report.json")
    summary = Path(args.summary or f"{stem}.summary.csv")
    report.parent.mkdir(parents=True, exist_ok=True)
    summary.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(render_report(records))
    summary.write_text(render_summary(records))
    for rec in records:
        sys.stdout.write(f"{rec['scenario']:24s} {rec['check_id']:22s} {rec['verdict']}\n")
    sys.stdout.write(f"report: {report}\nsummary: {summary}\nexit status: {status}\n")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
