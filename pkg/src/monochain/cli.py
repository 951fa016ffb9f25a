"""Command-line entry point: ``monochain <verb> [options]``.

Verbs: analyze, bh-check, measure, entropy, list-systems.  Exit codes:
0 success, 1 a FAIL verdict from ``measure``, 2 monotonicity failure,
3 unmet precondition, 64 usage error, 66 missing input.
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .conley import chain_recurrent_boxes, is_attractor_free, morse_graph
from .enclosure import build_chain_graph, build_grid, build_semiflow_chain_graph, read_edges
from .errors import InconclusiveError, MonochainError, NotFound, UsageError
from .measure import (build_ulam, check_support_chain_recurrent, entropy_estimate, stationary_distribution,
                      trapped_seeds)
from .order import ConeOrder
from .reports import boxes_csv, components_svg, config_hash, ensure_dir, write_json, write_text
from .structure import estimate_generic_period, find_bracketing_periodic_point, verify_dichotomy
from .systems import MAP, SEMIFLOW, TimeTMap, lookup, system_names, verify_strong_monotonicity

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_NOT_MONOTONE = 2
EXIT_PRECONDITION = 3
EXIT_USAGE = 64
EXIT_NO_INPUT = 66

ALL_STAGES = ("monotonicity", "graph", "morse", "dichotomy", "bh")
DEFAULT_STAGES = ("monotonicity", "graph", "morse", "dichotomy")


class CliUsage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ config

@dataclass
class AnalysisConfig:
    system: str
    params: dict
    subdivisions: tuple[int, ...] | None = None
    epsilon_scale: float = 1.0
    R: float = 1.0
    times: tuple[float, ...] | None = None
    samples_per_box: int | None = None
    seed: int = 0
    stages: tuple[str, ...] = DEFAULT_STAGES
    monotonicity_samples: int = 1000
    period_samples: int = 50
    dichotomy_iterations: int = 60
    measure_horizon: float = 1.0
    measure_samples: int = 16
    measure_subdivisions: tuple[int, ...] | None = None
    entropy_seeds: int = 2000
    entropy_n: int = 20
    entropy_eps: float = 0.05
    entropy_T_step: float = 0.5
    entropy_burn_in: int | None = None
    entropy_region: tuple | None = None
    extra: dict = field(default_factory=dict)

    def canonical(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if k != "extra"}
        return json.dumps(d, sort_keys=True, default=list)

    def to_dict(self) -> dict:
        return json.loads(self.canonical())


def _parse_grid(text: str) -> tuple[int, ...]:
    try:
        subs = tuple(int(t) for t in text.lower().replace("×", "x").split("x"))
    except ValueError:
        raise CliUsage(f"bad grid spec {text!r}; expected AxB or AxBxC") from None
    if not subs or min(subs) < 1:
        raise CliUsage(f"bad grid spec {text!r}")
    return subs


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def load_config(path: str | None, overrides: argparse.Namespace) -> AnalysisConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        cp.read(path)
    if not cp.has_section("system") or not cp.get("system", "name", fallback=""):
        raise CliUsage("config needs [system] name = ...")
    try:
        params = {k: float(v) for k, v in cp.items("system") if k != "name"}
        grid = cp.get("grid", "subdivisions", fallback=None)
        times = cp.get("chain", "times", fallback=None)
        msub = cp.get("measure", "subdivisions", fallback=None)
        region = cp.get("entropy", "region", fallback=None)
        cfg = AnalysisConfig(
            system=cp.get("system", "name").strip(),
            params=params,
            subdivisions=_parse_grid(grid) if grid else None,
            epsilon_scale=cp.getfloat("chain", "epsilon_scale", fallback=1.0),
            R=cp.getfloat("chain", "R", fallback=1.0),
            times=_floats(times) if times else None,
            samples_per_box=cp.getint("chain", "samples_per_box", fallback=None),
            seed=cp.getint("chain", "seed", fallback=0),
            stages=tuple(s.strip() for s in cp.get("analysis", "stages", fallback=",".join(DEFAULT_STAGES))
                         .split(",") if s.strip()),
            monotonicity_samples=cp.getint("analysis", "monotonicity_samples", fallback=1000),
            period_samples=cp.getint("analysis", "period_samples", fallback=50),
            dichotomy_iterations=cp.getint("analysis", "dichotomy_iterations", fallback=60),
            measure_horizon=cp.getfloat("measure", "horizon", fallback=1.0),
            measure_samples=cp.getint("measure", "samples_per_box", fallback=16),
            measure_subdivisions=_parse_grid(msub) if msub else None,
            entropy_seeds=cp.getint("entropy", "seeds", fallback=2000),
            entropy_n=cp.getint("entropy", "n", fallback=20),
            entropy_eps=cp.getfloat("entropy", "eps", fallback=0.05),
            entropy_T_step=cp.getfloat("entropy", "T_step", fallback=0.5),
            entropy_burn_in=cp.getint("entropy", "burn_in", fallback=None),
            entropy_region=tuple(_floats(p) for p in region.split(":")) if region else None,
        )
    except ValueError as exc:
        raise CliUsage(f"bad config value: {exc}") from None
    if getattr(overrides, "seed", None) is not None:
        cfg.seed = overrides.seed
    if getattr(overrides, "grid", None):
        # one override for every grid the command builds
        cfg.subdivisions = cfg.measure_subdivisions = _parse_grid(overrides.grid)
    if getattr(overrides, "epsilon_scale", None) is not None:
        cfg.epsilon_scale = overrides.epsilon_scale
    if getattr(overrides, "stages", None):
        cfg.stages = tuple(s.strip() for s in overrides.stages.split(",") if s.strip())
    unknown = [s for s in cfg.stages if s not in ALL_STAGES]
    if unknown:
        raise CliUsage(f"unknown stage(s) {unknown}; choose from {list(ALL_STAGES)}")
    if cfg.epsilon_scale < 1.0:
        raise CliUsage("epsilon_scale must be >= 1 (epsilon may not undercut the box diameter)")
    return cfg


def _system(cfg: AnalysisConfig):
    try:
        sys_ = lookup(cfg.system, **cfg.params)
    except NotFound as exc:
        raise CliUsage(str(exc)) from None
    return sys_


def _grid_for(sys_, subs):
    if subs is None:
        subs = (64,) * sys_.dimension
    if len(subs) != sys_.dimension:
        raise CliUsage(f"grid has {len(subs)} axes but {sys_.name} has dimension {sys_.dimension}")
    return build_grid((sys_.lower, sys_.upper), subs)


def _graph(sys_, grid, cfg: AnalysisConfig):
    eps = cfg.epsilon_scale * grid.box_diameter
    if sys_.kind == SEMIFLOW:
        return build_semiflow_chain_graph(sys_, grid, eps, cfg.R, cfg.times, cfg.samples_per_box, cfg.seed)
    return build_chain_graph(sys_, grid, eps, cfg.samples_per_box, cfg.seed)


def _header(cfg: AnalysisConfig, command: str) -> dict:
    return {"command": command, "version": __version__, "config": cfg.to_dict(),
            "config_hash": config_hash(cfg.canonical(), __version__)}


# ------------------------------------------------------------------ commands

def cmd_analyze(cfg: AnalysisConfig, out: str) -> int:
    sys_ = _system(cfg)
    grid = _grid_for(sys_, cfg.subdivisions)
    ensure_dir(out)
    report = _header(cfg, "analyze")
    timings = {}
    exit_code = EXIT_OK
    monotone = True

    if "monotonicity" in cfg.stages:
        t = time.perf_counter()
        mono = verify_strong_monotonicity(sys_, cfg.monotonicity_samples, cfg.seed)
        timings["monotonicity"] = time.perf_counter() - t
        monotone = mono.passed
        report["monotonicity"] = {"operation": "verify_strong_monotonicity",
                                  "inputs": {"system": sys_.name, "n_samples": cfg.monotonicity_samples,
                                             "rng_seed": cfg.seed},
                                  **mono.to_dict()}
        if not monotone:
            exit_code = EXIT_NOT_MONOTONE

    graph = None
    if "graph" in cfg.stages or "morse" in cfg.stages or "dichotomy" in cfg.stages:
        t = time.perf_counter()
        graph = _graph(sys_, grid, cfg)
        timings["graph"] = time.perf_counter() - t
        graph.write_edges(os.path.join(out, "graph.edges"))
        report["graph"] = {"operation": "build_semiflow_chain_graph" if sys_.kind == SEMIFLOW
                           else "build_chain_graph",
                           "inputs": {"subdivisions": list(grid.subdivisions), "epsilon": graph.epsilon,
                                      "R": graph.R, "times": graph.times,
                                      "samples_per_box": graph.samples_per_box, "seed": graph.seed},
                           "n_boxes": grid.n_boxes, "n_edges": graph.n_edges,
                           "box_diameter": grid.box_diameter,
                           "n_chain_recurrent_boxes": int(chain_recurrent_boxes(graph).size)}

    components, rows = [], []
    if graph is not None and ("morse" in cfg.stages or "dichotomy" in cfg.stages):
        t = time.perf_counter()
        mg = morse_graph(graph)
        timings["morse"] = time.perf_counter() - t
        run_structure = "dichotomy" in cfg.stages and monotone
        m, period_info = 1, None
        if run_structure and sys_.kind == MAP:
            try:
                est = estimate_generic_period(sys_, cfg.period_samples, cfg.seed)
                m, period_info = est.m, est.to_dict()
            except InconclusiveError as exc:
                period_info = {"error": str(exc), "m": 1}
        t = time.perf_counter()
        labels = {}
        for i, comp in enumerate(mg.nodes):
            entry = {"node": i, "component_id": comp.id, "size": comp.size, "boxes": comp.boxes.tolist(),
                     "morse_successors": mg.successors(i)}
            verdict_name = "Skipped"
            if run_structure:
                entry["attractor_free"] = is_attractor_free(graph, comp.boxes)
                v = verify_dichotomy(sys_, graph, comp, m, n_iter=cfg.dichotomy_iterations)
                verdict_name = v.classification
                entry["verdict"] = {"operation": "verify_dichotomy",
                                    "inputs": {"component_id": comp.id, "m": m}, **v.to_dict()}
            entry["classification"] = verdict_name
            labels[i] = verdict_name
            components.append(entry)
            rows.extend((int(b), comp.id, verdict_name) for b in comp.boxes)
        timings["dichotomy"] = time.perf_counter() - t
        report["morse_graph"] = {"operation": "morse_graph", "nodes": [c.id for c in mg.nodes],
                                 "edges": [list(e) for e in mg.edges], "sinks": mg.sinks(),
                                 "sources": mg.sources()}
        report["components"] = components
        if period_info is not None:
            report["generic_period"] = {"operation": "estimate_generic_period", **period_info}
        if not run_structure and "dichotomy" in cfg.stages:
            report["structure_skipped"] = "strong monotonicity failed; structure stages need it"

        if "bh" in cfg.stages and run_structure:
            t = time.perf_counter()
            certs = {}
            for i, comp in enumerate(mg.nodes):
                if labels[i] != "Unordered":
                    continue
                try:
                    c = find_bracketing_periodic_point(sys_, graph, comp, m)
                    certs[str(comp.id)] = {"operation": "find_bracketing_periodic_point", **c.to_dict()}
                except (NotFound, MonochainError) as exc:
                    certs[str(comp.id)] = {"operation": "find_bracketing_periodic_point",
                                           "not_found": str(exc)}
            report["bh_certificates"] = certs
            timings["bh"] = time.perf_counter() - t

        write_text(os.path.join(out, "morse.dot"), mg.to_dot(labels))
        write_text(os.path.join(out, "boxes.csv"), boxes_csv(grid, rows))
        write_text(os.path.join(out, "components.svg"), components_svg(grid, rows, title=sys_.name))
        lines = ["component_id,node,size,classification,morse_successors"]
        for e in components:
            succ = " ".join(str(mg.nodes[j].id) for j in e["morse_successors"])
            lines.append(f"{e['component_id']},{e['node']},{e['size']},{e['classification']},{succ}")
        write_text(os.path.join(out, "components.csv"), "\n".join(lines) + "\n")

    write_json(os.path.join(out, "report.json"), report)
    write_json(os.path.join(out, "timings.json"), {k: round(v, 6) for k, v in timings.items()})
    return exit_code


def cmd_bh_check(cfg: AnalysisConfig, out: str, component_id: int, reverse: bool = False) -> int:
    report_path = os.path.join(out, "report.json")
    edges_path = os.path.join(out, "graph.edges")
    if not (os.path.exists(report_path) and os.path.exists(edges_path)):
        print(f"missing analyze artifacts in {out} (need report.json and graph.edges)", file=sys.stderr)
        return EXIT_NO_INPUT
    with open(report_path) as fh:
        report = json.load(fh)
    comps = {c["component_id"]: c for c in report.get("components", [])}
    if component_id not in comps:
        raise CliUsage(f"component {component_id} not in report; known: {sorted(comps)}")
    entry = comps[component_id]
    if entry.get("classification") != "Unordered":
        print(f"component {component_id} is {entry.get('classification')}, not Unordered: "
              "the bracketing search needs an unordered component", file=sys.stderr)
        return EXIT_PRECONDITION
    sys_ = _system(cfg)
    graph = read_edges(edges_path)
    graph.system = sys_
    m = entry.get("verdict", {}).get("m", 1)
    order = ConeOrder(reversed=reverse)
    suffix = "_reversed" if reverse else ""
    cert_path = os.path.join(out, f"bh_certificate_C{component_id}{suffix}.json")
    try:
        cert = find_bracketing_periodic_point(sys_, graph, np.asarray(entry["boxes"]), m, order=order)
    except NotFound as exc:
        print(f"no bracketing point: {exc}", file=sys.stderr)
        write_json(cert_path,
                   {**_header(cfg, "bh-check"), "component_id": component_id, "found": False,
                    "reason": str(exc), "diagnostics": exc.diagnostics})
        return EXIT_PRECONDITION
    write_json(cert_path,
               {**_header(cfg, "bh-check"), "component_id": component_id, "found": True,
                "operation": "find_bracketing_periodic_point", **cert.to_dict()})
    return EXIT_OK


def cmd_measure(cfg: AnalysisConfig, out: str) -> int:
    sys_ = _system(cfg)
    grid = _grid_for(sys_, cfg.measure_subdivisions or cfg.subdivisions)
    S = TimeTMap(sys_, cfg.measure_horizon) if sys_.kind == SEMIFLOW else sys_
    ensure_dir(out)
    t = time.perf_counter()
    op = build_ulam(S, grid, cfg.measure_samples, cfg.seed)
    mu = stationary_distribution(op)
    graph = build_chain_graph(S, grid, cfg.epsilon_scale * grid.box_diameter, cfg.samples_per_box, cfg.seed)
    rep = check_support_chain_recurrent(mu, graph)
    elapsed = time.perf_counter() - t
    body = {**_header(cfg, "measure"), "operation": "check_support_chain_recurrent",
            "inputs": {"map": S.name, "subdivisions": list(grid.subdivisions),
                       "samples_per_box": cfg.measure_samples, "seed": cfg.seed,
                       "support_threshold": mu.support_threshold},
            "iterations": mu.iterations, "n_closed_classes": mu.n_closed_classes,
            "max_escape_fraction": float(op.escape_fraction.max()), **rep.to_dict()}
    write_json(os.path.join(out, "measure.json"), body)
    mu.write_csv(os.path.join(out, "measure.csv"))
    write_json(os.path.join(out, "measure_timings.json"), {"measure": round(elapsed, 6)})
    print(f"support containment: {'PASS' if rep.passed else 'FAIL'} "
          f"({rep.support_size} support boxes, {len(rep.violations)} violations)")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_entropy(cfg: AnalysisConfig, out: str) -> int:
    sys_ = _system(cfg)
    ensure_dir(out)
    burn = cfg.entropy_burn_in if cfg.entropy_burn_in is not None else (40 if sys_.kind == SEMIFLOW else 100)
    t = time.perf_counter()
    seeds = trapped_seeds(sys_, cfg.entropy_seeds, cfg.seed, burn, cfg.entropy_region, cfg.entropy_T_step)
    rep = entropy_estimate(sys_, seeds, cfg.entropy_n, cfg.entropy_eps, cfg.entropy_T_step)
    elapsed = time.perf_counter() - t
    body = {**_header(cfg, "entropy"), "operation": "entropy_estimate",
            "inputs": {"system": sys_.name, "seeds": int(len(seeds)), "burn_in": burn,
                       "region": cfg.entropy_region, "n": cfg.entropy_n, "eps": cfg.entropy_eps,
                       "T_step": cfg.entropy_T_step if sys_.kind == SEMIFLOW else None},
            **rep.to_dict()}
    write_json(os.path.join(out, "entropy.json"), body)
    write_json(os.path.join(out, "entropy_timings.json"), {"entropy": round(elapsed, 6)})
    print(f"entropy estimate: {rep.value:.6f}")
    return EXIT_OK


def cmd_list_systems() -> int:
    buf = io.StringIO()
    for name in system_names():
        s = lookup(name)
        params = ", ".join(f"{k}={v}" for k, v in s.params.items())
        buf.write(f"{name:20s} {s.kind:9s} dim={s.dimension}  {params}\n")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="monochain", description="Chain recurrence and order structure of monotone systems.")
    p.add_argument("--version", action="version", version=f"monochain {__version__}")
    sub = p.add_subparsers(dest="verb", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True, help="INI config file (see README)")
        sp.add_argument("--out", default="monochain-out", help="output directory")
        sp.add_argument("--seed", type=int, help="override [chain] seed")
        sp.add_argument("--grid", help="override grid subdivisions, e.g. 64x64")
        sp.add_argument("--epsilon-scale", type=float, dest="epsilon_scale",
                        help="epsilon as a multiple of the box diameter")
        sp.add_argument("--stages", help=f"comma list from {','.join(ALL_STAGES)}")

    common(sub.add_parser("analyze", help="graph, Morse graph and structure verdicts"))
    bh = sub.add_parser("bh-check", help="bracketing periodic point for one component")
    common(bh)
    bh.add_argument("--component", type=int, required=True, help="component id from report.json")
    bh.add_argument("--reverse", action="store_true", help="search below the component (dual order)")
    common(sub.add_parser("measure", help="Ulam measure support vs chain recurrence"))
    common(sub.add_parser("entropy", help="separated-set entropy estimate"))
    sub.add_parser("list-systems", help="print the built-in systems")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.verb == "list-systems":
        return cmd_list_systems()
    try:
        cfg = load_config(args.config, args)
        _system(cfg)
        if args.verb == "analyze":
            return cmd_analyze(cfg, args.out)
        if args.verb == "bh-check":
            return cmd_bh_check(cfg, args.out, args.component, args.reverse)
        if args.verb == "measure":
            return cmd_measure(cfg, args.out)
        return cmd_entropy(cfg, args.out)
    except FileNotFoundError as exc:
        print(f"monochain: no such file: {exc}", file=sys.stderr)
        return EXIT_NO_INPUT
    except (CliUsage, UsageError) as exc:
        print(f"monochain: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
