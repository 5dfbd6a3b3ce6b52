"""Command-line front end.

Subcommands (all take --config CONFIG.json --out OUTDIR [--seed N] [--jobs N]):

    run             simulate one engine, write trace.csv + trace.json
    stability-scan  classify a step-size grid, write scan.csv + scan.json
    analyze         spectral/bound report for a matrix, write analysis.json
    two-agent       closed-form two-agent case, write two_agent.json

Outputs are deterministic: floats carry 17 significant digits, JSON keys
are sorted, and nothing records timestamps, so reruns are byte-identical.
Exit status is 0 for completed work and 2 for configuration or I/O
errors (reported with the offending field path).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .algorithms import ENGINES, WEIGHTED_ENGINES, StepSizes, run, write_status_json, write_trace_csv
from .costs import CostModel, hessian_bounds, model_from_config
from .graphs import (
    CombinationMatrix,
    Graph,
    GraphError,
    SpectralError,
    build_averaging,
    build_metropolis,
    check_balanced,
    load_matrix_csv,
    matrix_from_array,
    perron_vector,
    random_connected_graph,
)
from .stability import (
    b_spectrum_residual,
    build_error_dynamics,
    diffusion_step_bound,
    extra_step_bound,
    norm_comparison,
    stability_scan,
    two_agent_case,
    two_agent_onset,
)


class ConfigError(Exception):
    """Configuration problem, tagged with the JSON field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(path, "file not found")
    except json.JSONDecodeError as exc:
        raise ConfigError(path, f"invalid JSON ({exc})")
    if not isinstance(cfg, dict):
        raise ConfigError(path, "top level must be a JSON object")
    return cfg


_KIND_CHECKS = {
    "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "str": lambda v: isinstance(v, str),
    "bool": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "dict": lambda v: isinstance(v, dict),
}

_MISSING = object()


def _field(section: dict, path: str, key: str, kind: str, default=_MISSING):
    if key not in section:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}", "required field is missing")
        return default
    value = section[key]
    if not _KIND_CHECKS[kind](value):
        raise ConfigError(f"{path}.{key}", f"expected {kind}, got {type(value).__name__}")
    return value


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    if name not in cfg:
        if required:
            raise ConfigError(name, "required section is missing")
        return {}
    if not isinstance(cfg[name], dict):
        raise ConfigError(name, "must be a JSON object")
    return cfg[name]


def _build_graph(cfg: dict, default_seed) -> Graph:
    section = _section(cfg, "graph")
    kind = _field(section, "graph", "kind", "str")
    if kind == "file":
        path = _field(section, "graph", "path", "str")
        try:
            with open(path) as fh:
                return Graph.from_json(fh.read())
        except FileNotFoundError:
            raise ConfigError("graph.path", f"file not found: {path}")
        except (json.JSONDecodeError, KeyError, TypeError, GraphError) as exc:
            raise ConfigError("graph.path", f"bad graph file: {exc}")
    n = _field(section, "graph", "n", "int")
    if n < 1:
        raise ConfigError("graph.n", "must be a positive integer")
    try:
        if kind == "random":
            prob = _field(section, "graph", "edge_probability", "number")
            seed = _field(section, "graph", "seed", "int", default=default_seed)
            if seed is None:
                raise ConfigError("graph.seed", "required (no top-level seed to fall back on)")
            return random_connected_graph(n, prob, seed)
        if kind == "path":
            return Graph(n, frozenset((k, k + 1) for k in range(n - 1)))
        if kind == "ring":
            edges = {(k, k + 1) for k in range(n - 1)}
            if n > 2:
                edges.add((0, n - 1))
            return Graph(n, frozenset(edges))
        if kind == "star":
            return Graph(n, frozenset((0, k) for k in range(1, n)))
        if kind == "complete":
            return Graph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))
    except GraphError as exc:
        raise ConfigError("graph", str(exc))
    raise ConfigError("graph.kind", f"unknown kind {kind!r}")


def _build_matrix(cfg: dict, default_seed) -> CombinationMatrix:
    section = _section(cfg, "matrix")
    rule = _field(section, "matrix", "rule", "str")
    if rule == "file":
        path = _field(section, "matrix", "path", "str")
        try:
            a = load_matrix_csv(path)
        except OSError:
            raise ConfigError("matrix.path", f"cannot read matrix file: {path}")
        graph = _build_graph(cfg, default_seed) if "graph" in cfg else None
        try:
            return matrix_from_array(a, graph)
        except (GraphError, ValueError, SpectralError) as exc:
            raise ConfigError("matrix.path", f"bad combination matrix: {exc}")
    graph = _build_graph(cfg, default_seed)
    try:
        if rule == "metropolis":
            return build_metropolis(graph)
        if rule == "averaging":
            return build_averaging(graph)
    except (GraphError, ValueError, SpectralError) as exc:
        raise ConfigError("matrix", str(exc))
    raise ConfigError("matrix.rule", f"unknown rule {rule!r}")


def _build_model(cfg: dict, n_agents: int, default_seed) -> CostModel:
    section = _section(cfg, "model")
    kind = _field(section, "model", "kind", "str")
    spec = dict(section)
    spec.setdefault("n_agents", n_agents)
    if kind in ("least_squares", "logistic") and spec.get("seed") is None:
        if default_seed is None:
            raise ConfigError("model.seed", "required (no top-level seed to fall back on)")
        spec["seed"] = default_seed
    try:
        model = model_from_config(spec)
    except (KeyError, TypeError) as exc:
        raise ConfigError("model", f"missing or malformed field: {exc}")
    except ValueError as exc:
        raise ConfigError("model", str(exc))
    if model.n_agents != n_agents:
        raise ConfigError("model.n_agents", f"must match the {n_agents}-agent network")
    return model


def _build_steps(run_cfg: dict, engine: str, model: CostModel, perron) -> StepSizes:
    has_mu = "mu" in run_cfg
    has_mu_o = "mu_o" in run_cfg
    if engine == "adaptive_exact_diffusion":
        if not has_mu_o:
            raise ConfigError("run.mu_o", "adaptive_exact_diffusion tunes from mu_o; set it")
        mu_o = _field(run_cfg, "run", "mu_o", "number")
        if mu_o <= 0:
            raise ConfigError("run.mu_o", "must be positive")
        return StepSizes.from_weights(model.q, perron.p, mu_o)
    if engine in WEIGHTED_ENGINES:
        if has_mu and has_mu_o:
            raise ConfigError("run.mu", "give either mu or mu_o, not both")
        if has_mu_o:
            mu_o = _field(run_cfg, "run", "mu_o", "number")
            if mu_o <= 0:
                raise ConfigError("run.mu_o", "must be positive")
            return StepSizes.from_weights(model.q, perron.p, mu_o)
        if has_mu:
            mu = _field(run_cfg, "run", "mu", "number")
            if mu <= 0:
                raise ConfigError("run.mu", "must be positive")
            ratio = model.q / perron.p
            if np.ptp(ratio) > 1e-9 * ratio.max():
                raise ConfigError(
                    "run.mu",
                    "a uniform step only matches this matrix when q is proportional "
                    "to its Perron vector; set run.mu_o instead",
                )
            return StepSizes(mu=np.full(model.n_agents, float(mu)),
                             mu_o=float(mu / ratio[0]))
        raise ConfigError("run.mu_o", "required field is missing")
    if has_mu_o:
        raise ConfigError("run.mu_o", f"{engine} takes a plain uniform mu")
    mu = _field(run_cfg, "run", "mu", "number")
    if mu <= 0:
        raise ConfigError("run.mu", "must be positive")
    return StepSizes.uniform(mu, model.n_agents)


def _cmd_run(cfg: dict, outdir: Path, seed, jobs) -> int:
    run_cfg = _section(cfg, "run")
    engine = _field(run_cfg, "run", "engine", "str")
    if engine not in ENGINES:
        raise ConfigError("run.engine", f"unknown engine {engine!r}; choose from {list(ENGINES)}")
    matrix = _build_matrix(cfg, seed)
    model = _build_model(cfg, matrix.n, seed)
    perron = perron_vector(matrix)
    steps = _build_steps(run_cfg, engine, model, perron)
    max_iters = _field(run_cfg, "run", "max_iters", "int", default=4000)
    stop = _field(run_cfg, "run", "stop", "number", default=1e-8)
    if max_iters < 1:
        raise ConfigError("run.max_iters", "must be at least 1")
    if stop <= 0:
        raise ConfigError("run.stop", "must be positive")
    w0 = None
    if "w0_seed" in run_cfg:
        w0_seed = _field(run_cfg, "run", "w0_seed", "int")
        w0 = np.random.default_rng(w0_seed).standard_normal((model.n_agents, model.dim))
    try:
        result = run(engine, model, matrix, steps, max_iters=max_iters,
                     stop=stop, w0=w0)
    except ValueError as exc:
        raise ConfigError("run", str(exc))
    write_trace_csv(outdir / "trace.csv", result.records)
    write_status_json(outdir / "trace.json", result)
    return 0


def _cmd_scan(cfg: dict, outdir: Path, seed, jobs) -> int:
    scan_cfg = _section(cfg, "scan")
    engine = _field(scan_cfg, "scan", "engine", "str")
    if engine not in ENGINES:
        raise ConfigError("scan.engine", f"unknown engine {engine!r}; choose from {list(ENGINES)}")
    mu_min = _field(scan_cfg, "scan", "mu_min", "number")
    mu_max = _field(scan_cfg, "scan", "mu_max", "number")
    points = _field(scan_cfg, "scan", "points", "int", default=20)
    log_spacing = _field(scan_cfg, "scan", "log_spacing", "bool", default=False)
    max_iters = _field(scan_cfg, "scan", "max_iters", "int", default=4000)
    stop = _field(scan_cfg, "scan", "stop", "number", default=1e-8)
    if not 0 < mu_min < mu_max:
        raise ConfigError("scan.mu_min", "need 0 < mu_min < mu_max")
    if points < 2:
        raise ConfigError("scan.points", "need at least two grid points")
    matrix = _build_matrix(cfg, seed)
    model = _build_model(cfg, matrix.n, seed)
    grid = (np.geomspace if log_spacing else np.linspace)(mu_min, mu_max, points)
    try:
        result = stability_scan(engine, model, matrix, grid, max_iters=max_iters,
                                stop=stop, jobs=max(1, jobs))
    except ValueError as exc:
        raise ConfigError("scan", str(exc))
    with open(outdir / "scan.csv", "w") as fh:
        fh.write("mu,algorithm,status\n")
        for mu, cls in zip(result.mus, result.classifications):
            fh.write(f"{mu:.17g},{engine},{cls}\n")
    summary = {
        "engine": engine,
        "mu_stable": result.mu_stable,
        "mu_unstable": result.mu_unstable,
        "refined": result.refined,
    }
    with open(outdir / "scan.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _curvature(cfg: dict, matrix: CombinationMatrix, perron, seed):
    """(nu, delta, k_o, tau) from the optional model section; normalized
    defaults (nu = delta = 1, uniform tau) otherwise."""
    if "model" not in cfg:
        return 1.0, 1.0, 0, np.ones(matrix.n)
    model = _build_model(cfg, matrix.n, seed)
    try:
        nu, delta, k_o = hessian_bounds(model)
    except (TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc))
    ratio = model.q / perron.p
    return nu, delta, k_o, ratio / ratio.max()


def _cmd_analyze(cfg: dict, outdir: Path, seed, jobs) -> int:
    matrix = _build_matrix(cfg, seed)
    perron = perron_vector(matrix)
    n = matrix.n
    a = matrix.a
    report = {
        "n_agents": n,
        "degenerate": n < 2,
        "rhoA": perron.rhoA,
        "lambdaN": perron.lambdaN,
        "lambda2": None if n < 2 else perron.lambda2,
        "alpha_d": None,
        "alpha_e": None,
        "mu_bound_diffusion": None,
        "mu_bound_extra": None,
        "closed_form_residual": None,
        "nu": None,
        "delta": None,
        "t_d_norm": None,
        "t_e_norm": None,
    }
    if n >= 2:
        balanced, violation = check_balanced(matrix, perron)
        if not balanced:
            raise ConfigError(
                "matrix", f"analysis needs a balanced matrix (violation {violation:.3e})"
            )
        nu, delta, k_o, tau = _curvature(cfg, matrix, perron, seed)
        report["nu"] = float(nu)
        report["delta"] = float(delta)
        dyn = build_error_dynamics(matrix, perron)
        report["closed_form_residual"] = b_spectrum_residual(dyn)
        d_bound = diffusion_step_bound(matrix, perron, tau, nu, delta, k_o)
        report["alpha_d"] = d_bound.alpha
        report["mu_bound_diffusion"] = d_bound.mu_bound
        symmetric = (np.abs(a - a.T).max() <= 1e-10
                     and np.abs(a.sum(axis=1) - 1.0).max() <= 1e-10)
        if symmetric:
            e_bound = extra_step_bound(matrix, nu, delta)
            report["alpha_e"] = e_bound.alpha
            report["mu_bound_extra"] = e_bound.mu_bound
            t_d, t_e, _ = norm_comparison(matrix)
            report["t_d_norm"] = t_d
            report["t_e_norm"] = t_e
    with open(outdir / "analysis.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_two_agent(cfg: dict, outdir: Path, seed, jobs) -> int:
    section = _section(cfg, "two_agent")
    a = _field(section, "two_agent", "a", "number")
    sigma2 = _field(section, "two_agent", "sigma2", "number")
    mu = _field(section, "two_agent", "mu", "number")
    mu_e = _field(section, "two_agent", "mu_e", "number", default=mu)
    try:
        case = two_agent_case(a, sigma2, mu, mu_e)
        onset_d = two_agent_onset(a, sigma2, "exact_diffusion")
        onset_e = two_agent_onset(a, sigma2, "extra")
    except ValueError as exc:
        raise ConfigError("two_agent", str(exc))
    payload = {
        "a": float(a),
        "sigma2": float(sigma2),
        "mu_d": case.mu_d,
        "mu_e": case.mu_e,
        "specrad_diffusion": case.specrad_d,
        "specrad_extra": case.specrad_e,
        "stable_diffusion": case.stable_d,
        "stable_extra": case.stable_e,
        "roots_diffusion": [[float(r.real), float(r.imag)] for r in case.roots_d],
        "roots_extra": [[float(r.real), float(r.imag)] for r in case.roots_e],
        "onset_diffusion": onset_d,
        "onset_extra": onset_e,
    }
    with open(outdir / "two_agent.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "stability-scan": _cmd_scan,
    "analyze": _cmd_analyze,
    "two-agent": _cmd_two_agent,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="decentopt",
        description="Simulate and analyze decentralized optimization engines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's top-level seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for grid scans")
    args = parser.parse_args(argv)
    try:
        cfg = _load_json(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is not None and not _KIND_CHECKS["int"](seed):
            raise ConfigError("seed", "must be an integer")
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, outdir, seed, args.jobs)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
