"""Configuration-driven experiment runner.

Usage::

    geomcmc run config.json
    geomcmc trajectory config.json --steps 50
    geomcmc compare config.json
    geomcmc deviation config.json --grid random:200

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime failures.
Set ``GEOMCMC_LOG`` (e.g. ``INFO`` or ``DEBUG``) to control log verbosity.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

import geomcmc
from geomcmc.diagnostics import effective_sample_size, summarize
from geomcmc.errors import ConfigError, DivergenceError, SingularMetricError
from geomcmc.geometry import MetricField
from geomcmc.reparam import deviation, equivalent_metric, evaluation_points, get_reparam
from geomcmc.samplers import (
    SAMPLERS,
    Hamiltonian,
    SamplerConfig,
    _implicit_leapfrog,
    _leapfrog,
    run_chain,
    sample_cotangent_gaussian,
)
from geomcmc.targets import CENTERED, MODELS, NON_CENTERED, FunnelSpec, get_target

logger = logging.getLogger("geomcmc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUTS = ("chain", "trajectory", "deviation_grid", "summary")

_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "sampler"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["funnel", "gaussian", *MODELS]},
                "n_individuals": {"type": "integer", "minimum": 1},
                "mu_prior_scale": {"type": "number", "exclusiveMinimum": 0},
                "lambda_prior_scale": {"type": "number", "exclusiveMinimum": 0},
                "dim": {"type": "integer", "minimum": 1},
                "mean": _vector,
                "covariance": {"type": "array", "items": _vector},
            },
        },
        "parameterization": {"enum": [CENTERED, NON_CENTERED]},
        "metric": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["identity", "diagonal", "equivalent"]},
                "values": _vector,
                "reparam": {"type": "string"},
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(SAMPLERS)},
                "step_size": {"type": "number", "exclusiveMinimum": 0},
                "n_steps": {"type": "integer", "minimum": 1},
                "integration_time": {"type": "number", "exclusiveMinimum": 0},
                "geodesic_steps": {"type": "integer", "minimum": 1},
                "n_samples": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "n_chains": {"type": "integer", "minimum": 1},
                "fixed_point_tol": {"type": "number", "exclusiveMinimum": 0},
                "fixed_point_max_iter": {"type": "integer", "minimum": 1},
                "divergence_threshold": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "initial_position": _vector,
        "trajectory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "initial_position": _vector,
                "initial_momentum": _vector,
            },
        },
        "deviation_grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "low": {"anyOf": [_number, _vector]},
                "high": {"anyOf": [_number, _vector]},
                "resolution": {"type": "integer", "minimum": 1},
                "n_points": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "outputs": {"type": "array", "items": {"enum": list(OUTPUTS)}, "uniqueItems": True},
        "output_dir": {"type": "string"},
    },
}

_SAMPLER_KEYS = (
    "step_size",
    "n_steps",
    "integration_time",
    "geodesic_steps",
    "n_samples",
    "seed",
    "fixed_point_tol",
    "fixed_point_max_iter",
    "divergence_threshold",
)


# -- configuration -----------------------------------------------------------------


def validate_config(config: dict) -> dict:
    """Validate a raw config and fill defaults.

    Raises:
        ConfigError: naming the offending field.
    """
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            raise ConfigError(f"unknown key(s) {extra} in {where}")
        raise ConfigError(f"invalid value for {where}: {err.message}")

    cfg = copy.deepcopy(config)
    name = cfg["model"]["name"]
    if name.startswith("funnel"):
        if name == "funnel-centered":
            cfg.setdefault("parameterization", CENTERED)
        elif name == "funnel-noncentered":
            cfg.setdefault("parameterization", NON_CENTERED)
        cfg.setdefault("parameterization", CENTERED)
        expected = {CENTERED: "funnel-centered", NON_CENTERED: "funnel-noncentered"}[cfg["parameterization"]]
        if name not in ("funnel", expected):
            raise ConfigError(f"model.name {name!r} conflicts with parameterization {cfg['parameterization']!r}")
        cfg["model"]["name"] = "funnel"
        for key in ("dim", "mean", "covariance"):
            if key in cfg["model"]:
                raise ConfigError(f"model.{key} does not apply to the funnel model")
    else:
        if "parameterization" in cfg:
            raise ConfigError("parameterization applies only to the funnel model")
        for key in ("n_individuals", "mu_prior_scale", "lambda_prior_scale"):
            if key in cfg["model"]:
                raise ConfigError(f"model.{key} does not apply to the gaussian model")

    cfg.setdefault("metric", {"kind": "identity"})
    metric = cfg["metric"]
    if metric["kind"] == "diagonal" and "values" not in metric:
        raise ConfigError("metric.values is required for a diagonal metric")
    if metric["kind"] == "equivalent":
        if cfg["model"]["name"] != "funnel" or cfg.get("parameterization") != CENTERED:
            raise ConfigError("metric.kind 'equivalent' requires the centered funnel model")
        metric.setdefault("reparam", "noncentering")
        if metric["reparam"] != "noncentering":
            raise ConfigError(f"unknown metric.reparam {metric['reparam']!r}")
    elif "reparam" in metric:
        raise ConfigError("metric.reparam applies only to metric.kind 'equivalent'")

    sampler = cfg["sampler"]
    sampler.setdefault("n_chains", 1)
    try:
        SamplerConfig(**{k: sampler[k] for k in _SAMPLER_KEYS if k in sampler})
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"invalid sampler: {exc}") from None
    cfg.setdefault("outputs", ["chain", "summary"])
    cfg.setdefault("output_dir", "geomcmc-output")

    dim = _dim(cfg)
    for key, value in (
        ("initial_position", cfg.get("initial_position")),
        ("metric.values", metric.get("values")),
        ("trajectory.initial_position", cfg.get("trajectory", {}).get("initial_position")),
        ("trajectory.initial_momentum", cfg.get("trajectory", {}).get("initial_momentum")),
    ):
        if value is not None and len(value) != dim:
            raise ConfigError(f"{key} has length {len(value)}, model dimension is {dim}")
    return cfg


def _dim(cfg: dict) -> int:
    model = cfg["model"]
    if model["name"] == "funnel":
        return model.get("n_individuals", 1) + 2
    if "mean" in model:
        return len(model["mean"])
    if "dim" in model:
        return model["dim"]
    raise ConfigError("gaussian model needs model.dim or model.mean")


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return validate_config(raw)


def funnel_spec(cfg: dict) -> FunnelSpec:
    model = cfg["model"]
    return FunnelSpec(
        model.get("n_individuals", 1),
        model.get("mu_prior_scale", 1.0),
        model.get("lambda_prior_scale", 1.0),
        cfg.get("parameterization", CENTERED),
    )


def build_target(cfg: dict):
    model = cfg["model"]
    if model["name"] == "funnel":
        spec = funnel_spec(cfg)
        name = "funnel-centered" if spec.parameterization == CENTERED else "funnel-noncentered"
        return get_target(name, n_individuals=spec.n_individuals, mu_prior_scale=spec.mu_prior_scale,
                          lambda_prior_scale=spec.lambda_prior_scale)
    params = {k: model[k] for k in ("dim", "mean", "covariance") if k in model}
    try:
        return get_target("gaussian", **params)
    except (ValueError, SingularMetricError) as exc:
        raise ConfigError(f"invalid gaussian model: {exc}") from None


def build_metric(cfg: dict) -> MetricField:
    dim = _dim(cfg)
    metric = cfg["metric"]
    if metric["kind"] == "identity":
        return MetricField.identity(dim)
    base = MetricField.diagonal(metric["values"]) if "values" in metric else MetricField.identity(dim)
    if metric["kind"] == "diagonal":
        return base
    return equivalent_metric(base, get_reparam(metric["reparam"], funnel_spec(cfg)))


def sampler_config(cfg: dict, chain_index: int = 0) -> SamplerConfig:
    sampler = cfg["sampler"]
    kwargs = {k: sampler[k] for k in _SAMPLER_KEYS if k in sampler}
    kwargs["seed"] = kwargs.get("seed", 0) + chain_index
    return SamplerConfig(**kwargs)


def initial_position(cfg: dict) -> np.ndarray:
    if "initial_position" in cfg:
        return np.array(cfg["initial_position"], dtype=float)
    return np.zeros(_dim(cfg))


# -- output helpers ----------------------------------------------------------------


def _header(cfg: dict) -> str:
    return f"# geomcmc {geomcmc.__version__} config={json.dumps(cfg, sort_keys=True, separators=(',', ':'))}\n"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: Path, cfg: dict, columns: list, rows, extra_comments=()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header(cfg))
        for line in extra_comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)


def _meta(cfg: dict) -> dict:
    return {"version": geomcmc.__version__, "config": cfg}


# -- chains ------------------------------------------------------------------------


def _chain_worker(cfg: dict, chain_index: int):
    target = build_target(cfg)
    metric = build_metric(cfg)
    chain = run_chain(cfg["sampler"]["name"], target, metric, initial_position(cfg), sampler_config(cfg, chain_index))
    summary = summarize(chain, deviation(metric, target))
    return chain, summary


def run_chains(cfg: dict, jobs: int = 1) -> list:
    """Run all configured chains, in parallel processes when ``jobs > 1``."""
    n_chains = cfg["sampler"]["n_chains"]
    if jobs <= 1 or n_chains == 1:
        return [_chain_worker(cfg, i) for i in range(n_chains)]
    with ProcessPoolExecutor(max_workers=min(jobs, n_chains)) as pool:
        return list(pool.map(_chain_worker, [cfg] * n_chains, range(n_chains)))


def _chain_rows(chain):
    for i, (q, acc, err, div) in enumerate(zip(chain.draws, chain.accepted, chain.energy_errors, chain.divergent)):
        yield [i, *q, acc, err, div]


def command_run(cfg: dict, out_dir: Path, jobs: int, created: list) -> dict:
    results = run_chains(cfg, jobs)
    dim = _dim(cfg)
    qcols = [f"q_{i + 1}" for i in range(dim)]
    if "chain" in cfg["outputs"]:
        for i, (chain, _) in enumerate(results):
            path = out_dir / f"chain_{i}.csv"
            created.append(path)
            write_csv(path, cfg, ["iteration", *qcols, "accepted", "energy_error", "divergent"], _chain_rows(chain))
    report = {**_meta(cfg), "chains": [s.to_dict() for _, s in results]}
    if "summary" in cfg["outputs"]:
        path = out_dir / "summary.json"
        created.append(path)
        path.write_text(_dump_json(report) + "\n", encoding="utf-8")
    if "trajectory" in cfg["outputs"]:
        report["trajectory"] = command_trajectory(cfg, out_dir, None, created)
    if "deviation_grid" in cfg["outputs"]:
        report["deviation_grid"] = command_deviation(cfg, out_dir, None, created)
    return report


# -- trajectories ------------------------------------------------------------------


def trajectory_rows(H: Hamiltonian, q, p, scfg: SamplerConfig, n_steps: int):
    """Integrate one trajectory step by step, stopping at the first divergence.

    Returns:
        Tuple ``(rows, info)`` where each row is ``(step, q..., p..., H)`` and
        ``info`` holds the divergence flag, its reason and the final energy error.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    h0 = H.value(q, p)
    rows = [[0, *q, *p, h0]]
    divergent, reason = False, ""
    cache = None
    with np.errstate(over="raise", invalid="raise"):
        for step in range(1, n_steps + 1):
            try:
                if H.metric.constant:
                    q, p, cache = _leapfrog(H, q, p, scfg.step_size, cache)
                else:
                    q, p, cache = _implicit_leapfrog(
                        H, q, p, scfg.step_size, scfg.fixed_point_tol, scfg.fixed_point_max_iter, cache
                    )
                h = H.value(q, p)
            except (DivergenceError, SingularMetricError, FloatingPointError) as exc:
                divergent, reason = True, str(exc)
                break
            rows.append([step, *q, *p, h])
            if not np.isfinite(h) or abs(h - h0) > scfg.divergence_threshold:
                divergent, reason = True, "energy error above divergence threshold"
                break
    info = {
        "divergent": divergent,
        "reason": reason,
        "n_rows": len(rows),
        "energy_error": float(rows[-1][-1] - h0),
    }
    return rows, info


def emit_trajectory(cfg: dict, n_steps=None):
    """Trajectory of the configured model and metric.

    The start is ``trajectory.initial_position`` (else ``initial_position``,
    else the origin); the momentum is ``trajectory.initial_momentum`` or a
    draw from the sampler seed. ``n_steps`` defaults to ``sampler.n_steps``
    for HMC and 1 for Langevin samplers.
    """
    if cfg["sampler"]["name"] not in ("hmc", "mala", "ula"):
        raise ConfigError("trajectory output requires sampler hmc, mala or ula")
    target = build_target(cfg)
    metric = build_metric(cfg)
    scfg = sampler_config(cfg)
    if n_steps is None:
        n_steps = 1 if cfg["sampler"]["name"] in ("mala", "ula") else scfg.n_steps
    traj = cfg.get("trajectory", {})
    q = np.array(traj.get("initial_position", initial_position(cfg)), dtype=float)
    if "initial_momentum" in traj:
        p = np.array(traj["initial_momentum"], dtype=float)
    else:
        p = sample_cotangent_gaussian(metric, q, np.random.default_rng(scfg.seed))
    return trajectory_rows(Hamiltonian(target, metric), q, p, scfg, n_steps)


def command_trajectory(cfg: dict, out_dir: Path, n_steps, created: list) -> dict:
    rows, info = emit_trajectory(cfg, n_steps)
    dim = _dim(cfg)
    columns = ["step", *[f"q_{i + 1}" for i in range(dim)], *[f"p_{i + 1}" for i in range(dim)], "H"]
    path = out_dir / "trajectory.csv"
    created.append(path)
    write_csv(path, cfg, columns, rows, extra_comments=[f"divergent={str(info['divergent']).lower()}"])
    return info


# -- deviation grids ---------------------------------------------------------------


def parse_grid(spec: str) -> dict:
    """Parse ``random:N[:SEED]`` or ``box:LOW:HIGH:RES`` grid specifications."""
    parts = spec.split(":")
    try:
        if parts[0] == "random" and len(parts) in (2, 3):
            out = {"n_points": int(parts[1])}
            if len(parts) == 3:
                out["seed"] = int(parts[2])
            return out
        if parts[0] == "box" and len(parts) == 4:
            return {"low": float(parts[1]), "high": float(parts[2]), "resolution": int(parts[3])}
    except ValueError:
        pass
    raise ConfigError(f"invalid --grid {spec!r}; expected random:N[:SEED] or box:LOW:HIGH:RES")


def deviation_grid(cfg: dict):
    target = build_target(cfg)
    metric = build_metric(cfg)
    grid = cfg.get("deviation_grid", {})
    dim = _dim(cfg)
    if "low" in grid or "high" in grid:
        if not {"low", "high", "resolution"} <= set(grid):
            raise ConfigError("deviation_grid box needs low, high and resolution")
        points = evaluation_points(dim, box=(grid["low"], grid["high"]), resolution=grid["resolution"])
    else:
        points = evaluation_points(dim, n_points=grid.get("n_points", 200), seed=grid.get("seed", 0))
    dev = deviation(metric, target)
    rows = []
    for q in points:
        delta = dev.at(q)
        rows.append([*q, abs(np.linalg.det(delta)), np.max(np.abs(delta))])
    return rows


def command_deviation(cfg: dict, out_dir: Path, grid_spec, created: list) -> dict:
    if grid_spec is not None:
        cfg = {**cfg, "deviation_grid": parse_grid(grid_spec)}
    rows = deviation_grid(cfg)
    dim = _dim(cfg)
    path = out_dir / "deviation_grid.csv"
    created.append(path)
    write_csv(path, cfg, [*[f"q_{i + 1}" for i in range(dim)], "delta_abs_det", "delta_max_abs"], rows)
    dets = np.array([r[-2] for r in rows])
    entries = np.array([r[-1] for r in rows])
    return {
        "n_points": len(rows),
        "delta_mean": float(dets.mean()),
        "delta_max": float(dets.max()),
        "max_abs_entry": float(entries.max()),
    }


# -- parameterization comparison ---------------------------------------------------

SETUPS = {
    "centered_identity": (CENTERED, {"kind": "identity"}),
    "noncentered_identity": (NON_CENTERED, {"kind": "identity"}),
    "centered_equivalent": (CENTERED, {"kind": "equivalent", "reparam": "noncentering"}),
}


def compare_parameterizations(cfg: dict, jobs: int = 1) -> dict:
    """Run matched-budget chains under the three funnel setups.

    Every setup uses the same seeds. Non-centered draws are mapped back to
    centered coordinates before computing ESS so all setups report ESS for the
    same quantities ``(mu, lambda, theta_1..theta_N)``.
    """
    if cfg["model"]["name"] != "funnel":
        raise ConfigError("compare requires the funnel model")
    base_spec = funnel_spec(cfg)
    psi = get_reparam("noncentering", base_spec)
    report = {**_meta(cfg), "setups": {}}
    for label, (param, metric) in SETUPS.items():
        setup_cfg = copy.deepcopy(cfg)
        setup_cfg["parameterization"] = param
        setup_cfg["metric"] = dict(metric)
        if param == NON_CENTERED and "initial_position" in cfg:
            setup_cfg["initial_position"] = psi.forward(np.array(cfg["initial_position"], float)).tolist()
        results = run_chains(setup_cfg, jobs)
        ess, n_div, acc, delta = [], [], [], []
        for chain, summary in results:
            draws = chain.draws if param == CENTERED else np.array([psi.inverse(q) for q in chain.draws])
            ess.append([effective_sample_size(col).ess for col in draws.T] if len(draws) >= 8 else [])
            n_div.append(chain.n_divergent)
            acc.append(chain.accept_rate)
            delta.append(summary.delta_mean)
        report["setups"][label] = {
            "ess": ess,
            "n_divergent": n_div,
            "accept_rate": acc,
            "delta_mean": delta,
            "seeds": [sampler_config(setup_cfg, i).seed for i in range(len(results))],
        }
    return report


def command_compare(cfg: dict, out_dir: Path, jobs: int, created: list) -> dict:
    report = compare_parameterizations(cfg, jobs)
    path = out_dir / "comparison.json"
    created.append(path)
    path.write_text(_dump_json(report) + "\n", encoding="utf-8")
    return report


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geomcmc", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="path to a JSON experiment config")
    common.add_argument("--jobs", type=int, default=1, help="maximum parallel chains")
    common.add_argument("--seed", type=int, default=None, help="override sampler.seed")
    common.add_argument("--output-dir", default=None, help="override output_dir")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run chains and write requested outputs")
    traj = sub.add_parser("trajectory", parents=[common], help="write one integrator trajectory")
    traj.add_argument("--steps", type=int, default=None, help="number of integrator steps")
    sub.add_parser("compare", parents=[common], help="compare funnel parameterizations")
    dev = sub.add_parser("deviation", parents=[common], help="evaluate the deviation field on a grid")
    dev.add_argument("--grid", default=None, help="random:N[:SEED] or box:LOW:HIGH:RES")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("GEOMCMC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    created: list = []
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["sampler"]["seed"] = args.seed
            validate_config(cfg)
        if args.output_dir is not None:
            cfg["output_dir"] = args.output_dir
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.command == "trajectory" and args.steps is not None and args.steps < 1:
            raise ConfigError("--steps must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg["output_dir"])
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            report = command_run(cfg, out_dir, args.jobs, created)
        elif args.command == "trajectory":
            report = {**_meta(cfg), **command_trajectory(cfg, out_dir, args.steps, created)}
        elif args.command == "compare":
            report = command_compare(cfg, out_dir, args.jobs, created)
        else:
            report = {**_meta(cfg), **command_deviation(cfg, out_dir, args.grid, created)}
    except ConfigError as exc:
        _remove(created)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        _remove(created)
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(_dump_json(report))
    return EXIT_OK


def _remove(paths) -> None:
    for path in paths:
        try:
            Path(path).unlink()
        except FileNotFoundError:
            pass


if __name__ == "__main__":
    sys.exit(main())
