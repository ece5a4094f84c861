"""Command-line interface.

Each subcommand reads its settings from three layers, later ones winning:
built-in defaults, a JSON file given with ``--config``, then explicit flags.
``--dump-config`` prints the merged settings as JSON and exits, so the
output can be fed back through ``--config``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 infeasible or unbounded program, 6 degenerate basis under
``--strict-nondegenerate``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .errors import (
    GateauxError,
    InfeasibleError,
    InvalidInput,
    InvalidParameter,
    UnboundedError,
)
from .experiments import (
    DEFAULT_EPS_GRID,
    DEFAULT_LAMBDA_GRID,
    DgpSpec,
    dgp_piecewise,
    discrete_cube,
    dtr_balanced,
    dtr_discrete,
    heatmap_svg,
    lines_svg,
    loglog_slope,
    run_comparison_experiment,
    run_sweep_experiment,
    write_comparison_csv,
)
from .functionals import DtrValue, Integrator, MeanPotentialOutcome
from .gateaux import SCHEMA_VERSION, GateauxReport, check_eps, one_step, write_sweep_csv
from .measures import DiscreteDistribution, fit_kde, read_dataset_csv, read_triples_csv, sample
from .mdp import (
    TabularMDP,
    fd_derivative,
    load_constraints,
    load_mdp,
    one_step_policy_value,
    random_mdp,
    sample_triples,
    solve_policy_lp,
)
from .oracle import dtr_eif, envelope_influence, mdp_influence

log = logging.getLogger("empgateaux")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_INFEASIBLE, EXIT_DEGENERATE = 0, 2, 3, 4, 5, 6


class ConfigError(Exception):
    pass


class DegenerateBasis(Exception):
    pass


DEFAULTS = {
    "estimate": {
        "dgp": "discrete-cube",
        "data": None,
        "functional": "mpo",
        "arm": 1.0,
        "regime": [1.0, 1.0],
        "T": 2,
        "n": 500,
        "seed": 0,
        "noise_sd": 1.0,
        "propensity_mode": "logistic-sin",
        "eps": 1e-6,
        "lambda": None,
        "h": 0.05,
        "kernel": "uniform",
        "scheme": "forward",
        "integrator": "quadrature",
        "n_mc": 2000,
        "overlap_floor": 1e-4,
        "threads": 1,
        "out": None,
    },
    "dtr": {
        "data": None,
        "T": 2,
        "regime": [1.0, 1.0],
        "design": "balanced",
        "design_seed": 0,
        "n": 0,
        "seed": 0,
        "eps": 1e-6,
        "scheme": "forward",
        "validate": False,
        "threads": 1,
        "out": None,
    },
    "sweep": {
        "dgp": "piecewise",
        "n": 500,
        "seed": 0,
        "noise_sd": 1.0,
        "propensity_mode": "logistic-sin",
        "h": 0.05,
        "kernel": "uniform",
        "eps_grid": list(DEFAULT_EPS_GRID),
        "lambda_grid": list(DEFAULT_LAMBDA_GRID),
        "n_obs": None,
        "scheme": "forward",
        "overlap_floor": 1e-4,
        "threads": 1,
        "out": None,
        "svg": None,
    },
    "compare": {
        "n_list": [250, 500, 1000, 2000],
        "n_seeds": 100,
        "seed": 0,
        "noise_sd": 1.0,
        "propensity_mode": "logistic-sin",
        "schedule": "fixed",
        "h": 0.05,
        "eps": 1e-3,
        "lambda": 0.02,
        "kernel": "uniform",
        "estimators": ["dm", "ipw", "one-step"],
        "ipw_clip": 0.01,
        "overlap_floor": 1e-4,
        "threads": 1,
        "out": None,
        "svg": None,
    },
    "mdp": {
        "spec": None,
        "random": [5, 3],
        "gamma": 0.9,
        "seed": 0,
        "constraints": None,
        "triples": None,
        "n_triples": 0,
        "estimate": False,
        "eps": 1e-6,
        "validate": False,
        "strict_nondegenerate": False,
        "threads": 1,
        "out": None,
    },
}

META_KEYS = ("command", "schema_version")


# ---------------------------------------------------------------------------
# argument parsing and config merging
# ---------------------------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _common(p):
    p.add_argument("--config", help="JSON settings file; explicit flags override it")
    p.add_argument("--dump-config", action="store_true", help="print merged settings as JSON and exit")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--threads", type=int, help="worker threads (output does not depend on it)")
    p.add_argument("--out", help="output file (JSON or CSV)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="empgateaux",
        description="Empirical Gateaux derivatives, one-step estimators and their validation.",
        epilog="Log level via GATEAUX_LOG=error|info|debug.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("estimate", help="one-step estimate of a functional", argument_default=S)
    _common(p)
    p.add_argument("--dgp", choices=("discrete-cube", "piecewise", "dtr-discrete"), help="built-in design")
    p.add_argument("--data", help="x1..xd,a,y CSV (overrides --dgp)")
    p.add_argument("--functional", choices=("mpo", "dtr"))
    p.add_argument("--arm", type=float, help="treatment arm of the mean potential outcome")
    p.add_argument("--regime", type=_floats, help="static regime, comma separated")
    p.add_argument("--T", type=int, dest="T", help="number of stages")
    p.add_argument("--n", type=int, help="sample size for simulated designs")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--propensity-mode", choices=("logistic-sin", "raw-sin"), dest="propensity_mode")
    p.add_argument("--eps", type=float, help="mixture weight of the difference quotient")
    p.add_argument("--lambda", type=float, dest="lambda", help="delta smoothing bandwidth (default: h)")
    p.add_argument("--h", type=float, help="density bandwidth")
    p.add_argument("--kernel", choices=("uniform", "gaussian"))
    p.add_argument("--scheme", choices=("forward", "central"))
    p.add_argument("--integrator", choices=("quadrature", "mc"))
    p.add_argument("--n-mc", type=int, dest="n_mc")
    p.add_argument("--overlap-floor", type=float, dest="overlap_floor")

    p = sub.add_parser("dtr", help="multi-stage regime value on a discrete design", argument_default=S)
    _common(p)
    p.add_argument("--data", help="x1,a1,...,xT,aT,y CSV of discrete values")
    p.add_argument("--T", type=int, dest="T")
    p.add_argument("--regime", type=_floats)
    p.add_argument("--design", choices=("balanced", "random"), help="uniform stage probabilities or a random design")
    p.add_argument("--design-seed", type=int, dest="design_seed", help="seed of the random design")
    p.add_argument("--n", type=int, help="draws from the design; 0 works with the design itself")
    p.add_argument("--eps", type=float)
    p.add_argument("--scheme", choices=("forward", "central"))
    p.add_argument("--validate", action="store_true", help="compare with the closed-form influence function")

    p = sub.add_parser("sweep", help="derivative error over an eps x lambda grid", argument_default=S)
    _common(p)
    p.add_argument("--dgp", choices=("piecewise", "discrete-cube"))
    p.add_argument("--n", type=int)
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--propensity-mode", choices=("logistic-sin", "raw-sin"), dest="propensity_mode")
    p.add_argument("--h", type=float)
    p.add_argument("--kernel", choices=("uniform", "gaussian"))
    p.add_argument("--eps-grid", type=_floats, dest="eps_grid")
    p.add_argument("--lambda-grid", type=_floats, dest="lambda_grid")
    p.add_argument("--n-obs", type=int, dest="n_obs", help="evaluate at the first N observations only")
    p.add_argument("--scheme", choices=("forward", "central"))
    p.add_argument("--overlap-floor", type=float, dest="overlap_floor")
    p.add_argument("--svg", help="also write a heatmap")

    p = sub.add_parser("compare", help="estimator errors over sample sizes", argument_default=S)
    _common(p)
    p.add_argument("--n-list", type=_ints, dest="n_list")
    p.add_argument("--n-seeds", type=int, dest="n_seeds")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--propensity-mode", choices=("logistic-sin", "raw-sin"), dest="propensity_mode")
    p.add_argument("--schedule", choices=("fixed", "rate"), help="fixed eps/lambda/h or the rate schedule")
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--lambda", type=float, dest="lambda")
    p.add_argument("--kernel", choices=("uniform", "gaussian"))
    p.add_argument("--estimators", type=_names, help="subset of dm,ipw,one-step,oracle")
    p.add_argument("--ipw-clip", type=float, dest="ipw_clip")
    p.add_argument("--overlap-floor", type=float, dest="overlap_floor")
    p.add_argument("--svg", help="also write a log-log chart")

    p = sub.add_parser("mdp", help="optimal policy value and its derivatives", argument_default=S)
    _common(p)
    p.add_argument("--spec", help="MDP JSON file (P, r, gamma, mu0, optional d)")
    p.add_argument("--random", type=_ints, help="nS,nA of a random MDP when no --spec is given")
    p.add_argument("--gamma", type=float, help="discount of the random MDP")
    p.add_argument("--constraints", help="occupancy constraints JSON")
    p.add_argument("--triples", help="s,a,s_next CSV of observed transitions")
    p.add_argument("--n-triples", type=int, dest="n_triples", help="sample this many transitions")
    p.add_argument("--estimate", action="store_true", help="refit the model from the triples first")
    p.add_argument("--eps", type=float)
    p.add_argument("--validate", action="store_true", help="compare with the closed-form derivative")
    p.add_argument("--strict-nondegenerate", action="store_true", dest="strict_nondegenerate")
    return parser


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def merge_config(command: str, file_cfg: dict, flags: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    defaults = DEFAULTS[command]
    file_cfg = dict(file_cfg)
    if file_cfg.get("command", command) != command:
        raise ConfigError(f"config is for {file_cfg['command']!r}, not {command!r}")
    version = file_cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")
    unknown = sorted(set(file_cfg) - set(defaults) - set(META_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {**defaults, **{k: v for k, v in file_cfg.items() if k in defaults}, **flags}
    return {"command": command, "schema_version": SCHEMA_VERSION, **cfg}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _emit(cfg, payload: dict) -> None:
    text = json.dumps(payload, indent=2)
    if cfg.get("out"):
        with open(cfg["out"], "w") as fh:
            fh.write(text + "\n")


def _population_one_step(report: GateauxReport, dist: DiscreteDistribution) -> GateauxReport:
    """Average the derivative with the support probabilities instead of
    uniformly over atoms."""
    _, probs = dist.support()
    ok = np.isfinite(report.phi)
    w = probs[ok] / math.fsum(probs[ok])
    report.one_step = report.plugin + math.fsum(w * report.phi[ok])
    report.extra["weights"] = "support-probabilities"
    return report


def _integrator(cfg) -> Integrator:
    return Integrator(method=cfg["integrator"], n_mc=int(cfg["n_mc"]), seed=int(cfg["seed"]))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_estimate(cfg) -> int:
    eps = check_eps(cfg["eps"])
    integ = _integrator(cfg)
    if cfg["functional"] == "mpo":
        fnl = MeanPotentialOutcome(float(cfg["arm"]), integ)
    else:
        fnl = DtrValue(tuple(cfg["regime"]), int(cfg["T"]), integ)
    population = None
    lam = cfg["lambda"] if cfg["lambda"] is not None else cfg["h"]
    if cfg["data"] is not None:
        data = read_dataset_csv(cfg["data"])
        base = fit_kde(data, cfg["h"], cfg["kernel"], cfg["overlap_floor"])
        obs = data
    elif cfg["dgp"] == "piecewise":
        spec = DgpSpec(
            "piecewise", int(cfg["n"]), int(cfg["seed"]), float(cfg["noise_sd"]), cfg["propensity_mode"]
        )
        data, _ = dgp_piecewise(spec.n, spec.seed, spec)
        base = fit_kde(data, cfg["h"], cfg["kernel"], cfg["overlap_floor"])
        obs = data
    else:
        population = discrete_cube() if cfg["dgp"] == "discrete-cube" else dtr_discrete(int(cfg["T"]), int(cfg["seed"]))
        base, obs = population, population.atoms
    rep = one_step(fnl, base, obs, eps, lam, cfg["scheme"], cfg["kernel"], int(cfg["threads"]))
    if population is not None:
        rep = _population_one_step(rep, population)
    rep.extra["functional"] = fnl.to_dict()
    print(rep.summary())
    _emit(cfg, rep.to_dict())
    return EXIT_OK


def cmd_dtr(cfg) -> int:
    eps = check_eps(cfg["eps"])
    T = int(cfg["T"])
    regime = tuple(float(r) for r in cfg["regime"])
    fnl = DtrValue(regime, T)
    population = None
    if cfg["data"] is not None:
        rows = read_dataset_csv(cfg["data"]).rows()
        if rows.shape[1] != 2 * T + 1:
            raise InvalidInput(f"{cfg['data']}: expected {2 * T + 1} columns for T={T}, got {rows.shape[1]}")
        base = DiscreteDistribution.empirical(rows)
        obs = rows
    else:
        if cfg["design"] == "balanced":
            design = dtr_balanced(T)
        elif cfg["design"] == "random":
            design = dtr_discrete(T, int(cfg["design_seed"]))
        else:
            raise InvalidParameter(f"unknown design {cfg['design']!r}")
        if int(cfg["n"]) > 0:
            obs = sample(design, int(cfg["n"]), int(cfg["seed"]))
            base = DiscreteDistribution.empirical(obs)
        else:
            population = design
            base, obs = design, design.atoms
    rep = one_step(fnl, base, obs, eps, None, cfg["scheme"], None, int(cfg["threads"]))
    if population is not None:
        rep = _population_one_step(rep, population)
    rep.extra["functional"] = fnl.to_dict()
    print(rep.summary())
    if cfg["validate"]:
        exact = np.array([dtr_eif(base, regime, T, o) for o in np.atleast_2d(obs)])
        err = float(np.nanmax(np.abs(rep.phi - exact)))
        rep.extra["max_abs_error_vs_closed_form"] = err
        print(f"max |phi - closed_form| = {err:.6g}")
    _emit(cfg, rep.to_dict())
    return EXIT_OK


def cmd_sweep(cfg) -> int:
    for e in cfg["eps_grid"]:
        check_eps(e)
    config = {
        "dgp": {
            "kind": cfg["dgp"],
            "n": int(cfg["n"]),
            "seed": int(cfg["seed"]),
            "noise_sd": float(cfg["noise_sd"]),
            "propensity_mode": cfg["propensity_mode"],
        },
        "h": cfg["h"],
        "kernel": cfg["kernel"],
        "overlap_floor": cfg["overlap_floor"],
        "eps_grid": cfg["eps_grid"],
        "lambda_grid": cfg["lambda_grid"],
        "n_obs": cfg["n_obs"],
        "scheme": cfg["scheme"],
        "threads": int(cfg["threads"]),
    }
    res = run_sweep_experiment(config)
    if cfg["out"]:
        write_sweep_csv(cfg["out"], res.matrix, res.eps_grid, res.lambda_grid)
    else:
        print("eps," + ",".join(f"lambda={v:g}" for v in res.lambda_grid))
        for e, row in zip(res.eps_grid, res.matrix):
            print(f"{e:g}," + ",".join(f"{v:.6g}" for v in row))
    if cfg["svg"]:
        heatmap_svg(cfg["svg"], res.matrix, res.eps_grid, res.lambda_grid)
    return EXIT_OK


def cmd_compare(cfg) -> int:
    if cfg["schedule"] == "fixed":
        check_eps(cfg["eps"])
    config = {
        "dgp": {"noise_sd": float(cfg["noise_sd"]), "propensity_mode": cfg["propensity_mode"]},
        "base_seed": int(cfg["seed"]),
        "schedule": cfg["schedule"],
        "h": cfg["h"],
        "eps": cfg["eps"],
        "lambda": cfg["lambda"],
        "kernel": cfg["kernel"],
        "estimators": list(cfg["estimators"]),
        "ipw_clip": cfg["ipw_clip"],
        "overlap_floor": cfg["overlap_floor"],
        "threads": int(cfg["threads"]),
    }
    bad = sorted(set(config["estimators"]) - {"dm", "ipw", "one-step", "oracle"})
    if bad:
        raise InvalidParameter(f"unknown estimators: {', '.join(bad)}")
    rows = run_comparison_experiment(cfg["n_list"], int(cfg["n_seeds"]), config)
    if cfg["out"]:
        write_comparison_csv(cfg["out"], rows)
    for r in rows:
        print(f"{r['estimator']:>9} n={r['n']:<6d} mae={r['mean_abs_error']:.6g} rmse={r['rmse']:.6g}")
    if len(cfg["n_list"]) > 1:
        for est in config["estimators"]:
            pts = [(r["n"], r["rmse"]) for r in rows if r["estimator"] == est and r["rmse"] > 0]
            if len(pts) > 1:
                slope = -loglog_slope(*zip(*pts))
                print(f"{est:>9} rmse rate {slope:.6g}")
    if cfg["svg"]:
        lines_svg(cfg["svg"], rows)
    return EXIT_OK


def _mdp_from(cfg) -> TabularMDP:
    if cfg["spec"] is not None:
        return load_mdp(cfg["spec"])
    try:
        nS, nA = (int(v) for v in cfg["random"])
    except (TypeError, ValueError):
        raise InvalidParameter("random must be nS,nA") from None
    return random_mdp(nS, nA, float(cfg["gamma"]), int(cfg["seed"]))


def _all_triples(mdp) -> np.ndarray:
    return np.argwhere(mdp.joint > 0)


def cmd_mdp(cfg) -> int:
    eps = check_eps(cfg["eps"])
    mdp = _mdp_from(cfg)
    cons = load_constraints(cfg["constraints"], mdp) if cfg["constraints"] is not None else None
    if cfg["triples"] is not None:
        triples = read_triples_csv(cfg["triples"])
    elif int(cfg["n_triples"]) > 0:
        triples = sample_triples(mdp, int(cfg["n_triples"]), int(cfg["seed"]))
    else:
        triples = None

    report = {"schema_version": SCHEMA_VERSION, "eps": eps}
    if triples is not None and cfg["estimate"]:
        rep = one_step_policy_value(mdp, triples, eps, cons, True, int(cfg["threads"]))
        report["one_step"] = rep.to_dict()
        print(rep.summary())

    sol = solve_policy_lp(mdp, cons)
    if sol.degenerate and cfg["strict_nondegenerate"]:
        raise DegenerateBasis("optimal basis is degenerate")
    report["solution"] = sol.to_dict()
    points = _all_triples(mdp) if triples is None else np.asarray(triples, dtype=int)
    closed = envelope_influence if cons is not None else mdp_influence
    derivs = []
    worst = 0.0
    for o in points:
        fd = fd_derivative(mdp, o, eps, cons, sol)
        item = {"triple": [int(v) for v in o], "fd": fd.value, "basis_stable": fd.basis_stable}
        if cfg["validate"]:
            item["closed_form"] = closed(sol, mdp, o)
            worst = max(worst, abs(fd.value - item["closed_form"]))
        derivs.append(item)
    report["derivatives"] = derivs
    report["basis_changes"] = [i for i, d in enumerate(derivs) if not d["basis_stable"]]
    print(f"objective={sol.objective:.6g} states={mdp.nS} actions={mdp.nA} triples={len(derivs)}")
    if cfg["validate"]:
        report["max_abs_error_vs_closed_form"] = worst
        print(f"max |fd - closed_form| = {worst:.6g}")
    _emit(cfg, report)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "dtr": cmd_dtr,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "mdp": cmd_mdp,
}


def _setup_logging() -> None:
    level = os.environ.get("GATEAUX_LOG", "error").strip().upper()
    if level not in ("ERROR", "INFO", "DEBUG", "WARNING"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    dump = args.pop("dump_config", False)
    cfg_path = args.pop("config", None)
    try:
        file_cfg = load_config(cfg_path) if cfg_path else {}
        cfg = merge_config(command, file_cfg, args)
        if dump:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        return COMMANDS[command](cfg)
    except (ConfigError, InvalidParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InfeasibleError, UnboundedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DegenerateBasis as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except GateauxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
