"""Command-line front end.

Every subcommand prints one JSON document (or writes it to ``--out``).
Settings come from built-in defaults, then an optional ``--config`` JSON
file, then flags.  Exit status: 0 when the command ran (an Inconclusive
verdict included), 2 for a configuration error, 3 for a numerical failure.
"""
import argparse
from dataclasses import dataclass, field
import json
import math
import os
import sys

import numpy as np

from . import closedform, generators, iterate, verify
from .errors import (DivergingMomentError, DomainError, ImportanceDegeneracyError, InvalidArgument,
                     NonConvergenceError)
from .paths import Barrier, build_grid, sample_first_passage, simulate_ensemble, write_paths_csv
from .regression import RegressionEngine

SEED_ENV = "BSDEMEASURE_SEED"

_COMMON = {"seed": None, "threads": None, "out": None}
DEFAULTS = {
    "simulate": {"n_paths": 1000, "n_steps": 100, "horizon": 1.0, "csv": None, "gzip": False},
    "scenario": {"a": None, "b": None, "n_paths": 100_000, "dt": 1e-2},
    "laplace": {"b": None, "lam": None, "level": 1.0, "n_paths": 100_000, "dt": 1e-2, "horizon": None},
    "verify": {"family": "first", "a": 1.0, "b": 3.0, "c": 0.5, "d": 0.0, "k": 1.0, "alpha": 0.5,
               "n_paths": 100_000, "n_steps": 200, "dt": 1e-2, "levels": None,
               "bridge_correction": True, "csv": None},
    "iterate": {"n_paths": 20_000, "n_steps": 50, "basis_degree": 4, "ridge": 1e-8, "max_iter": 20,
                "tol": 1e-3, "beta": 1.0, "p": 2.0, "generator": "quadratic", "alpha": 0.25,
                "bound": 1.0, "terminal": "tanh", "endpoint_feature": True, "trace": None,
                "csv": None, "min_ess": 0.05},
    "constants": {"kappa": None, "bmo": None, "gamma": None, "alpha_H3": None, "delta_H3": None},
    "continuum": {"a": 0.5, "c": 0.5, "d": 0.0, "n_paths": 100_000, "dt": 1e-2},
}


@dataclass
class RunConfig:
    """Validated settings of one command; unknown keys are rejected."""

    command: str
    values: dict = field(default_factory=dict)

    @classmethod
    def build(cls, command, file_values=None, flag_values=None):
        if command not in DEFAULTS:
            raise InvalidArgument(f"unknown command {command!r}")
        allowed = {**_COMMON, **DEFAULTS[command]}
        merged = dict(allowed)
        for source in (file_values or {}, flag_values or {}):
            unknown = set(source) - set(allowed)
            if unknown:
                raise InvalidArgument(f"unknown keys for {command}: {sorted(unknown)}")
            merged.update({k: v for k, v in source.items() if v is not None})
        if merged["seed"] is None:
            env = os.environ.get(SEED_ENV)
            try:
                merged["seed"] = int(env) if env else 0
            except ValueError:
                raise InvalidArgument(f"{SEED_ENV} must be an integer, got {env!r}") from None
        if merged["threads"] is None:
            merged["threads"] = os.cpu_count() or 1
        cfg = cls(command, merged)
        cfg._validate()
        return cfg

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def _validate(self):
        v = self.values
        if int(v["seed"]) < 0:
            raise InvalidArgument("seed must be nonnegative")
        if int(v["threads"]) < 1:
            raise InvalidArgument("threads must be at least 1")
        for key in ("n_paths", "n_steps", "max_iter", "basis_degree"):
            if key in v and (int(v[key]) != v[key] or v[key] < (0 if key == "basis_degree" else 1)):
                raise InvalidArgument(f"{key} must be a positive integer")
        for key in ("horizon", "dt", "tol"):
            if v.get(key) is not None and not v[key] > 0:
                raise InvalidArgument(f"{key} must be positive")
        for key in ("a", "b") if self.command in ("scenario",) else ():
            if v[key] is None:
                raise InvalidArgument(f"--{key} is required")
            if not v[key] > 0:
                raise InvalidArgument(f"{key} must be positive (got {v[key]})")


def _emit(payload, out):
    text = json.dumps(payload, indent=2, allow_nan=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _passage(barriers, gains, cfg, reference):
    report, sample, _ = verify.hitting_measure_report(barriers, gains, int(cfg.n_paths), int(cfg.seed),
                                                      dt=float(cfg.dt), closed_form_reference=reference,
                                                      n_threads=int(cfg.threads))
    return report, sample


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg):
    grid = build_grid(float(cfg.horizon), int(cfg.n_steps))
    ens = simulate_ensemble(grid, int(cfg.n_paths), int(cfg.seed), n_threads=int(cfg.threads))
    if cfg.csv:
        write_paths_csv(ens, cfg.csv, compress=bool(cfg.gzip) or str(cfg.csv).endswith(".gz"))
    wT = ens.terminal()
    return {"n_paths": ens.n_paths, "n_steps": grid.n_steps, "horizon": grid.horizon, "seed": ens.seed,
            "terminal_mean": float(wT.mean()), "terminal_variance": float(wT.var(ddof=1)) if wT.size > 1 else 0.0,
            "csv": cfg.csv}


def cmd_scenario(cfg):
    a, b = float(cfg.a), float(cfg.b)
    rep = closedform.scenario_report(a, b)
    out = rep.to_dict()
    gains = [("first", 2.0 * a, closedform.first_solution_measure_value(a, b))]
    if rep.n_solutions == 2:
        g2 = 2.0 * (b - a) if 2 * a > b else 2.0 * a
        gains.append(("second", g2, closedform.second_solution_measure_value(a, b)))
    solutions = []
    for label, gain, ref in gains:
        # V = exp(Z W - Z^2 t / 2) uses the half-gain of Y's integrand for the z^2/2 generator
        report, _ = _passage(Barrier.tau_b(b), gain / 2.0, cfg, ref)
        solutions.append({"label": label, "z": gain, "report": report.to_dict()})
    out["solutions"] = solutions
    # the first solution's density is exp(a W_tau - a^2 tau / 2) with W_tau = b tau - 1,
    # so its mean is exp(-a) E exp(a (b - a/2) tau): a Laplace transform at -a (b - a/2)
    lam = -a * (b - 0.5 * a)
    ref = closedform.first_solution_measure_value(a, b)
    via_laplace = math.exp(-a) * closedform.laplace_tau(b, lam)
    out["laplace_check"] = {"lambda": lam, "via_laplace": via_laplace, "closed_form": ref,
                            "consistent": bool(math.isclose(via_laplace, ref, rel_tol=1e-12))}
    return out


def cmd_laplace(cfg):
    if cfg.b is None or cfg.lam is None:
        raise InvalidArgument("--b and --lam are required")
    b, lam, level = float(cfg.b), float(cfg.lam), float(cfg.level)
    exact = closedform.laplace_tau(b, lam, level)
    horizon = cfg.horizon
    if horizon is None:
        horizon = max(30.0 / b, 20.0 * level / b)
    sample = sample_first_passage(Barrier(b, -level), int(cfg.n_paths), int(cfg.seed), float(cfg.dt),
                                  float(horizon), n_threads=int(cfg.threads))
    tau = sample.tau[:, 0]
    vals = np.where(np.isnan(tau), 0.0, np.exp(-lam * np.nan_to_num(tau)))
    trunc = float(np.mean(np.isnan(tau)))
    # paths still running at the horizon could add at most exp(-lam H) each
    tail = trunc * math.exp(-lam * float(horizon)) if lam >= 0 else math.inf
    return {"b": b, "lam": lam, "level": level, "closed_form": exact, "estimate": float(vals.mean()),
            "std_error": float(vals.std(ddof=1) / math.sqrt(vals.size)), "truncated_fraction": trunc,
            "tail_bound": tail, "n_paths": int(vals.size)}


def cmd_verify(cfg):
    fam = cfg.family
    levels = cfg.levels
    if fam in ("first", "second"):
        a, b = float(cfg.a), float(cfg.b)
        if fam == "first":
            gain, ref = 2.0 * a, closedform.first_solution_measure_value(a, b)
        else:
            gain = 2.0 * (b - a) if 2 * a > b else 2.0 * a
            ref = closedform.second_solution_measure_value(a, b)
        report, _, _ = verify.hitting_measure_report(Barrier.tau_b(b), gain / 2.0, int(cfg.n_paths),
                                                     int(cfg.seed), dt=float(cfg.dt),
                                                     closed_form_reference=ref, levels=levels,
                                                     n_threads=int(cfg.threads))
        return report.to_dict()
    if fam == "mixed":
        a, c = float(cfg.a), float(cfg.c)
        v1, v2 = closedform.mixed_measure_values(a, c)
        report, _, _ = verify.hitting_measure_report([Barrier.rho_c(c), Barrier.rho_c(1.0)], [a, 1.0 - a],
                                                     int(cfg.n_paths), int(cfg.seed), dt=float(cfg.dt),
                                                     closed_form_reference=v1 * v2,
                                                     n_threads=int(cfg.threads))
        return report.to_dict()
    if fam == "square":
        k = math.inf if float(cfg.k) == math.inf else int(cfg.k)
        grid = build_grid(1.0, int(cfg.n_steps))
        ens = simulate_ensemble(grid, int(cfg.n_paths), int(cfg.seed), n_threads=int(cfg.threads))
        sol = closedform.square_endpoint_solution(k, ens)
        weight = verify.girsanov_weight(sol, generators.Quadratic(0.5))
        report = verify.martingale_expectation(weight, levels=levels)
        if cfg.csv:
            closedform.write_solution_csv(sol, cfg.csv)
        return report.to_dict()
    raise InvalidArgument(f"unknown family {fam!r}; use first, second, mixed or square")


def _terminal(name):
    table = {"W": closedform.EndpointFunctional(lambda w: w),
             "tanh": closedform.EndpointFunctional(np.tanh),
             "square": closedform.SquareEndpoint(1),
             "zero": closedform.EndpointFunctional(np.zeros_like)}
    if name not in table:
        raise InvalidArgument(f"unknown terminal {name!r}; use one of {sorted(table)}")
    return table[name]


def _generator(cfg):
    if cfg.generator == "quadratic":
        return generators.Quadratic(float(cfg.alpha))
    if cfg.generator == "linear":
        return generators.LinearBounded(float(cfg.alpha), float(cfg.bound))
    if cfg.generator == "zero":
        return generators.LinearBounded(0.0, 0.0)
    raise InvalidArgument(f"unknown generator {cfg.generator!r}; use quadratic, linear or zero")


def cmd_iterate(cfg):
    spec = _generator(cfg)
    term = _terminal(cfg.terminal)
    grid = build_grid(1.0, int(cfg.n_steps))
    ens = simulate_ensemble(grid, int(cfg.n_paths), int(cfg.seed), n_threads=int(cfg.threads))
    engine = RegressionEngine(degree=int(cfg.basis_degree), ridge=float(cfg.ridge))
    diag = iterate.DiagnosticsConfig(beta=float(cfg.beta), p=float(cfg.p))
    try:
        res = iterate.iterate_measure_solution(term, spec, ens, engine, int(cfg.max_iter), float(cfg.tol),
                                               diag, min_ess_fraction=float(cfg.min_ess),
                                               endpoint_feature=bool(cfg.endpoint_feature))
    except (ImportanceDegeneracyError, NonConvergenceError) as exc:
        if cfg.trace:
            iterate.write_trace_csv(exc.trace, cfg.trace)
        raise
    if cfg.trace:
        iterate.write_trace_csv(res.history, cfg.trace)
    if cfg.csv:
        closedform.write_solution_csv(res.solution, cfg.csv)
    st = res.state
    return {"converged": res.converged, "iterations": st.n, "Y0": st.Y0, "Y0_std_error": st.Y0_se,
            "dist_L2": st.dist_L2, "ess": st.ess, "trace": [h.row() for h in res.history],
            "report": res.report.to_dict()}


def cmd_constants(cfg):
    if cfg.kappa is None and cfg.bmo is None:
        raise InvalidArgument("constants needs --kappa or --bmo")
    rep = generators.constants_report(cfg.kappa, cfg.bmo, cfg.gamma, cfg.alpha_H3, cfg.delta_H3)
    return rep.to_dict()


def cmd_continuum(cfg):
    a, c, d = float(cfg.a), float(cfg.c), float(cfg.d)
    if not 0 < c < 1:
        raise InvalidArgument("c must lie in (0, 1)")
    v1, v2 = closedform.mixed_measure_values(a, c)
    report, _, _ = verify.hitting_measure_report([Barrier.rho_c(c), Barrier.rho_c(1.0)], [a, 1.0 - a],
                                                 int(cfg.n_paths), int(cfg.seed), dt=float(cfg.dt),
                                                 closed_form_reference=v1 * v2, n_threads=int(cfg.threads))
    y0 = d + 2 * a * c + 2 * (1 - a) * (1 - c)
    return {"a": a, "c": c, "d": d, "Y0": y0, "segment_measure_values": [v1, v2],
            "measure_solution": bool(v1 * v2 == 1.0), "report": report.to_dict()}


COMMANDS = {"simulate": cmd_simulate, "scenario": cmd_scenario, "laplace": cmd_laplace,
            "verify": cmd_verify, "iterate": cmd_iterate, "constants": cmd_constants,
            "continuum": cmd_continuum}


# ---------------------------------------------------------------- parsing

def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _levels(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _kappa(text):
    return math.inf if text in ("inf", "infinity") else float(text)


def build_parser():
    p = argparse.ArgumentParser(prog="bsdemeasure", description="Measure solutions of quadratic BSDEs")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        sp.add_argument("--seed", type=int, help=f"RNG seed (default ${SEED_ENV} or 0)")
        sp.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        sp.add_argument("--config", help="JSON file with settings for this command")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        return sp

    sp = add("simulate", "simulate Brownian paths, optionally exporting CSV")
    sp.add_argument("--n-paths", dest="n_paths", type=int)
    sp.add_argument("--n-steps", dest="n_steps", type=int)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--csv", help="path CSV (path_id,t,W); .gz compresses")
    sp.add_argument("--gzip", action="store_true")

    sp = add("scenario", "run both hitting-time solutions for (a, b) and classify")
    sp.add_argument("--a", type=float)
    sp.add_argument("--b", type=float)
    sp.add_argument("--n-paths", dest="n_paths", type=int)
    sp.add_argument("--dt", type=float)

    sp = add("laplace", "Laplace transform of the first passage below b t - level")
    sp.add_argument("--b", type=float)
    sp.add_argument("--lam", type=float)
    sp.add_argument("--level", type=float)
    sp.add_argument("--n-paths", dest="n_paths", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--horizon", type=float)

    sp = add("verify", "martingale check of a closed-form candidate solution")
    sp.add_argument("--family", choices=["first", "second", "mixed", "square"])
    for name in ("a", "b", "c", "d", "alpha"):
        sp.add_argument(f"--{name}", type=float)
    sp.add_argument("--k", type=_kappa, help="square-endpoint index (integer or inf)")
    sp.add_argument("--n-paths", dest="n_paths", type=int)
    sp.add_argument("--n-steps", dest="n_steps", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--levels", type=_levels, help="comma-separated explosion levels")
    sp.add_argument("--bridge-correction", dest="bridge_correction", type=_bool)
    sp.add_argument("--csv", help="solution CSV (path_id,t,Y,Z)")

    sp = add("iterate", "construct a measure solution by iterated re-weighting")
    sp.add_argument("--n-paths", dest="n_paths", type=int)
    sp.add_argument("--n-steps", dest="n_steps", type=int)
    sp.add_argument("--basis-degree", dest="basis_degree", type=int)
    sp.add_argument("--ridge", type=float)
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--p", type=float)
    sp.add_argument("--generator", choices=["quadratic", "linear", "zero"])
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--bound", type=float)
    sp.add_argument("--terminal", choices=["W", "tanh", "square", "zero"])
    sp.add_argument("--endpoint-feature", dest="endpoint_feature", type=_bool)
    sp.add_argument("--min-ess", dest="min_ess", type=float)
    sp.add_argument("--trace", help="trace CSV (n,dist_L2,ess,Y0,sup_weighted_Y,weighted_Z_L2)")
    sp.add_argument("--csv", help="solution CSV (path_id,t,Y,Z)")

    sp = add("constants", "constants of the convergence analysis")
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--bmo", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--alpha-h3", dest="alpha_H3", type=float)
    sp.add_argument("--delta-h3", dest="delta_H3", type=float)

    sp = add("continuum", "switched solution family between two barriers")
    for name in ("a", "c", "d"):
        sp.add_argument(f"--{name}", type=float)
    sp.add_argument("--n-paths", dest="n_paths", type=int)
    sp.add_argument("--dt", type=float)
    return p


def main(argv=None):
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        file_values = {}
        if config_path:
            with open(config_path) as fh:
                file_values = json.load(fh)
            if not isinstance(file_values, dict):
                raise InvalidArgument("the config file must hold a JSON object")
        cfg = RunConfig.build(command, file_values, args)
        payload = COMMANDS[command](cfg)
    except (InvalidArgument, DomainError, OSError, json.JSONDecodeError) as exc:
        print(f"bsdemeasure: error: {exc}", file=sys.stderr)
        return 2
    except (DivergingMomentError, ImportanceDegeneracyError, NonConvergenceError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"bsdemeasure: numerical failure: {exc}", file=sys.stderr)
        return 3
    _emit(payload, cfg.out)
    return 0
