"""``cfbench`` command line.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, classical, plots
from .anova import run_anova
from .errors import CfBenchError, ConfigError, ValidationError
from .evaluation import VARIABLES, ResultsTable, build_results_table
from .experiment import (DATA_DRIVEN, ExperimentConfig, SyntheticSpec, canonical_model, evaluate_artifact,
                         run_cell, run_grid)
from .trajectory import save_csv

log = logging.getLogger("cfbench")

CONFIG_HELP = """\
experiment config keys (JSON):
  datasets[]                list of {name, csv | synthetic}
    .name                   label used in results tables
    .csv                    path to a trajectory CSV (relative to the config file)
    .column_map             role -> column name; roles t [s], x_leader [m], v_leader [m/s],
                            x_follower [m], v_follower [m/s], a_follower [m/s^2], leader_length [m]
    .leader_length          leader length [m] when the CSV has no such column
    .dt                     expected sample period [s]; inferred when omitted
    .synthetic.model        generating model (IDM, Gipps, FVDM-CTH, FVDM-SIGMOID)
    .synthetic.preset       named parameter set, "example"
    .synthetic.params       explicit model parameters (SI units) instead of a preset
    .synthetic.leader       {base_speed [m/s], amplitude [m/s], omega [rad/s], breakpoints [[t s, v m/s], ...]}
                            default {7, 2, 0.3}
    .synthetic.initial_gap  initial net spacing [m]
    .synthetic.duration     trajectory length [s]
    .synthetic.dt           sample period [s]
    .synthetic.noise_std    follower speed-increment noise std [m/s]
    .synthetic.measurement_std  noise std on the recorded follower speed [m/s]
    .synthetic.seed         noise seed [integer]
    .synthetic.leader_length  leader length [m]
    .synthetic.initial_speed  follower start speed [m/s]; leader speed when omitted
  models                    subset of IDM, Gipps, FVDM-CTH, FVDM-SIGMOID, GP, KRR, LSTM
  targets                   subset of a, v, s
  split.train_fraction      leading fraction used for fitting [0-1]
  master_seed               integer; per-cell seeds are hashed from it
  workers                   concurrent cells [count]
  ga.population_size        individuals [count]
  ga.generations            generation budget [count]
  ga.crossover_rate         BLX-alpha crossover probability [0-1]
  ga.mutation_rate          per-gene Gaussian mutation probability [0-1]
  ga.elitism                individuals copied unchanged [count]
  ga.stall_generations      stop after this many generations without improvement [count]
  ga.polish_evals           Nelder-Mead evaluations refining the GA optimum; 0 disables [count]
  ga.seed                   ignored in grids (replaced by the cell seed) [integer]
  bounds.<model>.<param>    [lower, upper] search box in the parameter's SI unit
                            (a_max, b, b_hat [m/s^2]; V_max [m/s]; s0 [m]; T, tau, theta [s];
                            delta [-]; K1, K2 [1/s])
  gp.kernels                kernel kinds tried (RBF, Exponential, RationalQuadratic, MLP, Matern32, Matern52)
  gp.restarts               L-BFGS-B restarts per kernel [count]
  gp.max_iter               L-BFGS-B iterations per restart [count]
  gp.max_train_points       evenly thinned training set size [count]
  gp.ard                    one lengthscale per feature [bool]
  krr.kernels               kernel kinds in the grid
  krr.lambdas               ridge values [standardised target units^2]
  krr.lengthscales          lengthscale grid [standardised feature units]
  krr.k_folds               contiguous CV folds [count]
  krr.max_train_points      evenly thinned training set size [count]
  lstm.layers / lstm.hidden stacked layers / units per layer [count]
  lstm.window               input window [steps]
  lstm.epochs               SGD epochs [count]
  lstm.learning_rate        SGD step size [-]
  lstm.batch_size           minibatch size [count]
  lstm.clip_norm            global gradient-norm clip [-]
  lstm.seed                 ignored in grids (replaced by the cell seed) [integer]

environment:
  CF_BENCH_WORKERS          fallback for --workers

exit codes: 0 success, 1 invalid input/config, 2 runtime failure
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _workers(args, config: ExperimentConfig) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("CF_BENCH_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"CF_BENCH_WORKERS must be an integer, got {env!r}", key="CF_BENCH_WORKERS") from None
    return config.workers


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(config, master_seed=args.seed)
    return config


def _print_rows(rows) -> None:
    for r in rows:
        flags = "".join([" diverged" if r.diverged else "", " collision" if r.collision else ""])
        print(f"{r.dataset}\t{r.model}\ttarget={r.target}\tRMSE({r.predicted_variable})={r.rmse:.6g}{flags}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}", key="--config") from None
        unknown = set(raw) - set(SyntheticSpec.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic keys {sorted(unknown)}", key=sorted(unknown)[0])
        spec = SyntheticSpec(**raw)
    else:
        spec = SyntheticSpec(model=args.model, preset=args.preset, duration=args.duration, dt=args.dt,
                             noise_std=args.noise, measurement_std=args.measurement_noise,
                             initial_gap=args.initial_gap,
                             leader={"base_speed": args.leader_speed, "amplitude": args.leader_amplitude,
                                     "omega": args.leader_omega})
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    canonical_model(spec.model)
    traj = spec.build()
    save_csv(traj, args.out)
    print(f"wrote {len(traj)} samples to {args.out}")
    return 0


def _single_cell(args, want_classical: bool) -> int:
    config = _load_config(args)
    model = canonical_model(args.model)
    if classical.is_classical(model) != want_classical:
        kind = "classical" if want_classical else f"data-driven ({', '.join(DATA_DRIVEN)})"
        raise ConfigError(f"--model {args.model} is not a {kind} model", key="--model")
    if args.target not in VARIABLES:
        raise ConfigError(f"--target must be one of {VARIABLES}", key="--target")
    config.dataset(args.dataset)
    outcome = run_cell(config, (args.dataset, model, args.target), args.out)
    build_results_table([outcome]).to_csv(Path(args.out) / "cell_results.csv")
    _print_rows(outcome.rows)
    print(f"artifacts: {Path(args.out) / outcome.artifact}")
    return 0


def cmd_calibrate(args) -> int:
    return _single_cell(args, True)


def cmd_train(args) -> int:
    return _single_cell(args, False)


def cmd_evaluate(args) -> int:
    config = ExperimentConfig.load(args.config)
    score, sim, info = evaluate_artifact(config, args.cell)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim.to_csv(out / "rollout.csv")
    result = {"dataset": info["dataset"], "model": info["model"], "target": info["target"],
              "rmse": {v: score[v] for v in VARIABLES}, "steps": score.steps,
              "diverged": score.diverged, "collision": score.collision}
    (out / "evaluation.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for v in VARIABLES:
        print(f"RMSE({v}) = {score[v]:.6g}")
    return 0


def cmd_grid(args) -> int:
    config = _load_config(args)
    table, manifest = run_grid(config, args.out, workers=_workers(args, config))
    failed = [c for c in manifest["cells"] if c["error"]]
    print(f"{len(table)} rows written to {Path(args.out) / 'results.csv'}; {len(failed)} failed cell(s)")
    for c in failed:
        print(f"  failed {c['dataset']}/{c['model']}/{c['target']}: {c['error']}")
    return 0


def cmd_anova(args) -> int:
    results = ResultsTable.from_csv(args.results)
    out = Path(args.out) if args.out else Path(args.results).parent
    dependents = [args.dependent] if args.dependent else [f"rmse_{v}" for v in VARIABLES]
    for dep in dependents:
        table = run_anova(results, dep, interaction=args.interaction, log=args.log,
                          exclude_diverged=args.exclude_diverged)
        stem = f"anova_{dep.lower().replace('(', '_').replace(')', '')}"
        if args.interaction:
            stem += "_" + args.interaction.replace(",", "_").lower()
        table.to_csv(out / f"{stem}.csv")
        table.factor_tests_to_csv(out / f"{stem}_factors.csv")
        plots.pvalue_plot(table, out / f"{stem}.svg")
        n_sig = sum(t.significant for t in table.terms if t.label != "Intercept")
        print(f"{table.formula}: n={table.n_obs}, R^2={table.r_squared:.4f}, "
              f"{n_sig} significant term(s) -> {out / stem}.csv/.svg")
    return 0


def cmd_report(args) -> int:
    results = ResultsTable.from_csv(args.results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["RMSE", "log_RMSE", "variable", "Dataset", "Model", "Target", "diverged", "collision"])
        for r, lg in zip(results, results.log_rmse()):
            w.writerow([f"{r.rmse:.6g}", f"{lg:.6g}", r.predicted_variable, r.dataset, r.model, r.target,
                        int(r.diverged), int(r.collision)])
    n_svg = 0
    for ds in results.levels("Dataset"):
        for var in VARIABLES:
            rows = [r for r in results.select(var) if r.dataset == ds]
            if not rows:
                continue
            values = [math.log(r.rmse) if r.rmse > 0 else float("nan") for r in rows]
            plots.bar_chart([f"{r.model}/{r.target}" for r in rows], values,
                            out / f"log_rmse_{ds}_{var}.svg", title=f"{ds}: log RMSE({var})",
                            ylabel=f"log RMSE({var})")
            n_svg += 1
    if args.run:
        run = Path(args.run)
        manifest_path = run / "manifest.json"
        if not manifest_path.exists():
            raise ValidationError(f"{run} has no manifest.json")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        fitted = []
        for cell in manifest["cells"]:
            entry = {k: cell[k] for k in ("dataset", "model", "target", "seed", "error")}
            if cell.get("artifact"):
                info = json.loads((run / cell["artifact"] / "cell.json").read_text(encoding="utf-8"))
                entry["fitted"] = info["fitted"]
            fitted.append(entry)
        (out / "hyperparameters.json").write_text(json.dumps(fitted, indent=1, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    print(f"report.csv and {n_svg} SVG chart(s) written to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfbench", description="Car-following model benchmark: classical models vs GP, KRR and LSTM.",
                epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"cfbench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, epilog=CONFIG_HELP,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    s = add("synth", "write a synthetic leader/follower trajectory CSV")
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--config", help="JSON object with synthetic-dataset keys (overrides the flags below)")
    s.add_argument("--model", default="IDM", help="generating model (default IDM)")
    s.add_argument("--preset", default="example", help="parameter preset (default example)")
    s.add_argument("--seed", type=int, default=None, help="noise seed")
    s.add_argument("--duration", type=float, default=60.0, help="length [s] (default 60)")
    s.add_argument("--dt", type=float, default=0.1, help="sample period [s] (default 0.1)")
    s.add_argument("--noise", type=float, default=0.0, help="speed-increment noise std [m/s] (default 0)")
    s.add_argument("--measurement-noise", type=float, default=0.0,
                   help="noise std on the recorded follower speed [m/s] (default 0)")
    s.add_argument("--initial-gap", type=float, default=20.0, help="initial spacing [m] (default 20)")
    s.add_argument("--leader-speed", type=float, default=7.0, help="leader base speed [m/s] (default 7)")
    s.add_argument("--leader-amplitude", type=float, default=2.0, help="leader speed oscillation [m/s] (default 2)")
    s.add_argument("--leader-omega", type=float, default=0.3, help="oscillation frequency [rad/s] (default 0.3)")
    s.set_defaults(func=cmd_synth)

    for name, func, text in (("calibrate", cmd_calibrate, "GA-calibrate one classical model cell"),
                             ("train", cmd_train, "train one data-driven model cell (GP, KRR, LSTM)")):
        c = add(name, text)
        c.add_argument("--config", required=True, help="experiment JSON config")
        c.add_argument("--dataset", required=True, help="dataset name from the config")
        c.add_argument("--model", required=True, help="model name")
        c.add_argument("--target", required=True, choices=VARIABLES, help="calibration/training target")
        c.add_argument("--out", required=True, help="output directory")
        c.add_argument("--seed", type=int, default=None, help="override master_seed")
        c.set_defaults(func=func)

    e = add("evaluate", "re-run the test-segment rollout of a saved cell artifact")
    e.add_argument("--config", required=True, help="experiment JSON config the artifact came from")
    e.add_argument("--cell", required=True, help="artifact directory (contains cell.json)")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    g = add("grid", "run the full dataset x model x target grid")
    g.add_argument("--config", required=True, help="experiment JSON config")
    g.add_argument("--out", required=True, help="run directory")
    g.add_argument("--seed", type=int, default=None, help="override master_seed")
    g.add_argument("--workers", type=int, default=None, help="concurrent cells (fallback: CF_BENCH_WORKERS)")
    g.set_defaults(func=cmd_grid)

    a = add("anova", "treatment-coded ANOVA tables and p-value SVGs")
    a.add_argument("--results", required=True, help="results.csv from a grid run")
    a.add_argument("--dependent", default=None, help="rmse_a, rmse_v or rmse_s (default: all three)")
    a.add_argument("--interaction", default=None, help="factor pair, e.g. model,target")
    a.add_argument("--out", default=None, help="output directory (default: next to --results)")
    a.add_argument("--log", action="store_true", help="analyse log RMSE")
    a.add_argument("--exclude-diverged", action="store_true", help="drop diverged/collided cells")
    a.set_defaults(func=cmd_anova)

    r = add("report", "results table with log RMSE plus bar-chart SVGs")
    r.add_argument("--results", required=True, help="results.csv from a grid run")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--run", default=None, help="run directory; adds fitted hyperparameters to the report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CfBenchError, ArithmeticError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
