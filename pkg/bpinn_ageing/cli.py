"""This module defines functions and globals required for the
command line interface of bpinn-ageing."""

import argparse
import logging
import sys
from argparse import RawDescriptionHelpFormatter
from pathlib import Path

import numpy as np
from dateutil.parser import isoparse

from bpinn_ageing import (
    __version__,
    bayes,
    config as config_,
    data,
    diffcore,
    errors,
    generic,
    metrics,
    net,
    physics,
    plotting,
    refsolver,
    sweep,
    thermal,
    train,
    uq,
    utils,
)

# get list of all implemented variants by finding subclasses of generic.Variant
AVAILABLE_VARIANTS = ", ".join(v.name.replace("_", "-") for v in utils.get_variants())
AVAILABLE_FORMATS = ", ".join(generic.Outputs("prediction").format_map.keys())
USAGE_EXIT = 1


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", default=None, help="YAML configuration file.")
    common.add_argument(
        "-s",
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one configuration key, e.g. train.lr=0.005. May be repeated.",
    )
    common.add_argument("--seed", type=int, default=None, help="Base random seed.")
    common.add_argument(
        "-d", "--output-dir", default=None, help="Directory artifacts are written to."
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log warnings.")
    verbosity.add_argument("--verbose", action="store_true", help="Log debug messages.")
    return common


def make_parser():
    """Creates an ArgumentParser, configures and returns it.

    This was made into a separate function to be used with sphinx-argparse

    :rtype: :py:class:`argparse.ArgumentParser`
    """
    parser_ = ArgumentParser(
        prog="bpinn-ageing",
        description="""
                    Bayesian physics-informed neural networks for transformer
                    oil temperature, with epistemic and aleatoric uncertainty
                    carried through to insulation ageing.
                    """,
        epilog=f"Variants: {AVAILABLE_VARIANTS}. Exit codes: 0 ok, 1 usage, "
        "2 I/O, 3 divergence, 4 validation.",
        formatter_class=RawDescriptionHelpFormatter,
    )
    parser_.add_argument(
        "-v", "--version", action="version", version="%(prog)s " + __version__
    )
    common = _common_options()
    commands = parser_.add_subparsers(
        dest="command", metavar="COMMAND", parser_class=ArgumentParser
    )
    commands.required = True

    synth = commands.add_parser(
        "synth-data", parents=[common], help="Write a synthetic operating series."
    )
    synth.add_argument("--days", type=int, default=None, help="Number of days.")
    synth.add_argument(
        "-o", "--output", default=None, help="Series file. Default: OUTPUT_DIR/series.csv"
    )

    solve = commands.add_parser(
        "solve-ref", parents=[common], help="Solve the reference temperature field."
    )
    solve.add_argument("-i", "--input", default=None, help="Series CSV; synthetic if omitted.")

    train_ = commands.add_parser("train", parents=[common], help="Train one variant.")
    train_.add_argument("-i", "--input", default=None, help="Series CSV; synthetic if omitted.")
    train_.add_argument(
        "--variant", default=None, help=f"One of {AVAILABLE_VARIANTS}. Default: train.variant"
    )
    train_.add_argument("--epochs", type=int, default=None, help="Maximum epochs.")

    predict = commands.add_parser(
        "predict", parents=[common], help="Predictive mean and variances on a grid."
    )
    predict.add_argument("--checkpoint", required=True, help="Checkpoint JSON file.")
    predict.add_argument(
        "--grid", default=None, help="Field grid CSV whose nodes are predicted."
    )
    predict.add_argument("--samples", type=int, default=None, help="Ensemble size K.")
    predict.add_argument(
        "-f",
        "--format",
        default="infer",
        help=f"""
            Format to be used in output. Should be one of {AVAILABLE_FORMATS}.
            Default is infer (format is inferred from the output file's
            extension. If no output file (-o) is specified, it defaults to csv)""",
    )
    predict.add_argument(
        "-o",
        "--output",
        default=None,
        help="Output file. If not provided, standard output is used.",
    )

    evaluate = commands.add_parser(
        "evaluate", parents=[common], help="Score a checkpoint against a truth grid."
    )
    evaluate.add_argument("--checkpoint", required=True, help="Checkpoint JSON file.")
    evaluate.add_argument("--truth", required=True, help="Truth field grid CSV.")
    evaluate.add_argument(
        "--instants", type=float, nargs="*", default=None, help="Prediction instants [h]."
    )
    evaluate.add_argument("--samples", type=int, default=None, help="Ensemble size K.")

    age = commands.add_parser(
        "age", parents=[common], help="Propagate the prediction through insulation ageing."
    )
    age.add_argument("--checkpoint", required=True, help="Checkpoint JSON file.")
    age.add_argument("-i", "--input", default=None, help="Series CSV; synthetic if omitted.")

    sweep_ = commands.add_parser(
        "sweep", parents=[common], help="Sensitivity sweep over the sample counts."
    )
    sweep_.add_argument("-i", "--input", default=None, help="Series CSV; synthetic if omitted.")
    sweep_.add_argument("--variant", default=None, help=f"One of {AVAILABLE_VARIANTS}.")
    sweep_.add_argument("--epochs", type=int, default=None, help="Maximum epochs per run.")
    sweep_.add_argument("--scale", type=int, default=None, help="Divide every count by SCALE.")
    sweep_.add_argument("--repetitions", type=int, default=None, help="Runs per cell.")
    sweep_.add_argument("-j", "--jobs", type=int, default=None, help="Parallel workers.")

    commands.add_parser(
        "check", parents=[common], help="Gradient, derivative and solver self-tests."
    )
    return parser_


parser = make_parser()


def _resolve_config(args) -> config_.RunConfig:
    cfg = config_.RunConfig.from_file(args.config) if args.config else config_.RunConfig()
    for assignment in args.set:
        cfg.set_from_string(assignment)
    flags = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "data.input": getattr(args, "input", None),
        "data.days": getattr(args, "days", None),
        "train.variant": getattr(args, "variant", None),
        "train.epochs": getattr(args, "epochs", None),
        "uq.samples": getattr(args, "samples", None),
        "sweep.scale": getattr(args, "scale", None),
        "sweep.repetitions": getattr(args, "repetitions", None),
        "sweep.jobs": getattr(args, "jobs", None),
    }
    for key, value in flags.items():
        if value is not None:
            cfg.set(key, value)
    if getattr(args, "instants", None) is not None:
        cfg.set("metrics.instants", args.instants)
    return cfg


def _output_dir(cfg) -> Path:
    directory = cfg.output_dir
    directory.mkdir(parents=True, exist_ok=True)
    cfg.save_snapshot(directory)
    return directory


def _series(cfg) -> data.OperatingSeries:
    if cfg["data.input"]:
        return data.impute(data.load_series(cfg["data.input"]))
    return data.synthesize(
        cfg["data.days"],
        cfg["seed"],
        noise=cfg["data.noise"],
        start=isoparse(cfg["data.start"]),
        coefficients=cfg.coefficients(),
    )


def _problem(cfg) -> physics.ThermalPdeSpec:
    return physics.ThermalPdeSpec.from_series(_series(cfg), **cfg.coefficients())


def _heatmap(cfg, grid, filename, title, label):
    if cfg["plots"]:
        plotting.heatmap(grid, filename, title, label)


def cmd_synth_data(cfg, args) -> int:
    series = _series(cfg)
    directory = _output_dir(cfg)
    data.write_series(series, args.output or directory / "series.csv")
    return 0


def cmd_solve_ref(cfg, args) -> int:
    spec = _problem(cfg)
    field = refsolver.solve(spec, cfg.grid_spec())
    directory = _output_dir(cfg)
    field.save(directory / "truth.csv")
    _heatmap(cfg, field, directory / "truth.svg", "reference oil temperature", "degC")
    return 0


def cmd_train(cfg, args) -> int:
    spec = _problem(cfg)
    plan = cfg.train_plan()
    result = train.fit(plan, spec, cfg.counts(), cfg["seed"])
    directory = _output_dir(cfg)
    result.checkpoint.save(directory / "checkpoint.json")
    log = generic.Outputs("train_log")
    log.rows = result.log.rows
    log.save(directory / "train_log.csv")
    utils.logger.info(
        "stopped on %s; best epoch %d", result.log.stop_reason, result.log.best_epoch
    )
    if result.diverged:
        utils.logger.error("training diverged: %s", result.divergence)
        return errors.DivergenceError.exit_code
    return 0


def _default_grid(checkpoint: net.Checkpoint, cfg) -> refsolver.FieldGrid:
    norm = checkpoint.normalization
    x = cfg.grid_spec().x_nodes(norm.x_scale)
    t = cfg.grid_spec().t_nodes(norm.t_scale)
    return refsolver.FieldGrid(x, t, np.zeros((t.size, x.size)))


def cmd_predict(cfg, args) -> int:
    checkpoint = net.Checkpoint.load(args.checkpoint)
    if args.grid:
        grid = refsolver.FieldGrid.load(args.grid)
    else:
        grid = _default_grid(checkpoint, cfg).strided(
            cfg["metrics.t_stride"], cfg["metrics.x_stride"]
        )
    pred = uq.predict_grid(
        checkpoint, grid, cfg["uq.samples"], cfg["seed"], cfg["uq.chunk_size"]
    )
    outputs = pred.flat().to_outputs()
    if args.output is None:
        print(outputs.formatted("csv" if args.format == "infer" else args.format))
        return 0
    directory = _output_dir(cfg)
    outputs.save(args.output, args.format)
    _heatmap(cfg, pred.field("mean"), directory / "prediction_mean.svg", "predictive mean", "degC")
    _heatmap(cfg, pred.field("total_var"), directory / "prediction_tu.svg", "total variance", "K^2")
    return 0


def _evaluation_grid(truth: refsolver.FieldGrid, cfg, instants) -> refsolver.FieldGrid:
    """Strided truth rows plus the rows nearest to each instant."""
    rows = set(range(0, truth.t.size, cfg["metrics.t_stride"])) | {truth.t.size - 1}
    for instant in instants:
        seconds = 3600.0 * instant
        if truth.t[0] <= seconds <= truth.t[-1]:
            rows.add(int(np.argmin(np.abs(truth.t - seconds))))
    rows = np.array(sorted(rows))
    cols = np.arange(0, truth.x.size, cfg["metrics.x_stride"])
    cols = np.unique(np.append(cols, truth.x.size - 1))
    return refsolver.FieldGrid(truth.x[cols], truth.t[rows], truth.values[np.ix_(rows, cols)])


def cmd_evaluate(cfg, args) -> int:
    checkpoint = net.Checkpoint.load(args.checkpoint)
    truth = refsolver.FieldGrid.load(args.truth)
    instants = cfg["metrics.instants"]
    grid = _evaluation_grid(truth, cfg, instants)
    pred = uq.predict_grid(
        checkpoint, grid, cfg["uq.samples"], cfg["seed"], cfg["uq.chunk_size"]
    )
    stochastic = utils.get_variant(checkpoint.variant).stochastic
    if not stochastic:
        utils.logger.info("%s is deterministic; NLL and CRPS are unavailable", checkpoint.variant)
    report = metrics.evaluate(checkpoint.variant, pred, grid, instants, probabilistic=stochastic)
    directory = _output_dir(cfg)
    (directory / "eval_report.json").write_text(report.to_json())
    report.instants_outputs().save(directory / "instants.csv")
    if report.reliability is not None:
        report.reliability.to_outputs().save(directory / "reliability.csv")
    utils.logger.info(
        "RMSE %.4g, CRPS %s, NLL %s", report.rmse, report.crps_mean, report.nll_mean
    )
    return 0


def cmd_age(cfg, args) -> int:
    checkpoint = net.Checkpoint.load(args.checkpoint)
    spec = _problem(cfg)
    params = cfg.hst_params()
    step = 60.0 * cfg["thermal.t_stride"]
    # uniform rows: the loss of life integrates with a fixed step
    t = np.arange(0.0, spec.t_end + 1e-9 * spec.t_end, step)
    x = cfg.grid_spec().x_nodes(spec.height)
    grid = refsolver.FieldGrid(x, t, np.zeros((t.size, x.size))).strided(
        1, cfg["thermal.x_stride"]
    )
    pred = uq.predict_grid(
        checkpoint, grid, cfg["uq.samples"], cfg["seed"], cfg["uq.chunk_size"]
    )
    rise_times = np.arange(0.0, spec.t_end + 1e-9 * spec.t_end, 60.0 * params.dt)
    rise = thermal.hst_rise(params, spec.load_at(rise_times))
    summary = thermal.propagate_ageing(
        pred,
        rise_times,
        rise,
        cfg["thermal.samples"],
        cfg["seed"],
        cfg["thermal.chunk_size"],
    )
    directory = _output_dir(cfg)
    for name in ("ageing_mean", "ageing_std", "lol_mean", "lol_std"):
        getattr(summary, name).save(directory / f"{name}.csv")
    _heatmap(cfg, summary.ageing_mean, directory / "ageing_mean.svg", "ageing factor", "p.u.")
    _heatmap(cfg, summary.lol_mean, directory / "lol_mean.svg", "loss of life", "min")
    return 0


def cmd_sweep(cfg, args) -> int:
    spec = _problem(cfg)
    sweep_spec = sweep.SweepSpec.from_config(cfg)
    plan = cfg.train_plan()
    truth = refsolver.solve(spec, cfg.grid_spec()).strided(
        cfg["metrics.t_stride"], cfg["metrics.x_stride"]
    )
    directory = _output_dir(cfg)
    tasks = [
        sweep.CellTask(
            cell,
            repetition,
            cell.seed(cfg["seed"], repetition),
            plan,
            spec,
            truth,
            cfg["uq.samples"],
            cfg["uq.chunk_size"],
            str(directory / "cells" / cell.name / f"rep_{repetition}"),
        )
        for cell in sweep_spec.cells()
        for repetition in range(sweep_spec.repetitions)
    ]
    utils.logger.info("sweeping %s", sweep.describe(sweep_spec))
    results = sweep.run(tasks, cfg["sweep.jobs"])
    sweep.aggregate(sweep_spec, results).save(directory / "sweep.csv")
    failures = sum(r.failed for r in results)
    if failures:
        utils.logger.warning("%d of %d runs failed", failures, len(results))
    return 0


def self_check(seed: int = 0, tolerance: float = 1e-3, derivative_tolerance: float = 1e-5):
    """Gradient checks of every loss, input-derivative checks and the
    manufactured-solution check of the reference solver.

    :return: list of ``(name, max_rel_error, passed)``
    """
    rng = np.random.default_rng(seed)
    spec = physics.ThermalPdeSpec.from_series(data.synthesize(1, seed, noise=0.0))
    norm = physics.Normalization.from_spec(spec)
    sets = physics.sample_training_sets(spec, (3, 3, 3), seed)
    batches = train.Batches.from_sets(sets, norm)
    weights = train.LossWeights(1.0, 1.0, 1e-2)
    prior = bayes.PriorSpec()
    results = []

    for hetero in (True, False):
        tag = "hetero" if hetero else "homo"
        config = net.MlpConfig((2, 4, 4, 2 if hetero else 1), hetero, 0.25)
        context = train.LossContext(spec, norm, config, (0.1, 0.1, 0.1), hetero)
        params = net.init_params(config, rng).values
        params = params + 0.1 * rng.standard_normal(params.size)
        post = np.concatenate([params, np.full(params.size, bayes.INITIAL_RHO)])
        noise = rng.standard_normal((2, params.size))
        mask = net.sample_mask(config, rng)
        losses = {
            f"elbo_{tag}": (
                lambda v, c=context, n=noise: train.elbo_objective(
                    v, prior, weights, batches, n, c
                )[0],
                post,
            ),
            f"dpinn_{tag}": (
                lambda p, c=context, m=mask: train.dpinn_objective(p, m, weights, batches, c)[0],
                params,
            ),
        }
        if not hetero:
            losses["pinn"] = (
                lambda p, c=context: train.pinn_objective(p, weights, batches, c)[0],
                params,
            )
        for name, (loss, vector) in losses.items():
            report = diffcore.check_gradient(loss, vector, tolerance=tolerance)
            results.append((name, report.max_rel_error, not report.flagged))

    config = net.MlpConfig((2, 8, 8, 2), True)
    params = net.init_params(config, rng).values + 0.1 * rng.standard_normal(config.layout.size)
    x, t = rng.random(10), rng.random(10)
    _, u_x, u_xx, u_t = net.forward_with_derivatives(params, x, t, config)

    def mean(xs, ts):
        return net.forward(params, xs, ts, config)[0]

    # fourth-order central stencils
    def first(f, h):
        return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)

    def second(f, h):
        return (-f(2 * h) + 16 * f(h) - 30 * f(0.0) + 16 * f(-h) - f(-2 * h)) / (12 * h**2)

    numeric = {
        "u_x": (first(lambda d: mean(x + d, t), 1e-3), u_x),
        "u_xx": (second(lambda d: mean(x + d, t), 1e-2), u_xx),
        "u_t": (first(lambda d: mean(x, t + d), 1e-3), u_t),
    }
    for name, (fd, exact) in numeric.items():
        error = float(
            np.max(np.abs(fd - exact) / np.maximum(np.maximum(np.abs(fd), np.abs(exact)), 1e-2))
        )
        results.append((f"input_{name}", error, error < derivative_tolerance))

    solver_error = refsolver.manufactured_error()
    results.append(("refsolver_manufactured", solver_error, solver_error < 1e-3))
    return results


def cmd_check(cfg, args) -> int:
    results = self_check(cfg["seed"])
    for name, error, passed in results:
        print(f"{'PASS' if passed else 'FAIL'} {name} {error:.3e}")
    if all(passed for _, _, passed in results):
        return 0
    utils.logger.error("self-check failed")
    return errors.ValidationError.exit_code


COMMANDS = {
    "synth-data": cmd_synth_data,
    "solve-ref": cmd_solve_ref,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "age": cmd_age,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def cli(args):
    """Entrypoint to the command-line interface (CLI) of bpinn-ageing.

    It parses arguments, runs the command and exits with its code.
    """
    args = parser.parse_args(args)
    if args.quiet:
        utils.logger.setLevel(logging.WARNING)
    elif args.verbose:
        utils.logger.setLevel(logging.DEBUG)
    else:
        utils.logger.setLevel(logging.INFO)
    try:
        cfg = _resolve_config(args)
        utils.logger.info("running %s", args.command)
        code = COMMANDS[args.command](cfg, args)
    except errors.BPinnError as e:
        utils.logger.error("%s", e)
        sys.exit(e.exit_code)
    if code:
        sys.exit(code)


def main():
    try:
        cli(sys.argv[1:])
    except BrokenPipeError:
        # ignore broken pipe errors just in case output is
        # piped to another command
        pass
    except KeyboardInterrupt:
        sys.exit(1)
