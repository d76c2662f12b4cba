"""Command-line entry point: ``dnnaf <subcommand> [options]``.

Exit status: 0 success, 2 usage or bad parameters, 3 configuration,
4 divergence, 5 malformed input file, 6 numerical failure, 7 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, theory
from .errors import ConfigurationError, DnnafError, UsageError
from .filters import ALGORITHMS
from .gradnet import TrainConfig, init_network, load_model, save_model, train
from .kde import GradientDataset, KdeModel, build_gradient_dataset
from .noise import PRESETS, NoiseSampleSet, parse_model, sample

log = logging.getLogger("dnnaf")

IO_EXIT = 7
FIG3_ETAS = (2e-4, 1e-3)
FIG4_ITERATIONS = 20000
TRAIN_KEYS = {
    "learning_rate": float, "epochs": int, "batch_size": int, "shuffle_seed": int,
    "init_seed": int, "holdout_fraction": float, "clamp_factor": float,
}


def _model_arg(args):
    if args.preset and args.model:
        raise UsageError("give either --preset or --model, not both")
    if not (args.preset or args.model):
        raise UsageError("one of --preset or --model is required")
    return parse_model(args.preset or args.model)


def _write_curves(curves, path: Path, cfg, extra=None):
    harness.export_curves(curves, path, cfg, extra)
    harness.write_gnuplot_script(path, [c.label for c in curves], path.stem)


def _load_net(path):
    if path is None:
        raise ConfigurationError("DNN-AF needs a model file (--model-file)")
    if not Path(path).is_file():
        raise ConfigurationError(f"model file {path} does not exist")
    return load_model(path)


def _train_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        for key, raw in _flat_config(Path(args.config).read_text()).items():
            if key not in TRAIN_KEYS:
                raise UsageError(f"unknown training key {key!r}; valid keys: {', '.join(TRAIN_KEYS)}")
            values[key] = TRAIN_KEYS[key](raw)
    for key in TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = TrainConfig(**values)
    return cfg


def _flat_config(text: str) -> dict[str, str]:
    """``key = value`` lines without the experiment-key whitelist."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"line {lineno}: expected 'key = value'")
            out[key.strip()] = value.strip()
    return out


def _summary(curves, out=sys.stdout):
    for c in curves:
        try:
            ss = f"{harness.steady_state_of(c):.3f} dB"
        except DnnafError as exc:
            ss = f"n/a ({exc})"
        print(f"{c.label:>8}  steady-state {ss}  diverged {c.diverged_trials}/{c.trials}", file=out)


# -- subcommands ----------------------------------------------------------------

def cmd_noise_gen(args):
    model = _model_arg(args)
    samples = sample(model, args.n, args.seed)
    samples.to_csv(args.out)
    print(f"wrote {len(samples)} samples of {model.descriptor()} to {args.out}")


def cmd_kde_fit(args):
    samples = NoiseSampleSet.from_csv(args.samples)
    data = build_gradient_dataset(samples, args.bandwidth, threads=args.threads)
    data.to_csv(args.out)
    print(f"bandwidth {data.bandwidth_used!r}")


def cmd_train(args):
    data = GradientDataset.from_csv(args.dataset)
    cfg = _train_config(args)
    net, report = train(init_network(cfg.init_seed), data, cfg)
    save_model(net, args.out)
    if args.report:
        lines = ["epoch,train_mse"] + [f"{k},{x!r}" for k, x in enumerate(report.per_epoch_loss.tolist())]
        Path(args.report).write_text("\n".join(lines) + "\n")
    print(f"holdout R^2 {report.final_holdout_r2:.6f}")
    print(f"train R^2 {report.final_train_r2:.6f}")


def _theory_source(args, model):
    if args.model_file:
        return _load_net(args.model_file)
    if args.samples:
        return KdeModel(NoiseSampleSet.from_csv(args.samples).samples)
    return "analytic"


def cmd_theory(args):
    model = _model_arg(args)
    exp = theory.estimate_expectations(model, _theory_source(args, model), args.n_mc, args.seed)
    rows = theory.theory_rows(model, exp, args.eta, args.M, args.sigma_u**2)
    theory.write_theory_csv(args.out, rows)
    print(f"E[p'/v] {exp.e_ratio!r}  E[(p'/v)^2] {exp.e_ratio_sq!r}  E[p'^2] {exp.e_deriv_sq!r}")
    print(f"eta_max {rows[0][-1]!r}")


def cmd_run(args):
    path = Path(args.config)
    values = harness.parse_config_text(path.read_text())
    nets = {}
    for key, rel in values.items():
        if key.endswith(".model"):
            model_path = Path(rel) if Path(rel).is_absolute() else path.parent / rel
            nets[key.split(".", 1)[0]] = _load_net(model_path)
    cfg, reference = harness.config_from_mapping(
        values, nets, trials=args.trials, iterations=args.iterations, master_seed=args.master_seed
    )
    curves = harness.run_experiment(cfg, args.threads)
    extra = {} if reference is None else {"reference_step": repr(reference)}
    _write_curves(curves, Path(args.out), cfg, extra)
    _summary(curves)


def _parse_algorithms(text: str) -> list[str]:
    names = [n.strip() for n in text.split(",") if n.strip()]
    bad = [n for n in names if n not in ALGORITHMS]
    if bad or not names:
        raise UsageError(f"unknown algorithm(s) {bad}; valid names: {', '.join(ALGORITHMS)}")
    return names


def _comparison_specs(names, net, kernel_widths=None):
    kernel_widths = kernel_widths or {}
    return [
        harness.AlgorithmSpec(n, kernel_width=kernel_widths.get(n), net=net if n == "dnnaf" else None)
        for n in names
    ]


def cmd_compare(args):
    names = _parse_algorithms(args.algorithms)
    model = _model_arg(args)
    net = _load_net(args.model_file) if "dnnaf" in names else None
    specs = harness.match_step_sizes(_comparison_specs(names, net), model, args.reference_step)
    cfg = harness.ExperimentConfig(model, specs, M=args.M, iterations=args.iterations,
                                   trials=args.trials, pretrain_len=args.pretrain_len,
                                   master_seed=args.master_seed)
    curves = harness.run_experiment(cfg, args.threads)
    _write_curves(curves, Path(args.out), cfg, {"reference_step": repr(args.reference_step)})
    _summary(curves)


def _preset_net(name: str, out_dir: Path, args):
    """Train (or reuse from ``out_dir/models``) the network for one preset."""
    path = out_dir / "models" / f"{name}_n{args.n_samples}_seed{args.seed}.model"
    data = build_gradient_dataset(sample(PRESETS[name], args.n_samples, args.seed),
                                  threads=args.threads)
    if path.is_file():
        log.info("reusing cached model %s", path)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        net, report = train(init_network(0), data)
        save_model(net, path)
        log.info("%s: holdout R^2 %.6f", name, report.final_holdout_r2)
    return load_model(path), data


def _presets_arg(args):
    names = args.preset or list(PRESETS)
    bad = [n for n in names if n not in PRESETS]
    if bad:
        raise UsageError(f"unknown preset(s) {bad}; valid names: {', '.join(PRESETS)}")
    return names


def cmd_fig2(args):
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in _presets_arg(args):
        net, data = _preset_net(name, out_dir, args)
        grid = np.linspace(data.inputs.min(), data.inputs.max(), args.points)
        kde = KdeModel(data.inputs, data.bandwidth_used)
        path = out_dir / f"fig2_{name}.csv"
        lines = [f"# preset={name} model={PRESETS[name].descriptor()} h={data.bandwidth_used!r} "
                 f"n={len(data)} seed={args.seed}", "grid,kde_derivative,net_derivative"]
        lines += [f"{g!r},{k!r},{m!r}" for g, k, m in
                  zip(grid.tolist(), kde.pdf_derivative(grid, args.threads).tolist(),
                      np.asarray(net(grid)).tolist())]
        path.write_text("\n".join(lines) + "\n")
        path.with_suffix(".gp").write_text(
            "set datafile separator ','\nset key autotitle columnhead\n"
            f"set title 'density derivative, {name}'\n"
            f"set terminal pngcairo size 900,600\nset output '{path.stem}.png'\n"
            f"plot '{path.name}' using 1:2 with lines, '' using 1:3 with lines\n"
        )
        print(f"wrote {path}")


def cmd_fig3(args):
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = args.preset
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; valid names: {', '.join(PRESETS)}")
    model = PRESETS[name]
    source = _load_net(args.model_file) if args.model_file else "analytic"
    exp = theory.estimate_expectations(model, source, args.n_mc, args.seed)
    etas = args.eta or list(FIG3_ETAS)
    rows = theory.theory_rows(model, exp, etas, args.M, args.sigma_u**2)
    theory.write_theory_csv(out_dir / f"fig3_{name}_theory.csv", rows)

    grad = model.pdf_derivative if source == "analytic" else source
    specs = [harness.AlgorithmSpec("dnnaf", eta, net=grad, label=f"eta{k}",
                                   pretrain_step_size=args.pretrain_step)
             for k, eta in enumerate(etas)]
    cfg = harness.ExperimentConfig(model, specs, M=args.M, sigma_u=args.sigma_u,
                                   iterations=args.iterations, trials=args.trials,
                                   pretrain_len=args.pretrain_len, master_seed=args.master_seed)
    curves = harness.run_experiment(cfg, args.threads)
    extra = {f"eta{k}": repr(float(eta)) for k, eta in enumerate(etas)}
    extra["derivative_source"] = exp.source
    _write_curves(curves, out_dir / f"fig3_{name}_curves.csv", cfg, extra)
    for c, row in zip(curves, rows):
        try:
            sim = f"{harness.steady_state_of(c):.3f}"
        except DnnafError as exc:
            sim = f"n/a ({exc})"
        print(f"eta={row[2]:.6g}  theory {row[6]:.3f} dB  simulation {sim} dB")


def cmd_fig4(args):
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = _parse_algorithms(args.algorithms)
    for name in _presets_arg(args):
        model = PRESETS[name]
        net = _preset_net(name, out_dir, args)[0] if "dnnaf" in names else None
        specs = harness.match_step_sizes(_comparison_specs(names, net), model, args.reference_step)
        cfg = harness.ExperimentConfig(model, specs, M=args.M, iterations=args.iterations,
                                       trials=args.trials, pretrain_len=args.pretrain_len,
                                       master_seed=args.master_seed)
        curves = harness.run_experiment(cfg, args.threads)
        extra = {"reference_step": repr(args.reference_step), "noise_samples": str(args.n_samples),
                 "noise_seed": str(args.seed)}
        path = out_dir / f"fig4_{name}.csv"
        _write_curves(curves, path, cfg, extra)
        print(f"[{name}] wrote {path}")
        _summary(curves)


# -- parser -------------------------------------------------------------------------

def _add_model(p):
    p.add_argument("--preset", choices=sorted(PRESETS), help="named noise environment")
    p.add_argument("--model", help="noise descriptor, e.g. 'gmm[0.5:-3:2,0.5:3:2]'")


def _add_experiment(p, iterations=5000):
    p.add_argument("--M", type=int, default=5, help="filter length")
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--pretrain-len", type=int, default=500)
    p.add_argument("--master-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnnaf", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (results do not depend on it)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("noise-gen", help="draw noise samples to CSV")
    _add_model(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_gen)

    p = sub.add_parser("kde-fit", help="build the derivative dataset from samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--bandwidth", type=float, help="kernel bandwidth (default: Silverman)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kde_fit)

    p = sub.add_parser("train", help="fit the gradient network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="flat key = value file with training settings")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--shuffle-seed", dest="shuffle_seed", type=int)
    p.add_argument("--init-seed", dest="init_seed", type=int)
    p.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    p.add_argument("--clamp-factor", dest="clamp_factor", type=float)
    p.add_argument("--report", help="optional per-epoch loss CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("theory", help="stability bound and steady-state prediction")
    _add_model(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model-file", help="use a trained network for p'")
    src.add_argument("--samples", help="use a KDE over these samples for p'")
    p.add_argument("--eta", type=float, nargs="+", required=True)
    p.add_argument("--M", type=int, default=5)
    p.add_argument("--sigma-u", type=float, default=1.0)
    p.add_argument("--n-mc", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("run", help="run an experiment described by a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="rate-matched comparison in one environment")
    _add_model(p)
    p.add_argument("--algorithms", default="lms,lmf,mcc,mee,dnnaf")
    p.add_argument("--model-file")
    p.add_argument("--reference-step", type=float, default=0.01)
    _add_experiment(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    def trained_presets(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--preset", action="append", help="restrict to a preset (repeatable)")
        p.add_argument("--n-samples", type=int, default=5000)
        p.add_argument("--seed", type=int, default=1, help="noise sample seed for training")
        p.add_argument("--output-dir", required=True)
        p.set_defaults(func=func)
        return p

    p = trained_presets("fig2", cmd_fig2, "network vs KDE derivative per preset")
    p.add_argument("--points", type=int, default=401)

    p = sub.add_parser("fig3", help="step-size sweep with theory overlay")
    p.add_argument("--preset", default="impulse")
    p.add_argument("--eta", type=float, nargs="+")
    p.add_argument("--model-file", help="use a trained network instead of the analytic p'")
    p.add_argument("--sigma-u", type=float, default=1.0)
    p.add_argument("--pretrain-step", type=float, default=0.01)
    p.add_argument("--n-mc", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", required=True)
    _add_experiment(p)
    p.set_defaults(func=cmd_fig3)

    p = trained_presets("fig4", cmd_fig4, "four-environment comparison")
    p.add_argument("--algorithms", default="lms,lmf,mcc,mee,dnnaf")
    p.add_argument("--reference-step", type=float, default=0.01)
    _add_experiment(p, FIG4_ITERATIONS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dnnaf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DnnafError as exc:
        print(f"dnnaf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dnnaf: I/O error: {exc}", file=sys.stderr)
        return IO_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
