"""Command-line entry point.

Commands: gen-data, train, eval, ablate, gradcheck, equiv-regular,
export-weights.  Every run writes into a fresh timestamped directory
under ``--out``: the resolved config echo, logs, checkpoints, delimited
reports, and rendered figures.  A run directory containing an
``INCOMPLETE`` marker did not finish.  Multi-seed mode (``--seeds``)
repeats a command across seeds in sibling directories and reports
mean and standard deviation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import checkpoint as ckpt
from . import figures
from .data import (
    Dataset,
    fit_norm,
    generate_synthetic,
    load_dataset,
    normalize_dataset,
    save_dataset,
    split,
)
from .errors import ConfigError
from .evaluation import evaluate, export_weight_grids
from .model import (
    VARIANTS,
    AiTConfig,
    AiTModel,
    ALinearRegularModel,
    MeanBaseline,
    StaticLinearModel,
    model_from_description,
)
from .numerics import check_gradients, randomize_parameters
from .runconfig import RunConfig, echo_config, parse_config_file, resolve_config
from .training import fit

COMMANDS = ("gen-data", "train", "eval", "ablate", "gradcheck",
            "equiv-regular", "export-weights")

GRADCHECK_TOLERANCE = 1e-4
# toy scale for the gradient-check command; data scale stays tiny so the
# finite-difference sweep finishes in seconds
_GRADCHECK_SCALE = {"n_vars": 3, "hidden": 8, "n_heads": 2, "n_blocks": 2,
                    "n_samples": 8, "queries_per_variable": 3, "rate": 0.25}


# ---------------------------------------------------------------------------
# Plumbing


class RunLog:
    """Mirror log lines to stdout and the run directory's run.log."""

    def __init__(self, run_dir: str):
        self.path = os.path.join(run_dir, "run.log")

    def __call__(self, message: str) -> None:
        print(message)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(message + "\n")


def _prepare_run_dir(out_root: str, command: str) -> str:
    os.makedirs(out_root, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(out_root, f"{command}-{stamp}")
    run_dir = base
    suffix = 1
    while os.path.exists(run_dir):
        suffix += 1
        run_dir = f"{base}-{suffix}"
    os.makedirs(run_dir)
    with open(os.path.join(run_dir, "INCOMPLETE"), "w", encoding="utf-8") as fh:
        fh.write("run in progress or aborted\n")
    return run_dir


def _finish_run_dir(run_dir: str) -> None:
    marker = os.path.join(run_dir, "INCOMPLETE")
    if os.path.exists(marker):
        os.remove(marker)


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo_config(cfg: RunConfig, run_dir: str) -> None:
    with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(echo_config(cfg))


def _load_or_generate(cfg: RunConfig) -> Dataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    return generate_synthetic(cfg.generator_config(), cfg.seed)


def _prepared_splits(cfg: RunConfig, dataset: Dataset):
    """6:2:2 split, statistics fitted on train only, all splits normalized."""
    train, val, test = split(dataset, seed=cfg.seed)
    stats = fit_norm(train)
    return (normalize_dataset(train, stats), normalize_dataset(val, stats),
            normalize_dataset(test, stats), stats)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(cfg: RunConfig, run_dir: str, log, raw_units: bool = False) -> dict:
    dataset = generate_synthetic(cfg.generator_config(), cfg.seed)
    target = cfg.dataset or os.path.join(run_dir, "dataset.jsonl")
    save_dataset(dataset, target)

    gen = cfg.generator_config()
    grid = max(1, int(round(gen.rate * (gen.obs_span[1] - gen.obs_span[0]))))
    observed = sum(len(s.variables[v][0]) for s in dataset.samples
                   for v in range(dataset.n_vars))
    sparsity = 1.0 - observed / (len(dataset) * dataset.n_vars * grid)

    log("dataset statistics")
    log(f"  samples    {len(dataset)}")
    log(f"  variables  {dataset.n_vars}")
    log(f"  history    {gen.obs_span[0]:g} .. {gen.obs_span[1]:g}")
    log(f"  forecast   {gen.fc_span[0]:g} .. {gen.fc_span[1]:g}")
    log(f"  sparsity   {100.0 * sparsity:.2f} %")
    log(f"  file       {target}")

    stats = {"samples": len(dataset), "variables": dataset.n_vars,
             "obs_span": list(gen.obs_span), "fc_span": list(gen.fc_span),
             "sparsity": sparsity, "file": str(target)}
    _write_json(os.path.join(run_dir, "stats.json"), stats)
    figures.render_sample_preview(dataset.samples[0],
                                  os.path.join(run_dir, "sample_preview.png"))
    return stats


def _train_once(cfg: RunConfig, variant: str, run_dir: str, log):
    """Generate/load data, train one model, evaluate on test."""
    dataset = _load_or_generate(cfg)
    train_n, val_n, test_n, stats = _prepared_splits(cfg, dataset)
    model = AiTModel(cfg.model_config(variant), cfg.seed)
    best_values, report = fit(model, train_n, val_n, cfg.train_config(), log=log)
    metrics = evaluate(model, test_n, cfg.eval_batch_size, cfg.seed, stats)
    return model, best_values, report, metrics, stats, test_n


def cmd_train(cfg: RunConfig, run_dir: str, log, raw_units: bool = False) -> dict:
    model, best_values, report, metrics, stats, test_n = _train_once(
        cfg, cfg.variant, run_dir, log)

    ckpt_path = os.path.join(run_dir, "checkpoint.ait")
    ckpt.save_checkpoint(ckpt_path, best_values, model.describe(), stats)

    payload = {
        "seed": cfg.seed,
        "variant": cfg.variant,
        "training": report.to_dict(include_timing=False),
        "test": metrics.to_dict(),
    }
    if raw_units:
        raw = evaluate(model, test_n, cfg.eval_batch_size, cfg.seed, stats,
                       raw_units=True)
        payload["test_raw"] = raw.to_dict()
    _write_json(os.path.join(run_dir, "metrics.json"), payload)
    _write_json(os.path.join(run_dir, "report.json"),
                report.to_dict(include_timing=True))
    figures.render_training_curves(report.to_dict(),
                                   os.path.join(run_dir, "training_curves.png"))
    figures.render_metric_bars(
        [f"var {v}" for v in range(len(metrics.per_variable_mse))],
        metrics.per_variable_mse, "test MSE per variable",
        os.path.join(run_dir, "per_variable_mse.png"))

    log(f"best epoch {report.best_epoch} val_loss {report.best_val_loss:.6f} "
        f"({report.stopping_reason})")
    log(f"test MSE {metrics.mse:.6f}  MAE {metrics.mae:.6f}")
    log(f"checkpoint {ckpt_path}")
    return {"mse": metrics.mse, "mae": metrics.mae,
            "best_val_loss": report.best_val_loss}


def cmd_eval(cfg: RunConfig, run_dir: str, log, raw_units: bool = False) -> dict:
    dataset = _load_or_generate(cfg)
    if cfg.checkpoint:
        values, description, stats = ckpt.load_checkpoint(cfg.checkpoint)
        model = model_from_description(description, cfg.seed)
        model.param_set.restore(values)
        if stats is None:
            raise ConfigError("eval: checkpoint carries no normalization stats")
        train_raw, _, test_raw = split(dataset, seed=cfg.seed)
        del train_raw
        test_n = normalize_dataset(test_raw, stats)
    else:
        # freshly initialized model straight from the config
        _, _, test_n, stats = _prepared_splits(cfg, dataset)
        model = AiTModel(cfg.model_config(), cfg.seed)

    metrics = evaluate(model, test_n, cfg.eval_batch_size, cfg.seed, stats)
    baseline = evaluate(MeanBaseline(), test_n, cfg.eval_batch_size, cfg.seed, stats)
    payload = {"model": metrics.to_dict(), "mean_baseline": baseline.to_dict(),
               "seed": cfg.seed}
    if raw_units:
        payload["model_raw"] = evaluate(model, test_n, cfg.eval_batch_size,
                                        cfg.seed, stats, raw_units=True).to_dict()
    _write_json(os.path.join(run_dir, "metrics.json"), payload)
    figures.render_metric_bars(
        [f"var {v}" for v in range(len(metrics.per_variable_mse))],
        metrics.per_variable_mse, "MSE per variable",
        os.path.join(run_dir, "per_variable_mse.png"))
    log(f"model    MSE {metrics.mse:.6f}  MAE {metrics.mae:.6f}")
    log(f"baseline MSE {baseline.mse:.6f}  MAE {baseline.mae:.6f}")
    return {"mse": metrics.mse, "mae": metrics.mae,
            "baseline_mse": baseline.mse}


def cmd_ablate(cfg: RunConfig, run_dir: str, log, raw_units: bool = False) -> dict:
    results = {}
    for variant in VARIANTS:
        sub = figures.ensure_dir(os.path.join(run_dir, variant))
        sub_log = RunLog(sub)
        model, best_values, report, metrics, stats, _ = _train_once(
            cfg, variant, sub, sub_log)
        ckpt.save_checkpoint(os.path.join(sub, "checkpoint.ait"),
                             best_values, model.describe(), stats)
        _write_json(os.path.join(sub, "metrics.json"),
                    {"variant": variant, "seed": cfg.seed,
                     "training": report.to_dict(include_timing=False),
                     "test": metrics.to_dict()})
        results[variant] = {"mse": metrics.mse, "mae": metrics.mae}
        log(f"{variant:12s} MSE {metrics.mse:.6f}  MAE {metrics.mae:.6f}")
    _write_json(os.path.join(run_dir, "ablation.json"),
                {"seed": cfg.seed, "results": results})
    figures.render_metric_bars(list(results), [results[v]["mse"] for v in results],
                               "ablation test MSE",
                               os.path.join(run_dir, "ablation.png"))
    return {v: results[v]["mse"] for v in results}


def cmd_gradcheck(cfg: RunConfig, run_dir: str, log, raw_units: bool = False) -> dict:
    scaled = resolve_config(overrides={**{k: str(v) for k, v in _GRADCHECK_SCALE.items()},
                                       "variant": cfg.variant,
                                       "seed": str(cfg.seed)})
    dataset = generate_synthetic(scaled.generator_config(), scaled.seed)
    train_n, _, _, _ = _prepared_splits(scaled, dataset)
    from .data import batch_from_samples
    batch = batch_from_samples(train_n.samples[:2])

    model = AiTModel(scaled.model_config(), scaled.seed)
    # check at a generic parameter point: the fresh init leaves layer-norm
    # inputs with feature variance below eps, where the FD oracle is stiff
    randomize_parameters(model.param_set, np.random.default_rng(scaled.seed + 1))
    errors = check_gradients(lambda _: model.loss(batch), model.param_set)

    failures = 0
    for name in sorted(errors):
        ok = errors[name] < GRADCHECK_TOLERANCE
        failures += 0 if ok else 1
        log(f"{'PASS' if ok else 'FAIL'}  {name:40s} rel_err={errors[name]:.3e}")
    log(f"gradcheck: {len(errors) - failures}/{len(errors)} parameters within "
        f"{GRADCHECK_TOLERANCE:g}")
    _write_json(os.path.join(run_dir, "gradcheck.json"),
                {"tolerance": GRADCHECK_TOLERANCE, "errors": errors,
                 "failed": failures})
    if failures:
        raise ConfigError(f"gradcheck: {failures} parameters failed")
    return {"failed": failures, "checked": len(errors)}


def _regular_cfg(cfg: RunConfig) -> RunConfig:
    """Derive the fixed-grid task configuration from the run config."""
    values = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    values.update({"regular": True, "missingness": 0.0, "drop_variable_prob": 0.0})
    out = RunConfig(**values)
    return out


def cmd_equiv_regular(cfg: RunConfig, run_dir: str, log, raw_units: bool = False) -> dict:
    rcfg = _regular_cfg(cfg)
    gen = rcfg.generator_config()
    l_in = max(1, int(round(gen.rate * (gen.obs_span[1] - gen.obs_span[0]))))
    l_out = gen.queries_per_variable

    dataset = generate_synthetic(gen, rcfg.seed)
    train_n, val_n, test_n, stats = _prepared_splits(rcfg, dataset)

    adaptive = ALinearRegularModel(l_in, l_out, d=rcfg.reg_d, seed=rcfg.seed)
    static = StaticLinearModel(l_in, l_out, seed=rcfg.seed)
    results = {}
    for name, model in (("adaptive", adaptive), ("static", static)):
        _, report = fit(model, train_n, val_n, rcfg.train_config(), log=log)
        metrics = evaluate(model, test_n, rcfg.eval_batch_size, rcfg.seed, stats)
        results[name] = {"mse": metrics.mse, "mae": metrics.mae,
                         "best_val_loss": report.best_val_loss}
        log(f"{name:9s} test MSE {metrics.mse:.6f}  MAE {metrics.mae:.6f}")

    rel_diff = abs(results["adaptive"]["mse"] - results["static"]["mse"]) \
        / results["static"]["mse"]
    log(f"relative MSE difference {100.0 * rel_diff:.2f} %")

    sample = test_n.samples[min(rcfg.sample_index, len(test_n) - 1)]
    dump = export_weight_grids(adaptive, sample,
                               os.path.join(run_dir, "weights"),
                               static_model=static)
    for name, path in dump["files"].items():
        grid = np.loadtxt(path, skiprows=1)
        figures.render_weight_heatmap(np.atleast_2d(grid), name,
                                      os.path.join(run_dir, f"{name}.png"))
    payload = {"seed": rcfg.seed, "l_in": l_in, "l_out": l_out,
               "results": results, "relative_mse_difference": rel_diff,
               "weights_mean_abs_diff": dump.get("mean_abs_diff")}
    _write_json(os.path.join(run_dir, "equiv.json"), payload)
    return {"mse": results["adaptive"]["mse"],
            "static_mse": results["static"]["mse"], "rel_diff": rel_diff}


def cmd_export_weights(cfg: RunConfig, run_dir: str, log, raw_units: bool = False) -> dict:
    if not cfg.checkpoint:
        raise ConfigError("export-weights: a checkpoint path is required")
    values, description, stats = ckpt.load_checkpoint(cfg.checkpoint)
    model = model_from_description(description, cfg.seed)
    model.param_set.restore(values)
    dataset = _load_or_generate(cfg)
    if stats is not None:
        dataset = normalize_dataset(dataset, stats)
    sample = dataset.samples[min(cfg.sample_index, len(dataset) - 1)]
    dump = export_weight_grids(model, sample, os.path.join(run_dir, "weights"))
    for name, path in dump["files"].items():
        grid = np.loadtxt(path, skiprows=1)
        figures.render_weight_heatmap(np.atleast_2d(grid), name,
                                      os.path.join(run_dir, f"{name}.png"))
        log(f"wrote {path}")
    return {"grids": len(dump["files"])}


# ---------------------------------------------------------------------------
# Argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ait",
        description="Forecasting toolkit for irregular multivariate time series.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seeds", default=None,
                       help="comma-separated seeds for multi-seed mode")
        p.add_argument("--out", default="runs", help="root directory for run outputs")
        p.add_argument("--raw-units", action="store_true", dest="raw_units",
                       help="additionally report metrics in raw units")
        for f in fields(RunConfig):
            p.add_argument(f"--{f.name}", default=None, metavar="V",
                           help=f"override config key {f.name}")
    return parser


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "equiv-regular": cmd_equiv_regular,
    "export-weights": cmd_export_weights,
}


def _run_single(command: str, cfg: RunConfig, out_root: str, raw_units: bool) -> dict:
    run_dir = _prepare_run_dir(out_root, command)
    _echo_config(cfg, run_dir)
    log = RunLog(run_dir)
    result = _DISPATCH[command](cfg, run_dir, log, raw_units)
    _finish_run_dir(run_dir)
    result = dict(result)
    result["run_dir"] = run_dir
    return result


def _aggregate_seeds(command: str, results: dict[int, dict], out_root: str) -> None:
    numeric_keys = sorted({k for r in results.values() for k, v in r.items()
                           if isinstance(v, (int, float))})
    summary = {}
    print(f"{command}: mean over {len(results)} seeds")
    for key in numeric_keys:
        values = [results[s][key] for s in sorted(results) if key in results[s]]
        mean, std = float(np.mean(values)), float(np.std(values))
        summary[key] = {"mean": mean, "std": std, "values": values}
        print(f"  {key:16s} {mean:.6f} ± {std:.6f}")
    _write_json(os.path.join(out_root, f"{command.replace('-', '_')}_aggregate.json"),
                {"seeds": sorted(results), "summary": summary})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name) is not None}
    file_values = parse_config_file(args.config) if args.config else None

    try:
        base_cfg = resolve_config(file_values, overrides)
        if args.seeds:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            results = {}
            for seed in seeds:
                cfg = resolve_config(file_values, {**overrides, "seed": str(seed)})
                results[seed] = _run_single(args.command, cfg, args.out,
                                            args.raw_units)
            _aggregate_seeds(args.command, results, args.out)
        else:
            _run_single(args.command, base_cfg, args.out, args.raw_units)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
