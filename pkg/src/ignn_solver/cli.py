"""``ignn`` command-line entry point."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .bench import BenchmarkReport, overhead_summary, pareto_sweep, read_log, trace_rows, write_trace_csv
from .config import RunConfig, load_config
from .errors import ConfigError, ConvergenceError, DomainError, NumericError, ParseError
from .graph import Dataset, load_dataset_dir, normalize_adjacency, synth_chain, synth_citeseer
from .model import FixedPointProblem, IgnnModel
from .neural import NeuralSolver, NeuralSolverConfig
from .solvers import AndersonSolver
from .training import (
    AlternatingSchedule,
    JsonlLog,
    SolverLossWeights,
    alternate_train,
    compute_fixed_point,
    train_ignn,
    train_solver,
)

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("train", "train-solver", "alternate", "pareto", "trace", "overhead")
LOG_NAME = "train_log.jsonl"


def load_data(source: str, seed: int) -> Dataset:
    if source == "synth:citeseer":
        return synth_citeseer(seed)
    if source == "synth:chain":
        return synth_chain(4, 6, 8, seed)
    if source.startswith("synth:"):
        raise ConfigError(f"unknown synthetic dataset {source!r}")
    return load_dataset_dir(source)


def _weights(cfg: RunConfig) -> SolverLossWeights:
    return SolverLossWeights(
        cfg.lambda1, cfg.lambda1_schedule, cfg.lambda1_warmup, cfg.lambda2, cfg.lambda3, cfg.lambda3_decay
    )


def _new_solver(cfg: RunConfig) -> NeuralSolver:
    config = NeuralSolverConfig(cfg.m, cfg.K, cfg.p, cfg.beta_max, cfg.keep_fraction, cfg.update_rule)
    return NeuralSolver(cfg.nhid, config, seed=cfg.seed)


def _ckpt(out: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else out / p


def _problem(model: IgnnModel, ds: Dataset) -> FixedPointProblem:
    return FixedPointProblem(model, normalize_adjacency(ds.graph), ds.features)


def _load_checkpoints(cfg: RunConfig, out: Path, need_solver: bool = True):
    model_path = _ckpt(out, cfg.model_checkpoint)
    if not model_path.exists():
        raise FileNotFoundError(f"model checkpoint {model_path} not found")
    model = IgnnModel.load(model_path)
    solver = None
    if need_solver:
        solver_path = _ckpt(out, cfg.solver_checkpoint)
        if not solver_path.exists():
            raise FileNotFoundError(f"solver checkpoint {solver_path} not found")
        solver = NeuralSolver.load(solver_path)
    return model, solver


def cmd_train(cfg, ds, out):
    model = IgnnModel.create(ds.d, cfg.nhid, ds.num_classes, cfg.seed, cfg.activation, cfg.kappa)
    log = JsonlLog(out / LOG_NAME)
    log.write({"phase": "meta", "step": 0, "model_params": model.param_count(), "wall_time_s": 0.0})
    train_ignn(
        model, ds, AndersonSolver(cfg.m), cfg.epochs, lr=cfg.lr, tol=cfg.tol, max_iter=cfg.max_iter,
        dropout=cfg.dropout, weight_decay=cfg.weight_decay, seed=cfg.seed, log=log,
    )
    model.save(_ckpt(out, cfg.model_checkpoint))


def cmd_train_solver(cfg, ds, out):
    model, _ = _load_checkpoints(cfg, out, need_solver=False)
    solver = _new_solver(cfg)
    problem = _problem(model, ds)
    log = JsonlLog(out / LOG_NAME)
    log.write(
        {"phase": "meta", "step": 0, "solver_params": solver.param_count(), "model_params": model.param_count(),
         "wall_time_s": 0.0}
    )
    train_solver(problem, solver, _weights(cfg), cfg.solver_steps, lr=cfg.solver_lr, cache=compute_fixed_point(problem), log=log)
    solver.save(_ckpt(out, cfg.solver_checkpoint))


def cmd_alternate(cfg, ds, out):
    model = IgnnModel.create(ds.d, cfg.nhid, ds.num_classes, cfg.seed, cfg.activation, cfg.kappa)
    solver = _new_solver(cfg)
    schedule = AlternatingSchedule(
        t2=cfg.T2, epoch_max=cfg.epochs, t1=cfg.T1 or None,
        warmup_epochs=cfg.warmup_epochs, warmup_solver_steps=cfg.warmup_solver_steps,
    )
    alternate_train(
        model, ds, solver, schedule, _weights(cfg), lr=cfg.lr, solver_lr=cfg.solver_lr, tol=cfg.tol,
        max_iter=cfg.max_iter, dropout=cfg.dropout, weight_decay=cfg.weight_decay, seed=cfg.seed,
        log=JsonlLog(out / LOG_NAME),
    )
    model.save(_ckpt(out, cfg.model_checkpoint))
    solver.save(_ckpt(out, cfg.solver_checkpoint))


def cmd_pareto(cfg, ds, out, dataset_name="", repeats=5):
    model, solver = _load_checkpoints(cfg, out)
    problem = _problem(model, ds)
    rows = pareto_sweep(model, problem, ds.labels, ds.splits["test"], solver, range(0, 2 * cfg.K + 1), repeats)
    BenchmarkReport(cfg.seed, dataset_name or ds.name, cfg.digest(), rows).write_csv(out / "pareto.csv")


def cmd_trace(cfg, ds, out):
    model, solver = _load_checkpoints(cfg, out)
    write_trace_csv(trace_rows(_problem(model, ds), solver, 2 * cfg.K), out / "trace.csv")


def cmd_overhead(cfg, data: str, out):
    path = Path(data)
    if path.is_dir():
        path = path / LOG_NAME
    summary = overhead_summary(read_log(path))
    with open(out / "overhead.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, data: str) -> None:
    files = {
        str(p.relative_to(out)): {"bytes": p.stat().st_size, "sha256": _sha256(p)}
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {"command": command, "dataset": data, "seed": cfg.seed, "config_hash": cfg.digest(),
                "config": asdict(cfg), "files": files}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ignn", description="Implicit graph network training and learned fixed-point solvers.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key=value config file (defaults used when omitted)")
    ap.add_argument("--data", required=True, help="dataset directory, synth:citeseer, synth:chain, or a log for overhead")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--repeats", type=int, default=5, help="timed runs per pareto point")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "overhead":
            cmd_overhead(cfg, args.data, out)
        else:
            ds = load_data(args.data, cfg.seed)
            if args.command == "train":
                cmd_train(cfg, ds, out)
            elif args.command == "train-solver":
                cmd_train_solver(cfg, ds, out)
            elif args.command == "alternate":
                cmd_alternate(cfg, ds, out)
            elif args.command == "pareto":
                cmd_pareto(cfg, ds, out, args.data, args.repeats)
            else:
                cmd_trace(cfg, ds, out)
        write_manifest(out, args.command, cfg, args.data)
    except (ConfigError, DomainError) as exc:
        print(f"ignn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericError) as exc:
        print(f"ignn: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (OSError, ParseError) as exc:
        print(f"ignn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
