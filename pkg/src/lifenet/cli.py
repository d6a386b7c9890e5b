"""``lifenet`` command line: data generation, training, rollout, evaluation,
sweeps, charging surrogate and gradient checks.

Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure.
Data artifacts never contain timestamps; training wall times go to a
``*.timing.json`` sidecar.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import Dataset, format_float, read_drive_csv, write_drive_csv
from .errors import ConfigError, LifenetError, ValidationError

log = logging.getLogger("lifenet")

OBJECTIVE_FLAGS = {"baseline": "baseline", "reg": "regularized", "ts": "time_stability"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="seed for every random choice of the run (default 0)")
    g.add_argument("--threads", type=int, default=1, help="worker processes for sweeps (default 1, bit-reproducible)")
    g.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objective", choices=sorted(OBJECTIVE_FLAGS), default="baseline")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="smoothness weight (reg only)")
    p.add_argument("--layers", type=int, default=4, help="hidden layers (default 4)")
    p.add_argument("--hidden", type=int, default=100, help="units per hidden layer (default 100)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=4096, help="minibatch size for forward-difference objectives")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--max-unroll", type=int, default=4096, help="longest rollout chunk for ts (steps)")
    p.add_argument("--sessions-per-step", type=int, default=1, help="ts chunks accumulated per optimizer step")
    p.add_argument("--pretrain-epochs", type=int, default=0, help="forward-difference warm-up epochs before ts")
    p.add_argument("--pretrain-lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=None, help="stop after this many epochs without improvement")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="lifenet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="simulate drive (and charging) sessions")
    p.add_argument("--sessions", type=int, required=True)
    p.add_argument("--physics", type=Path, default=None, help="physics parameter JSON (default: bundled)")
    p.add_argument("--out", type=Path, required=True, help="drive-session CSV to write")
    p.add_argument("--step", type=float, default=10.0, help="sampling step in seconds")
    p.add_argument("--min-duration", type=float, default=1800.0)
    p.add_argument("--max-duration", type=float, default=5400.0)
    p.add_argument("--charging", type=Path, default=None, help="also write a charging-session CSV")
    p.add_argument("--charging-sessions", type=int, default=100)
    p.add_argument("--plant", type=Path, default=None, help="planted surrogate coefficients JSON")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std on charging statistics")

    p = sub.add_parser("train", parents=[common], help="train a model")
    _train_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--test", type=Path, default=None, help="held-out drive CSV scored after training")
    p.add_argument("--out", type=Path, required=True, help="checkpoint JSON")

    p = sub.add_parser("rollout", parents=[common], help="Euler rollout of one session")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--session", default=None, help="session id (required if the file holds several)")
    p.add_argument("--u0", type=float, default=None, help="initial temperature (default: recorded)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fit", type=Path, default=None, help="surrogate fit JSON for a charging trajectory")
    p.add_argument("--charging-out", type=Path, default=None)
    p.add_argument("--soc-end", type=float, default=100.0, help="target state of charge for charge time")

    p = sub.add_parser("eval", parents=[common], help="score models on test sessions")
    p.add_argument("--model", type=Path, action="append", required=True, help="checkpoint (repeatable)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)

    p = sub.add_parser("sweep", parents=[common], help="grid search over hyperparameters")
    _train_flags(p)
    p.add_argument("--grid", type=Path, default=None, help="grid JSON, e.g. {\"lambda\": [0, 0.1]}")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("surrogate-fit", parents=[common], help="fit the charging-statistics models")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="fit JSON (default: REPORT with .json suffix)")

    p = sub.add_parser("surrogate-predict", parents=[common], help="predict peak power and charge time")
    p.add_argument("--fit", type=Path, required=True)
    p.add_argument("--soc-start", type=float, required=True)
    p.add_argument("--soc-end", type=float, required=True)
    p.add_argument("--temp", type=float, required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of all gradients")
    p.add_argument("--trials", type=int, default=100)
    return parser


def _resolved(args) -> dict:
    def plain(v):
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, list):
            return [plain(x) for x in v]
        return v

    return {k: plain(v) for k, v in sorted(vars(args).items())}


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _train_config(args):
    from .nn import MlpArch
    from .trainer import TrainConfig

    objective = OBJECTIVE_FLAGS[args.objective]
    if (args.lam is not None) != (objective == "regularized"):
        raise ConfigError("--lambda is required with --objective reg and not allowed otherwise")
    return TrainConfig(
        objective=objective,
        lam=args.lam,
        arch=MlpArch(hidden_layers=args.layers, hidden_size=args.hidden),
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        max_unroll=args.max_unroll,
        sessions_per_step=args.sessions_per_step,
        patience=args.patience,
        pretrain_epochs=args.pretrain_epochs,
        pretrain_lr=args.pretrain_lr,
    )


def sidecar(path: Path, kind: str) -> Path:
    return path.with_name(f"{path.stem}.{kind}.json")


# --- subcommands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    from .datagen import generate_charging_sessions, generate_dataset, load_physics
    from .surrogate import PUBLISHED_PLANT, SurrogatePlant, write_charging_csv

    if args.min_duration > args.max_duration:
        raise ConfigError("--min-duration must not exceed --max-duration")
    physics = load_physics(args.physics)
    ds = generate_dataset(args.sessions, args.seed, physics, args.step, (args.min_duration, args.max_duration))
    write_drive_csv(ds, args.out)
    log.info("wrote %d sessions (%d samples) to %s", len(ds), ds.n_samples, args.out)
    if args.charging is not None:
        plant = PUBLISHED_PLANT
        if args.plant is not None:
            plant = SurrogatePlant.from_dict(json.loads(args.plant.read_text(encoding="utf-8")))
        # separate stream so the drive file does not depend on charging flags
        cseed = int(np.random.SeedSequence(args.seed, spawn_key=(1,)).generate_state(1)[0])
        rows = generate_charging_sessions(args.charging_sessions, cseed, plant, args.noise)
        write_charging_csv(rows, args.charging)
    return 0


def cmd_train(args) -> int:
    from .nn import save_model
    from .trainer import evaluate, train

    cfg = _train_config(args)
    train_ds = read_drive_csv(args.data)
    test_ds = read_drive_csv(args.test) if args.test else None
    report = train(cfg, train_ds)
    save_model(report.model, args.out, report.training_meta())
    _write_json(sidecar(args.out, "timing"), {
        "epoch_times_s": report.epoch_times,
        "time_per_epoch_s": report.time_per_epoch,
    })
    _write_json(sidecar(args.out, "report"), report.to_dict())
    if test_ds is not None:
        report.session_metrics, report.mean_metrics = evaluate(report.model, test_ds)
        _write_json(sidecar(args.out, "report"), report.to_dict())
        print(json.dumps({"mean_metrics": report.mean_metrics.to_dict()}))
    return 0


def _pick_session(ds: Dataset, sid):
    if sid is not None:
        try:
            return ds.get(sid)
        except KeyError:
            raise ValidationError(f"session {sid!r} not found") from None
    if len(ds) != 1:
        raise ValidationError(f"file holds {len(ds)} sessions; choose one with --session")
    return ds.sessions[0]


def cmd_rollout(args) -> int:
    from .core import BATTERY_LEVEL, metrics
    from .integrator import euler_rollout
    from .nn import load_model
    from .surrogate import charging_trajectory, load_fits

    model, _ = load_model(args.model)
    session = _pick_session(read_drive_csv(args.data), args.session)
    r = euler_rollout(model, session, args.u0)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_rel_s", "predicted_temp_c", "ground_truth_temp_c"])
        for t, up, ug in zip(r.times, r.predicted_temps, session.temps):
            w.writerow([format_float(t), format_float(up), format_float(ug)])
    if args.fit is not None:
        if args.charging_out is None:
            raise ConfigError("--fit needs --charging-out")
        fit_p, fit_t = load_fits(args.fit)
        peak, ctime = charging_trajectory(fit_p, fit_t, session.data[:, BATTERY_LEVEL], r.predicted_temps, args.soc_end)
        with open(args.charging_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_rel_s", "battery_level_pct", "predicted_temp_c", "peak_power_kw", "charge_time_min"])
            for row in zip(r.times, session.data[:, BATTERY_LEVEL], r.predicted_temps, peak, ctime):
                w.writerow([format_float(v) for v in row])
    print(json.dumps(metrics(r.predicted_temps, session.temps).to_dict()))
    return 0


def cmd_eval(args) -> int:
    from .nn import load_model
    from .trainer import evaluate

    test = read_drive_csv(args.data)
    with open(args.report, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "objective", "session_id", "mae", "mse", "relative_error_pct", "time_per_epoch_s"])
        for path in args.model:
            model, meta = load_model(path)
            per, mean = evaluate(model, test)
            timing = sidecar(path, "timing")
            tpe = ""
            if timing.exists():
                tpe = format_float(json.loads(timing.read_text(encoding="utf-8"))["time_per_epoch_s"])
            name = path.stem
            for sid, m in per.items():
                w.writerow([name, meta.get("objective", ""), sid, format_float(m.mae), format_float(m.mse),
                            format_float(m.relative_error_pct), ""])
            w.writerow([name, meta.get("objective", ""), "mean", format_float(mean.mae), format_float(mean.mse),
                        format_float(mean.relative_error_pct), tpe])
    return 0


def cmd_sweep(args) -> int:
    from .trainer import DEFAULT_HIDDEN_GRID, DEFAULT_LAMBDA_GRID, DEFAULT_LAYERS_GRID, sweep, write_sweep_csv

    if args.grid is not None:
        grid = json.loads(args.grid.read_text(encoding="utf-8"))
        if not isinstance(grid, dict):
            raise ConfigError("grid JSON must be an object mapping names to value lists")
    elif args.objective == "reg":
        grid = {"lambda": list(DEFAULT_LAMBDA_GRID)}
    else:
        grid = {"hidden_size": list(DEFAULT_HIDDEN_GRID), "hidden_layers": list(DEFAULT_LAYERS_GRID)}
    if "lambda" in grid and args.lam is None:
        args.lam = 0.0
        args.objective = "reg"
    base = _train_config(args)
    rows = sweep(base, grid, read_drive_csv(args.data), read_drive_csv(args.test), threads=args.threads)
    write_sweep_csv(rows, args.out)
    return 0


def cmd_surrogate_fit(args) -> int:
    from .surrogate import fit_charge_time, fit_peak_power, read_charging_csv, save_fits, write_fit_report

    sessions = read_charging_csv(args.data)
    fit_p = fit_peak_power(sessions)
    fit_t = fit_charge_time(sessions)
    write_fit_report({"peak_power": fit_p, "charge_time": fit_t}, args.report)
    save_fits(fit_p, fit_t, args.out or args.report.with_suffix(".json"))
    return 0


def cmd_surrogate_predict(args) -> int:
    from .surrogate import load_fits, predict_charging

    fit_p, fit_t = load_fits(args.fit)
    peak, ctime = predict_charging(fit_p, fit_t, args.soc_start, args.soc_end, args.temp)
    print(json.dumps({"peak_power_kw": peak, "charge_time_min": ctime}))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    results = run_gradcheck(args.trials, args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: max relative error {r.max_error:.3e} "
              f"(tolerance {r.tolerance:.0e}, {r.trials} trials)")
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "surrogate-fit": cmd_surrogate_fit,
    "surrogate-predict": cmd_surrogate_predict,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("lifenet: error: --threads must be >= 1", file=sys.stderr)
        return 1
    print("config: " + json.dumps(_resolved(args)), file=sys.stderr)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        threadpool_limits = None
    try:
        if threadpool_limits is not None:
            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"lifenet: error: {exc}", file=sys.stderr)
        return 1
    except (LifenetError, OSError, ValueError, KeyError) as exc:
        print(f"lifenet: runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
