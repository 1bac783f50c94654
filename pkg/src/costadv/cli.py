"""Command-line entry point: ``costadv <subcommand> [--config cfg.json] [--seed N] [--out DIR] [--jobs N]``.

Stages exchange files through the output directory:

    gen-data   -> dataset.npz
    train      -> model_<name>.json, train_<name>.csv
    calibrate  -> calibration.json, reliability.csv
    attack     -> attack_spec.json, attacks.jsonl
    grid       -> results.csv, payoff.csv, equilibrium.json, summary.md
    sweep      -> sweep.csv
    game       -> equilibrium.json (from an existing payoff.csv)
    report     -> everything above, from scratch, in one run

Exit status is 0 on success, 1 on invalid input and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import game, harness
from .attack import Objective, export_jsonl, save_spec
from .calibration import logit_bins, write_reliability_csv
from .data import SyntheticDataset
from .errors import NumericalError, ValidationError
from .model import forward_logits, load_model, save_model

log = logging.getLogger("costadv")


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    return cfg


def _need(path: Path) -> Path:
    if not path.exists():
        raise ValidationError(f"{path} not found; run the earlier pipeline stage first")
    return path


def _dataset(out: Path) -> SyntheticDataset:
    return SyntheticDataset.load(_need(out / "dataset.npz"))


def _models(out: Path, cfg) -> dict:
    names = {cfg.defender} | ({cfg.surrogate} if cfg.black_box else set())
    return {n: load_model(_need(out / f"model_{n}.json")) for n in sorted(names)}


def _temperatures(out: Path) -> dict:
    doc = json.loads(_need(out / "calibration.json").read_text())
    return {name: c["t_star"] for name, c in doc.items()}


def cmd_gen_data(args, cfg, out):
    ds = harness.make_dataset(cfg)
    ds.save(out / "dataset.npz")
    print(f"wrote {out / 'dataset.npz'} ({len(ds.labels)} samples, K={ds.params.k}, d={ds.params.d})")


def cmd_train(args, cfg, out):
    ds = _dataset(out)
    names = args.model or sorted({cfg.defender} | ({cfg.surrogate} if cfg.black_box else set()))
    for name in names:
        if name not in cfg.models:
            raise ValidationError(f"unknown model {name!r}; config defines {sorted(cfg.models)}")
        res = harness.train_model(cfg, ds, name)
        save_model(res.net, out / f"model_{name}.json")
        harness.write_dict_csv([{"epoch": i, "loss": v} for i, v in enumerate(res.loss_history)],
                               out / f"train_{name}.csv")
        x, y = ds.part("test")
        acc = float(np.mean(forward_logits(res.net, x).argmax(axis=1) == y))
        print(f"model {name}: final loss {res.loss_history[-1] if res.loss_history else float('nan'):.4f}, "
              f"clean test accuracy {acc:.3f}")


def cmd_calibrate(args, cfg, out):
    ds = _dataset(out)
    models = _models(out, cfg)
    fit, _, _ = harness.evaluation_split(cfg, ds)
    cal = {name: harness.calibrate_model(cfg, net, fit).to_json() for name, net in models.items()}
    (out / "calibration.json").write_text(json.dumps(cal, indent=2, sort_keys=True) + "\n")
    d = cfg.defender
    write_reliability_csv(logit_bins(forward_logits(models[d], fit[0]), fit[1], 1.0, cfg.calibration["m_bins"]),
                          out / "reliability.csv")
    for name, c in cal.items():
        print(f"model {name}: T* = {c['t_star']:.4f}, ECE {c['ece_before']:.4f} -> {c['ece_after']:.4f}")


def cmd_attack(args, cfg, out):
    ds = _dataset(out)
    models = _models(out, cfg)
    name = args.model or cfg.defender
    if name not in models:
        models[name] = load_model(_need(out / f"model_{name}.json"))
    temp = _temperatures(out)[name] if args.calibrated else 1.0
    _, (x, y), ids = harness.evaluation_split(cfg, ds)
    obj = Objective(args.objective)
    res = harness.attack_inputs(cfg, models[name], x, y, ids, obj, temp)
    spec = cfg.attack.replace(objective=obj, temperature=temp, seed=harness.derive_seed(cfg.seed, "attack"))
    save_spec(spec, out / "attack_spec.json")
    export_jsonl(res, x, out / "attacks.jsonl")
    print(f"{obj.value}: {len(x)} attacks, mean final objective {res.objective_trace[:, -1].mean():.4f}, "
          f"max linf {res.linf_norms(x).max():.6f}")


def _grid(cfg, out):
    ds = _dataset(out)
    models = _models(out, cfg)
    temps = _temperatures(out)
    _, ev, ids = harness.evaluation_split(cfg, ds)
    d = cfg.defender
    partial = out / "results.partial.csv"
    white, payoff = harness.run_grid(cfg, models[d], models[d], temps[d], temps[d], ev, ids, "white-box", d, d,
                                     partial)
    black = []
    if cfg.black_box:
        s = cfg.surrogate
        black, _ = harness.run_grid(cfg, models[d], models[s], temps[d], temps[s], ev, ids, "black-box", d, s,
                                    partial)
    return white, black, payoff


def cmd_grid(args, cfg, out):
    white, black, payoff = _grid(cfg, out)
    checks = {
        "black-box more effective than white-box": harness.transfer_check(white, black) if black else [],
        "MC cost above MP cost": [r.attack_label for r in harness.cost_rule_check(white + black)],
    }
    harness.emit_report(white + black, payoff, out, checks=checks)
    print((out / "summary.md").read_text())


def cmd_sweep(args, cfg, out):
    ds = _dataset(out)
    models = _models(out, cfg)
    _, ev, ids = harness.evaluation_split(cfg, ds)
    steps = [int(s) for s in args.steps.split(",")] if args.steps else cfg.sweep_steps
    d = cfg.defender
    rows = harness.run_nsteps_sweep(cfg, models[d], models[d], ev, ids, steps, "white-box", d, d)
    harness.write_dict_csv(rows, out / "sweep.csv")
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")


def cmd_game(args, cfg, out):
    pm = game.PayoffMatrix.load_csv(_need(Path(args.payoff) if args.payoff else out / "payoff.csv"))
    analysis = game.analyse(pm, args.tolerance)
    game.write_equilibrium(analysis, out / "equilibrium.json")
    print(json.dumps(analysis, indent=2, sort_keys=True))


def cmd_report(args, cfg, out):
    res = harness.run_pipeline(cfg, out, sweep=not args.no_sweep)
    ds = res.dataset
    ds.save(out / "dataset.npz")
    for name, net in res.models.items():
        save_model(net, out / f"model_{name}.json")
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    print((out / "summary.md").read_text())


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors (exit 1); argparse's default of 2 means numerical failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    def default(value):
        return argparse.SUPPRESS if suppress else value

    p = _Parser(add_help=False)
    p.add_argument("--config", default=default(None), help="experiment config JSON (defaults built in)")
    p.add_argument("--seed", type=int, default=default(None), help="master seed, overrides the config")
    p.add_argument("--out", default=default("out"), help="output directory (default: out)")
    p.add_argument("--jobs", type=int, default=default(None), help="worker processes for attack generation")
    p.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="costadv", description=__doc__.split("\n")[0], parents=[_global_flags(suppress=False)])
    # global flags are accepted after the subcommand too; SUPPRESS keeps them from clobbering earlier values
    common = _global_flags(suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset").set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train the defender and surrogate models")
    p.add_argument("--model", action="append", help="model name from the config (repeatable)")
    p.set_defaults(fn=cmd_train)

    sub.add_parser("calibrate", parents=[common], help="fit temperatures by ECE").set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("attack", parents=[common], help="run one attack type and export JSON lines")
    p.add_argument("--objective", choices=[o.value for o in Objective], default=Objective.MAXIMIN.value)
    p.add_argument("--model", help="attacking model (default: the defender)")
    p.add_argument("--calibrated", action="store_true", help="attack with the model's fitted temperature")
    p.set_defaults(fn=cmd_attack)

    sub.add_parser("grid", parents=[common], help="attacker x defender strategy grid").set_defaults(fn=cmd_grid)

    p = sub.add_parser("sweep", parents=[common], help="attack efficacy as a function of PGD steps")
    p.add_argument("--steps", help="comma-separated ascending step counts")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("game", parents=[common], help="equilibrium analysis of a payoff CSV")
    p.add_argument("--payoff", help="payoff CSV (default: OUT/payoff.csv)")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.set_defaults(fn=cmd_game)

    p = sub.add_parser("report", parents=[common], help="run the whole pipeline and write every output")
    p.add_argument("--no-sweep", action="store_true")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.fn(args, cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
