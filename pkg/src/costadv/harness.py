"""End-to-end desk-scale experiment: data, training, calibration, attacks, game.

The pipeline is a pure function of ``ExperimentConfig`` (including its master
seed).  Every stage derives its own seed from the master seed and a stage
name, so changing one stage's settings never reshuffles another's randomness.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import game
from .attack import AttackSpec, Objective, pgd_attack_batch
from .calibration import CalibrationResult, fit_temperature, logit_bins, write_reliability_csv
from .cost import SuperCategorySpec, build_supercategory_cost_matrix, mean_ci, min_cost_index
from .data import DatasetParams, SyntheticDataset, generate_dataset
from .errors import NumericalError, ValidationError
from .model import Network, TrainConfig, forward_logits, init_network, probabilities, train

log = logging.getLogger(__name__)

ATTACK_ABBREV = {
    Objective.RANDOM_TARGET: "RT",
    Objective.COST_SENSITIVE_TARGET: "CST",
    Objective.MAXIMIN: "MM",
}


def derive_seed(master: int, name: str) -> int:
    ss = np.random.SeedSequence([int(master) & (2**63 - 1), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class ModelSpec:
    hidden: list
    adversarial: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 5
    dataset: DatasetParams = field(default_factory=lambda: DatasetParams(noise=0.15))
    cost: SuperCategorySpec = field(default_factory=lambda: SuperCategorySpec(10, 8, 1.0, 2.0, 5.0, 200.0, 0))
    models: dict = field(default_factory=lambda: {"A": ModelSpec([64]), "B": ModelSpec([32, 32])})
    train: dict = field(default_factory=lambda: {
        "epochs": 30, "batch_size": 64, "learning_rate": 0.05, "momentum": 0.9, "adv_epsilon_scale": 2.5,
    })
    attack: AttackSpec = field(default_factory=AttackSpec)
    calibration: dict = field(default_factory=lambda: {
        "m_bins": 15, "fit_fraction": 0.1, "t_lo": 0.25, "t_hi": 4.0, "resolution": 1e-3,
    })
    objectives: list = field(default_factory=lambda: [o.value for o in Objective])
    n_attacks: int = 2000
    defender: str = "B"
    surrogate: str = "A"
    black_box: bool = True
    sweep_steps: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100])
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DatasetParams(**self.dataset)
        if isinstance(self.cost, dict):
            self.cost = SuperCategorySpec.from_json(self.cost)
        if isinstance(self.attack, dict):
            self.attack = AttackSpec.from_json(self.attack)
        self.models = {k: ModelSpec(**v) if isinstance(v, dict) else v for k, v in self.models.items()}
        self.objectives = [Objective(o).value for o in self.objectives]
        if self.cost.k != self.dataset.k:
            raise ValidationError(f"cost matrix has K={self.cost.k} but the dataset has K={self.dataset.k}")
        if self.defender not in self.models or (self.black_box and self.surrogate not in self.models):
            raise ValidationError("defender and surrogate must name entries of 'models'")
        if self.n_attacks < 2:
            raise ValidationError("n_attacks must be at least 2")

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["cost"] = self.cost.to_json()
        doc["attack"] = self.attack.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed experiment config: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None


# ---------------------------------------------------------------- stages

def make_dataset(cfg: ExperimentConfig) -> SyntheticDataset:
    return generate_dataset(dataclasses.replace(cfg.dataset, seed=derive_seed(cfg.seed, "dataset")))


def train_model(cfg: ExperimentConfig, ds: SyntheticDataset, name: str):
    ms = cfg.models[name]
    arch = [ds.params.d, *ms.hidden, ds.params.k]
    net = init_network(arch, derive_seed(cfg.seed, f"init/{name}"))
    t = dict(cfg.train)
    scale = t.pop("adv_epsilon_scale", 1.0)
    adversarial = None
    if ms.adversarial:
        adversarial = cfg.attack.replace(epsilon=cfg.attack.epsilon * scale, alpha=cfg.attack.alpha * scale,
                                         temperature=1.0)
    tc = TrainConfig(seed=derive_seed(cfg.seed, f"train/{name}"), adversarial=adversarial, **t)
    x, y = ds.part("train")
    return train(net, x, y, tc)


def evaluation_split(cfg: ExperimentConfig, ds: SyntheticDataset):
    """Calibration-fit subset and evaluation subset of the held-out pool.

    The pool is the validation split followed by the test split; the first
    ``fit_fraction`` of it fits temperatures and is never attacked.
    """
    xv, yv = ds.part("val")
    xt, yt = ds.part("test")
    x, y = np.concatenate([xv, xt]), np.concatenate([yv, yt])
    n_fit = math.ceil(cfg.calibration["fit_fraction"] * len(x))
    if n_fit < 1 or len(x) - n_fit < cfg.n_attacks:
        raise ValidationError(f"held-out pool of {len(x)} cannot supply {n_fit} fit and {cfg.n_attacks} eval samples")
    fit = (x[:n_fit], y[:n_fit])
    ev = (x[n_fit:n_fit + cfg.n_attacks], y[n_fit:n_fit + cfg.n_attacks])
    return fit, ev, np.arange(n_fit, n_fit + cfg.n_attacks)


def calibrate_model(cfg: ExperimentConfig, net: Network, fit) -> CalibrationResult:
    c = cfg.calibration
    return fit_temperature(net, fit[0], fit[1], c["m_bins"], (c["t_lo"], c["t_hi"], c["resolution"]))


# ---------------------------------------------------------------- evaluation

@dataclass
class ResultRow:
    scenario: str
    defender: str
    surrogate: str
    attack: str
    attacker_calibrated: bool
    defender_calibrated: bool
    n: int
    mp_acc: float
    mp_acc_ci: float
    mp_cost: float
    mp_cost_ci: float
    mc_acc: float
    mc_acc_ci: float
    mc_cost: float
    mc_cost_ci: float
    steps: int = 0
    d_mp_acc: float = 0.0
    d_mp_cost: float = 0.0
    d_mc_acc: float = 0.0
    d_mc_cost: float = 0.0

    @property
    def attack_label(self) -> str:
        return f"{self.attack}&{'C' if self.attacker_calibrated else '~C'}"

    def defense_label(self, rule: str) -> str:
        return f"{rule}&{'C' if self.defender_calibrated else '~C'}"


FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


def evaluate(net: Network, x, y, cm, temperature: float) -> dict:
    """MP / MC accuracy and average cost of ``net`` on ``(x, y)`` with 95% CIs."""
    p = probabilities(forward_logits(net, x), temperature)
    mp = p.argmax(axis=1)
    mc = min_cost_index(p @ cm.entries.T, cm.entries.max())
    out = {"n": len(y)}
    for rule, pred in (("mp", mp), ("mc", mc)):
        out[f"{rule}_acc"], out[f"{rule}_acc_ci"] = mean_ci(pred == y)
        out[f"{rule}_cost"], out[f"{rule}_cost_ci"] = mean_ci(cm.entries[pred, y])
    return out


def _with_deltas(rows):
    clean = {(r.scenario, r.defender_calibrated): r for r in rows if r.attack == "clean"}
    for r in rows:
        base = clean.get((r.scenario, r.defender_calibrated))
        if base is None:
            continue
        r.d_mp_acc = r.mp_acc - base.mp_acc
        r.d_mp_cost = r.mp_cost - base.mp_cost
        r.d_mc_acc = r.mc_acc - base.mc_acc
        r.d_mc_cost = r.mc_cost - base.mc_cost
    return rows


def attack_inputs(cfg, surrogate, x, y, ids, objective, temperature, n_steps=None, snapshots=()):
    cm = build_supercategory_cost_matrix(cfg.cost)
    spec = cfg.attack.replace(objective=objective, temperature=temperature, seed=derive_seed(cfg.seed, "attack"))
    if n_steps is not None:
        spec = spec.replace(n_steps=n_steps)
    return pgd_attack_batch(surrogate, x, spec, cm, y, input_ids=ids, snapshots=snapshots, jobs=cfg.jobs)


def run_grid(cfg, defender, surrogate, t_defender, t_surrogate, ev, ids, scenario="white-box",
             defender_name="B", surrogate_name="B", partial_path=None):
    """Every attacker strategy against every defender strategy.

    Returns the result rows (clean baseline included) and, when the full
    3 x 2 attack grid was run, the 4 x 6 payoff matrix of average costs.
    """
    cm = build_supercategory_cost_matrix(cfg.cost)
    x, y = ev
    rows = []

    def add(attack, att_cal, x_eval, steps):
        for def_cal in (False, True):
            stats = evaluate(defender, x_eval, y, cm, t_defender if def_cal else 1.0)
            rows.append(ResultRow(scenario, defender_name, surrogate_name if attack != "clean" else "-",
                                  attack, att_cal, def_cal, steps=steps, **stats))

    add("clean", False, x, 0)
    try:
        for obj in map(Objective, cfg.objectives):
            for att_cal in (False, True):
                res = attack_inputs(cfg, surrogate, x, y, ids, obj, t_surrogate if att_cal else 1.0)
                add(ATTACK_ABBREV[obj], att_cal, res.x_adv, cfg.attack.n_steps)
    except NumericalError:
        if partial_path is not None:
            write_results_csv(_with_deltas(rows), partial_path)
        raise
    _with_deltas(rows)

    payoff = None
    if len(cfg.objectives) == len(Objective):
        payoff = game.build_payoff(payoff_cells(rows))
    return rows, payoff


def payoff_cells(rows) -> dict:
    cells = {}
    for r in rows:
        if r.attack == "clean":
            continue
        cells[r.defense_label("MP"), r.attack_label] = r.mp_cost
        cells[r.defense_label("MC"), r.attack_label] = r.mc_cost
    return cells


def run_nsteps_sweep(cfg, defender, surrogate, ev, ids, steps_list, scenario="white-box",
                     defender_name="B", surrogate_name="B"):
    """One long attack per objective, evaluated at every listed step count."""
    steps_list = [int(s) for s in steps_list]
    if not steps_list or steps_list != sorted(set(steps_list)) or steps_list[0] < 1:
        raise ValidationError("steps_list must be strictly ascending positive integers")
    cm = build_supercategory_cost_matrix(cfg.cost)
    x, y = ev
    rows = []
    for obj in map(Objective, cfg.objectives):
        res = attack_inputs(cfg, surrogate, x, y, ids, obj, 1.0, n_steps=steps_list[-1], snapshots=steps_list)
        for s in steps_list:
            stats = evaluate(defender, res.snapshots[s], y, cm, 1.0)
            obj_mean, obj_ci = mean_ci(res.objective_trace[:, s])
            rows.append({"scenario": scenario, "defender": defender_name, "surrogate": surrogate_name,
                         "attack": ATTACK_ABBREV[obj], "steps": s, **stats,
                         "objective_mean": obj_mean, "objective_ci": obj_ci})
    return rows


# ---------------------------------------------------------------- soft checks

EFFICACY = (("mp_cost", +1), ("mc_cost", +1), ("mp_acc", -1), ("mc_acc", -1))


def _overlap(a, a_ci, b, b_ci) -> bool:
    return abs(a - b) <= a_ci + b_ci


def transfer_check(white_rows, black_rows):
    """Cells where black-box attacks look more effective than white-box ones.

    Transfer attacks should be at most as effective, so each such cell
    triggers a warning; ``overlapping`` says whether the CIs still overlap.
    """
    white = {(r.attack, r.attacker_calibrated, r.defender_calibrated): r for r in white_rows if r.attack != "clean"}
    flagged = []
    for b in black_rows:
        w = white.get((b.attack, b.attacker_calibrated, b.defender_calibrated))
        if b.attack == "clean" or w is None:
            continue
        for metric, sign in EFFICACY:
            bv, wv = getattr(b, metric), getattr(w, metric)
            if sign * (bv - wv) > 0:
                cell = {"attack": b.attack_label, "defender_calibrated": b.defender_calibrated, "metric": metric,
                        "white": wv, "black": bv,
                        "overlapping": _overlap(bv, getattr(b, metric + "_ci"), wv, getattr(w, metric + "_ci"))}
                flagged.append(cell)
                warnings.warn(f"black-box {metric} ({bv:.4g}) more effective than white-box ({wv:.4g}) "
                              f"for {b.attack_label}, defender calibrated={b.defender_calibrated}"
                              f"{'' if cell['overlapping'] else ' beyond CI overlap'}", RuntimeWarning, stacklevel=2)
    return flagged


def cost_rule_check(rows):
    """Rows where minimum-cost prediction did not beat maximum-probability on average cost."""
    bad = [r for r in rows if r.mc_cost > r.mp_cost]
    for r in bad:
        warnings.warn(f"MC cost {r.mc_cost:.4g} exceeds MP cost {r.mp_cost:.4g} for {r.scenario} {r.attack_label} "
                      f"(defender calibrated={r.defender_calibrated})", RuntimeWarning, stacklevel=2)
    return bad


# ---------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_results_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in FIELDS])


def read_results_csv(path) -> list[ResultRow]:
    types = {f.name: f.type for f in dataclasses.fields(ResultRow)}
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                t = types[k]
                kw[k] = (v == "1") if t == "bool" else int(v) if t == "int" else float(v) if t == "float" else v
            rows.append(ResultRow(**kw))
    return rows


def write_dict_csv(rows, path):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])


def _pm(v, ci, pct=False):
    return f"{100 * v:.1f} ± {100 * ci:.1f}" if pct else f"{v:.2f} ± {ci:.2f}"


def summary_markdown(rows, payoff, analysis, calibration, checks) -> str:
    out = ["# Cost-sensitive attack experiment", ""]
    if calibration:
        out += ["## Calibration", "", "| model | T* | ECE(T=1) | ECE(T*) |", "|---|---|---|---|"]
        for name, c in sorted(calibration.items()):
            out.append(f"| {name} | {c['t_star']:.3f} | {c['ece_before']:.4f} | {c['ece_after']:.4f} |")
        out.append("")
    groups = {}
    for r in rows:
        groups.setdefault((r.scenario, r.attacker_calibrated, r.defender_calibrated), []).append(r)
    clean = {(r.scenario, r.defender_calibrated): r for r in rows if r.attack == "clean"}
    for (scenario, att_cal, def_cal), group in sorted(groups.items()):
        if all(r.attack == "clean" for r in group) and att_cal is False and len(groups) > 1:
            continue
        title = f"{scenario}: attacker {'calibrates' if att_cal else 'uncalibrated'}, " \
                f"defender {'calibrates' if def_cal else 'uncalibrated'}"
        out += [f"## {title}", "", "| attack | MP acc (%) | MP cost | MC acc (%) | MC cost |", "|---|---|---|---|---|"]
        base = clean.get((scenario, def_cal))
        for r in ([base] if base and base not in group else []) + group:
            out.append(f"| {r.attack} | {_pm(r.mp_acc, r.mp_acc_ci, True)} | {_pm(r.mp_cost, r.mp_cost_ci)} "
                       f"| {_pm(r.mc_acc, r.mc_acc_ci, True)} | {_pm(r.mc_cost, r.mc_cost_ci)} |")
        out.append("")
    if payoff is not None:
        out += ["## Attacker payoff (average cost)", "", "| defender | " + " | ".join(payoff.col_labels) + " |",
                "|---" * (len(payoff.col_labels) + 1) + "|"]
        nash = {tuple(c) for c in analysis["pure_nash"]} if analysis else set()
        for i, rl in enumerate(payoff.row_labels):
            cells = [f"**{v:.2f}**" if (rl, cl) in nash else f"{v:.2f}"
                     for cl, v in zip(payoff.col_labels, payoff.values[i])]
            out.append(f"| {rl} | " + " | ".join(cells) + " |")
        out.append("")
    if analysis:
        dom = analysis["dominant"]
        out += ["## Game analysis", "",
                f"- pure Nash equilibria: {', '.join('(' + ', '.join(c) + ')' for c in analysis['pure_nash']) or 'none'}",
                f"- game value: {analysis['value']:.4f} ({analysis['kind']}, exploitability {analysis['exploitability']:.2g})",
                f"- attacker dominant strategy: strict {dom['attacker']['strict']}, weak {dom['attacker']['weak']}",
                f"- defender dominant strategy: strict {dom['defender']['strict']}, weak {dom['defender']['weak']}",
                f"- strict iterated elimination leaves rows {analysis['iterated_elimination']['rows']}, "
                f"columns {analysis['iterated_elimination']['cols']}", ""]
    if checks:
        out += ["## Soft checks", ""]
        for name, items in checks.items():
            out.append(f"- {name}: {len(items)} flagged")
        out.append("")
    return "\n".join(out)


def emit_report(rows, payoff, out_dir, reliability=None, calibration=None, sweep_rows=None, checks=None):
    """Write results.csv, payoff.csv, equilibrium.json, reliability.csv and summary.md."""
    if not rows:
        raise ValidationError("no result rows to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from None
    write_results_csv(rows, out / "results.csv")
    analysis = None
    if payoff is not None:
        payoff.save_csv(out / "payoff.csv")
        analysis = game.analyse(payoff)
        game.write_equilibrium(analysis, out / "equilibrium.json")
    if reliability is not None:
        write_reliability_csv(reliability, out / "reliability.csv")
    if calibration is not None:
        (out / "calibration.json").write_text(json.dumps(calibration, indent=2, sort_keys=True) + "\n")
    if sweep_rows:
        write_dict_csv(sweep_rows, out / "sweep.csv")
    (out / "summary.md").write_text(summary_markdown(rows, payoff, analysis, calibration, checks or {}))
    return analysis


# ---------------------------------------------------------------- whole pipeline

@dataclass
class PipelineResult:
    dataset: SyntheticDataset
    models: dict
    calibration: dict
    white_rows: list
    black_rows: list
    payoff: object
    sweep_rows: list
    checks: dict
    analysis: dict | None = None

    @property
    def rows(self):
        return self.white_rows + self.black_rows


def run_pipeline(cfg: ExperimentConfig, out_dir=None, sweep: bool = True) -> PipelineResult:
    ds = make_dataset(cfg)
    names = [cfg.defender] + ([cfg.surrogate] if cfg.black_box and cfg.surrogate != cfg.defender else [])
    models = {}
    for name in names:
        log.info("training model %s", name)
        models[name] = train_model(cfg, ds, name).net
    fit, ev, ids = evaluation_split(cfg, ds)
    cal = {name: calibrate_model(cfg, net, fit) for name, net in models.items()}
    temps = {name: c.t_star for name, c in cal.items()}

    d = cfg.defender
    partial = Path(out_dir) / "results.partial.csv" if out_dir else None
    white, payoff = run_grid(cfg, models[d], models[d], temps[d], temps[d], ev, ids,
                             "white-box", d, d, partial)
    black = []
    if cfg.black_box:
        s = cfg.surrogate
        black, _ = run_grid(cfg, models[d], models[s], temps[d], temps[s], ev, ids, "black-box", d, s, partial)
    sweep_rows = []
    if sweep and cfg.sweep_steps and cfg.objectives:
        sweep_rows = run_nsteps_sweep(cfg, models[d], models[d], ev, ids, cfg.sweep_steps, "white-box", d, d)

    checks = {
        "black-box more effective than white-box": transfer_check(white, black) if black else [],
        "MC cost above MP cost": [dataclasses.asdict(r) for r in cost_rule_check(white + black)],
    }
    result = PipelineResult(ds, models, {k: v.to_json() for k, v in cal.items()}, white, black, payoff,
                            sweep_rows, checks)
    if out_dir is not None:
        reliability = logit_bins(forward_logits(models[d], fit[0]), fit[1], 1.0, cfg.calibration["m_bins"])
        result.analysis = emit_report(result.rows, payoff, out_dir, reliability, result.calibration,
                                      sweep_rows, checks)
    return result
