"""Projected-gradient (signed, l-infinity) attacks with three objectives.

* ``RandomTarget`` and ``CostSensitiveTarget`` maximise the log-probability
  of a target class; they differ only in how the target is picked.
* ``MaxiMin`` maximises the smallest expected cost over all predictions and
  ignores the true label.

Every input gets its own generator seeded from ``(spec.seed, input_id)`` and
inputs are processed in fixed-size chunks, so results do not depend on batch
layout or on how many worker processes are used.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cost import as_cost_matrix, min_cost_index
from .errors import NumericalError, ValidationError
from .model import Network, _as_batch, forward_logits, input_gradient, log_softmax, probabilities

CHUNK = 256


class Objective(str, enum.Enum):
    RANDOM_TARGET = "RandomTarget"
    COST_SENSITIVE_TARGET = "CostSensitiveTarget"
    MAXIMIN = "MaxiMin"

    @property
    def targeted(self) -> bool:
        return self is not Objective.MAXIMIN


@dataclass(frozen=True)
class AttackSpec:
    epsilon: float = 16 / 255
    alpha: float = 1.6 / 255
    n_steps: int = 10
    objective: Objective = Objective.RANDOM_TARGET
    random_init: bool = True
    domain_box: tuple = (0.0, 1.0)
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        lo, hi = (np.asarray(b, dtype=float) for b in self.domain_box)
        if self.epsilon <= 0 or self.alpha <= 0:
            raise ValidationError("epsilon and alpha must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError("n_steps must be a positive integer")
        if np.any(lo >= hi):
            raise ValidationError("domain box needs lo < hi in every coordinate")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")

    def replace(self, **changes) -> "AttackSpec":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        lo, hi = self.domain_box
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "n_steps": self.n_steps,
            "objective": self.objective.value,
            "random_init": self.random_init,
            "domain_box": [np.asarray(lo).tolist(), np.asarray(hi).tolist()],
            "temperature": self.temperature,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttackSpec":
        doc = dict(doc)
        if "domain_box" in doc:
            doc["domain_box"] = tuple(doc["domain_box"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(f"malformed attack spec: {exc}") from None


@dataclass
class AttackResult:
    x_adv: np.ndarray
    objective_trace: np.ndarray
    target: int | None = None


@dataclass
class BatchAttackResult:
    x_adv: np.ndarray  # (n, d)
    objective_trace: np.ndarray  # (n, n_steps + 1)
    targets: np.ndarray  # (n,), -1 when untargeted
    input_ids: np.ndarray
    objective: Objective
    snapshots: dict  # step -> (n, d) iterate after that many steps

    def linf_norms(self, x_origin) -> np.ndarray:
        return np.abs(self.x_adv - np.asarray(x_origin)).max(axis=1)

    def records(self, x_origin):
        for i, (iid, tgt, val, norm) in enumerate(
            zip(self.input_ids, self.targets, self.objective_trace[:, -1], self.linf_norms(x_origin))
        ):
            yield {
                "input_id": int(iid),
                "objective": self.objective.value,
                "target": None if tgt < 0 else int(tgt),
                "final_objective": float(val),
                "linf_norm": float(norm),
            }


def input_rng(seed: int, input_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), int(input_id)]))


def select_random_target(true_label: int, k: int, rng) -> int:
    t = int(rng.integers(k - 1))
    return t + (t >= true_label)


def select_cost_sensitive_target(true_label: int, cm, rng) -> int:
    """The prediction that would cost most given the true class; ties drawn uniformly."""
    col = as_cost_matrix(cm)[:, true_label]
    candidates = np.flatnonzero(col == col.max())
    return int(candidates[rng.integers(len(candidates))])


def targeted_ce_objective(targets, temperature: float = 1.0):
    """Logit-level ``log p_T(target)`` and its gradient ``(onehot - p_T) / T``."""
    targets = np.asarray(targets, dtype=int)

    def objective(z):
        rows = np.arange(len(z))
        lp = log_softmax(z, temperature)
        grad = -np.exp(lp)
        grad[rows, targets] += 1.0
        return lp[rows, targets], grad / temperature

    return objective


def maximin_objective(cm, temperature: float = 1.0):
    """Logit-level ``min_A sum_B C[A,B] p_T(B)``.

    The gradient follows the lowest-index prediction attaining the minimum.
    """
    c = as_cost_matrix(cm).entries
    scale = c.max()

    def objective(z):
        p = probabilities(z, temperature)
        ec = p @ c.T
        a = min_cost_index(ec, scale)
        rows = np.arange(len(z))
        row = c[a]
        grad = p * (row - ec[rows, a][:, None]) / temperature
        return ec[rows, a], grad

    return objective


def objective_targeted_ce(net: Network, temperature: float, x, target: int) -> float:
    z = forward_logits(net, np.atleast_2d(x))
    return float(targeted_ce_objective([target], temperature)(z)[0][0])


def objective_maximin(net: Network, temperature: float, cm, x) -> float:
    z = forward_logits(net, np.atleast_2d(x))
    return float(maximin_objective(cm, temperature)(z)[0][0])


def project_linf(x_candidate, x_origin, epsilon: float, domain_box=(0.0, 1.0)) -> np.ndarray:
    """Clamp the perturbation to the epsilon-ball, then the point to the domain box."""
    x_origin = np.asarray(x_origin, dtype=float)
    delta = np.clip(np.asarray(x_candidate, dtype=float) - x_origin, -epsilon, epsilon)
    lo, hi = domain_box
    return np.clip(x_origin + delta, lo, hi)


def _attack_chunk(net, x, spec, cm, labels, ids, snapshots):
    n, d = x.shape
    targets = np.full(n, -1, dtype=int)
    x0 = x.copy()
    for i in range(n):
        rng = input_rng(spec.seed, ids[i])
        if spec.objective is Objective.RANDOM_TARGET:
            targets[i] = select_random_target(labels[i], net.k, rng)
        elif spec.objective is Objective.COST_SENSITIVE_TARGET:
            targets[i] = select_cost_sensitive_target(labels[i], cm, rng)
        if spec.random_init:
            x0[i] = x[i] + rng.uniform(-spec.epsilon, spec.epsilon, size=d)

    if spec.objective.targeted:
        objective = targeted_ce_objective(targets, spec.temperature)
    else:
        objective = maximin_objective(cm, spec.temperature)

    xt = project_linf(x0, x, spec.epsilon, spec.domain_box)
    trace = np.empty((n, spec.n_steps + 1))
    snaps = {0: xt.copy()} if 0 in snapshots else {}
    for t in range(spec.n_steps + 1):
        value, grad = input_gradient(net, xt, objective)
        trace[:, t] = value
        if t == spec.n_steps:
            break
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at step {t}; trace so far: {trace[:, :t + 1].tolist()}")
        xt = project_linf(xt + spec.alpha * np.sign(grad), x, spec.epsilon, spec.domain_box)
        if t + 1 in snapshots:
            snaps[t + 1] = xt.copy()
    return xt, trace, targets, snaps


def _attack_chunk_args(args):
    return _attack_chunk(*args)


def pgd_attack_batch(net: Network, inputs, spec: AttackSpec, cm=None, true_labels=None,
                     input_ids=None, snapshots=(), jobs: int = 1) -> BatchAttackResult:
    x, _ = _as_batch(net, inputs)
    n = len(x)
    lo, hi = (np.asarray(b, dtype=float) for b in spec.domain_box)
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValidationError("clean inputs must lie inside the domain box")
    if spec.objective is Objective.MAXIMIN or spec.objective is Objective.COST_SENSITIVE_TARGET:
        if cm is None:
            raise ValidationError(f"{spec.objective.value} attack needs a cost matrix")
        cm = as_cost_matrix(cm)
        if cm.k != net.k:
            raise ValidationError(f"cost matrix is {cm.k} x {cm.k} but the network has {net.k} classes")
    if spec.objective.targeted:
        if true_labels is None:
            raise ValidationError(f"{spec.objective.value} attack needs true labels")
        labels = np.asarray(true_labels, dtype=int).reshape(-1)
        if len(labels) != n or labels.min(initial=0) < 0 or labels.max(initial=0) >= net.k:
            raise ValidationError("true labels must match the inputs and lie in range")
    else:
        labels = np.zeros(n, dtype=int)
    ids = np.arange(n) if input_ids is None else np.asarray(input_ids, dtype=np.int64).reshape(-1)
    if len(ids) != n:
        raise ValidationError("need one input id per input")
    snapshots = frozenset(int(s) for s in snapshots)
    if any(s < 0 or s > spec.n_steps for s in snapshots):
        raise ValidationError(f"snapshot steps must lie in [0, {spec.n_steps}]")

    chunks = [
        (net, x[s:s + CHUNK], spec, cm, labels[s:s + CHUNK], ids[s:s + CHUNK], snapshots)
        for s in range(0, n, CHUNK)
    ]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_attack_chunk_args, chunks))
    else:
        parts = [_attack_chunk(*c) for c in chunks]

    return BatchAttackResult(
        x_adv=np.concatenate([p[0] for p in parts]),
        objective_trace=np.concatenate([p[1] for p in parts]),
        targets=np.concatenate([p[2] for p in parts]),
        input_ids=ids,
        objective=spec.objective,
        snapshots={s: np.concatenate([p[3][s] for p in parts]) for s in sorted(snapshots)},
    )


def pgd_attack(net: Network, x, spec: AttackSpec, cm=None, true_label=None, input_id: int = 0) -> AttackResult:
    """Attack a single input; same result as its row in ``pgd_attack_batch``."""
    x = np.asarray(x, dtype=float)
    labels = None if true_label is None else [true_label]
    res = pgd_attack_batch(net, x[None, :], spec, cm, labels, input_ids=[input_id])
    target = int(res.targets[0]) if res.targets[0] >= 0 else None
    return AttackResult(res.x_adv[0], res.objective_trace[0], target)


def export_jsonl(result: BatchAttackResult, x_origin, path):
    with open(path, "w") as fh:
        for rec in result.records(x_origin):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_spec(spec: AttackSpec, path):
    Path(path).write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n")


def load_spec(path) -> AttackSpec:
    try:
        return AttackSpec.from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
