"""Attacker/defender analysis as a finite two-player zero-sum game.

The defender is the row player and *minimises* the average cost; the
attacker is the column player and *maximises* it.  ``PayoffMatrix.values``
holds the attacker's payoff (the average cost) throughout.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, ValidationError
from .kernels import fictitious_play_steps

DEFENDER_STRATEGIES = ("MP&~C", "MP&C", "MC&~C", "MC&C")
ATTACKER_STRATEGIES = ("RT&~C", "RT&C", "CST&~C", "CST&C", "MM&~C", "MM&C")


@dataclass(frozen=True)
class PayoffMatrix:
    row_labels: tuple
    col_labels: tuple
    values: np.ndarray

    def __post_init__(self):
        rows, cols = tuple(map(str, self.row_labels)), tuple(map(str, self.col_labels))
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape != (len(rows), len(cols)) or v.size == 0:
            raise ValidationError(f"values shape {v.shape} does not match {len(rows)} x {len(cols)} labels")
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValidationError("strategy labels must be unique")
        if not np.all(np.isfinite(v)):
            raise ValidationError("payoff values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "col_labels", cols)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def cell(self, row: str, col: str) -> float:
        return float(self.values[self.row_labels.index(row), self.col_labels.index(col)])

    def subgame(self, rows, cols) -> "PayoffMatrix":
        rows, cols = list(rows), list(cols)
        return PayoffMatrix(
            [self.row_labels[i] for i in rows],
            [self.col_labels[j] for j in cols],
            self.values[np.ix_(rows, cols)],
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["defender\\attacker", *self.col_labels])
        for label, row in zip(self.row_labels, self.values):
            w.writerow([label, *(repr(float(x)) for x in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PayoffMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if len(rows) < 2 or len(rows[0]) < 2:
            raise ValidationError("payoff CSV needs a header row and at least one data row")
        cols = rows[0][1:]
        try:
            values = [[float(x) for x in r[1:]] for r in rows[1:]]
        except ValueError as exc:
            raise ValidationError(f"non-numeric payoff entry: {exc}") from None
        if any(len(v) != len(cols) for v in values):
            raise ValidationError("ragged payoff CSV")
        return cls([r[0] for r in rows[1:]], cols, values)

    def save_csv(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def load_csv(cls, path) -> "PayoffMatrix":
        return cls.from_csv(Path(path).read_text())


@dataclass(frozen=True)
class Equilibrium:
    kind: str
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    value: float
    lower: float
    upper: float
    iterations: int = 0
    row_labels: tuple = field(default=(), compare=False)
    col_labels: tuple = field(default=(), compare=False)

    @property
    def exploitability(self) -> float:
        return self.upper - self.lower

    def to_json(self) -> dict:
        rows = self.row_labels or tuple(str(i) for i in range(len(self.row_strategy)))
        cols = self.col_labels or tuple(str(i) for i in range(len(self.col_strategy)))
        return {
            "kind": self.kind,
            "value": self.value,
            "row_mix": dict(zip(rows, map(float, self.row_strategy))),
            "col_mix": dict(zip(cols, map(float, self.col_strategy))),
            "exploitability": self.exploitability,
        }


def pure_nash(pm: PayoffMatrix) -> list[tuple[str, str]]:
    """Saddle points: column minima (defender) that are also row maxima (attacker)."""
    v = pm.values
    is_col_min = v == v.min(axis=0, keepdims=True)
    is_row_max = v == v.max(axis=1, keepdims=True)
    return [(pm.row_labels[r], pm.col_labels[c]) for r, c in zip(*np.nonzero(is_col_min & is_row_max))]


def _dominates(better: np.ndarray, worse: np.ndarray, mode: str) -> bool:
    # `better` / `worse` are oriented so that larger is better for the player
    if mode == "strict":
        return bool(np.all(better > worse))
    if mode == "weak":
        return bool(np.all(better >= worse) and np.any(better > worse))
    raise ValidationError(f"mode must be 'strict' or 'weak', got {mode!r}")


def _oriented(pm: PayoffMatrix, player: str) -> np.ndarray:
    """Strategies as rows of a matrix in which the player prefers larger entries."""
    if player == "attacker":
        return pm.values.T
    if player == "defender":
        return -pm.values
    raise ValidationError(f"player must be 'attacker' or 'defender', got {player!r}")


def dominant_strategy(pm: PayoffMatrix, player: str, mode: str = "strict") -> str | None:
    u = _oriented(pm, player)
    labels = pm.col_labels if player == "attacker" else pm.row_labels
    for s in range(len(u)):
        if all(_dominates(u[s], u[t], mode) for t in range(len(u)) if t != s):
            return labels[s]
    return None


def _dominated(u: np.ndarray, mode: str) -> list[int]:
    return [t for t in range(len(u)) if any(_dominates(u[s], u[t], mode) for s in range(len(u)) if s != t)]


def iterated_elimination(pm: PayoffMatrix, mode: str = "strict"):
    """Remove dominated pure strategies until nothing changes.

    Each round drops every dominated attacker column, then every dominated
    defender row of what is left.  Returns the reduced game and the list of
    ``(player, label)`` removals in order.
    """
    rows, cols = list(range(pm.shape[0])), list(range(pm.shape[1]))
    order = []
    while True:
        sub = pm.subgame(rows, cols)
        drop = _dominated(_oriented(sub, "attacker"), mode)
        order += [("attacker", sub.col_labels[j]) for j in drop]
        cols = [c for j, c in enumerate(cols) if j not in drop]

        sub = pm.subgame(rows, cols)
        drop_rows = _dominated(_oriented(sub, "defender"), mode)
        order += [("defender", sub.row_labels[i]) for i in drop_rows]
        rows = [r for i, r in enumerate(rows) if i not in drop_rows]
        if not drop and not drop_rows:
            return pm.subgame(rows, cols), order


def _bounds(values, x, y):
    upper = float(np.max(x @ values))
    lower = float(np.min(values @ y))
    # lower <= upper always holds exactly; an exact equilibrium can invert them by rounding
    return min(lower, upper), max(lower, upper)


def _equalizer(sub: np.ndarray):
    """Mixture over the columns of ``sub`` making every row's payoff equal."""
    n_rows, n_cols = sub.shape
    system = np.zeros((n_rows + 1, n_cols + 1))
    system[:n_rows, :n_cols] = sub
    system[:n_rows, n_cols] = -1.0
    system[n_rows, :n_cols] = 1.0
    rhs = np.zeros(n_rows + 1)
    rhs[n_rows] = 1.0
    sol = np.linalg.lstsq(system, rhs, rcond=None)[0]
    mix = sol[:n_cols]
    if np.any(mix < -1e-12) or not np.all(np.isfinite(mix)):
        return None
    mix = np.clip(mix, 0.0, None)
    total = mix.sum()
    return mix / total if total > 0 else None


def _polish(values, x, y, lower, upper):
    """Guess the equilibrium supports from an approximate solution and solve them exactly.

    Yields candidate ``(x, y)`` pairs; the caller keeps whichever certifies best.
    """
    slack = max(upper - lower, 1e-12)
    supports = []
    for theta in (0.5, 0.2, 0.05, 0.01, 1e-3):
        supports.append((x >= theta * x.max(), y >= theta * y.max()))
    supports.append((values @ y <= lower + slack, x @ values >= upper - slack))
    seen = set()
    for rs, cs in supports:
        key = (rs.tobytes(), cs.tobytes())
        if key in seen:
            continue
        seen.add(key)
        ri, ci = np.flatnonzero(rs), np.flatnonzero(cs)
        # defender's mixture equalises the attacker's columns in the support, and vice versa
        xs = _equalizer(values[np.ix_(ri, ci)].T)
        ys = _equalizer(values[np.ix_(ri, ci)])
        if xs is None or ys is None:
            continue
        xf, yf = np.zeros_like(x), np.zeros_like(y)
        xf[ri], yf[ci] = xs, ys
        yield xf, yf


def solve_zero_sum(pm: PayoffMatrix, tolerance: float = 1e-6, max_iters: int = 1_000_000) -> Equilibrium:
    """Mixed equilibrium via fictitious play, certified by exploitability.

    Fictitious play alone converges slowly, so at every checkpoint the
    current supports are also solved exactly; a candidate is accepted only
    if its exploitability ``max_j (x A)_j - min_i (A y)_i`` is within
    ``tolerance``.
    """
    if tolerance <= 0:
        raise ValidationError("tolerance must be positive")
    if max_iters < 1:
        raise ValidationError("max_iters must be at least 1")
    values = np.ascontiguousarray(pm.values, dtype=float)
    n_rows, n_cols = values.shape
    row_cum, col_cum = np.zeros(n_rows), np.zeros(n_cols)
    row_counts = np.zeros(n_rows, dtype=np.int64)
    col_counts = np.zeros(n_cols, dtype=np.int64)

    best = None
    done, chunk = 0, 64
    while done < max_iters:
        steps = min(chunk, max_iters - done)
        fictitious_play_steps(values, row_cum, col_cum, row_counts, col_counts, steps)
        done += steps
        chunk = min(chunk * 2, 1 << 16)

        x, y = row_counts / row_counts.sum(), col_counts / col_counts.sum()
        lower, upper = _bounds(values, x, y)
        candidates = [(x, y)]
        if upper - lower > tolerance:
            candidates += list(_polish(values, x, y, lower, upper))
        for cx, cy in candidates:
            lo, up = _bounds(values, cx, cy)
            if best is None or up - lo < best[3] - best[2]:
                best = (cx, cy, lo, up)
        if best[3] - best[2] <= tolerance:
            break
    else:
        raise ConvergenceError(
            f"fictitious play: exploitability {best[3] - best[2]:.3g} > {tolerance:.3g} after {done} iterations",
            best=_make_equilibrium(pm, *best, done),
        )
    return _make_equilibrium(pm, *best, done)


def _make_equilibrium(pm, x, y, lower, upper, iterations):
    pure = np.count_nonzero(x) == 1 and np.count_nonzero(y) == 1
    return Equilibrium(
        kind="Pure" if pure else "Mixed",
        row_strategy=x,
        col_strategy=y,
        value=0.5 * (lower + upper),
        lower=lower,
        upper=upper,
        iterations=iterations,
        row_labels=pm.row_labels,
        col_labels=pm.col_labels,
    )


def build_payoff(results: dict, rows=DEFENDER_STRATEGIES, cols=ATTACKER_STRATEGIES) -> PayoffMatrix:
    """Arrange ``{(defender, attacker): average_cost}`` into a payoff matrix."""
    missing = [(r, c) for r in rows for c in cols if (r, c) not in results]
    if missing:
        raise ValidationError(f"payoff grid is missing cells: {missing}")
    return PayoffMatrix(rows, cols, [[results[r, c] for c in cols] for r in rows])


def payoff_to_results(pm: PayoffMatrix) -> dict:
    return {(r, c): float(pm.values[i, j]) for i, r in enumerate(pm.row_labels) for j, c in enumerate(pm.col_labels)}


def analyse(pm: PayoffMatrix, tolerance: float = 1e-6, max_iters: int = 1_000_000) -> dict:
    """Everything the report needs about a payoff matrix, as plain JSON data."""
    eq = solve_zero_sum(pm, tolerance, max_iters)
    reduced, order = iterated_elimination(pm, "strict")
    return {
        **eq.to_json(),
        "pure_nash": [list(c) for c in pure_nash(pm)],
        "dominant": {
            player: {mode: dominant_strategy(pm, player, mode) for mode in ("strict", "weak")}
            for player in ("attacker", "defender")
        },
        "iterated_elimination": {
            "rows": list(reduced.row_labels),
            "cols": list(reduced.col_labels),
            "order": [list(o) for o in order],
        },
    }


def write_equilibrium(report: dict, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
