"""Cost matrices and the two decision rules built on top of them.

Conventions used throughout the package:

* ``C[A, B]`` is the cost of predicting class ``A`` when the true class is
  ``B``; the diagonal is zero and every off-diagonal entry is positive.
* Class indices are 0-based.
* Ties in argmax / argmin resolve to the lowest class index.  Expected
  costs are sums of products, so two costs that are equal in exact
  arithmetic can differ in the last bit; they count as tied when within
  ``TIE_RTOL`` of the largest cost entry.

Every function accepting probabilities also accepts a batch of shape
``(n, K)``; results then carry a leading ``n`` axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

PROB_ATOL = 1e-9
RENORM_ATOL = 1e-7
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray

    def __post_init__(self):
        c = np.array(self.entries, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise ValidationError(f"cost matrix must be K x K with K >= 2, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("cost matrix has non-finite entries")
        if np.any(np.diag(c) != 0.0):
            raise ValidationError("cost matrix diagonal must be exactly zero")
        off = c[~np.eye(c.shape[0], dtype=bool)]
        if np.any(off <= 0.0):
            raise ValidationError("off-diagonal costs must be strictly positive")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, idx):
        return self.entries[idx]

    def scaled(self, factor: float) -> "CostMatrix":
        if factor <= 0:
            raise ValidationError("scale factor must be positive")
        return CostMatrix(self.entries * factor)

    def to_json(self) -> dict:
        return {"k": self.k, "entries": self.entries.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "CostMatrix":
        try:
            k = int(doc["k"])
            entries = doc["entries"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed cost matrix document: {exc}") from None
        cm = cls(entries)
        if cm.k != k:
            raise ValidationError(f"declared k={k} but entries are {cm.k} x {cm.k}")
        return cm

    @classmethod
    def zero_one(cls, k: int) -> "CostMatrix":
        return cls(np.ones((k, k)) - np.eye(k))


def as_cost_matrix(cm) -> CostMatrix:
    return cm if isinstance(cm, CostMatrix) else CostMatrix(cm)


def as_probability(p, atol: float = PROB_ATOL) -> np.ndarray:
    """Validate a point (or batch of points) on the probability simplex.

    Rows whose sum is within ``RENORM_ATOL`` of one are renormalised to absorb
    softmax drift; anything further off is rejected.
    """
    p = np.array(p, dtype=float)
    if p.ndim not in (1, 2) or p.shape[-1] < 2:
        raise ValidationError(f"probability vector must have shape (K,) or (n, K), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("probability vector has non-finite components")
    if np.any(p < -atol) or np.any(p > 1.0 + atol):
        raise ValidationError("probability components must lie in [0, 1]")
    s = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > RENORM_ATOL):
        raise ValidationError("probability components must sum to 1")
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum(axis=-1, keepdims=True)


def _check_dims(cm: CostMatrix, p: np.ndarray):
    if p.shape[-1] != cm.k:
        raise ValidationError(f"cost matrix is {cm.k} x {cm.k} but probabilities have {p.shape[-1]} classes")


def expected_cost(cm, p) -> np.ndarray:
    """Expected cost of each possible prediction: ``sum_B C[A, B] p[B]``."""
    cm = as_cost_matrix(cm)
    p = as_probability(p)
    _check_dims(cm, p)
    return p @ cm.entries.T


def predict_max_prob(p):
    p = as_probability(p)
    pred = np.argmax(p, axis=-1)
    return int(pred) if pred.ndim == 0 else pred


def min_cost_index(ec, scale: float) -> np.ndarray:
    """Lowest index whose expected cost is within rounding of the minimum."""
    ec = np.asarray(ec, dtype=float)
    tied = ec <= ec.min(axis=-1, keepdims=True) + TIE_RTOL * scale
    return np.argmax(tied, axis=-1)


def predict_min_cost(cm, p):
    cm = as_cost_matrix(cm)
    pred = min_cost_index(expected_cost(cm, p), cm.entries.max())
    return int(pred) if pred.ndim == 0 else pred


def binary_threshold(cm) -> float:
    """Probability of class 0 above which the minimum-cost rule predicts class 0."""
    cm = as_cost_matrix(cm)
    if cm.k != 2:
        raise ValidationError(f"binary threshold needs K=2, got K={cm.k}")
    c01, c10 = cm[0, 1], cm[1, 0]
    return float(c01 / (c01 + c10))


@dataclass(frozen=True)
class SuperCategorySpec:
    """Two-block cost structure: ``m`` insensitive classes then ``k - m`` sensitive ones.

    ``c_abeta`` (insensitive prediction, sensitive truth) is the expensive
    mistake.  If ``permutation_seed`` is set the class labels are shuffled
    after the block matrix is laid out.
    """

    k: int
    m: int
    c_ab: float
    c_alphabeta: float
    c_alphab: float
    c_abeta: float
    permutation_seed: int | None = None

    def __post_init__(self):
        if self.k < 2 or not 1 <= self.m < self.k:
            raise ValidationError(f"need K >= 2 and 1 <= m < K, got K={self.k}, m={self.m}")
        if not (0 < self.c_ab <= self.c_alphabeta <= self.c_alphab < self.c_abeta):
            raise ValidationError(
                "costs must satisfy 0 < c_ab <= c_alphabeta <= c_alphab < c_abeta, got "
                f"({self.c_ab}, {self.c_alphabeta}, {self.c_alphab}, {self.c_abeta})"
            )

    def permutation(self) -> np.ndarray:
        """``perm[i]`` is the label that block-layout class ``i`` ends up with."""
        if self.permutation_seed is None:
            return np.arange(self.k)
        return np.random.default_rng(self.permutation_seed).permutation(self.k)

    def sensitive_mask(self) -> np.ndarray:
        mask = np.zeros(self.k, dtype=bool)
        mask[self.permutation()[self.m:]] = True
        return mask

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "m": self.m,
            "c_ab": self.c_ab,
            "c_alphabeta": self.c_alphabeta,
            "c_alphab": self.c_alphab,
            "c_abeta": self.c_abeta,
            "permutation_seed": self.permutation_seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SuperCategorySpec":
        try:
            return cls(
                k=int(doc["k"]),
                m=int(doc["m"]),
                c_ab=float(doc["c_ab"]),
                c_alphabeta=float(doc["c_alphabeta"]),
                c_alphab=float(doc["c_alphab"]),
                c_abeta=float(doc["c_abeta"]),
                permutation_seed=doc.get("permutation_seed"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed super-category document: {exc}") from None


def build_supercategory_cost_matrix(spec: SuperCategorySpec) -> CostMatrix:
    k, m = spec.k, spec.m
    c = np.empty((k, k))
    c[:m, :m] = spec.c_ab
    c[:m, m:] = spec.c_abeta
    c[m:, :m] = spec.c_alphab
    c[m:, m:] = spec.c_alphabeta
    np.fill_diagonal(c, 0.0)
    perm = spec.permutation()
    out = np.empty_like(c)
    out[np.ix_(perm, perm)] = c
    return CostMatrix(out)


def maximin_simplex_point(cm, tolerance: float = 1e-9, max_iters: int = 2_000_000):
    """Probability vector maximising the smallest expected cost, and that cost.

    This is the value of the zero-sum game in which the predictor (rows)
    minimises ``C[A, B]`` and nature (columns) picks the true-class
    distribution; the maximiser is nature's equilibrium mixture.
    """
    from .game import PayoffMatrix, solve_zero_sum

    cm = as_cost_matrix(cm)
    labels = [str(i) for i in range(cm.k)]
    eq = solve_zero_sum(PayoffMatrix(labels, labels, cm.entries), tolerance, max_iters)
    return eq.col_strategy, eq.value


def average_cost(predictions, labels, cm, z: float = 1.96):
    """Mean realised cost with a normal-approximation CI half-width."""
    cm = as_cost_matrix(cm)
    pred = np.asarray(predictions, dtype=int)
    lab = np.asarray(labels, dtype=int)
    if pred.shape != lab.shape or pred.ndim != 1:
        raise ValidationError("predictions and labels must be 1-D and the same length")
    if len(pred) < 2:
        raise ValidationError("need at least two samples for a confidence interval")
    costs = cm.entries[pred, lab]
    return float(costs.mean()), mean_ci(costs, z)[1]


def mean_ci(values, z: float = 1.96):
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        raise ValidationError("need at least two samples for a confidence interval")
    return float(values.mean()), float(z * values.std(ddof=1) / np.sqrt(n))


def save_cost_matrix(cm: CostMatrix, path):
    Path(path).write_text(json.dumps(cm.to_json()))


def load_cost_matrix(path) -> CostMatrix:
    """Read either a plain cost-matrix document or a super-category spec."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if "entries" in doc:
        return CostMatrix.from_json(doc)
    return build_supercategory_cost_matrix(SuperCategorySpec.from_json(doc))
