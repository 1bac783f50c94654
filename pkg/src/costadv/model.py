"""Small fully connected classifier with hand-written backpropagation.

Inputs are row vectors: a layer computes ``act(x @ W + b)`` with ``W`` of
shape ``(fan_in, fan_out)``.  All batch functions take ``x`` of shape
``(n, d)``; single vectors of shape ``(d,)`` are accepted too.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ModelFormatError, NumericalError, ValidationError, VersionError

log = logging.getLogger(__name__)

FORMAT_VERSION = "1"
ACTIVATIONS = ("relu", "identity")


@dataclass
class Network:
    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not self.weights:
            raise ValidationError("network needs at least one layer")
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValidationError("weights, biases and activations must have one entry per layer")
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float) for b in self.biases]
        for i, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValidationError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValidationError(f"layer {i} expects {w.shape[0]} inputs, previous layer gives {self.weights[i - 1].shape[1]}")
            if a not in ACTIVATIONS:
                raise ValidationError(f"layer {i}: unknown activation {a!r}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def k(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def arch(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.activations))


def init_network(arch, seed) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, ReLU hidden layers."""
    arch = [int(a) for a in arch]
    if len(arch) < 2 or any(a <= 0 for a in arch):
        raise ValidationError(f"architecture needs >= 2 positive sizes, got {arch}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    activations = ["relu"] * (len(arch) - 2) + ["identity"]
    return Network(weights, biases, activations)


def _as_batch(net: Network, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValidationError(f"network expects inputs of dimension {net.input_dim}, got shape {np.shape(x)}")
    return x, single


def _forward(net: Network, x: np.ndarray):
    """Logits plus the per-layer inputs and pre-activations needed for backprop."""
    inputs, pre = [], []
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return h, (inputs, pre)


def _backward(net: Network, cache, dlogits: np.ndarray, want_params: bool):
    inputs, pre = cache
    g = dlogits
    grads_w, grads_b = [], []
    for i in reversed(range(len(net.weights))):
        if net.activations[i] == "relu":
            g = g * (pre[i] > 0.0)
        if want_params:
            grads_w.append(inputs[i].T @ g)
            grads_b.append(g.sum(axis=0))
        g = g @ net.weights[i].T
    return g, grads_w[::-1], grads_b[::-1]


def forward_logits(net: Network, x) -> np.ndarray:
    x, single = _as_batch(net, x)
    z, _ = _forward(net, x)
    return z[0] if single else z


def log_softmax(z, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    s = np.asarray(z, dtype=float) / temperature
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def probabilities(z, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax ``exp(z/T) / sum exp(z/T)`` with max-subtraction."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    s = np.asarray(z, dtype=float) / temperature
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# An objective maps a logit batch (n, K) to (values (n,), d values / d logits (n, K)).
Objective = Callable[[np.ndarray], tuple]


def cross_entropy(labels) -> Objective:
    """Per-sample negative log-likelihood of ``labels`` at temperature 1."""
    labels = np.asarray(labels, dtype=int)

    def objective(z):
        lp = log_softmax(z)
        rows = np.arange(len(z))
        grad = np.exp(lp)
        grad[rows, labels] -= 1.0
        return -lp[rows, labels], grad

    return objective


def input_gradient(net: Network, x, objective: Objective):
    """Objective values and their gradients with respect to the inputs."""
    x, single = _as_batch(net, x)
    z, cache = _forward(net, x)
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite logits in forward pass")
    value, dz = objective(z)
    value = np.broadcast_to(np.asarray(value, dtype=float), (len(x),))
    dz = np.broadcast_to(np.asarray(dz, dtype=float), z.shape)
    dx, _, _ = _backward(net, cache, dz, want_params=False)
    if not (np.all(np.isfinite(value)) and np.all(np.isfinite(dx))):
        raise NumericalError("non-finite objective or input gradient")
    return (float(value[0]), dx[0]) if single else (value, dx)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    momentum: float = 0.9
    adversarial: object = None  # an attack.AttackSpec; its objective is forced to random targets

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValidationError("epochs must be >= 0, batch_size and learning_rate > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")


@dataclass
class TrainResult:
    net: Network
    loss_history: list = field(default_factory=list)


def train(net: Network, inputs, labels, cfg: TrainConfig) -> TrainResult:
    """Minibatch SGD with momentum on mean cross-entropy.

    With ``cfg.adversarial`` set, every batch is replaced by its targeted PGD
    perturbation (uniformly random wrong targets) before the update.  The
    input network is left untouched; the trained copy is returned.
    """
    x, _ = _as_batch(net, inputs)
    y = np.asarray(labels, dtype=int)
    if len(x) == 0 or len(x) != len(y):
        raise ValidationError("need a nonempty dataset with one label per input")
    if y.min() < 0 or y.max() >= net.k:
        raise ValidationError(f"labels must lie in [0, {net.k})")

    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    adv_spec = None
    if cfg.adversarial is not None:
        from .attack import Objective as AttackObjective, pgd_attack_batch

        adv_spec = cfg.adversarial.replace(objective=AttackObjective.RANDOM_TARGET)

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            if adv_spec is not None:
                batch_seed = int(rng.integers(2**63))
                xb = pgd_attack_batch(net, xb, adv_spec.replace(seed=batch_seed), true_labels=yb).x_adv
            z, cache = _forward(net, xb)
            loss, dz = cross_entropy(yb)(z)
            batch_loss = float(loss.mean())
            if not np.isfinite(batch_loss):
                raise NumericalError(f"loss became {batch_loss} at epoch {epoch}, batch starting {start}")
            total += batch_loss * len(idx)
            _, gw, gb = _backward(net, cache, dz / len(idx), want_params=True)
            for i in range(len(net.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.learning_rate * gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * gb[i]
                net.weights[i] += vel_w[i]
                net.biases[i] += vel_b[i]
        history.append(total / len(x))
        log.debug("epoch %d loss %.4f", epoch, history[-1])
    return TrainResult(net, history)


def accuracy(net: Network, inputs, labels) -> float:
    return float(np.mean(np.argmax(forward_logits(net, np.atleast_2d(inputs)), axis=1) == np.asarray(labels)))


def model_to_json(net: Network) -> dict:
    return {
        "version": FORMAT_VERSION,
        "arch": net.arch,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "activations": list(net.activations),
    }


def model_from_json(doc) -> Network:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"model format version {version!r} is not supported (expected {FORMAT_VERSION!r})")
    try:
        net = Network(doc["weights"], doc["biases"], doc["activations"])
    except KeyError as exc:
        raise ModelFormatError(f"model document lacks field {exc}") from None
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    if list(doc.get("arch", [])) != net.arch:
        raise ModelFormatError(f"declared arch {doc.get('arch')} does not match weights {net.arch}")
    return net


def save_model(net: Network, path):
    Path(path).write_text(json.dumps(model_to_json(net)))


def load_model(path) -> Network:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    return model_from_json(doc)
