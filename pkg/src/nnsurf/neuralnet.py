"""Feed-forward 2D -> 3D regression network with adaptive topology search.

The network is the nested form ``D = f(W2 f(W1 P + b1) + b2)`` extended to
any number of hidden layers. Inputs and targets are affinely rescaled per
component before training; the transform lives in the :class:`Network` so
:func:`forward` always works in world units.

Loss convention: mean squared error per scalar output, i.e. the summed
squared error divided by ``3 * n``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

IN_DIM = 2
OUT_DIM = 3
FORMAT_VERSION = 1


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# activation name -> (f(z), f'(z) expressed through a = f(z))
ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "linear": (lambda z: z, np.ones_like),
}

# target range used for the normalised outputs of each output activation
TARGET_RANGE = {"sigmoid": (0.0, 1.0), "tanh": (-1.0, 1.0), "linear": (-1.0, 1.0)}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Topology:
    hidden: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden layer sizes must be >= 1, got {self.hidden}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (IN_DIM, *self.hidden, OUT_DIM)

    def activation(self, layer: int) -> str:
        return self.output_activation if layer == len(self.hidden) else self.hidden_activation


@dataclass(frozen=True)
class Normalization:
    """Per-component affine maps ``x_n = (x - shift) * scale``."""

    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.zeros(IN_DIM), np.ones(IN_DIM), np.zeros(OUT_DIM), np.ones(OUT_DIM))

    @classmethod
    def fit(cls, inputs, targets, output_activation="linear"):
        def span(a, lo, hi):
            amin, amax = a.min(axis=0), a.max(axis=0)
            width = np.where(amax > amin, amax - amin, 1.0)
            scale = (hi - lo) / width
            return amin - lo / scale, scale

        in_shift, in_scale = span(np.asarray(inputs, float), -1.0, 1.0)
        out_shift, out_scale = span(np.asarray(targets, float), *TARGET_RANGE[output_activation])
        return cls(in_shift, in_scale, out_shift, out_scale)

    def inputs(self, x):
        return (x - self.in_shift) * self.in_scale

    def targets(self, y):
        return (y - self.out_shift) * self.out_scale

    def outputs(self, yn):
        return yn / self.out_scale + self.out_shift


@dataclass(frozen=True)
class Network:
    """Trained or freshly initialised network. ``weights[l]`` has shape ``(out, in)``."""

    topology: Topology
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    norm: Normalization = field(default_factory=Normalization.identity)
    seed: int | None = None

    def __post_init__(self):
        sizes = self.topology.sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("layer count does not match topology")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l} has shape {w.shape}/{b.shape}, "
                                 f"expected {(sizes[l + 1], sizes[l])}")

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Network":
        # no copy: training updates the arrays in place through this view
        return replace(self, weights=tuple(np.asarray(p, float) for p in params[0::2]),
                       biases=tuple(np.asarray(p, float) for p in params[1::2]))

    def __call__(self, points):
        return forward(self, points)

    def to_dict(self) -> dict:
        return {
            "format": "nnsurf-network",
            "version": FORMAT_VERSION,
            "hidden": list(self.topology.hidden),
            "hidden_activation": self.topology.hidden_activation,
            "output_activation": self.topology.output_activation,
            "seed": self.seed,
            "normalization": {k: getattr(self.norm, k).tolist()
                              for k in ("in_shift", "in_scale", "out_shift", "out_scale")},
            "layers": [{"weights": w.tolist(), "biases": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        if doc.get("format") != "nnsurf-network" or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 network document")
        topo = Topology(tuple(doc["hidden"]), doc["hidden_activation"], doc["output_activation"])
        norm = Normalization(**{k: np.array(v, float) for k, v in doc["normalization"].items()})
        return cls(topo,
                   tuple(np.array(l["weights"], float).reshape(o, i) for l, i, o in
                         zip(doc["layers"], topo.sizes[:-1], topo.sizes[1:])),
                   tuple(np.array(l["biases"], float) for l in doc["layers"]),
                   norm, doc.get("seed"))


def save_network(net: Network, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(net.to_dict(), fh, indent=1)
        fh.write("\n")


def load_network(path) -> Network:
    with open(path) as fh:
        return Network.from_dict(json.load(fh))


def init_network(topology: Topology, seed: int, norm: Normalization | None = None) -> Network:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights and biases."""
    rng = np.random.default_rng(seed)
    sizes = topology.sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    return Network(topology, tuple(weights), tuple(biases),
                   norm if norm is not None else Normalization.identity(), seed)


def _activations(net: Network, xn: np.ndarray) -> list[np.ndarray]:
    acts = [xn]
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        f = ACTIVATIONS[net.topology.activation(l)][0]
        acts.append(f(acts[-1] @ w.T + b))
    return acts


def forward_normalized(net: Network, xn) -> np.ndarray:
    return _activations(net, np.atleast_2d(xn))[-1]


def forward(net: Network, points) -> np.ndarray:
    """Evaluate the network on one ``(2,)`` point or a ``(n, 2)`` batch, in world units."""
    p = np.asarray(points, dtype=float)
    out = net.norm.outputs(forward_normalized(net, net.norm.inputs(np.atleast_2d(p))))
    return out[0] if p.ndim == 1 else out


def loss_and_gradient(net: Network, inputs, targets):
    """Normalised-space per-scalar MSE of a batch and its gradient.

    The gradient is a list aligned with :meth:`Network.params`
    (``[dW0, db0, dW1, db1, ...]``).
    """
    xn = net.norm.inputs(np.atleast_2d(np.asarray(inputs, float)))
    yn = net.norm.targets(np.atleast_2d(np.asarray(targets, float)))
    if len(xn) == 0:
        raise ValueError("empty batch")
    acts = _activations(net, xn)
    err = acts[-1] - yn
    loss = float(np.mean(err * err))
    delta = (2.0 / err.size) * err
    grads = [None] * (2 * len(net.weights))
    for l in range(len(net.weights) - 1, -1, -1):
        deriv = ACTIVATIONS[net.topology.activation(l)][1]
        delta = delta * deriv(acts[l + 1])
        grads[2 * l] = delta.T @ acts[l]
        grads[2 * l + 1] = delta.sum(axis=0)
        if l:
            delta = delta @ net.weights[l]
    return loss, grads


def backprop_gradient(net: Network, inputs, targets) -> list[np.ndarray]:
    return loss_and_gradient(net, inputs, targets)[1]


def normalized_loss(net: Network, inputs, targets) -> float:
    xn = net.norm.inputs(np.atleast_2d(np.asarray(inputs, float)))
    yn = net.norm.targets(np.atleast_2d(np.asarray(targets, float)))
    err = forward_normalized(net, xn) - yn
    return float(np.mean(err * err))


def mse(net: Network, inputs, targets) -> float:
    """World-unit mean squared error per scalar output: ``sum |y_hat - y|^2 / (3 n)``."""
    targets = np.atleast_2d(np.asarray(targets, float))
    if len(targets) == 0:
        raise ValueError("mse of an empty set")
    err = forward(net, np.atleast_2d(np.asarray(inputs, float))) - targets
    return float(np.mean(err * err))


@dataclass(frozen=True)
class TrainConfig:
    max_layers: int = 3
    max_neurons: int = 6
    epochs: int = 20
    early_stop_patience: int = 3
    learning_rate: float | None = None
    split: tuple[float, float, float] = (0.85, 0.10, 0.05)
    seed: int = 0
    hidden_activation: str = "tanh"
    output_activation: str = "linear"
    online: bool = True
    perf_weights: tuple[float, float] = (0.85, 0.10)
    converge_tol: float = 1e-3

    def __post_init__(self):
        if self.max_layers < 1 or self.max_neurons < 1 or self.epochs < 1:
            raise ValueError("max_layers, max_neurons and epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0):
            raise ValueError(f"split fractions must be >= 0 and sum to 1, got {self.split}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        if not self.online and self.output_activation == "linear":
            return 0.01
        return 0.1


def _subseed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed & (2**64 - 1), *path]).generate_state(1, np.uint64)[0])


def split_data(inputs, targets, cfg: TrainConfig):
    """Random disjoint split into (train, test, validation) index arrays.

    Sizes are ``floor(f_train n)``, ``floor(f_test n)`` and the remainder.
    """
    n = len(inputs)
    if n != len(targets):
        raise ValueError("inputs and targets differ in length")
    if n < 20:
        raise ValueError(f"need at least 20 samples to split, got {n}")
    n_train = int(math.floor(cfg.split[0] * n + 1e-9))
    n_test = int(math.floor(cfg.split[1] * n + 1e-9))
    perm = np.random.default_rng(_subseed(cfg.seed, 1)).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_test], perm[n_train + n_test:]


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def train(net: Network, train_set, validation_set=None, cfg: TrainConfig = TrainConfig(),
          seed: int | None = None):
    """Gradient-descent backpropagation with early stopping.

    ``train_set`` and ``validation_set`` are ``(inputs, targets)`` pairs in
    world units. One epoch is a sweep of per-sample updates in a shuffled
    order when ``cfg.online`` is set, otherwise a single full-batch step.
    Training stops once the validation loss has not improved for
    ``cfg.early_stop_patience`` consecutive epochs; the parameters of the
    best validation epoch are returned. Without a validation set the full
    epoch budget is used and the final parameters are returned.
    """
    x, y = (np.atleast_2d(np.asarray(a, float)) for a in train_set)
    if len(x) == 0:
        raise ValueError("empty training set")
    has_val = validation_set is not None and len(validation_set[0]) > 0
    if has_val:
        xv, yv = (np.atleast_2d(np.asarray(a, float)) for a in validation_set)
    rng = np.random.default_rng(_subseed(cfg.seed if seed is None else seed, 2))
    lr = cfg.lr
    params = [p.copy() for p in net.params()]
    current = net.with_params(params)
    hist = TrainHistory()
    best_val, best_params, stale = math.inf, params, 0
    # overflow is caught below as a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            if cfg.online:
                for i in rng.permutation(len(x)):
                    _, grads = loss_and_gradient(current, x[i:i + 1], y[i:i + 1])
                    for p, g in zip(params, grads):
                        p -= lr * g
            else:
                _, grads = loss_and_gradient(current, x, y)
                for p, g in zip(params, grads):
                    p -= lr * g
            tl = normalized_loss(current, x, y)
            if not math.isfinite(tl):
                raise TrainingDivergedError(
                    f"training loss became non-finite at epoch {epoch}; lower the learning rate "
                    f"(currently {lr})")
            hist.train_loss.append(tl)
            if not has_val:
                continue
            vl = normalized_loss(current, xv, yv)
            hist.val_loss.append(vl)
            if vl < best_val:
                best_val, best_params, stale = vl, [p.copy() for p in params], 0
                hist.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    hist.stopped_early = True
                    break
    if not has_val:
        hist.best_epoch = len(hist.train_loss) - 1
        best_params = params
    return net.with_params([p.copy() for p in best_params]), hist


@dataclass(frozen=True)
class CandidateRecord:
    hidden: tuple[int, ...]
    train_mse: float
    test_mse: float
    performance: float
    epochs_run: int


@dataclass
class TrainReport:
    records: list[CandidateRecord]
    best: CandidateRecord
    final_mse: float | None = None

    def to_dict(self) -> dict:
        def rec(r):
            return {"hidden": list(r.hidden), "train_mse": r.train_mse, "test_mse": r.test_mse,
                    "performance": r.performance, "epochs_run": r.epochs_run}
        return {"records": [rec(r) for r in self.records], "best": rec(self.best),
                "final_mse": self.final_mse}


def adaptive_search(inputs, targets, cfg: TrainConfig = TrainConfig()):
    """Grow hidden neurons, then layers, keeping the best weighted performer.

    For each layer the neuron count grows from 1 until the weighted
    train/test performance stops improving by more than
    ``cfg.converge_tol`` (relative) or ``cfg.max_neurons`` is reached. The
    best size found for a layer is frozen before the next layer is added.
    Weighted performance is ``w_train * train_mse + w_test * test_mse``.
    The search ends early once a candidate fits to round-off level.

    Returns the best :class:`Network` and a :class:`TrainReport`.
    """
    inputs = np.asarray(inputs, float)
    targets = np.asarray(targets, float)
    tr, te, va = split_data(inputs, targets, cfg)
    norm = Normalization.fit(inputs[tr], targets[tr], cfg.output_activation)
    w_train, w_test = cfg.perf_weights
    records: list[CandidateRecord] = []
    best_net, best_rec = None, None
    frozen: list[int] = []
    exact = 1e-24 * max(float(np.mean(np.var(targets, axis=0))), 1e-300)
    for layer in range(cfg.max_layers):
        layer_best, prev_perf = None, None
        for n in range(1, cfg.max_neurons + 1):
            topo = Topology((*frozen, n), cfg.hidden_activation, cfg.output_activation)
            seed = _subseed(cfg.seed, 3, layer, n)
            net, hist = train(init_network(topo, seed, norm), (inputs[tr], targets[tr]),
                              (inputs[va], targets[va]), cfg, seed=seed)
            train_mse = mse(net, inputs[tr], targets[tr])
            test_mse = mse(net, inputs[te], targets[te]) if len(te) else train_mse
            rec = CandidateRecord(topo.hidden, train_mse, test_mse,
                                  w_train * train_mse + w_test * test_mse, len(hist.train_loss))
            records.append(rec)
            log.debug("candidate %s: train %.4g test %.4g perf %.4g", rec.hidden, train_mse,
                      test_mse, rec.performance)
            if layer_best is None or rec.performance < layer_best.performance:
                layer_best = rec
            if best_rec is None or rec.performance < best_rec.performance:
                best_net, best_rec = net, rec
            if rec.performance <= exact:
                return best_net, TrainReport(records, best_rec)
            if prev_perf is not None:
                gain = (prev_perf - rec.performance) / prev_perf if prev_perf > 0 else 0.0
                if gain < cfg.converge_tol:
                    break
            prev_perf = rec.performance
        frozen.append(layer_best.hidden[-1])
    return best_net, TrainReport(records, best_rec)


def train_fixed(inputs, targets, hidden: Sequence[int], cfg: TrainConfig = TrainConfig()):
    """Train one given hidden-layer layout with the usual split and early stopping."""
    inputs = np.asarray(inputs, float)
    targets = np.asarray(targets, float)
    tr, te, va = split_data(inputs, targets, cfg)
    norm = Normalization.fit(inputs[tr], targets[tr], cfg.output_activation)
    topo = Topology(tuple(hidden), cfg.hidden_activation, cfg.output_activation)
    seed = _subseed(cfg.seed, 3, len(topo.hidden) - 1, topo.hidden[-1])
    net, hist = train(init_network(topo, seed, norm), (inputs[tr], targets[tr]),
                      (inputs[va], targets[va]), cfg, seed=seed)
    train_mse = mse(net, inputs[tr], targets[tr])
    test_mse = mse(net, inputs[te], targets[te]) if len(te) else train_mse
    w_train, w_test = cfg.perf_weights
    rec = CandidateRecord(topo.hidden, train_mse, test_mse, w_train * train_mse + w_test * test_mse,
                          len(hist.train_loss))
    return net, TrainReport([rec], rec)


def finalize(best: Network, report: TrainReport, inputs, targets, retrain: bool = False,
             cfg: TrainConfig = TrainConfig()) -> Network:
    """Copy the searched network, or retrain its topology from scratch on all data.

    Retraining holds nothing out, so it runs the full epoch budget without
    early stopping.
    """
    inputs = np.asarray(inputs, float)
    targets = np.asarray(targets, float)
    if retrain:
        seed = _subseed(cfg.seed, 4)
        norm = Normalization.fit(inputs, targets, cfg.output_activation)
        net, _ = train(init_network(best.topology, seed, norm), (inputs, targets), None, cfg,
                       seed=seed)
    else:
        net = best
    report.final_mse = mse(net, inputs, targets)
    return net
