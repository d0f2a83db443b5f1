"""Per-descriptor class membership: nearest neighbour and a two-hidden-layer MLP.

The MLP computes ``W3 @ [s(W2 @ [s(W1 @ [d, 1]), 1]), 1]`` with the logistic
``s``.  The bias is the last column of every weight matrix.  Training
minimises the summed squared error of the raw (unclamped) output against
one-hot targets; memberships returned at inference are clamped to [0, 1].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .surf import DESCRIPTOR_SIZE
from .texmodel import TrainingSet

N_CLASSES = 3
CANONICAL_LAYERS = (DESCRIPTOR_SIZE, 40, 20, N_CLASSES)
MODEL_FORMAT = "salientseg-mlp"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    pass


def one_hot(label: int) -> np.ndarray:
    if label not in (1, 2, 3):
        raise ValueError(f"class label must be 1, 2 or 3, got {label!r}")
    m = np.zeros(N_CLASSES)
    m[label - 1] = 1.0
    return m


def one_hot_targets(labels) -> np.ndarray:
    return np.array([one_hot(int(c)) for c in labels]).reshape(-1, N_CLASSES)


def is_flat(desc: np.ndarray) -> np.ndarray:
    """Zero descriptors (flat patches) are never assigned a class."""
    return ~np.any(np.atleast_2d(desc) != 0.0, axis=1)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# --------------------------------------------------------------------------
# nearest neighbour
# --------------------------------------------------------------------------

class NearestNeighbor:
    """1-NN classifier whose strength decays as ``exp(-dist**2 / tau**2)``."""

    def __init__(self, ts: TrainingSet, tau: float | None = None):
        if len(ts) == 0:
            raise ValueError("nearest-neighbour classifier needs a non-empty training set")
        self.train_desc = ts.descriptors
        self.train_labels = ts.labels
        self.tau = float(tau) if tau is not None else self.median_nn_distance(self.train_desc)
        if self.tau <= 0:
            raise ValueError("bandwidth tau must be positive")

    @staticmethod
    def median_nn_distance(desc: np.ndarray) -> float:
        from scipy.spatial import cKDTree
        if len(desc) < 2:
            return 1.0
        dist, _ = cKDTree(desc).query(desc, k=2)
        positive = dist[:, 1][dist[:, 1] > 0]
        return float(np.median(positive)) if positive.size else 1.0

    def nearest(self, queries: np.ndarray, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
        """Index of and distance to the nearest training descriptor (lowest index on ties)."""
        queries = np.atleast_2d(queries)
        idx = np.empty(len(queries), dtype=np.int64)
        dist = np.empty(len(queries))
        t2 = np.einsum("ij,ij->i", self.train_desc, self.train_desc)
        for s in range(0, len(queries), chunk):
            q = queries[s:s + chunk]
            d2 = np.einsum("ij,ij->i", q, q)[:, None] + t2[None, :] - 2.0 * q @ self.train_desc.T
            best = np.argmin(d2, axis=1)
            # recompute the winner exactly to avoid cancellation error
            diff = q - self.train_desc[best]
            idx[s:s + chunk] = best
            dist[s:s + chunk] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return idx, dist

    def memberships(self, queries: np.ndarray) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        out = np.zeros((len(queries), N_CLASSES))
        if len(queries) == 0:
            return out
        idx, dist = self.nearest(queries)
        rows = np.arange(len(queries))
        out[rows, self.train_labels[idx] - 1] = np.exp(-(dist / self.tau) ** 2)
        out[is_flat(queries)] = 0.0
        return out


def nn_membership(d: np.ndarray, ts: TrainingSet, tau: float | None = None) -> np.ndarray:
    return NearestNeighbor(ts, tau).memberships(d)[0]


# --------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------

@dataclass
class MlpModel:
    weights: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        for a, b in zip(self.weights, self.weights[1:]):
            if b.shape[1] != a.shape[0] + 1:
                raise ValueError("inconsistent layer shapes")

    @property
    def layers(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1] - 1,) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_weights(self) -> int:
        return sum(w.size for w in self.weights)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    @classmethod
    def from_flat(cls, layers, vec) -> "MlpModel":
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = [], 0
        for n_in, n_out in zip(layers, layers[1:]):
            size = n_out * (n_in + 1)
            out.append(vec[pos:pos + size].reshape(n_out, n_in + 1).copy())
            pos += size
        if pos != vec.size:
            raise ValueError("flat weight vector does not match the layer sizes")
        return cls(out)

    @classmethod
    def zeros(cls, layers=CANONICAL_LAYERS) -> "MlpModel":
        return cls([np.zeros((n_out, n_in + 1)) for n_in, n_out in zip(layers, layers[1:])])

    @classmethod
    def random(cls, layers=CANONICAL_LAYERS, rng=None) -> "MlpModel":
        """Uniform init in +-1/sqrt(fan_in)."""
        rng = np.random.default_rng(rng)
        ws = []
        for n_in, n_out in zip(layers, layers[1:]):
            r = 1.0 / math.sqrt(n_in)
            ws.append(rng.uniform(-r, r, size=(n_out, n_in + 1)))
        return cls(ws)

    def memberships(self, queries: np.ndarray) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        out = mlp_forward(self, queries)
        out[is_flat(queries)] = 0.0
        return out


def weight_count(layers=CANONICAL_LAYERS) -> int:
    return sum((n_in + 1) * n_out for n_in, n_out in zip(layers, layers[1:]))


def _with_bias(a: np.ndarray) -> np.ndarray:
    return np.hstack([a, np.ones((a.shape[0], 1))])


def _forward(model: MlpModel, x: np.ndarray):
    """Raw output plus the biased activations of every layer."""
    acts = [_with_bias(np.atleast_2d(x))]
    for w in model.weights[:-1]:
        acts.append(_with_bias(sigmoid(acts[-1] @ w.T)))
    return acts[-1] @ model.weights[-1].T, acts


def mlp_raw(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return _forward(model, x)[0]


def mlp_forward(model: MlpModel, d: np.ndarray) -> np.ndarray:
    """Clamped membership output for one descriptor ``(36,)`` or a batch ``(n, 36)``."""
    d = np.asarray(d, dtype=np.float64)
    out = np.clip(mlp_raw(model, d), 0.0, 1.0)
    return out[0] if d.ndim == 1 else out


def mlp_loss(model: MlpModel, x: np.ndarray, targets: np.ndarray) -> float:
    """Sum over samples and outputs of squared error."""
    r = mlp_raw(model, x) - targets
    return float(np.sum(r * r))


def mlp_gradient(model: MlpModel, x: np.ndarray, targets: np.ndarray) -> list[np.ndarray]:
    """Exact gradient of :func:`mlp_loss`, one array per weight matrix."""
    out, acts = _forward(model, x)
    delta = 2.0 * (out - targets)
    grads = [None] * len(model.weights)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads[layer] = delta.T @ acts[layer]
        if layer:
            a = acts[layer][:, :-1]
            delta = (delta @ model.weights[layer][:, :-1]) * a * (1.0 - a)
    return grads


def mlp_jacobian(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """d(raw output)/d(weights), shape ``(n * n_out, n_weights)``; rows sample-major."""
    out, acts = _forward(model, x)
    n, n_out = out.shape
    jac = np.empty((n, n_out, model.n_weights))
    for m in range(n_out):
        delta = np.zeros((n, n_out))
        delta[:, m] = 1.0
        blocks = [None] * len(model.weights)
        for layer in range(len(model.weights) - 1, -1, -1):
            blocks[layer] = (delta[:, :, None] * acts[layer][:, None, :]).reshape(n, -1)
            if layer:
                a = acts[layer][:, :-1]
                delta = (delta @ model.weights[layer][:, :-1]) * a * (1.0 - a)
        jac[:, m, :] = np.hstack(blocks)
    return jac.reshape(n * n_out, -1)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    algorithm: str = "rprop"
    hidden: tuple[int, ...] = (40, 20)
    max_epochs: int = 2000
    target_error: float = 0.0
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.01
    delta_min: float = 1e-6
    delta_max: float = 50.0
    lm_lambda0: float = 1e-3
    lm_factor: float = 10.0
    lm_lambda_max: float = 1e10
    lm_memory_bytes: int = 2 ** 30
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.algorithm not in ("rprop", "lm"):
            raise ValueError(f"unknown training algorithm {self.algorithm!r}")
        if not self.eta_plus > 1.0 > self.eta_minus > 0.0:
            raise ValueError("need eta_plus > 1 > eta_minus > 0")
        if not 0 < self.delta_min <= self.delta0 <= self.delta_max:
            raise ValueError("need 0 < delta_min <= delta0 <= delta_max")
        if self.lm_lambda0 <= 0 or self.lm_factor <= 1:
            raise ValueError("need lm_lambda0 > 0 and lm_factor > 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")

    def layers(self, n_in=DESCRIPTOR_SIZE, n_out=N_CLASSES) -> tuple[int, ...]:
        return (n_in,) + self.hidden + (n_out,)


@dataclass
class TrainResult:
    model: MlpModel
    losses: list[float] = field(default_factory=list)  # loss of the iterate at each epoch
    best_losses: list[float] = field(default_factory=list)  # best loss seen so far

    @property
    def best_loss(self) -> float:
        return self.best_losses[-1]


def _check_finite(loss: float, epoch: int) -> None:
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss at epoch {epoch}; training diverged")


def train_rprop(x: np.ndarray, targets: np.ndarray, cfg: TrainConfig = TrainConfig(),
                init: MlpModel | None = None) -> TrainResult:
    """Full-batch iRPROP- ; returns the lowest-loss model seen."""
    model = init or MlpModel.random(cfg.layers(x.shape[1], targets.shape[1]), cfg.seed)
    layers = model.layers
    w = model.flat()
    step = np.full_like(w, cfg.delta0)
    prev_grad = np.zeros_like(w)
    result = TrainResult(model)
    best_w, best = w.copy(), math.inf
    for epoch in range(cfg.max_epochs):
        current = MlpModel.from_flat(layers, w)
        loss = mlp_loss(current, x, targets)
        _check_finite(loss, epoch)
        if loss < best:
            best, best_w = loss, w.copy()
        result.losses.append(loss)
        result.best_losses.append(best)
        if best <= cfg.target_error:
            break
        grad = np.concatenate([g.ravel() for g in mlp_gradient(current, x, targets)])
        same = grad * prev_grad
        step = np.where(same > 0, np.minimum(step * cfg.eta_plus, cfg.delta_max), step)
        step = np.where(same < 0, np.maximum(step * cfg.eta_minus, cfg.delta_min), step)
        grad = np.where(same < 0, 0.0, grad)
        w = w - np.sign(grad) * step
        prev_grad = grad
    result.model = MlpModel.from_flat(layers, best_w)
    return result


def lm_step(jac: np.ndarray, resid: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(J^T J + lam I) dw = -J^T r``."""
    jtj = jac.T @ jac
    jtj[np.diag_indices_from(jtj)] += lam
    return np.linalg.solve(jtj, -(jac.T @ resid))


def train_lm(x: np.ndarray, targets: np.ndarray, cfg: TrainConfig = TrainConfig(),
             init: MlpModel | None = None) -> TrainResult:
    """Levenberg-Marquardt on the stacked residual vector.

    One epoch computes the Jacobian once, then raises lambda until a step
    lowers the loss.  Training ends when the loss reaches the target, the
    epoch budget runs out, or lambda exceeds ``lm_lambda_max``.
    """
    model = init or MlpModel.random(cfg.layers(x.shape[1], targets.shape[1]), cfg.seed)
    need = 8 * targets.size * model.n_weights
    if need > cfg.lm_memory_bytes:
        raise TrainingError(f"Jacobian needs {need} bytes, budget is {cfg.lm_memory_bytes}")
    layers = model.layers
    w = model.flat()
    lam = cfg.lm_lambda0
    loss = mlp_loss(model, x, targets)
    _check_finite(loss, 0)
    result = TrainResult(model, [loss], [loss])
    for epoch in range(1, cfg.max_epochs + 1):
        if loss <= cfg.target_error:
            break
        current = MlpModel.from_flat(layers, w)
        resid = (mlp_raw(current, x) - targets).ravel()
        jac = mlp_jacobian(current, x)
        accepted = False
        while lam <= cfg.lm_lambda_max:
            try:
                dw = lm_step(jac, resid, lam)
            except np.linalg.LinAlgError as exc:
                raise TrainingError(f"normal equations singular at lambda={lam:g}") from exc
            trial = mlp_loss(MlpModel.from_flat(layers, w + dw), x, targets)
            if math.isfinite(trial) and trial < loss:
                w, loss = w + dw, trial
                lam = max(lam / cfg.lm_factor, 1e-15)
                accepted = True
                break
            lam *= cfg.lm_factor
        if not accepted:
            break
        result.losses.append(loss)
        result.best_losses.append(loss)
    result.model = MlpModel.from_flat(layers, w)
    return result


def train_mlp(ts: TrainingSet, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    x, t = ts.descriptors, one_hot_targets(ts.labels)
    if len(x) == 0:
        raise ValueError("empty training set")
    trainer = train_rprop if cfg.algorithm == "rprop" else train_lm
    return trainer(x, t, cfg)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_mlp(path: str | Path, model: MlpModel, config: TrainConfig | None = None) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layers": list(model.layers),
        "bias": "last-column",
        "weights": [w.ravel().tolist() for w in model.weights],
    }
    if config is not None:
        doc["train_config"] = asdict(config)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_mlp(path: str | Path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: not a version-{MODEL_VERSION} MLP model file")
    layers = doc["layers"]
    vec = np.concatenate([np.asarray(w, dtype=np.float64) for w in doc["weights"]])
    return MlpModel.from_flat(layers, vec)


def write_training_log(path: str | Path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "best_loss"])
        for i, (loss, best) in enumerate(zip(result.losses, result.best_losses)):
            w.writerow([i, format(loss, ".17g"), format(best, ".17g")])
