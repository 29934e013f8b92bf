"""Small dense networks, first-order optimizers, and the training loop.

Everything is seeded and single-threaded: two runs with the same config
produce bit-identical parameter trajectories and metrics files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .closs import LossWeights
from .tensor import SteMode, Tensor

METRICS_COLUMNS = (
    "epoch",
    "loss_total",
    "loss_base",
    "loss_cnf",
    "loss_bound",
    "loss_sum",
    "loss_hint",
    "acc_test",
)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite; training aborts rather than clamps."""


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    epochs: int = 5
    lr: float = 1e-3
    optimizer: str = "adam"
    weights: LossWeights = field(default_factory=LossWeights)
    fn: str = "bp"
    ste: SteMode = SteMode.ISTE
    metrics_path: str | None = None
    # Sum (rather than average) the constraint term over a batch. Right for
    # purely constraint-driven tasks, where averaging dilutes the only
    # learning signal batch-fold; tasks with a baseline loss keep the
    # paper-weighted per-instance balance and average everything.
    cnf_batch_sum: bool = True


class Mlp:
    """Fully connected net with rectifier hiddens and a configurable head.

    ``forward`` returns both the head output and the raw pre-activation,
    in one graph, so the bound penalty can see the raw values.
    """

    def __init__(self, layer_dims: Sequence[int], head: str = "softmax", seed: int = 0):
        if len(layer_dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        if head not in ("softmax", "sigmoid", "none"):
            raise ValueError(f"unknown head {head!r}")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.head = head
        rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Tensor(rng.uniform(-lim, lim, size=(fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, batch) -> tuple[Tensor, Tensor]:
        x = T.as_tensor(batch)
        if x.shape[-1] != self.layer_dims[0]:
            raise T.ShapeError(f"mlp expects inputs of width {self.layer_dims[0]}, got shape {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.matmul(h, w) + b
            if i != last:
                h = T.relu(h)
        raw = h
        if self.head == "softmax":
            out = T.softmax(raw)
        elif self.head == "sigmoid":
            out = T.sigmoid(raw)
        else:
            out = raw
        return out, raw

    def predict(self, batch: np.ndarray) -> np.ndarray:
        """Forward pass outside the graph; returns head output values."""
        out, _ = self.forward(Tensor(np.asarray(batch, dtype=np.float64)))
        return out.data


class Optimizer:
    """SGD or Adam over a fixed parameter list.

    With zero gradients an SGD step is the identity; Adam moves only via
    its bias-corrected moments.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        kind: str = "adam",
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = list(params)
        self.kind = kind
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.kind == "sgd":
                p.data -= self.lr * g
            else:
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
                mhat = self.m[i] / (1.0 - self.beta1**self.t)
                vhat = self.v[i] / (1.0 - self.beta2**self.t)
                p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def _batch_total(means: dict[str, Tensor], weights: LossWeights, batch_size: int, cnf_batch_sum: bool) -> Tensor:
    total: Tensor | None = means.get("base")
    alpha = weights.alpha * (batch_size if cnf_batch_sum else 1)
    for name, w in (("cnf", alpha), ("bound", weights.beta), ("sum", weights.gamma), ("hint", weights.delta)):
        if name in means and w != 0.0:
            term = w * means[name]
            total = term if total is None else total + term
    return total if total is not None else T.constant(0.0)


def train_epoch(net: Mlp, optimizer: Optimizer, dataset, config: TrainConfig, epoch: int) -> dict[str, float]:
    """One pass over the shuffled training set; returns the metrics row.

    Batch loss: baseline mean plus alpha * summed constraint loss plus the
    weighted means of the bound/group-sum/hint terms. Reported columns are
    per-instance means; ``loss_total`` is the optimized batch objective.
    A non-finite term aborts immediately, naming the term and batch.
    """
    task = dataset.task
    order = np.random.default_rng([config.seed, 7919, epoch]).permutation(len(dataset.train))
    sums: dict[str, float] = {}
    total_sum = 0.0
    count = 0
    for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
        batch = [dataset.train[i] for i in order[start : start + config.batch_size]]
        acc: dict[str, list[Tensor]] = {}
        for inst in batch:
            for name, term in task.instance_loss(net, inst, config).items():
                acc.setdefault(name, []).append(term)
        means: dict[str, Tensor] = {}
        for name, terms in acc.items():
            s = terms[0]
            for t in terms[1:]:
                s = s + t
            means[name] = (1.0 / len(terms)) * s
        total = _batch_total(means, config.weights, len(batch), config.cnf_batch_sum)
        for name, t in means.items():
            val = float(t.data)
            if not np.isfinite(val):
                raise TrainingDiverged(f"non-finite {name} loss in batch {batch_no} of epoch {epoch}")
            sums[name] = sums.get(name, 0.0) + val * len(batch)
        tval = float(total.data)
        if not np.isfinite(tval):
            raise TrainingDiverged(f"non-finite total loss in batch {batch_no} of epoch {epoch}")
        total_sum += tval * len(batch)
        count += len(batch)
        T.backward(total)
        optimizer.step()
        optimizer.zero_grad()

    row = {c: 0.0 for c in METRICS_COLUMNS}
    row["epoch"] = float(epoch)
    if count:
        row["loss_total"] = total_sum / count
        for name in ("base", "cnf", "bound", "sum", "hint"):
            if name in sums:
                row[f"loss_{name}"] = sums[name] / count
    row["acc_test"] = task.evaluate(net, dataset.test)
    return row


def run_training(dataset, config: TrainConfig, net: Mlp | None = None) -> tuple[Mlp, list[dict[str, float]]]:
    """Train a fresh (or given) net for the configured number of epochs."""
    task = dataset.task
    if net is None:
        net = task.build_net(config.seed)
    optimizer = Optimizer(net.params(), kind=config.optimizer, lr=config.lr)
    rows = [train_epoch(net, optimizer, dataset, config, epoch) for epoch in range(1, config.epochs + 1)]
    if config.metrics_path:
        write_metrics(config.metrics_path, rows)
    return net, rows


def predict_with_inference_trick(net: Mlp, board: np.ndarray, task) -> np.ndarray:
    """Fill a grid one cell at a time, always the single most confident.

    Each round runs the net on the current board, picks the empty cell
    whose best digit has the highest probability (lowest index wins ties),
    fixes it, and repeats until the board is complete.
    """
    q = np.array(board, dtype=np.int64, copy=True)
    while True:
        empty = np.flatnonzero(q == 0)
        if empty.size == 0:
            return q
        probs = task.cell_probs(net, q)
        cell = int(empty[np.argmax(probs[empty].max(axis=1))])
        q[cell] = int(np.argmax(probs[cell])) + 1


# -- metrics and checkpoints ---------------------------------------------------

def format_metrics(rows: Sequence[dict[str, float]]) -> str:
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        cells = [str(int(row["epoch"]))]
        cells += [format(float(row[c]), ".12g") for c in METRICS_COLUMNS[1:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_metrics(path: str, rows: Sequence[dict[str, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_metrics(rows))


def save_checkpoint(path: str, net: Mlp, optimizer: Optimizer | None = None, meta: dict | None = None) -> str:
    if not path.endswith(".npz"):
        path += ".npz"
    payload: dict[str, np.ndarray] = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "layer_dims": np.array(net.layer_dims, dtype=np.int64),
        "head": np.array(net.head),
        "meta": np.array(json.dumps(meta or {})),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{i}"] = w.data
        payload[f"b{i}"] = b.data
    if optimizer is not None:
        payload["opt_kind"] = np.array(optimizer.kind)
        payload["opt_t"] = np.array(optimizer.t)
        for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            payload[f"opt_m{i}"] = m
            payload[f"opt_v{i}"] = v
    np.savez(path, **payload)
    return path


def load_checkpoint(path: str) -> tuple[Mlp, dict]:
    with np.load(path, allow_pickle=False) as blob:
        version = int(blob["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint format {version} not supported (expected {CHECKPOINT_VERSION})")
        dims = tuple(int(d) for d in blob["layer_dims"])
        net = Mlp(dims, head=str(blob["head"]), seed=0)
        for i in range(len(dims) - 1):
            net.weights[i].data[...] = blob[f"w{i}"]
            net.biases[i].data[...] = blob[f"b{i}"]
        meta = json.loads(str(blob["meta"]))
    return net, meta
