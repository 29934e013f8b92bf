"""Benchmark tasks: clause families, prediction assembly, and datasets.

Each task bundles a generated theory with the recipe that turns network
outputs into the atom-probability vector x (products, concatenation,
zero-padding), the per-instance fact vector, the training loss terms,
and an accuracy definition. Atom orders follow the assembly recipes, so
the network-driven atoms always come first and padded atoms last.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import datasets as D
from . import nn as N
from . import tensor as T
from .closs import LossWeights, assemble_prediction, bound_loss, cnf_loss, cnf_loss_forward, hint_loss, sum_loss
from .cnf import Assignment, ClauseMatrix, CnfTheory, FactVector, build_matrix, theory_from_clauses
from .nn import Mlp, TrainConfig
from .tensor import Tensor


def _softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _one_hot(index: int, width: int) -> np.ndarray:
    out = np.zeros(width, dtype=np.float64)
    out[index] = 1.0
    return out


# ---------------------------------------------------------------------------
# clause families
# ---------------------------------------------------------------------------

def mnist_add_theory(digits: int = 1, include_uec: bool = False) -> CnfTheory:
    """Sum-label clauses for adding two ``digits``-digit numbers.

    Atoms: one per joint digit tuple (the products of the per-image
    outputs land here, tuple encoded base 10), then one per possible sum.
    Each sum clause lists the tuples reaching that sum. With
    ``include_uec`` (single digits only) the signature instead carries
    joint atoms, per-image digit atoms, and sums, plus existence and
    uniqueness clauses over the digit atoms for use with the sign
    binarizer; the probability binarizer does not need them because the
    softmax head already enforces one digit per image.
    """
    if digits not in (1, 2, 3):
        raise ValueError(f"digits must be 1, 2, or 3, got {digits}")
    if include_uec and digits != 1:
        raise ValueError("the existence/uniqueness variant is defined for single digits only")
    base = 10**digits
    npred = base * base
    nsum = 2 * base - 1
    tuples = np.arange(npred)
    sums = tuples // base + tuples % base
    order = np.argsort(sums, kind="stable")
    bounds = np.searchsorted(sums[order], np.arange(nsum + 1))

    width = 2 * digits
    pred_names = [
        "pred(" + ",".join(str((p // 10**(width - 1 - k)) % 10) for k in range(width)) + ")" for p in range(npred)
    ]

    if not include_uec:
        names = pred_names + [f"sum({l})" for l in range(nsum)]
        clauses = [
            (-(npred + l + 1),) + tuple(int(p) + 1 for p in order[bounds[l] : bounds[l + 1]]) for l in range(nsum)
        ]
        return theory_from_clauses(clauses, npred + nsum, names)

    conj_names = ["conj(" + name[5:] for name in pred_names]
    names = conj_names + [f"digit({i},{n})" for i in (1, 2) for n in range(10)] + [f"sum({l})" for l in range(nsum)]
    sum_base = npred + 20
    clauses = [
        (-(sum_base + l + 1),) + tuple(int(p) + 1 for p in order[bounds[l] : bounds[l + 1]]) for l in range(nsum)
    ]
    for i in range(2):
        clauses.append(tuple(npred + 10 * i + n + 1 for n in range(10)))
    for i in range(2):
        for n1, n2 in itertools.combinations(range(10), 2):
            clauses.append((-(npred + 10 * i + n1 + 1), -(npred + 10 * i + n2 + 1)))
    return theory_from_clauses(clauses, npred + 20 + nsum, names)


#: add2x2 reads sums along (row 1, row 2, column 1, column 2) of the image grid.
ADD2X2_PAIRS = ((0, 1), (2, 3), (0, 2), (1, 3))


def add2x2_theory() -> CnfTheory:
    """Four families of sum clauses, one per row/column pair of the grid."""
    names = [
        f"conj(i{a + 1},{i},i{b + 1},{j})" for a, b in ADD2X2_PAIRS for i in range(10) for j in range(10)
    ] + [f"sum(i{a + 1},i{b + 1},{r})" for a, b in ADD2X2_PAIRS for r in range(19)]
    clauses = []
    for p in range(4):
        for r in range(19):
            body = tuple(100 * p + 10 * i + (r - i) + 1 for i in range(10) if 0 <= r - i <= 9)
            clauses.append((-(400 + 19 * p + r + 1),) + body)
    return theory_from_clauses(clauses, 476, names)


APPLY_OPS = ("+", "-", "*")


def _apply_op(a: int, op: str, b: int) -> int:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    return a * b


def apply2x2_theory() -> tuple[CnfTheory, dict[tuple[int, int, int, int], int]]:
    """Clauses tying an operator pair to the result on three digits.

    Atom order: the 9 operator-pair atoms first (index 3a+b), then one
    atom per reachable (d1, d2, d3, result) combination over digits 0-10.
    Returns the theory plus the lookup from that combination to its atom.
    """
    names = [f"op({s1},{s2})" for s1 in APPLY_OPS for s2 in APPLY_OPS]
    clauses = []
    lookup: dict[tuple[int, int, int, int], int] = {}
    for d1 in range(11):
        for d2 in range(11):
            for d3 in range(11):
                results: dict[int, list[int]] = {}
                for a, op1 in enumerate(APPLY_OPS):
                    for b, op2 in enumerate(APPLY_OPS):
                        r = _apply_op(_apply_op(d1, op1, d2), op2, d3)
                        results.setdefault(r, []).append(3 * a + b)
                for r in sorted(results):
                    atom = 9 + len(lookup)
                    lookup[(d1, d2, d3, r)] = atom
                    names.append(f"apply({d1},{d2},{d3},{r})")
                    clauses.append((-(atom + 1),) + tuple(pair + 1 for pair in results[r]))
    return theory_from_clauses(clauses, len(names), names), lookup


def member_theory(k: int = 3) -> CnfTheory:
    """Membership of a digit in k images: presence and absence clauses.

    Atoms: per-image digit atoms first (10 per image), then in(d,0) and
    in(d,1) blocks. in(d,1) forces some image to be d; in(d,0) forbids
    each image from being d.
    """
    if k < 1:
        raise ValueError("member needs at least one image")
    names = [f"digit(i{i + 1},{d})" for i in range(k) for d in range(10)]
    names += [f"in({d},0)" for d in range(10)] + [f"in({d},1)" for d in range(10)]
    clauses = []
    for d in range(10):
        clauses.append((-(10 * k + 10 + d + 1),) + tuple(10 * i + d + 1 for i in range(k)))
    for d in range(10):
        for i in range(k):
            clauses.append((-(10 * k + d + 1), -(10 * i + d + 1)))
    return theory_from_clauses(clauses, 10 * k + 20, names)


def sudoku_theory(side: int = 9, include_box_uec: bool = False) -> CnfTheory:
    """Exactly-one groups for rows, columns, and cell values; boxes optional.

    The box family is redundant when a per-cell softmax feeds the
    probability binarizer, so it is off by default. Atom a(R,C,N) sits at
    index side*(side*(R-1) + (C-1)) + (N-1), the flattening of the
    (cells, digits) layout.
    """
    b = int(round(np.sqrt(side)))
    if b * b != side:
        raise ValueError(f"side must be a perfect square, got {side}")

    def atom(r: int, c: int, n: int) -> int:
        return side * (side * r + c) + n

    names = [f"a({r + 1},{c + 1},{n + 1})" for r in range(side) for c in range(side) for n in range(side)]
    groups: list[list[int]] = []
    for c in range(side):
        for n in range(side):
            groups.append([atom(r, c, n) for r in range(side)])
    for r in range(side):
        for n in range(side):
            groups.append([atom(r, c, n) for c in range(side)])
    for r in range(side):
        for c in range(side):
            groups.append([atom(r, c, n) for n in range(side)])
    if include_box_uec:
        for box in range(side):
            br, bc = divmod(box, b)
            cells = [(br * b + dr, bc * b + dc) for dr in range(b) for dc in range(b)]
            for n in range(side):
                groups.append([atom(r, c, n) for r, c in cells])
    clauses = []
    for group in groups:
        clauses.append(tuple(a + 1 for a in group))
        for a1, a2 in itertools.combinations(group, 2):
            clauses.append((-(a1 + 1), -(a2 + 1)))
    return theory_from_clauses(clauses, side**3, names)


def sudoku_sum_groups(side: int = 9) -> list[list[list[tuple[int, int]]]]:
    """Row/column/box families of positions into the (cells, digits) matrix.

    Each group collects the ``side`` probabilities that should sum to 1.
    """
    b = int(round(np.sqrt(side)))
    row_family = [[(r * side + c, n) for r in range(side)] for c in range(side) for n in range(side)]
    col_family = [[(r * side + c, n) for c in range(side)] for r in range(side) for n in range(side)]
    box_family = []
    for box in range(side):
        br, bc = divmod(box, b)
        cells = [(br * b + dr) * side + (bc * b + dc) for dr in range(b) for dc in range(b)]
        for n in range(side):
            box_family.append([(cell, n) for cell in cells])
    return [row_family, col_family, box_family]


def shortest_path_theory() -> CnfTheory:
    """Each terminal node touches exactly one chosen edge of the 4x4 grid.

    Atoms: 16 terminal atoms (node-major) then 24 edge atoms in the fixed
    lattice order. Existence clauses come first, then for every terminal
    all ordered pairs of distinct incident edges.
    """
    edges = D.grid_edges()
    side = D.GRID_SIDE
    names = [f"terminal({i + 1},{j + 1})" for i in range(side) for j in range(side)]
    names += [f"sp({u // side + 1},{u % side + 1},{v // side + 1},{v % side + 1})" for u, v in edges]
    incident: list[list[int]] = [[] for _ in range(side * side)]
    for e, (u, v) in enumerate(edges):
        incident[u].append(e)
        incident[v].append(e)
    clauses = []
    for node in range(side * side):
        clauses.append((-(node + 1),) + tuple(16 + e + 1 for e in incident[node]))
    for node in range(side * side):
        for e1 in incident[node]:
            for e2 in incident[node]:
                if e1 != e2:
                    clauses.append((-(node + 1), -(16 + e1 + 1), -(16 + e2 + 1)))
    return theory_from_clauses(clauses, 40, names)


def exactly_one_theory(classes: int = 10) -> CnfTheory:
    """One existence clause plus pairwise exclusions over class atoms."""
    if classes < 1:
        raise ValueError("need at least one class")
    names = [f"pred({c})" for c in range(classes)]
    clauses = [tuple(range(1, classes + 1))]
    for c1, c2 in itertools.combinations(range(classes), 2):
        clauses.append((-(c1 + 1), -(c2 + 1)))
    return theory_from_clauses(clauses, classes, names)


# ---------------------------------------------------------------------------
# task objects
# ---------------------------------------------------------------------------

@dataclass
class TaskDataset:
    task: "TaskSpec"
    train: list
    test: list


class TaskSpec:
    """Common surface: theory, loss recipe, dataset maker, accuracy."""

    name: str = ""
    fn: str = "bp"
    trainable: bool = True
    weights: LossWeights = LossWeights()
    # Purely constraint-driven tasks sum the constraint term over a batch;
    # tasks with a baseline loss keep the per-instance weighting.
    cnf_batch_sum: bool = True

    def __init__(self, theory: CnfTheory):
        self.theory = theory
        self.weights = replace(self.weights)
        self._matrix: ClauseMatrix | None = None

    @property
    def matrix(self) -> ClauseMatrix:
        if self._matrix is None:
            self._matrix = build_matrix(self.theory)
        return self._matrix

    def default_config(self, **overrides) -> TrainConfig:
        cfg = TrainConfig(weights=replace(self.weights), fn=self.fn, cnf_batch_sum=self.cnf_batch_sum)
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg

    def build_net(self, seed: int) -> Mlp:
        raise NotImplementedError

    def make_data(self, seed: int = 0, **options) -> TaskDataset:
        raise NotImplementedError

    def instance_loss(self, net: Mlp, inst, config: TrainConfig) -> dict[str, Tensor]:
        raise NotImplementedError(f"task {self.name} has no training recipe at desk scale")

    def evaluate(self, net: Mlp, instances: Sequence) -> float:
        raise NotImplementedError

    def truth_pairs(self, inst) -> list[tuple[np.ndarray, FactVector]]:
        """Assemble x from ground-truth one-hot outputs, with its facts."""
        raise NotImplementedError

    def check_instance(self, inst) -> bool:
        """Ground-truth assembly must satisfy the theory (zero loss)."""
        threshold = 0.5 if self.fn == "bp" else 0.0
        for x, facts in self.truth_pairs(inst):
            v = facts.bits + (1 - facts.bits) * (x >= threshold)
            if cnf_loss_forward(self.matrix, v.astype(np.int8), facts).l_cnf != 0.0:
                return False
        return True


def _classifier_accuracy(net: Mlp, instances: Sequence[tuple[np.ndarray, int]]) -> float:
    if not instances:
        return 0.0
    feats = np.stack([feat for feat, _ in instances])
    labels = np.array([label for _, label in instances])
    return float(np.mean(np.argmax(net.predict(feats), axis=1) == labels))


@dataclass(frozen=True)
class AddInstance:
    images: tuple[np.ndarray, ...]
    label_sum: int
    digits: tuple[int, ...]


class MnistAddTask(TaskSpec):
    """Learn digit classification from pair sums alone."""

    def __init__(self, digits: int = 1, include_uec: bool = False, input_dim: int = 16, hidden: tuple[int, ...] = (64,)):
        super().__init__(mnist_add_theory(digits, include_uec))
        self.digits = digits
        self.include_uec = include_uec
        self.input_dim = input_dim
        self.hidden = hidden
        self.name = "mnist-add" if digits == 1 else f"mnist-add{digits}"
        base = 10**digits
        self.n_images = 2 * digits
        self.npred = base * base
        self.sum_base = self.npred + (20 if include_uec else 0)
        self.weights = LossWeights(alpha=1.0, beta=0.1 if digits == 1 else 0.01)

    def build_net(self, seed: int) -> Mlp:
        return Mlp((self.input_dim, *self.hidden, 10), head="softmax", seed=seed)

    def _facts(self, inst: AddInstance) -> FactVector:
        return FactVector.from_atoms([self.sum_base + inst.label_sum], self.theory.n)

    def _joint(self, probs: list[Tensor]) -> Tensor:
        acc = probs[0]
        for nxt in probs[1:]:
            acc = T.reshape(T.matmul(T.reshape(acc, (acc.size, 1)), T.reshape(nxt, (1, nxt.size))), (acc.size * nxt.size,))
        return acc

    def instance_loss(self, net: Mlp, inst: AddInstance, config: TrainConfig) -> dict[str, Tensor]:
        outs = [net.forward(Tensor(img)) for img in inst.images]
        x = T.concat([self._joint([p for p, _ in outs]), T.constant(np.zeros(self.theory.n - self.npred))])
        facts = self._facts(inst)
        v = assemble_prediction(facts, x, config.fn, config.ste)
        terms = {
            "cnf": cnf_loss(self.matrix, v, facts).l_cnf,
            "bound": _tensor_sum([bound_loss(raw) for _, raw in outs]),
        }
        if config.weights.delta:
            terms["hint"] = hint_loss(facts, x, config.ste)
        return terms

    def evaluate(self, net: Mlp, instances) -> float:
        return _classifier_accuracy(net, instances)

    def truth_pairs(self, inst: AddInstance) -> list[tuple[np.ndarray, FactVector]]:
        joint = _one_hot(0, 1)
        for d in inst.digits:
            joint = np.outer(joint, _one_hot(d, 10)).reshape(-1)
        x = np.zeros(self.theory.n)
        x[: self.npred] = joint
        return [(x, self._facts(inst))]

    def make_data(self, seed: int = 0, n_train: int = 5000, n_test: int = 2000, noise: float = 0.2, idx=None) -> TaskDataset:
        """Pairs of digit features with sum labels; test items are single digits."""
        k = self.n_images
        if idx is not None:
            images, labels = idx
            if len(images) < k * n_train + n_test:
                raise ValueError(f"need {k * n_train + n_test} images, file has {len(images)}")
            feats = images
        else:
            feats, labels = D.synthetic_features(k * n_train + n_test, 10, noise, [seed, 11], dim=self.input_dim)
        train = []
        for i in range(n_train):
            chunk = slice(k * i, k * (i + 1))
            digits = tuple(int(d) for d in labels[chunk])
            first = int("".join(map(str, digits[: self.digits])))
            second = int("".join(map(str, digits[self.digits :])))
            train.append(AddInstance(images=tuple(feats[chunk]), label_sum=first + second, digits=digits))
        test = [(feats[k * n_train + i], int(labels[k * n_train + i])) for i in range(n_test)]
        return TaskDataset(self, train, test)


@dataclass(frozen=True)
class Add2x2Instance:
    images: tuple[np.ndarray, ...]
    sums: tuple[int, int, int, int]
    digits: tuple[int, int, int, int]


class Add2x2Task(TaskSpec):
    """Digit classification from the four row/column sums of a 2x2 grid."""

    def __init__(self, input_dim: int = 16):
        super().__init__(add2x2_theory())
        self.name = "add2x2"
        self.input_dim = input_dim

    def build_net(self, seed: int) -> Mlp:
        return Mlp((self.input_dim, 64, 10), head="softmax", seed=seed)

    def _facts(self, inst: Add2x2Instance) -> FactVector:
        return FactVector.from_atoms([400 + 19 * p + r for p, r in enumerate(inst.sums)], 476)

    def instance_loss(self, net: Mlp, inst: Add2x2Instance, config: TrainConfig) -> dict[str, Tensor]:
        outs = [net.forward(Tensor(img)) for img in inst.images]
        blocks = []
        for a, b in ADD2X2_PAIRS:
            pa, pb = outs[a][0], outs[b][0]
            blocks.append(T.reshape(T.matmul(T.reshape(pa, (10, 1)), T.reshape(pb, (1, 10))), (100,)))
        x = T.concat(blocks + [T.constant(np.zeros(76))])
        facts = self._facts(inst)
        v = assemble_prediction(facts, x, config.fn, config.ste)
        return {
            "cnf": cnf_loss(self.matrix, v, facts).l_cnf,
            "bound": _tensor_sum([bound_loss(raw) for _, raw in outs]),
        }

    def evaluate(self, net: Mlp, instances) -> float:
        return _classifier_accuracy(net, instances)

    def truth_pairs(self, inst: Add2x2Instance) -> list[tuple[np.ndarray, FactVector]]:
        x = np.zeros(476)
        for p, (a, b) in enumerate(ADD2X2_PAIRS):
            x[100 * p : 100 * (p + 1)] = np.outer(_one_hot(inst.digits[a], 10), _one_hot(inst.digits[b], 10)).reshape(-1)
        return [(x, self._facts(inst))]

    def make_data(self, seed: int = 0, n_train: int = 2000, n_test: int = 1000, noise: float = 0.2) -> TaskDataset:
        feats, labels = D.synthetic_features(4 * n_train + n_test, 10, noise, [seed, 12], dim=self.input_dim)
        train = []
        for i in range(n_train):
            digits = tuple(int(d) for d in labels[4 * i : 4 * i + 4])
            sums = tuple(digits[a] + digits[b] for a, b in ADD2X2_PAIRS)
            train.append(Add2x2Instance(images=tuple(feats[4 * i : 4 * i + 4]), sums=sums, digits=digits))
        test = [(feats[4 * n_train + i], int(labels[4 * n_train + i])) for i in range(n_test)]
        return TaskDataset(self, train, test)


@dataclass(frozen=True)
class MemberInstance:
    images: tuple[np.ndarray, ...]
    query: int
    label: int
    digits: tuple[int, ...]


class MemberTask(TaskSpec):
    """Digit classification from set-membership answers."""

    def __init__(self, k: int = 3, input_dim: int = 16):
        super().__init__(member_theory(k))
        self.k = k
        self.name = f"member{k}"
        self.input_dim = input_dim

    def build_net(self, seed: int) -> Mlp:
        return Mlp((self.input_dim, 64, 10), head="softmax", seed=seed)

    def _facts(self, inst: MemberInstance) -> FactVector:
        return FactVector.from_atoms([10 * self.k + 10 * inst.label + inst.query], self.theory.n)

    def instance_loss(self, net: Mlp, inst: MemberInstance, config: TrainConfig) -> dict[str, Tensor]:
        outs = [net.forward(Tensor(img)) for img in inst.images]
        x = T.concat([p for p, _ in outs] + [T.constant(np.zeros(20))])
        facts = self._facts(inst)
        v = assemble_prediction(facts, x, config.fn, config.ste)
        return {
            "cnf": cnf_loss(self.matrix, v, facts).l_cnf,
            "bound": _tensor_sum([bound_loss(raw) for _, raw in outs]),
        }

    def evaluate(self, net: Mlp, instances) -> float:
        return _classifier_accuracy(net, instances)

    def truth_pairs(self, inst: MemberInstance) -> list[tuple[np.ndarray, FactVector]]:
        x = np.zeros(self.theory.n)
        for i, d in enumerate(inst.digits):
            x[10 * i + d] = 1.0
        return [(x, self._facts(inst))]

    def make_data(self, seed: int = 0, n_train: int = 2000, n_test: int = 1000, noise: float = 0.2) -> TaskDataset:
        rng = np.random.default_rng([seed, 13])
        feats, labels = D.synthetic_features(self.k * n_train + n_test, 10, noise, [seed, 14], dim=self.input_dim)
        train = []
        for i in range(n_train):
            digits = tuple(int(d) for d in labels[self.k * i : self.k * (i + 1)])
            if rng.random() < 0.5:
                query = int(rng.choice(digits))
            else:
                absent = [d for d in range(10) if d not in digits]
                query = int(rng.choice(absent)) if absent else int(rng.choice(digits))
            label = int(query in digits)
            train.append(MemberInstance(images=tuple(feats[self.k * i : self.k * (i + 1)]), query=query, label=label, digits=digits))
        test = [(feats[self.k * n_train + i], int(labels[self.k * n_train + i])) for i in range(n_test)]
        return TaskDataset(self, train, test)


@dataclass(frozen=True)
class Apply2x2Instance:
    digits: tuple[int, int, int]
    op_images: tuple[np.ndarray, ...]
    ops: tuple[int, int, int, int]
    results: tuple[int, int, int, int]


#: apply2x2 reads results along (row 1, row 2, column 1, column 2) of the operator grid.
APPLY2X2_PAIRS = ((0, 1), (2, 3), (0, 2), (1, 3))


class Apply2x2Task(TaskSpec):
    """Operator classification from applying row/column operator pairs.

    The clause matrix is far too large to densify, so this task is
    generate/verify only; the loss recipe is exercised through the
    sparse forward evaluator.
    """

    trainable = False

    def __init__(self, input_dim: int = 16):
        theory, lookup = apply2x2_theory()
        super().__init__(theory)
        self.name = "apply2x2"
        self.input_dim = input_dim
        self.lookup = lookup

    def build_net(self, seed: int) -> Mlp:
        return Mlp((self.input_dim, 32, 3), head="softmax", seed=seed)

    def truth_pairs(self, inst: Apply2x2Instance) -> list[tuple[np.ndarray, FactVector]]:
        out = []
        for pair_no, (a, b) in enumerate(APPLY2X2_PAIRS):
            x = np.zeros(self.theory.n)
            x[3 * inst.ops[a] + inst.ops[b]] = 1.0
            d1, d2, d3 = inst.digits
            atom = self.lookup[(d1, d2, d3, inst.results[pair_no])]
            out.append((x, FactVector.from_atoms([atom], self.theory.n)))
        return out

    def evaluate(self, net: Mlp, instances) -> float:
        return _classifier_accuracy(net, instances)

    def make_data(self, seed: int = 0, n_train: int = 500, n_test: int = 200, noise: float = 0.2) -> TaskDataset:
        rng = np.random.default_rng([seed, 15])
        feats, labels = D.synthetic_features(4 * n_train + n_test, 3, noise, [seed, 16], dim=self.input_dim)
        train = []
        for i in range(n_train):
            ops = tuple(int(o) for o in labels[4 * i : 4 * i + 4])
            digits = tuple(int(d) for d in rng.integers(0, 10, size=3))
            results = []
            for a, b in APPLY2X2_PAIRS:
                r = _apply_op(_apply_op(digits[0], APPLY_OPS[ops[a]], digits[1]), APPLY_OPS[ops[b]], digits[2])
                results.append(r)
            train.append(Apply2x2Instance(digits=digits, op_images=tuple(feats[4 * i : 4 * i + 4]), ops=ops, results=tuple(results)))
        test = [(feats[4 * n_train + i], int(labels[4 * n_train + i])) for i in range(n_test)]
        return TaskDataset(self, train, test)


class SudokuTask(TaskSpec):
    """Unsupervised grid completion from the exactly-one constraints."""

    def __init__(self, side: int = 4, include_box_uec: bool = False, hidden: tuple[int, ...] = (256, 256)):
        super().__init__(sudoku_theory(side, include_box_uec))
        self.side = side
        self.name = f"sudoku{side}"
        self.hidden = hidden
        self.cells = side * side
        self.input_dim = self.cells * (side + 1)

    def build_net(self, seed: int) -> Mlp:
        return Mlp((self.input_dim, *self.hidden, self.cells * self.side), head="none", seed=seed)

    def encode_board(self, q: np.ndarray) -> np.ndarray:
        return np.eye(self.side + 1, dtype=np.float64)[np.asarray(q, dtype=np.int64)].reshape(-1)

    def board_facts(self, q: np.ndarray) -> FactVector:
        bits = np.zeros(self.theory.n, dtype=np.int8)
        for cell, value in enumerate(np.asarray(q, dtype=np.int64)):
            if value:
                bits[self.side * cell + value - 1] = 1
        return FactVector(bits)

    def instance_loss(self, net: Mlp, inst: D.GridInstance, config: TrainConfig) -> dict[str, Tensor]:
        _, raw = net.forward(Tensor(self.encode_board(inst.q)))
        probs = T.softmax(T.reshape(raw, (self.cells, self.side)))
        x = T.reshape(probs, (self.theory.n,))
        facts = self.board_facts(inst.q)
        v = assemble_prediction(facts, x, config.fn, config.ste)
        terms = {
            "cnf": cnf_loss(self.matrix, v, facts).l_cnf,
            "bound": bound_loss(raw),
        }
        if config.weights.gamma:
            terms["sum"] = sum_loss(probs, sudoku_sum_groups(self.side))
        if config.weights.delta:
            terms["hint"] = hint_loss(facts, x, config.ste)
        return terms

    def cell_probs(self, net: Mlp, q: np.ndarray) -> np.ndarray:
        raw = net.predict(self.encode_board(q))
        return _softmax_np(raw.reshape(self.cells, self.side))

    def predict_board(self, net: Mlp, q: np.ndarray) -> np.ndarray:
        """One-shot completion: argmax digit for every empty cell."""
        probs = self.cell_probs(net, q)
        out = np.array(q, dtype=np.int64, copy=True)
        empty = out == 0
        out[empty] = np.argmax(probs[empty], axis=1) + 1
        return out

    def board_assignment(self, board: np.ndarray) -> Assignment:
        bits = np.zeros(self.theory.n, dtype=np.int8)
        for cell, value in enumerate(np.asarray(board, dtype=np.int64)):
            bits[self.side * cell + value - 1] = 1
        return Assignment(bits)

    def verify_board(self, board: np.ndarray) -> bool:
        """Direct clause evaluation of a completed board."""
        if np.any(np.asarray(board) == 0):
            return False
        return self.board_assignment(board).satisfies(self.theory)

    def evaluate(self, net: Mlp, instances, inference_trick: bool = True) -> float:
        if not len(instances):
            return 0.0
        good = 0
        for inst in instances:
            if inference_trick:
                filled = N.predict_with_inference_trick(net, inst.q, self)
            else:
                filled = self.predict_board(net, inst.q)
            if inst.solution is not None:
                good += int(np.array_equal(filled, inst.solution))
            else:
                good += int(self.verify_board(filled))
        return good / len(instances)

    def truth_pairs(self, inst: D.GridInstance) -> list[tuple[np.ndarray, FactVector]]:
        board = inst.solution if inst.solution is not None else inst.q
        x = np.zeros(self.theory.n)
        for cell, value in enumerate(np.asarray(board, dtype=np.int64)):
            if value:
                x[self.side * cell + value - 1] = 1.0
        return [(x, self.board_facts(inst.q))]

    def make_data(self, seed: int = 0, n_train: int = 2000, n_test: int = 200, tier: str = "easy", holes=(4, 11)) -> TaskDataset:
        boards = D.gen_grid_puzzles(self.side, n_train + n_test, tier=tier, seed=[seed, 17], holes=holes)
        return TaskDataset(self, boards[:n_train], boards[n_train:])


class ShortestPathTask(TaskSpec):
    """Supervised edge prediction with terminal-degree constraints on top."""

    cnf_batch_sum = False

    def __init__(self):
        super().__init__(shortest_path_theory())
        self.name = "shortest-path"
        self.weights = LossWeights(alpha=0.2, beta=1.0)

    def build_net(self, seed: int) -> Mlp:
        return Mlp((40, 128, 24), head="sigmoid", seed=seed)

    def _facts(self, inst: D.PathInstance) -> FactVector:
        return FactVector(np.concatenate([inst.features[24:].astype(np.int8), np.zeros(24, dtype=np.int8)]))

    def instance_loss(self, net: Mlp, inst: D.PathInstance, config: TrainConfig) -> dict[str, Tensor]:
        probs, raw = net.forward(Tensor(inst.features))
        x = T.concat([T.constant(np.zeros(16)), probs])
        facts = self._facts(inst)
        v = assemble_prediction(facts, x, config.fn, config.ste)
        label = T.constant(inst.label.astype(np.float64))
        # Clamp away from the sigmoid's saturated endpoints before taking logs.
        safe = T.clip(probs, 1e-12, 1.0 - 1e-12)
        bce = -1.0 * T.avg_last(label * T.log(safe) + (1.0 - label) * T.log(1.0 - safe))
        return {
            "base": bce,
            "cnf": cnf_loss(self.matrix, v, facts).l_cnf,
            "bound": bound_loss(raw),
        }

    def evaluate(self, net: Mlp, instances) -> float:
        """Exact-match accuracy of the thresholded edge predictions."""
        if not instances:
            return 0.0
        feats = np.stack([inst.features for inst in instances])
        preds = net.predict(feats) >= 0.5
        labels = np.stack([inst.label for inst in instances]).astype(bool)
        return float(np.mean(np.all(preds == labels, axis=1)))

    def truth_pairs(self, inst: D.PathInstance) -> list[tuple[np.ndarray, FactVector]]:
        x = np.concatenate([np.zeros(16), inst.label.astype(np.float64)])
        return [(x, self._facts(inst))]

    def make_data(self, seed: int = 0, n_train: int = 1288, n_test: int = 322, csv_path: str | None = None) -> TaskDataset:
        if csv_path:
            instances = D.load_path_csv(csv_path)
        else:
            instances = D.gen_path_instances(n_train + n_test, seed=[seed, 18])
        if len(instances) < n_train + n_test:
            n_train = int(len(instances) * 0.8)
            n_test = len(instances) - n_train
        return TaskDataset(self, instances[:n_train], instances[n_train : n_train + n_test])


class ExactlyOneTask(TaskSpec):
    """Semi-supervised classification with an exactly-one constraint on logits."""

    fn = "b"
    cnf_batch_sum = False

    def __init__(self, classes: int = 10, input_dim: int = 16):
        super().__init__(exactly_one_theory(classes))
        self.classes = classes
        self.name = "exactly-one"
        self.input_dim = input_dim
        self.weights = LossWeights(alpha=1.0, beta=1.0)
        self._zero_facts = FactVector(np.zeros(classes, dtype=np.int8))

    def build_net(self, seed: int) -> Mlp:
        return Mlp((self.input_dim, 64, self.classes), head="none", seed=seed)

    def instance_loss(self, net: Mlp, inst, config: TrainConfig) -> dict[str, Tensor]:
        feat, label = inst
        logits, raw = net.forward(Tensor(feat))
        v = assemble_prediction(self._zero_facts, logits, config.fn, config.ste)
        terms = {
            "cnf": cnf_loss(self.matrix, v, self._zero_facts).l_cnf,
            "bound": bound_loss(raw),
        }
        if label is not None:
            terms["base"] = T.cross_entropy(logits, _one_hot(int(label), self.classes))
        return terms

    def evaluate(self, net: Mlp, instances) -> float:
        return _classifier_accuracy(net, instances)

    def violation_fraction(self, net: Mlp, instances) -> float:
        """Share of inputs whose thresholded logits are not one-hot."""
        feats = np.stack([feat for feat, _ in instances])
        bits = net.predict(feats) >= 0.0
        return float(np.mean(bits.sum(axis=1) != 1))

    def truth_pairs(self, inst) -> list[tuple[np.ndarray, FactVector]]:
        # Logit-style ground truth: positive only at the true class, so the
        # sign binarizer yields a one-hot assignment.
        feat, label = inst
        if label is None:
            return []
        x = np.where(_one_hot(int(label), self.classes) > 0, 1.0, -1.0)
        return [(x, self._zero_facts)]

    def make_data(
        self,
        seed: int = 0,
        n_labeled: int = 100,
        n_unlabeled: int = 5000,
        n_test: int = 2000,
        noise: float = 0.2,
        balance: bool = True,
    ) -> TaskDataset:
        """Labeled + unlabeled pool; with ``balance`` the labeled instances
        are oversampled to pair one-to-one with the unlabeled ones, so every
        shuffled batch carries label signal alongside the constraint."""
        total = n_labeled + n_unlabeled + n_test
        feats, labels = D.synthetic_features(total, self.classes, noise, [seed, 19], dim=self.input_dim)
        labeled = [(feats[i], int(labels[i])) for i in range(n_labeled)]
        unlabeled = [(feats[n_labeled + i], None) for i in range(n_unlabeled)]
        train = list(labeled)
        if balance and labeled and unlabeled:
            reps = max(0, (len(unlabeled) - len(labeled)) // len(labeled))
            train += labeled * reps
        train += unlabeled
        test = [(feats[n_labeled + n_unlabeled + i], int(labels[n_labeled + n_unlabeled + i])) for i in range(n_test)]
        return TaskDataset(self, train, test)


def _tensor_sum(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def make_task(name: str, **options) -> TaskSpec:
    """Build a task by CLI name; options are forwarded to its constructor."""
    builders = {
        "mnist-add": lambda: MnistAddTask(digits=1, **options),
        "mnist-add2": lambda: MnistAddTask(digits=2, **options),
        "mnist-add3": lambda: MnistAddTask(digits=3, **options),
        "add2x2": lambda: Add2x2Task(**options),
        "apply2x2": lambda: Apply2x2Task(**options),
        "member3": lambda: MemberTask(k=3, **options),
        "member5": lambda: MemberTask(k=5, **options),
        "sudoku4": lambda: SudokuTask(side=4, **options),
        "sudoku9": lambda: SudokuTask(side=9, **options),
        "shortest-path": lambda: ShortestPathTask(**options),
        "exactly-one": lambda: ExactlyOneTask(**options),
    }
    if name not in builders:
        raise KeyError(f"unknown task {name!r}; choose from {', '.join(sorted(builders))}")
    return builders[name]()


TASK_NAMES = (
    "mnist-add",
    "mnist-add2",
    "mnist-add3",
    "add2x2",
    "apply2x2",
    "member3",
    "member5",
    "sudoku4",
    "sudoku9",
    "shortest-path",
    "exactly-one",
)
