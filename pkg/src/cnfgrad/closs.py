"""The constraint-loss stack and its closed-form gradient oracle.

``cnf_loss`` builds, inside the gradient graph, the chain

    L_f      = C * f                      (broadcast over rows)
    L_v      = [C==1] * v + [C==-1] * (1 - v)
    deduce_i = [ #literals_i - #fact-negating-literals_i == 1 ]
    unsat_i  = prod_j (1 - L_v[i, j])
    keep_i   = sum_j ([L_v==1] * (1 - L_v) + [L_v==0] * L_v)
    L_deduce = sum_i deduce_i * unsat_i
    L_unsat  = avg_i [unsat==1] * unsat_i
    L_sat    = avg_i [unsat==0] * keep_i

with every bracketed indicator a constant, so the only differentiable
inputs are the prediction bits ``v``. ``closed_form_grad`` predicts the
same gradients by counting clause memberships, evaluating satisfaction
directly on the clause lists and never through the graph above; the two
routes are compared in the verification suites.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cnf import ENUM_CAP, Assignment, ClauseMatrix, CnfTheory, FactVector, brute_force
from .tensor import SteMode, Tensor


@dataclass
class LossWeights:
    """Multipliers for the constraint, bound, group-sum, and hint terms."""

    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.0
    delta: float = 0.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


@dataclass
class LossBreakdown:
    """Every intermediate of the constraint loss, as graph nodes."""

    l_f: Tensor
    l_v: Tensor
    deduce: Tensor
    unsat: Tensor
    keep: Tensor
    l_deduce: Tensor
    l_unsat: Tensor
    l_sat: Tensor
    l_cnf: Tensor


@dataclass(frozen=True)
class ForwardBreakdown:
    """Loss values computed sparsely, without a gradient graph."""

    l_deduce: float
    l_unsat: float
    l_sat: float
    l_cnf: float
    deduce: np.ndarray
    unsat: np.ndarray


def _fact_bits(f) -> np.ndarray:
    bits = f.bits if isinstance(f, FactVector) else np.asarray(f)
    return np.asarray(bits, dtype=np.float64)


def assemble_prediction(f, x: Tensor, fn: str = "bp", ste: SteMode = SteMode.ISTE) -> Tensor:
    """Overlay binarized outputs on the facts: v = f + [f==0] * binarize(x).

    Positions with a fact are pinned to 1 and receive no gradient; all
    others carry the straight-through gradient of the binarizer.
    """
    bits = _fact_bits(f)
    if x.shape != bits.shape:
        raise T.ShapeError(f"assemble_prediction: x has shape {x.shape}, facts have {bits.shape}")
    f_t = T.constant(bits)
    free = T.indicator(f_t, 0.0)
    return f_t + free * T.binarize(x, fn, ste)


def _constant_nodes(matrix: ClauseMatrix) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    # The dense matrix, its polarity indicators, and per-clause literal
    # counts never change; share them across every loss built on the matrix.
    nodes = getattr(matrix, "_graph_nodes", None)
    if nodes is None:
        dense = matrix.dense()
        c_t = Tensor(dense)
        lits = Tensor((dense * dense).sum(axis=-1))
        nodes = (c_t, T.indicator(c_t, 1.0), T.indicator(c_t, -1.0), lits)
        matrix._graph_nodes = nodes
    return nodes


def cnf_loss(matrix: ClauseMatrix, v: Tensor, f) -> LossBreakdown:
    """Constraint loss of prediction ``v`` against the clause matrix."""
    m, n = matrix.shape
    bits = _fact_bits(f)
    if v.shape != (n,) or bits.shape != (n,):
        raise T.ShapeError(f"cnf_loss: matrix is {m}x{n}, v has shape {v.shape}, f has shape {bits.shape}")
    c_t, pos, neg, lits = _constant_nodes(matrix)
    f_t = T.constant(bits)

    l_f = c_t * f_t
    one_minus_v = 1.0 - v
    l_v = pos * v + neg * one_minus_v
    false_under_f = T.sum_last(T.indicator(l_f, -1.0))
    deduce = T.indicator(lits - false_under_f, 1.0)
    one_minus_lv = 1.0 - l_v
    unsat = T.prod_last(one_minus_lv)
    keep = T.sum_last(T.indicator(l_v, 1.0) * one_minus_lv + T.indicator(l_v, 0.0) * l_v)
    l_deduce = T.sum_last(deduce * unsat)
    l_unsat = T.avg_last(T.indicator(unsat, 1.0) * unsat)
    l_sat = T.avg_last(T.indicator(unsat, 0.0) * keep)
    l_cnf = l_deduce + l_unsat + l_sat
    return LossBreakdown(l_f, l_v, deduce, unsat, keep, l_deduce, l_unsat, l_sat, l_cnf)


def cnf_loss_forward(matrix: ClauseMatrix, v_bits: np.ndarray, f_bits) -> ForwardBreakdown:
    """Forward loss values from 0/1 bit vectors, in O(nonzeros) memory.

    Matches the graph route exactly; useful where the dense m x n
    intermediates would not fit (the larger generated theories).
    """
    m, n = matrix.shape
    v = np.asarray(v_bits, dtype=np.int8)
    fb = np.asarray(f_bits.bits if isinstance(f_bits, FactVector) else f_bits, dtype=np.int8)
    if v.shape != (n,) or fb.shape != (n,):
        raise T.ShapeError(f"cnf_loss_forward: matrix is {m}x{n}, v has shape {v.shape}, f has shape {fb.shape}")
    row_ids = np.repeat(np.arange(m), np.diff(matrix.indptr))
    lit_true = np.where(matrix.values > 0, v[matrix.indices] == 1, v[matrix.indices] == 0)
    sat_counts = np.bincount(row_ids, weights=lit_true.astype(np.float64), minlength=m)
    unsat = sat_counts == 0
    neg_fact = (matrix.values < 0) & (fb[matrix.indices] == 1)
    neg_counts = np.bincount(row_ids, weights=neg_fact.astype(np.float64), minlength=m)
    deduce = (np.diff(matrix.indptr) - neg_counts) == 1
    l_deduce = float(np.sum(deduce & unsat))
    l_unsat = float(np.mean(unsat)) if m else 0.0
    l_cnf = l_deduce + l_unsat
    return ForwardBreakdown(l_deduce, l_unsat, 0.0, l_cnf, deduce, unsat)


def bound_loss(x_raw: Tensor) -> Tensor:
    """Mean squared raw output over the last axis; keeps logits small."""
    return T.avg_last(T.square(x_raw))


def sum_loss(probs: Tensor, group_families) -> Tensor:
    """Penalize index groups whose probabilities do not sum to 1.

    ``group_families`` is a sequence of families; each family is a list of
    groups, each group a list of (row, col) positions into ``probs``. The
    squared deviation of each group sum from 1 is averaged within its
    family, and families are summed.
    """
    if len(probs.shape) != 2:
        raise T.ShapeError(f"sum_loss: probs must be 2-D, got shape {probs.shape}")
    rows, cols = probs.shape
    flat = T.reshape(probs, (rows * cols,))
    total: Tensor | None = None
    for family in group_families:
        sel = np.zeros((len(family), rows * cols), dtype=np.float64)
        for gi, group in enumerate(family):
            for r, c in group:
                if not (0 <= r < rows and 0 <= c < cols):
                    raise IndexError(f"sum_loss: position ({r}, {c}) outside {rows}x{cols}")
                sel[gi, r * cols + c] = 1.0
        term = T.avg_last(T.square(T.matmul(Tensor(sel), flat) - 1.0))
        total = term if total is None else total + term
    return total if total is not None else T.constant(0.0)


def hint_loss(f, x: Tensor, ste: SteMode = SteMode.ISTE) -> Tensor:
    """Mean of f * (1 - binarize(x)): facts the prediction fails to assert."""
    bits = _fact_bits(f)
    if x.shape != bits.shape:
        raise T.ShapeError(f"hint_loss: x has shape {x.shape}, facts have {bits.shape}")
    f_t = T.constant(bits)
    return T.avg_last(f_t * (1.0 - T.binarize(x, "bp", ste)))


# -- counting oracle ----------------------------------------------------------

@dataclass(frozen=True)
class GradOracleReport:
    """Predicted identity-surrogate gradients, by clause counting.

    Per atom j (all zero where f[j] = 1):
      g_deduce = (deduce-set clauses with ¬p_j) - (deduce-set clauses with p_j)
      g_unsat  = (c2 - c1) / m          over clauses falsified by v
      g_sat    = -c3/m if v asserts p_j else +c3/m, c3 counting satisfied
                 clauses that mention the atom.
    ``satisfiable`` is None when the theory was too large to screen.
    """

    g_deduce: np.ndarray
    g_unsat: np.ndarray
    g_sat: np.ndarray
    g_total: np.ndarray
    deduce_pos: np.ndarray
    deduce_neg: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    satisfiable: bool | None = field(default=None)


def closed_form_grad(
    theory: CnfTheory,
    f: FactVector,
    v: Assignment,
    cap: int = ENUM_CAP,
    assume_satisfiable: bool = False,
) -> GradOracleReport:
    """Predict the loss gradients without touching the graph route.

    Satisfaction and deduce-set membership are recomputed here literal by
    literal. When the theory fits under the enumeration cap, the premise
    that theory+facts is satisfiable is checked and a warning raised if
    it fails (the loss is still well defined; the sign guarantees on
    g_deduce are not). Callers that already screened can pass
    ``assume_satisfiable`` to skip the check.
    """
    n, m = theory.n, theory.m
    if f.n != n or v.bits.shape != (n,):
        raise ValueError("closed_form_grad: facts/assignment length must match the theory")

    deduce_pos = np.zeros(n, dtype=np.int64)
    deduce_neg = np.zeros(n, dtype=np.int64)
    c1 = np.zeros(n, dtype=np.int64)
    c2 = np.zeros(n, dtype=np.int64)
    c3 = np.zeros(n, dtype=np.int64)

    for clause in theory.clauses:
        satisfied = any((lit > 0) == bool(v.bits[abs(lit) - 1]) for lit in clause)
        fact_negs = sum(1 for lit in clause if lit < 0 and f.bits[-lit - 1])
        in_deduce = len(clause) - fact_negs == 1
        for lit in clause:
            j = abs(lit) - 1
            if satisfied:
                c3[j] += 1
            elif lit > 0:
                c1[j] += 1
            else:
                c2[j] += 1
            if in_deduce:
                if lit > 0:
                    deduce_pos[j] += 1
                else:
                    deduce_neg[j] += 1

    free = (f.bits == 0).astype(np.float64)
    g_deduce = (deduce_neg - deduce_pos) * free
    g_unsat = ((c2 - c1) / m) * free if m else np.zeros(n)
    sign = np.where(v.bits == 1, -1.0, 1.0)
    g_sat = (sign * c3 / m) * free if m else np.zeros(n)

    satisfiable: bool | None = None
    if assume_satisfiable:
        satisfiable = True
    elif n <= cap:
        satisfiable = brute_force(theory, f, cap=cap).satisfiable
        if not satisfiable:
            warnings.warn(
                "theory plus facts is unsatisfiable; the counting gradients "
                "still match the graph but deduced signs carry no guarantee",
                stacklevel=2,
            )
    return GradOracleReport(
        g_deduce=g_deduce,
        g_unsat=g_unsat,
        g_sat=g_sat,
        g_total=g_deduce + g_unsat + g_sat,
        deduce_pos=deduce_pos,
        deduce_neg=deduce_neg,
        c1=c1,
        c2=c2,
        c3=c3,
        satisfiable=satisfiable,
    )
