"""Propositional CNF theories: parsing, matrices, and exhaustive oracles.

Clauses are stored as tuples of nonzero DIMACS-style literals: literal
``+k`` is atom index ``k-1`` positive, ``-k`` the same atom negated. A
clause may be empty (it is then unsatisfiable under every assignment),
but no clause may mention the same atom twice: duplicated or tautological
clauses are rejected at construction time because the loss equations
downstream assume one occurrence per atom per clause.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Clause = tuple[int, ...]

#: Largest atom count the exhaustive oracle will enumerate (2^24 assignments).
ENUM_CAP = 24

#: Models are listed in a report only when there are at most this many.
MAX_LISTED_MODELS = 4096


class DimacsError(ValueError):
    """Malformed DIMACS / facts / name-map input."""


def _check_clause(lits: Sequence[int], n: int, where: str) -> Clause:
    seen: set[int] = set()
    for lit in lits:
        if lit == 0:
            raise DimacsError(f"{where}: literal 0 is reserved as the clause terminator")
        if abs(lit) > n:
            raise DimacsError(f"{where}: variable {abs(lit)} out of range (n={n})")
        atom = abs(lit) - 1
        if atom in seen:
            raise DimacsError(f"{where}: duplicate or tautological occurrence of variable {abs(lit)}")
        seen.add(atom)
    return tuple(int(lit) for lit in lits)


@dataclass(frozen=True)
class CnfTheory:
    """A clause set over a fixed, ordered atom signature."""

    atom_names: tuple[str, ...]
    clauses: tuple[Clause, ...]

    def __post_init__(self) -> None:
        n = len(self.atom_names)
        checked = tuple(_check_clause(cl, n, f"clause {i + 1}") for i, cl in enumerate(self.clauses))
        object.__setattr__(self, "clauses", checked)

    @property
    def n(self) -> int:
        return len(self.atom_names)

    @property
    def m(self) -> int:
        return len(self.clauses)

    def with_atom_names(self, names: Sequence[str]) -> "CnfTheory":
        if len(names) != self.n:
            raise DimacsError(f"name map has {len(names)} names for {self.n} atoms")
        return CnfTheory(tuple(names), self.clauses)


def theory_from_clauses(clauses: Iterable[Sequence[int]], n: int, atom_names: Sequence[str] | None = None) -> CnfTheory:
    names = tuple(atom_names) if atom_names is not None else tuple(str(k) for k in range(1, n + 1))
    if len(names) != n:
        raise DimacsError(f"{len(names)} names for {n} atoms")
    return CnfTheory(names, tuple(tuple(cl) for cl in clauses))


@dataclass(frozen=True)
class FactVector:
    """Atoms known true, as a 0/1 vector aligned with a theory's signature."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.int8)
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise ValueError("fact vector must be a 1-D 0/1 array")
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return int(self.bits.shape[0])

    @property
    def atoms(self) -> frozenset[int]:
        return frozenset(int(j) for j in np.flatnonzero(self.bits))

    @classmethod
    def from_atoms(cls, atoms: Iterable[int], n: int) -> "FactVector":
        bits = np.zeros(n, dtype=np.int8)
        for j in atoms:
            if not 0 <= j < n:
                raise ValueError(f"fact atom index {j} out of range (n={n})")
            bits[j] = 1
        return cls(bits)


@dataclass(frozen=True)
class Assignment:
    """A full 0/1 truth valuation of the signature."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.int8)
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise ValueError("assignment must be a 1-D 0/1 array")
        object.__setattr__(self, "bits", bits)

    def satisfies_clause(self, clause: Clause) -> bool:
        return any((lit > 0) == bool(self.bits[abs(lit) - 1]) for lit in clause)

    def satisfies(self, theory: CnfTheory) -> bool:
        return all(self.satisfies_clause(cl) for cl in theory.clauses)


@dataclass(frozen=True)
class SatReport:
    satisfiable: bool
    model_count: int
    models: tuple[Assignment, ...] | None
    entailed_literals: tuple[int, ...]


# -- DIMACS I/O ---------------------------------------------------------------

def parse_dimacs(text: str) -> CnfTheory:
    """Parse DIMACS CNF text: comments, one ``p cnf n m`` header, m clauses.

    DIMACS variable k becomes atom index k-1 with atom name ``str(k)``;
    literal order inside each clause is preserved.
    """
    header: tuple[int, int] | None = None
    tokens: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("p"):
            if header is not None:
                raise DimacsError(f"line {lineno}: repeated header")
            parts = line.split()
            if len(parts) != 4 or parts[0] != "p" or parts[1] != "cnf":
                raise DimacsError(f"line {lineno}: malformed header {line!r} (expected 'p cnf n m')")
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError as exc:
                raise DimacsError(f"line {lineno}: malformed header {line!r}") from exc
            if n < 0 or m < 0:
                raise DimacsError(f"line {lineno}: negative counts in header")
            header = (n, m)
            continue
        if header is None:
            raise DimacsError(f"line {lineno}: clause data before 'p cnf' header")
        for tok in line.split():
            try:
                tokens.append(int(tok))
            except ValueError as exc:
                raise DimacsError(f"line {lineno}: non-integer token {tok!r}") from exc
    if header is None:
        raise DimacsError("missing 'p cnf' header")
    n, m = header

    clauses: list[list[int]] = []
    current: list[int] = []
    for tok in tokens:
        if tok == 0:
            clauses.append(current)
            current = []
        else:
            current.append(tok)
    if current:
        raise DimacsError(f"clause {len(clauses) + 1}: missing '0' terminator")
    if len(clauses) != m:
        raise DimacsError(f"header promises {m} clauses, found {len(clauses)}")
    return theory_from_clauses(clauses, n)


def serialize_dimacs(theory: CnfTheory) -> str:
    """Canonical DIMACS text; parsing it reproduces the theory exactly."""
    lines = [f"p cnf {theory.n} {theory.m}"]
    for clause in theory.clauses:
        lines.append(" ".join(str(lit) for lit in clause) + (" 0" if clause else "0"))
    return "\n".join(lines) + "\n"


def parse_facts(text: str, n: int) -> FactVector:
    """Facts file: one positive DIMACS variable per line, 'c' comments allowed."""
    bits = np.zeros(n, dtype=np.int8)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        try:
            var = int(line)
        except ValueError as exc:
            raise DimacsError(f"facts line {lineno}: non-integer {line!r}") from exc
        if var <= 0:
            raise DimacsError(f"facts line {lineno}: facts are atoms, got non-positive {var}")
        if var > n:
            raise DimacsError(f"facts line {lineno}: variable {var} out of range (n={n})")
        bits[var - 1] = 1
    return FactVector(bits)


def serialize_facts(facts: FactVector) -> str:
    return "".join(f"{j + 1}\n" for j in sorted(facts.atoms))


def parse_atom_names(text: str, n: int) -> tuple[str, ...]:
    """Name-map sidecar: line k holds the name of DIMACS variable k."""
    names = [line.rstrip("\n") for line in text.splitlines()]
    while names and names[-1] == "":
        names.pop()
    if len(names) != n:
        raise DimacsError(f"name map has {len(names)} lines for {n} atoms")
    return tuple(names)


def serialize_atom_names(theory: CnfTheory) -> str:
    return "".join(f"{name}\n" for name in theory.atom_names)


# -- clause matrix ------------------------------------------------------------

@dataclass
class ClauseMatrix:
    """Sparse m x n matrix over {-1, 0, +1}: row = clause, column = atom."""

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    _dense: np.ndarray | None = field(default=None, repr=False)
    _graph_nodes: tuple | None = field(default=None, repr=False)

    def row_literal_count(self, i: int) -> int:
        return int(self.indptr[i + 1] - self.indptr[i])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def dense(self) -> np.ndarray:
        """Materialize as float64; cached, so callers must not mutate it."""
        if self._dense is None:
            m, n = self.shape
            out = np.zeros((m, n), dtype=np.float64)
            rows = np.repeat(np.arange(m), np.diff(self.indptr))
            out[rows, self.indices] = self.values
            self._dense = out
        return self._dense


def build_matrix(theory: CnfTheory) -> ClauseMatrix:
    indptr = np.zeros(theory.m + 1, dtype=np.int64)
    cols: list[int] = []
    vals: list[int] = []
    for i, clause in enumerate(theory.clauses):
        for lit in clause:
            cols.append(abs(lit) - 1)
            vals.append(1 if lit > 0 else -1)
        indptr[i + 1] = len(cols)
    return ClauseMatrix(
        shape=(theory.m, theory.n),
        indptr=indptr,
        indices=np.asarray(cols, dtype=np.int64),
        values=np.asarray(vals, dtype=np.int8),
    )


# -- exhaustive reasoning -----------------------------------------------------

def deduce_set(theory: CnfTheory, facts: FactVector) -> list[int]:
    """Clause indices with all but one literal of the form ¬p for p a fact.

    Equivalently: clause length minus the count of fact-negating literals
    equals 1. With no facts this selects exactly the unit clauses.
    """
    if facts.n != theory.n:
        raise ValueError(f"facts length {facts.n} does not match theory n={theory.n}")
    out = []
    for i, clause in enumerate(theory.clauses):
        false_under_facts = sum(1 for lit in clause if lit < 0 and facts.bits[-lit - 1])
        if len(clause) - false_under_facts == 1:
            out.append(i)
    return out


def brute_force(theory: CnfTheory, facts: FactVector, cap: int = ENUM_CAP) -> SatReport:
    """Enumerate every assignment extending the facts; report models exactly.

    Assignments are packed into uint64 bit patterns and clauses evaluated
    with bit masks, chunked to bound memory. Deterministic by construction.
    """
    n = theory.n
    if facts.n != n:
        raise ValueError(f"facts length {facts.n} does not match theory n={n}")
    if n > cap:
        raise ValueError(f"theory has {n} atoms, above the enumeration cap {cap}")

    free = np.flatnonzero(facts.bits == 0)
    base = np.uint64(0)
    for j in np.flatnonzero(facts.bits):
        base |= np.uint64(1) << np.uint64(j)

    pos_masks = []
    neg_masks = []
    for clause in theory.clauses:
        p = np.uint64(0)
        q = np.uint64(0)
        for lit in clause:
            bit = np.uint64(1) << np.uint64(abs(lit) - 1)
            if lit > 0:
                p |= bit
            else:
                q |= bit
        pos_masks.append(p)
        neg_masks.append(q)

    total = 1 << len(free)
    chunk = 1 << 20
    count = 0
    and_acc = np.uint64(2**n - 1) if n else np.uint64(0)
    or_acc = np.uint64(0)
    listed: list[int] = []
    full = np.uint64(2**n - 1) if n else np.uint64(0)

    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        assign = np.full(idx.shape, base, dtype=np.uint64)
        for t, j in enumerate(free):
            assign |= ((idx >> np.uint64(t)) & np.uint64(1)) << np.uint64(j)
        sat = np.ones(idx.shape, dtype=bool)
        for p, q in zip(pos_masks, neg_masks):
            sat &= ((assign & p) != 0) | ((~assign & full & q) != 0)
        models = assign[sat]
        count += int(models.size)
        if models.size:
            and_acc &= np.bitwise_and.reduce(models)
            or_acc |= np.bitwise_or.reduce(models)
            if len(listed) < MAX_LISTED_MODELS:
                listed.extend(int(v) for v in models[: MAX_LISTED_MODELS - len(listed)])

    entailed: list[int] = []
    if count:
        for j in range(n):
            bit = np.uint64(1) << np.uint64(j)
            if and_acc & bit:
                entailed.append(j + 1)
            elif not (or_acc & bit):
                entailed.append(-(j + 1))

    model_list: tuple[Assignment, ...] | None = None
    if count <= MAX_LISTED_MODELS:
        model_list = tuple(
            Assignment(np.array([(v >> j) & 1 for j in range(n)], dtype=np.int8)) for v in listed
        )
    return SatReport(
        satisfiable=count > 0,
        model_count=count,
        models=model_list,
        entailed_literals=tuple(entailed),
    )
