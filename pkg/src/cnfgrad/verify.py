"""Self-contained verification suites for the loss stack.

Each suite re-derives its expected values independently of the code under
test: satisfaction and deduce-set membership by direct literal scans,
gradients from the counting oracle, smooth ops from central finite
differences. The command-line ``grad-verify`` subcommand and the
acceptance tests both drive these.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import closs
from . import tensor as T
from .closs import assemble_prediction, bound_loss, cnf_loss
from .cnf import Assignment, CnfTheory, FactVector, brute_force, build_matrix, deduce_set, theory_from_clauses
from .tensor import SteMode, Tensor, TgfConfig


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    max_dev: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def check(self, condition: bool, message: str) -> None:
        if not condition:
            self.failures.append(message)

    def dev(self, value: float) -> float:
        self.max_dev = max(self.max_dev, abs(float(value)))
        return value

    def summary(self) -> str:
        status = "OK" if self.ok else f"FAIL ({len(self.failures)})"
        line = f"{self.name}: {status} (cases={self.cases}, max dev={self.max_dev:.1e})"
        if self.failures:
            line += "\n  " + "\n  ".join(self.failures[:5])
        return line


# -- random problem generators --------------------------------------------------

def random_theory(rng: np.random.Generator, n_max: int, m_max: int, allow_empty: bool = False) -> CnfTheory:
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    clauses = []
    for _ in range(m):
        if allow_empty and rng.random() < 0.05:
            clauses.append(())
            continue
        length = int(rng.integers(1, min(n, 5) + 1))
        atoms = rng.choice(n, size=length, replace=False)
        clauses.append(tuple(int(a + 1) * (1 if rng.random() < 0.5 else -1) for a in atoms))
    return theory_from_clauses(clauses, n)


def random_facts(rng: np.random.Generator, n: int, p: float = 0.3) -> FactVector:
    return FactVector((rng.random(n) < p).astype(np.int8))


def _clause_true(clause, bits: np.ndarray) -> bool:
    return any((lit > 0) == bool(bits[abs(lit) - 1]) for lit in clause)


def _scan_deduce(theory: CnfTheory, facts: FactVector) -> list[int]:
    # Independent re-derivation: count the literals a fact falsifies.
    out = []
    for i, clause in enumerate(theory.clauses):
        falsified = sum(1 for lit in clause if lit < 0 and facts.bits[-lit - 1])
        if len(clause) - falsified == 1:
            out.append(i)
    return out


# -- worked three-atom example ---------------------------------------------------

GOLDEN_X = (0.3, 0.1, 0.9)
GOLDEN_FORWARD = {"deduce": 1.0, "unsat": 0.5, "sat": 0.0, "cnf": 1.5}
GOLDEN_GRADS = {
    "deduce": (0.0, -1.0, 0.0),
    "unsat": (0.0, -0.5, 0.0),
    "sat": (0.0, 0.5, -0.5),
    "cnf": (0.0, -1.0, -0.5),
}


def golden_theory() -> tuple[CnfTheory, FactVector]:
    theory = theory_from_clauses([(-1, -2, 3), (-1, 2)], 3, ["a", "b", "c"])
    return theory, FactVector.from_atoms([0], 3)


def golden_example(tol: float = 1e-12) -> SuiteResult:
    """The three-atom instance with known forward values and gradients."""
    result = SuiteResult("golden")
    theory, facts = golden_theory()
    matrix = build_matrix(theory)
    for term, expected_grad in GOLDEN_GRADS.items():
        x = Tensor(np.array(GOLDEN_X), requires_grad=True)
        v = assemble_prediction(facts, x, "bp", SteMode.ISTE)
        breakdown = cnf_loss(matrix, v, facts)
        loss = getattr(breakdown, f"l_{term}")
        fwd_dev = result.dev(float(loss.data) - GOLDEN_FORWARD[term])
        result.check(abs(fwd_dev) <= tol, f"forward L_{term} = {float(loss.data)} (expected {GOLDEN_FORWARD[term]})")
        T.backward(loss)
        for j, want in enumerate(expected_grad):
            got = float(x.grad[j])
            result.dev(got - want)
            result.check(abs(got - want) <= tol, f"dL_{term}/dx[{j}] = {got} (expected {want})")
        result.cases += 1
    report = closs.closed_form_grad(theory, facts, Assignment(np.array([1, 0, 1], dtype=np.int8)))
    for name, want in (("g_deduce", GOLDEN_GRADS["deduce"]), ("g_unsat", GOLDEN_GRADS["unsat"]), ("g_sat", GOLDEN_GRADS["sat"])):
        got = getattr(report, name)
        result.check(np.allclose(got, want, atol=tol), f"oracle {name} = {got} (expected {want})")
    return result


# -- loss-value properties -------------------------------------------------------

def value_suite(trials: int = 200, seed: int = 0, n_max: int = 10, m_max: int = 20) -> SuiteResult:
    """Loss values against direct clause evaluation on random instances."""
    result = SuiteResult("values")
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        theory = random_theory(rng, n_max, m_max, allow_empty=True)
        facts = random_facts(rng, theory.n)
        matrix = build_matrix(theory)
        x = Tensor(rng.random(theory.n))
        v = assemble_prediction(facts, x, "bp", SteMode.ISTE)
        bits = v.data.astype(np.int8)
        breakdown = cnf_loss(matrix, v, facts)

        unsat_count = sum(0 if _clause_true(cl, bits) else 1 for cl in theory.clauses)
        scan = _scan_deduce(theory, facts)
        deduce_unsat = sum(0 if _clause_true(theory.clauses[i], bits) else 1 for i in scan)

        where = f"trial {trial} (n={theory.n}, m={theory.m})"
        result.check(scan == deduce_set(theory, facts), f"{where}: deduce-set scan mismatch")
        result.check(float(breakdown.l_sat.data) == 0.0, f"{where}: L_sat = {float(breakdown.l_sat.data)}")
        result.check(
            result.dev(float(breakdown.l_deduce.data) - deduce_unsat) == 0.0,
            f"{where}: L_deduce = {float(breakdown.l_deduce.data)} (expected {deduce_unsat})",
        )
        expected_unsat = unsat_count / theory.m if theory.m else 0.0
        result.check(
            result.dev(float(breakdown.l_unsat.data) - expected_unsat) == 0.0,
            f"{where}: L_unsat = {float(breakdown.l_unsat.data)} (expected {expected_unsat})",
        )
        sat = unsat_count == 0
        result.check((float(breakdown.l_unsat.data) == 0.0) == sat, f"{where}: L_unsat zero/sat mismatch")
        result.check((float(breakdown.l_deduce.data) == 0.0) == (deduce_unsat == 0), f"{where}: L_deduce zero mismatch")
        result.check((float(breakdown.l_cnf.data) == 0.0) == sat, f"{where}: L_cnf zero/sat mismatch")
        for term in ("l_deduce", "l_unsat", "l_sat", "l_cnf"):
            result.check(float(getattr(breakdown, term).data) >= 0.0, f"{where}: {term} negative")
        sparse = closs.cnf_loss_forward(matrix, bits, facts)
        result.check(sparse.l_cnf == float(breakdown.l_cnf.data), f"{where}: sparse forward disagrees with graph")
        result.cases += 1
    return result


# -- gradient properties -----------------------------------------------------------

def _term_grad(matrix, facts, x_data: np.ndarray, fn: str, term: str) -> np.ndarray:
    x = Tensor(x_data, requires_grad=True)
    v = assemble_prediction(facts, x, fn, SteMode.ISTE)
    breakdown = cnf_loss(matrix, v, facts)
    T.backward(getattr(breakdown, f"l_{term}"))
    return x.grad


def gradient_suite(trials: int = 1000, seed: int = 0, n_max: int = 12, m_max: int = 30, tol: float = 1e-9) -> SuiteResult:
    """Graph gradients against the counting oracle, both binarizers.

    Instances are screened so theory plus facts is satisfiable; the
    deduced-sign dominance of the total gradient is asserted as well.
    """
    result = SuiteResult("gradients")
    rng = np.random.default_rng(seed)
    produced = 0
    while produced < trials:
        theory = random_theory(rng, n_max, m_max)
        facts = random_facts(rng, theory.n)
        if not brute_force(theory, facts).satisfiable:
            continue
        produced += 1
        matrix = build_matrix(theory)
        for fn in ("bp", "b"):
            x_data = rng.random(theory.n) if fn == "bp" else rng.uniform(-2.0, 2.0, theory.n)
            threshold = 0.5 if fn == "bp" else 0.0
            bits = np.where(facts.bits == 1, 1, (x_data >= threshold).astype(np.int8)).astype(np.int8)
            oracle = closs.closed_form_grad(theory, facts, Assignment(bits), assume_satisfiable=True)
            where = f"trial {produced} fn={fn} (n={theory.n}, m={theory.m})"
            for term, want in (
                ("deduce", oracle.g_deduce),
                ("unsat", oracle.g_unsat),
                ("sat", oracle.g_sat),
                ("cnf", oracle.g_total),
            ):
                got = _term_grad(matrix, facts, x_data, fn, term)
                dev = result.dev(np.max(np.abs(got - want)) if got.size else 0.0)
                result.check(dev <= tol, f"{where}: dL_{term} deviates by {dev:.3e}")
                fact_idx = facts.bits == 1
                result.check(np.all(got[fact_idx] == 0.0), f"{where}: nonzero gradient at a fact position ({term})")
            nz = oracle.g_deduce != 0
            result.check(
                bool(np.all(np.sign(oracle.g_total[nz]) == np.sign(oracle.g_deduce[nz]))),
                f"{where}: total gradient flips the deduced sign",
            )
        result.cases += 1
    return result


# -- sawtooth gate -----------------------------------------------------------------

def tgf_suite(trials: int = 1000, seed: int = 0, ks: tuple[float, ...] = (10.0, 1e3, 1e6)) -> SuiteResult:
    """Gate value within 1/K of the step; analytic gradient equals the surrogate."""
    result = SuiteResult("tgf")
    rng = np.random.default_rng(seed)
    for k in ks:
        x_data = rng.uniform(-2.0, 2.0, trials)
        # keep off the 1/K grid where the sawtooth is non-differentiable
        on_grid = (k * x_data) == np.floor(k * x_data)
        x_data[on_grid] += 0.5 / k
        step = (x_data >= 0.0).astype(np.float64)
        for g_mode, surrogate in (("one", SteMode.ISTE), ("box", SteMode.SSTE)):
            x = Tensor(x_data, requires_grad=True)
            gate = T.tgf(x, TgfConfig(k=k, g_mode=g_mode))
            gap = np.max(np.abs(gate.data - step))
            result.dev(gap)
            result.check(gap <= 1.0 / k, f"K={k} g={g_mode}: |gate - step| = {gap:.3e} > 1/K")
            T.backward(T.sum_last(gate))
            analytic = x.grad.copy()

            x2 = Tensor(x_data, requires_grad=True)
            T.backward(T.sum_last(T.binarize(x2, "b", surrogate)))
            result.check(np.array_equal(analytic, x2.grad), f"K={k} g={g_mode}: gate gradient differs from surrogate")
            expected = np.ones_like(x_data) if g_mode == "one" else ((x_data >= -1.0) & (x_data <= 1.0)).astype(np.float64)
            result.check(np.array_equal(analytic, expected), f"K={k} g={g_mode}: gate gradient not the expected mask")
            result.cases += trials
    return result


# -- finite differences ---------------------------------------------------------------

def _fd_case(result: SuiteResult, name: str, build, arrays: list[np.ndarray], tol: float, h: float) -> None:
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.backward(build(leaves))
    for which, (leaf, arr) in enumerate(zip(leaves, arrays)):
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] += h
            up = float(build([Tensor(bumped.reshape(arr.shape) if j == which else arrays[j]) for j in range(len(arrays))]).data)
            bumped[i] -= 2 * h
            down = float(build([Tensor(bumped.reshape(arr.shape) if j == which else arrays[j]) for j in range(len(arrays))]).data)
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        denom = np.maximum(1.0, np.maximum(np.abs(leaf.grad), np.abs(numeric)))
        rel = np.max(np.abs(leaf.grad - numeric) / denom) if arr.size else 0.0
        result.dev(rel)
        result.check(rel <= tol, f"{name}: relative gradient error {rel:.3e}")


def finite_difference_suite(cases: int = 200, seed: int = 0, tol: float = 1e-6, h: float = 1e-5) -> SuiteResult:
    """Central differences against every smooth op and the bound penalty."""
    result = SuiteResult("finite-diff")
    rng = np.random.default_rng(seed)

    def dot(tensor: Tensor, weights: np.ndarray) -> Tensor:
        return T.sum_last(T.reshape(tensor, (tensor.size,)) * Tensor(weights))

    def spec(op_name, build, *shapes, low=-1.5, high=1.5):
        return op_name, build, shapes, low, high

    mat, vec = (3, 4), (4,)
    specs = [
        spec("add", lambda ts, w: dot(ts[0] + ts[1], w), mat, mat),
        spec("add_broadcast", lambda ts, w: dot(ts[0] + ts[1], w), mat, vec),
        spec("sub", lambda ts, w: dot(ts[0] - ts[1], w), mat, mat),
        spec("mul", lambda ts, w: dot(ts[0] * ts[1], w), mat, mat),
        spec("mul_broadcast", lambda ts, w: dot(ts[0] * ts[1], w), mat, vec),
        spec("square", lambda ts, w: dot(T.square(ts[0]), w), mat),
        spec("matmul", lambda ts, w: dot(T.matmul(ts[0], ts[1]), w), (3, 4), (4, 2)),
        spec("matmul_vec", lambda ts, w: dot(T.matmul(ts[0], ts[1]), w), (3, 4), (4,)),
        spec("vec_matmul", lambda ts, w: dot(T.matmul(ts[0], ts[1]), w), (4,), (4, 2)),
        spec("clip", lambda ts, w: dot(T.clip(ts[0], -1.0, 1.0), w), mat),
        spec("relu", lambda ts, w: dot(T.relu(ts[0]), w), mat),
        spec("sigmoid", lambda ts, w: dot(T.sigmoid(ts[0]), w), mat),
        spec("softmax", lambda ts, w: dot(T.softmax(ts[0]), w), mat),
        spec("log", lambda ts, w: dot(T.log(ts[0]), w), mat, low=0.2, high=2.0),
        spec("sum_last", lambda ts, w: dot(T.sum_last(ts[0]), w), mat),
        spec("avg_last", lambda ts, w: dot(T.avg_last(ts[0]), w), mat),
        spec("prod_last", lambda ts, w: dot(T.prod_last(ts[0]), w), mat),
        spec("reshape_concat", lambda ts, w: dot(T.concat([T.reshape(ts[0], (12,)), ts[1]]), w), mat, vec),
        spec("bound_loss", lambda ts, w: bound_loss(ts[0]) * float(w[0]), (6,)),
    ]
    for name, build, shapes, low, high in specs:
        for _ in range(cases):
            arrays = [rng.uniform(low, high, size=s) for s in shapes]
            if name == "clip":
                # keep away from the clamp kinks
                arrays[0][np.abs(np.abs(arrays[0]) - 1.0) < 0.05] = 0.5
            if name == "relu":
                arrays[0][np.abs(arrays[0]) < 0.05] = 0.5
            out_size = {
                "matmul": 6, "matmul_vec": 3, "vec_matmul": 2,
                "sum_last": 3, "avg_last": 3, "prod_last": 3,
                "reshape_concat": 16, "bound_loss": 1,
            }.get(name, 12)
            weights = rng.uniform(-1.0, 1.0, size=out_size)
            _fd_case(result, name, lambda ts, w=weights, b=build: b(ts, w), arrays, tol, h)
            result.cases += 1

    def ce_build(ts, target):
        return T.cross_entropy(ts[0], target)

    for _ in range(cases):
        logits = rng.uniform(-2.0, 2.0, size=(3, 5))
        target = np.zeros((3, 5))
        target[np.arange(3), rng.integers(0, 5, 3)] = 1.0
        _fd_case(result, "cross_entropy", lambda ts, t=target: ce_build(ts, t), [logits], tol, h)
        result.cases += 1
    return result


def run_all(seed: int = 0, trials: int = 1000, n_max: int = 12, m_max: int = 30) -> list[SuiteResult]:
    return [
        golden_example(),
        value_suite(trials=min(200, trials), seed=seed, n_max=min(10, n_max), m_max=min(20, m_max)),
        gradient_suite(trials=trials, seed=seed, n_max=n_max, m_max=m_max),
        tgf_suite(trials=min(1000, trials), seed=seed),
        finite_difference_suite(cases=25, seed=seed),
    ]
