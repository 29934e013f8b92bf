import numpy as np
import pytest

import cnfgrad.tensor as T
from cnfgrad.closs import (
    LossWeights,
    assemble_prediction,
    bound_loss,
    closed_form_grad,
    cnf_loss,
    cnf_loss_forward,
    hint_loss,
    sum_loss,
)
from cnfgrad.cnf import Assignment, FactVector, build_matrix, theory_from_clauses
from cnfgrad.tensor import ShapeError, SteMode, Tensor
from cnfgrad.verify import GOLDEN_GRADS, GOLDEN_X, golden_example, golden_theory, gradient_suite, value_suite


def make_golden():
    theory, facts = golden_theory()
    return theory, build_matrix(theory), facts


class TestAssemblePrediction:
    def test_worked_example(self):
        _, _, facts = make_golden()
        v = assemble_prediction(facts, Tensor(np.array(GOLDEN_X)), "bp")
        assert v.data.tolist() == [1.0, 0.0, 1.0]

    def test_all_facts_blocks_gradient(self):
        facts = FactVector(np.ones(3, dtype=np.int8))
        x = Tensor(np.array([0.9, 0.9, 0.9]), requires_grad=True)
        v = assemble_prediction(facts, x, "bp")
        assert v.data.tolist() == [1.0, 1.0, 1.0]
        T.backward(T.sum_last(v))
        assert np.all(x.grad == 0.0)

    def test_pure_threshold(self):
        facts = FactVector(np.zeros(2, dtype=np.int8))
        v = assemble_prediction(facts, Tensor(np.array([0.6, 0.4])), "bp")
        assert v.data.tolist() == [1.0, 0.0]

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            assemble_prediction(FactVector(np.zeros(3, dtype=np.int8)), Tensor(np.zeros(2)), "bp")


class TestGoldenExample:
    def test_forward_values(self):
        _, matrix, facts = make_golden()
        v = assemble_prediction(facts, Tensor(np.array(GOLDEN_X)), "bp")
        bd = cnf_loss(matrix, v, facts)
        assert float(bd.l_deduce.data) == 1.0
        assert float(bd.l_unsat.data) == 0.5
        assert float(bd.l_sat.data) == 0.0
        assert float(bd.l_cnf.data) == 1.5
        assert bd.deduce.data.tolist() == [0.0, 1.0]
        assert bd.unsat.data.tolist() == [0.0, 1.0]
        assert bd.l_f.data.tolist() == [[-1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]
        assert bd.l_v.data.tolist() == [[0.0, 1.0, 1.0], [0.0, 0.0, 0.0]]
        assert bd.keep.data.tolist() == [0.0, 0.0]

    def test_gradients_exact(self):
        _, matrix, facts = make_golden()
        for term, expected in GOLDEN_GRADS.items():
            x = Tensor(np.array(GOLDEN_X), requires_grad=True)
            bd = cnf_loss(matrix, assemble_prediction(facts, x, "bp"), facts)
            T.backward(getattr(bd, f"l_{term}"))
            assert x.grad.tolist() == list(expected)

    def test_suite_wrapper(self):
        result = golden_example()
        assert result.ok and result.max_dev == 0.0


class TestPropValueSuite:
    def test_satisfying_assignment_zeroes_the_loss(self):
        theory, matrix, facts = make_golden()
        v = Tensor(np.array([1.0, 1.0, 1.0]))
        bd = cnf_loss(matrix, v, facts)
        assert float(bd.l_cnf.data) == 0.0

    def test_empty_theory(self):
        theory = theory_from_clauses([], 3)
        facts = FactVector(np.zeros(3, dtype=np.int8))
        x = Tensor(np.array([0.9, 0.1, 0.9]), requires_grad=True)
        bd = cnf_loss(build_matrix(theory), assemble_prediction(facts, x, "bp"), facts)
        for term in ("l_deduce", "l_unsat", "l_sat", "l_cnf"):
            assert float(getattr(bd, term).data) == 0.0
        T.backward(bd.l_cnf)
        assert np.all(x.grad == 0.0)

    def test_empty_clause_always_unsat(self):
        theory = theory_from_clauses([()], 2)
        facts = FactVector(np.zeros(2, dtype=np.int8))
        bd = cnf_loss(build_matrix(theory), Tensor(np.array([1.0, 1.0])), facts)
        assert bd.unsat.data.tolist() == [1.0]
        assert float(bd.l_unsat.data) == 1.0

    def test_random_suite(self):
        result = value_suite(trials=200, seed=0)
        assert result.ok, result.summary()


class TestPropGradientSuite:
    def test_random_suite_matches_oracle(self):
        result = gradient_suite(trials=300, seed=0, n_max=12, m_max=30)
        assert result.ok, result.summary()
        assert result.max_dev <= 1e-9

    def test_all_facts_zero_gradients(self):
        theory = theory_from_clauses([(1, 2), (-1, 3)], 3)
        facts = FactVector(np.ones(3, dtype=np.int8))
        report = closed_form_grad(theory, facts, Assignment(np.ones(3, dtype=np.int8)))
        assert np.all(report.g_total == 0.0)

    def test_unsat_premise_warns(self):
        theory = theory_from_clauses([(1,), (-1,)], 1)
        facts = FactVector(np.zeros(1, dtype=np.int8))
        with pytest.warns(UserWarning, match="unsatisfiable"):
            report = closed_form_grad(theory, facts, Assignment(np.ones(1, dtype=np.int8)))
        assert report.satisfiable is False

    def test_flag_unknown_above_cap(self):
        theory = theory_from_clauses([(1,)], 30)
        facts = FactVector(np.zeros(30, dtype=np.int8))
        report = closed_form_grad(theory, facts, Assignment(np.ones(30, dtype=np.int8)))
        assert report.satisfiable is None

    def test_worked_example_counts(self):
        theory, _, facts = make_golden()
        report = closed_form_grad(theory, facts, Assignment(np.array([1, 0, 1], dtype=np.int8)))
        assert report.g_deduce.tolist() == [0.0, -1.0, 0.0]
        assert report.g_unsat.tolist() == [0.0, -0.5, 0.0]
        assert report.g_sat.tolist() == [0.0, 0.5, -0.5]
        assert report.g_total.tolist() == [0.0, -1.0, -0.5]

    def test_injected_sign_flip_is_caught(self, monkeypatch):
        # mutation canary: corrupt the oracle and assert the suite notices
        import cnfgrad.closs as closs_module

        original = closs_module.closed_form_grad

        def corrupted(*args, **kwargs):
            report = original(*args, **kwargs)
            report.g_sat[...] = -report.g_sat
            return report

        monkeypatch.setattr(closs_module, "closed_form_grad", corrupted)
        result = gradient_suite(trials=40, seed=1)
        assert not result.ok


class TestFactMasking:
    def test_perturbing_fact_positions_changes_nothing(self):
        rng = np.random.default_rng(23)
        from cnfgrad.verify import random_facts, random_theory

        for _ in range(50):
            theory = random_theory(rng, n_max=8, m_max=12)
            facts = random_facts(rng, theory.n, p=0.5)
            if not facts.atoms:
                continue
            matrix = build_matrix(theory)
            x = rng.random(theory.n)
            base = cnf_loss(matrix, assemble_prediction(facts, Tensor(x), "bp"), facts)
            x2 = x.copy()
            for j in facts.atoms:
                x2[j] = rng.random()
            bumped = cnf_loss(matrix, assemble_prediction(facts, Tensor(x2), "bp"), facts)
            for term in ("l_deduce", "l_unsat", "l_sat", "l_cnf"):
                assert float(getattr(base, term).data) == float(getattr(bumped, term).data)


class TestBoundLoss:
    def test_values(self):
        assert float(bound_loss(Tensor(np.zeros(3))).data) == 0.0
        assert float(bound_loss(Tensor(np.array([3.0, -4.0]))).data) == 12.5

    def test_gradient(self):
        x = Tensor(np.array([3.0, -4.0]), requires_grad=True)
        T.backward(bound_loss(x))
        assert x.grad.tolist() == [3.0, -4.0]


class TestSumLoss:
    def test_softmax_rows_give_zero(self):
        rng = np.random.default_rng(2)
        probs = T.softmax(Tensor(rng.normal(size=(4, 3))))
        families = [[[(r, c) for c in range(3)] for r in range(4)]]
        assert float(sum_loss(probs, families).data) == pytest.approx(0.0, abs=1e-12)

    def test_single_group_deviation(self):
        probs = Tensor(np.array([[0.75, 0.75], [0.5, 0.5]]))
        families = [[[(0, 0), (0, 1)]]]
        assert float(sum_loss(probs, families).data) == pytest.approx(0.25)

    def test_family_averaging(self):
        probs = Tensor(np.array([[0.75, 0.75], [0.5, 0.5]]))
        families = [[[(0, 0), (0, 1)], [(1, 0), (1, 1)]]]
        # deviations (0.5)^2 and 0, averaged over the family of two groups
        assert float(sum_loss(probs, families).data) == pytest.approx(0.125)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            sum_loss(Tensor(np.zeros((2, 2))), [[[(2, 0)]]])

    def test_sudoku9_groups_shape(self):
        from cnfgrad.tasks import sudoku_sum_groups

        families = sudoku_sum_groups(9)
        assert len(families) == 3
        assert all(len(family) == 81 for family in families)
        assert all(len(group) == 9 for family in families for group in family)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        data = rng.random((3, 4))
        families = [[[(r, c) for c in range(4)] for r in range(3)], [[(r, c) for r in range(3)] for c in range(4)]]
        x = Tensor(data, requires_grad=True)
        T.backward(sum_loss(x, families))
        h = 1e-6
        for r in range(3):
            for c in range(4):
                up, down = data.copy(), data.copy()
                up[r, c] += h
                down[r, c] -= h
                numeric = (float(sum_loss(Tensor(up), families).data) - float(sum_loss(Tensor(down), families).data)) / (2 * h)
                assert x.grad[r, c] == pytest.approx(numeric, abs=1e-6)


class TestHintLoss:
    def test_fact_predicted(self):
        assert float(hint_loss(FactVector(np.array([1, 0], dtype=np.int8)), Tensor(np.array([0.9, 0.1]))).data) == 0.0

    def test_fact_missed(self):
        assert float(hint_loss(FactVector(np.array([1, 0], dtype=np.int8)), Tensor(np.array([0.2, 0.1]))).data) == 0.5

    def test_no_facts(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.random(5))
        assert float(hint_loss(FactVector(np.zeros(5, dtype=np.int8)), x).data) == 0.0

    def test_gradient_via_iste(self):
        facts = FactVector(np.array([1, 0], dtype=np.int8))
        x = Tensor(np.array([0.2, 0.1]), requires_grad=True)
        T.backward(hint_loss(facts, x))
        assert x.grad.tolist() == [-0.5, 0.0]


class TestSparseForward:
    def test_matches_graph_on_random_instances(self):
        from cnfgrad.verify import random_facts, random_theory

        rng = np.random.default_rng(31)
        for _ in range(200):
            theory = random_theory(rng, n_max=10, m_max=16, allow_empty=True)
            facts = random_facts(rng, theory.n)
            matrix = build_matrix(theory)
            x = rng.random(theory.n)
            v = assemble_prediction(facts, Tensor(x), "bp")
            bd = cnf_loss(matrix, v, facts)
            sparse = cnf_loss_forward(matrix, v.data.astype(np.int8), facts)
            assert sparse.l_deduce == float(bd.l_deduce.data)
            assert sparse.l_unsat == float(bd.l_unsat.data)
            assert sparse.l_cnf == float(bd.l_cnf.data)
            assert np.array_equal(sparse.unsat, bd.unsat.data == 1.0)


class TestLossWeights:
    def test_defaults(self):
        weights = LossWeights()
        assert (weights.alpha, weights.beta, weights.gamma, weights.delta) == (1.0, 0.1, 0.0, 0.0)

    def test_nonnegative(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)