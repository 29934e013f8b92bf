import numpy as np
import pytest

from cnfgrad.cnf import (
    Assignment,
    DimacsError,
    FactVector,
    brute_force,
    build_matrix,
    deduce_set,
    parse_atom_names,
    parse_dimacs,
    parse_facts,
    serialize_dimacs,
    serialize_facts,
    theory_from_clauses,
)
from cnfgrad.verify import random_facts, random_theory

WORKED = "p cnf 3 2\n-1 -2 3 0\n-1 2 0\n"


class TestParseDimacs:
    def test_worked_example(self):
        theory = parse_dimacs(WORKED)
        assert theory.m == 2 and theory.n == 3
        assert theory.clauses == ((-1, -2, 3), (-1, 2))
        assert theory.atom_names == ("1", "2", "3")

    def test_empty_theory(self):
        theory = parse_dimacs("p cnf 0 0\n")
        assert theory.m == 0 and theory.n == 0

    def test_variable_out_of_range(self):
        with pytest.raises(DimacsError, match="out of range"):
            parse_dimacs("p cnf 2 1\n1 -3 0\n")

    def test_comments_and_blank_lines(self):
        theory = parse_dimacs("c a comment\n\np cnf 2 1\nc mid comment\n1 2 0\n")
        assert theory.clauses == ((1, 2),)

    def test_clause_split_across_lines(self):
        theory = parse_dimacs("p cnf 3 1\n1\n-2\n3 0\n")
        assert theory.clauses == ((1, -2, 3),)

    def test_missing_terminator(self):
        with pytest.raises(DimacsError, match="terminator"):
            parse_dimacs("p cnf 2 1\n1 -2\n")

    def test_clause_count_mismatch(self):
        with pytest.raises(DimacsError, match="promises 2"):
            parse_dimacs("p cnf 2 2\n1 0\n")

    def test_malformed_header(self):
        with pytest.raises(DimacsError, match="header"):
            parse_dimacs("p dnf 2 1\n1 0\n")
        with pytest.raises(DimacsError, match="header"):
            parse_dimacs("1 0\n")

    def test_duplicate_atom_rejected(self):
        with pytest.raises(DimacsError, match="clause 1"):
            parse_dimacs("p cnf 2 1\n1 1 0\n")

    def test_tautology_rejected(self):
        with pytest.raises(DimacsError, match="clause 2"):
            parse_dimacs("p cnf 2 2\n1 0\n2 -2 0\n")

    def test_empty_clause_is_legal(self):
        theory = parse_dimacs("p cnf 2 1\n0\n")
        assert theory.clauses == ((),)


class TestSerializeDimacs:
    def test_empty(self):
        assert serialize_dimacs(parse_dimacs("p cnf 0 0\n")) == "p cnf 0 0\n"

    def test_worked_example_round_trip(self):
        assert serialize_dimacs(parse_dimacs(WORKED)) == WORKED

    def test_random_round_trips(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            theory = random_theory(rng, n_max=8, m_max=12, allow_empty=True)
            again = parse_dimacs(serialize_dimacs(theory))
            assert again.clauses == theory.clauses
            assert again.n == theory.n
            # canonical form is a fixed point
            assert serialize_dimacs(again) == serialize_dimacs(theory)


class TestFacts:
    def test_single_fact(self):
        facts = parse_facts("1\n", 3)
        assert facts.bits.tolist() == [1, 0, 0]
        assert facts.atoms == frozenset({0})

    def test_empty_file(self):
        assert parse_facts("", 3).bits.tolist() == [0, 0, 0]

    def test_negative_fact_rejected(self):
        with pytest.raises(DimacsError, match="non-positive"):
            parse_facts("-2\n", 3)

    def test_out_of_range(self):
        with pytest.raises(DimacsError, match="out of range"):
            parse_facts("4\n", 3)

    def test_comments_allowed(self):
        assert parse_facts("c given\n2\n", 3).bits.tolist() == [0, 1, 0]

    def test_round_trip(self):
        facts = parse_facts("1\n3\n", 4)
        assert parse_facts(serialize_facts(facts), 4).bits.tolist() == facts.bits.tolist()


class TestAtomNames:
    def test_sidecar_round_trip(self):
        theory = parse_dimacs(WORKED).with_atom_names(["a", "b", "c"])
        text = "a\nb\nc\n"
        assert parse_atom_names(text, 3) == ("a", "b", "c")

    def test_wrong_length(self):
        with pytest.raises(DimacsError, match="name map"):
            parse_atom_names("a\nb\n", 3)


class TestClauseMatrix:
    def test_worked_example(self):
        matrix = build_matrix(parse_dimacs(WORKED))
        assert matrix.dense().tolist() == [[-1, -1, 1], [-1, 1, 0]]

    def test_empty(self):
        assert build_matrix(parse_dimacs("p cnf 0 0\n")).dense().shape == (0, 0)

    def test_row_literal_counts(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            theory = random_theory(rng, n_max=8, m_max=12, allow_empty=True)
            matrix = build_matrix(theory)
            dense = matrix.dense()
            for i, clause in enumerate(theory.clauses):
                assert matrix.row_literal_count(i) == len(clause)
                assert np.abs(dense[i]).sum() == len(clause)
                assert (dense[i] * dense[i]).sum() == len(clause)

    def test_entries_match_literals(self):
        theory = parse_dimacs(WORKED)
        matrix = build_matrix(theory)
        dense = matrix.dense()
        for i, clause in enumerate(theory.clauses):
            for lit in clause:
                assert dense[i, abs(lit) - 1] == (1 if lit > 0 else -1)


class TestBruteForce:
    def test_worked_example_entails_remaining_literals(self):
        theory = parse_dimacs(WORKED)
        report = brute_force(theory, parse_facts("1\n", 3))
        assert report.satisfiable
        # given atom 1, both 2 and 3 are forced
        assert 2 in report.entailed_literals and 3 in report.entailed_literals

    def test_empty_theory(self):
        report = brute_force(parse_dimacs("p cnf 0 0\n"), FactVector(np.zeros(0, dtype=np.int8)))
        assert report.satisfiable and report.model_count == 1

    def test_contradiction(self):
        theory = theory_from_clauses([(1,), (-1,)], 1)
        report = brute_force(theory, FactVector(np.zeros(1, dtype=np.int8)))
        assert not report.satisfiable and report.model_count == 0

    def test_cap_enforced(self):
        theory = theory_from_clauses([], 30)
        with pytest.raises(ValueError, match="cap"):
            brute_force(theory, FactVector(np.zeros(30, dtype=np.int8)))

    def test_model_count_and_models(self):
        # one clause over two atoms: 3 of 4 assignments satisfy it
        theory = theory_from_clauses([(1, 2)], 2)
        report = brute_force(theory, FactVector(np.zeros(2, dtype=np.int8)))
        assert report.model_count == 3
        assert report.models is not None and len(report.models) == 3
        assert all(model.satisfies(theory) for model in report.models)

    def test_facts_restrict_enumeration(self):
        theory = theory_from_clauses([(1, 2)], 2)
        report = brute_force(theory, parse_facts("1\n", 2))
        assert report.model_count == 2

    def test_against_exhaustive_python(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            theory = random_theory(rng, n_max=6, m_max=10, allow_empty=True)
            facts = random_facts(rng, theory.n)
            report = brute_force(theory, facts)
            count = 0
            for value in range(2**theory.n):
                bits = np.array([(value >> j) & 1 for j in range(theory.n)], dtype=np.int8)
                if np.any(bits[facts.bits == 1] == 0):
                    continue
                count += Assignment(bits).satisfies(theory)
            assert report.model_count == count


class TestDeduceSet:
    def test_worked_example(self):
        theory = parse_dimacs(WORKED)
        assert deduce_set(theory, parse_facts("1\n", 3)) == [1]

    def test_no_facts_selects_unit_clauses(self):
        theory = theory_from_clauses([(1, 2), (-3,), (2,)], 3)
        assert deduce_set(theory, FactVector(np.zeros(3, dtype=np.int8))) == [1, 2]

    def test_literal_by_literal_rescan(self):
        rng = np.random.default_rng(13)
        for _ in range(500):
            theory = random_theory(rng, n_max=9, m_max=14, allow_empty=True)
            facts = random_facts(rng, theory.n)
            expected = []
            for i, clause in enumerate(theory.clauses):
                falsified = 0
                for lit in clause:
                    if lit < 0 and facts.bits[abs(lit) - 1] == 1:
                        falsified += 1
                if len(clause) - falsified == 1:
                    expected.append(i)
            assert deduce_set(theory, facts) == expected

    def test_deduced_literal_is_entailed(self):
        # whenever theory+facts is satisfiable, the remaining literal of a
        # deduce-set clause is entailed
        rng = np.random.default_rng(17)
        checked = 0
        for _ in range(300):
            theory = random_theory(rng, n_max=8, m_max=12)
            facts = random_facts(rng, theory.n)
            report = brute_force(theory, facts)
            if not report.satisfiable:
                continue
            for i in deduce_set(theory, facts):
                clause = theory.clauses[i]
                remaining = [lit for lit in clause if not (lit < 0 and facts.bits[abs(lit) - 1])]
                assert len(remaining) == 1
                assert remaining[0] in report.entailed_literals
                checked += 1
        assert checked > 50