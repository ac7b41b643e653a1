import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from implicit_attacks.hardness import (
    BudgetError,
    CnfFormula,
    FormulaError,
    ReductionParams,
    assignment_to_policy,
    brute_force_feasible,
    decode_assignment,
    encode_3sat,
    enumerate_deterministic,
    parse_dimacs,
    random_formula,
)
from implicit_attacks.mdp import is_feasible, true_gap

seeds = st.integers(0, 2**32 - 1)


def _formula(seed, n_max=3, m_max=4):
    rng = np.random.default_rng(seed)
    return random_formula(rng, int(rng.integers(1, n_max + 1)), int(rng.integers(1, m_max + 1)))


def test_dimacs_round_trip():
    text = "c comment\np cnf 3 2\n1 -2 3 0\n-1 2\n-3 0\n"
    f = parse_dimacs(text)
    assert f.n_vars == 3
    assert f.clauses == (((0, True), (1, False), (2, True)), ((0, False), (1, True), (2, False)))
    assert parse_dimacs(f.to_dimacs()) == f
    for bad in ("1 2 3 0\n", "p cnf 2 1\n1 2 0\n", "p cnf 2 1\n1 2 3 0\n", "p dnf 3 1\n1 2 3 0\n"):
        with pytest.raises(FormulaError):
            parse_dimacs(bad)


def test_encoding_layout():
    f = parse_dimacs("p cnf 2 3\n1 2 -1 0\n-2 -2 1 0\n2 2 2 0\n")
    red = encode_3sat(f)
    assert red.mdp.n_states == 3 + 3 * 2 + 2
    assert red.mdp.n_actions_adv == 3 and red.mdp.n_actions_vic == 2
    assert red.labels["s_F"] == red.mdp.n_states - 1
    assert red.pi_target.actions().tolist() == [0] * red.mdp.n_states
    with pytest.raises(ValueError):
        encode_3sat(f, ReductionParams(B=1.0))


@given(seeds)
def test_assignments_decide_feasibility(seed):
    f = _formula(seed)
    red = encode_3sat(f)
    sat = set(f.satisfying_assignments())
    for a in sorted(sat)[:4]:
        pi = assignment_to_policy(f, red.params, a)
        assert true_gap(red.mdp, pi, red.pi_target).gap >= red.epsilon - 1e-9
        assert tuple(decode_assignment(red, pi)) == a
    if not sat:
        for pi in enumerate_deterministic(red):
            assert not is_feasible(red.mdp, pi, red.pi_target, red.epsilon)


@given(seeds)
def test_grid_oracle_agrees_with_truth_table(seed):
    f = _formula(seed, n_max=2, m_max=2)
    red = encode_3sat(f)
    pi = brute_force_feasible(red.mdp, red.pi_target, red.epsilon, grid_step=0.5)
    assert (pi is not None) == bool(f.satisfying_assignments())
    if pi is not None:
        assert f.satisfied_by(decode_assignment(red, pi)) or not pi.is_deterministic()


def test_grid_budget():
    f = CnfFormula(4, tuple(((i % 4, True), ((i + 1) % 4, False), ((i + 2) % 4, True)) for i in range(6)))
    red = encode_3sat(f)
    with pytest.raises(BudgetError):
        brute_force_feasible(red.mdp, red.pi_target, red.epsilon, grid_step=0.25, budget=1000)
    with pytest.raises(ValueError):
        brute_force_feasible(red.mdp, red.pi_target, red.epsilon, grid_step=0.3)


def test_formula_validation():
    with pytest.raises(FormulaError):
        CnfFormula(2, (((0, True), (1, True)),))
    with pytest.raises(FormulaError):
        CnfFormula(1, (((0, True), (1, True), (0, False)),))
    with pytest.raises(FormulaError):
        CnfFormula(1, ())
