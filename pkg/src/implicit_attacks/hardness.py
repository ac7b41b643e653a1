"""3-SAT encoded as an attack problem, plus a grid oracle for small instances.

State layout: s_I, clause states, positive literal states, negative literal
states, value states, and an absorbing s_F.  The adversary picks a literal in
each clause state and an "assignment" in each value state; forcing the victim
to always play action 0 is possible iff the formula is satisfiable.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mdp import (
    ADVERSARY,
    VICTIM,
    TabularPolicy,
    TwoAgentMDP,
    is_feasible,
)


class FormulaError(ValueError):
    pass


class BudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class CnfFormula:
    n_vars: int
    clauses: tuple  # of 3-tuples of (variable index, polarity) with polarity True = positive

    def __post_init__(self):
        cl = tuple(tuple((int(v), bool(pos)) for v, pos in c) for c in self.clauses)
        if not cl:
            raise FormulaError("formula needs at least one clause")
        for c in cl:
            if len(c) != 3:
                raise FormulaError(f"clause {c} does not have exactly 3 literals")
            if any(not 0 <= v < self.n_vars for v, _ in c):
                raise FormulaError(f"clause {c} refers to an unknown variable")
        object.__setattr__(self, "clauses", cl)

    @property
    def n_clauses(self) -> int:
        return len(self.clauses)

    def satisfied_by(self, assignment) -> bool:
        return all(any(assignment[v] == pos for v, pos in c) for c in self.clauses)

    def satisfying_assignments(self):
        """All satisfying assignments by truth table (small n only)."""
        return [a for a in itertools.product([False, True], repeat=self.n_vars) if self.satisfied_by(a)]

    def to_dimacs(self) -> str:
        lines = [f"p cnf {self.n_vars} {self.n_clauses}"]
        for c in self.clauses:
            lines.append(" ".join(str(v + 1 if pos else -(v + 1)) for v, pos in c) + " 0")
        return "\n".join(lines) + "\n"


def parse_dimacs(text: str) -> CnfFormula:
    n_vars, lits, clauses = None, [], []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(("c", "%")):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise FormulaError(f"bad problem line: {line!r}")
            n_vars = int(parts[2])
            continue
        for tok in line.split():
            x = int(tok)
            if x == 0:
                clauses.append(tuple((abs(y) - 1, y > 0) for y in lits))
                lits = []
            else:
                lits.append(x)
    if lits:
        clauses.append(tuple((abs(y) - 1, y > 0) for y in lits))
    if n_vars is None:
        raise FormulaError("missing 'p cnf' line")
    return CnfFormula(n_vars, tuple(clauses))


def read_dimacs(path) -> CnfFormula:
    with open(path) as f:
        return parse_dimacs(f.read())


@dataclass(frozen=True)
class ReductionParams:
    gamma: float = 0.9
    epsilon: float = 0.01
    B: float | None = None  # stands in for an infinitely negative reward

    def bonus(self, m):
        return self.epsilon * m / ((1 - self.gamma) * self.gamma**3)

    def min_B(self, m):
        return 10 * (1 + self.bonus(m)) / (1 - self.gamma)

    def resolve_B(self, m):
        if self.B is None:
            return self.min_B(m)
        if self.B < self.min_B(m):
            raise ValueError(f"B = {self.B} is below the floor {self.min_B(m)}")
        return self.B


@dataclass(frozen=True)
class Reduction:
    mdp: TwoAgentMDP
    labels: dict
    pi_target: TabularPolicy
    formula: CnfFormula
    params: ReductionParams

    @property
    def epsilon(self):
        return self.params.epsilon


def state_labels(f: CnfFormula) -> dict:
    m, n = f.n_clauses, f.n_vars
    c0, x0 = 1, 1 + m
    return {
        "s_I": 0,
        "s_C": list(range(c0, c0 + m)),
        "s_x": list(range(x0, x0 + n)),
        "s_xbar": list(range(x0 + n, x0 + 2 * n)),
        "s_val": list(range(x0 + 2 * n, x0 + 3 * n)),
        "s_F": x0 + 3 * n,
    }


def _literal_state(lab, var, pos):
    return lab["s_x"][var] if pos else lab["s_xbar"][var]


def encode_3sat(f: CnfFormula, params: ReductionParams | None = None) -> Reduction:
    params = params or ReductionParams()
    g, m, n = params.gamma, f.n_clauses, f.n_vars
    if not 0 < g < 1 or params.epsilon <= 0:
        raise ValueError("need 0 < gamma < 1 and epsilon > 0")
    B, c = params.resolve_B(m), params.bonus(m)
    lab = state_labels(f)
    S = m + 3 * n + 2
    P = np.zeros((S, 3, 2, S))
    R = np.zeros((S, 3, 2))
    literal = set(lab["s_x"]) | set(lab["s_xbar"])
    for s in range(S):
        if s not in literal:
            R[s, :, 1] = -B
    P[lab["s_I"], :, :, lab["s_C"]] = 1.0 / m
    for i, clause in enumerate(f.clauses):
        for j, (v, pos) in enumerate(clause):
            P[lab["s_C"][i], j, :, _literal_state(lab, v, pos)] = 1.0
    for j in range(n):
        sx, sxb, sv = lab["s_x"][j], lab["s_xbar"][j], lab["s_val"][j]
        R[sx, :, 1] = g
        P[sx, :, 0, sv] = 1.0
        P[sx, :, 1, lab["s_F"]] = 1.0
        P[sxb, :, 0, lab["s_F"]] = 1.0
        P[sxb, :, 1, sv] = 1.0
        R[sv, 0, 0] = 1 + c
        R[sv, 1:, 0] = -c
        # the value states are left by both victim actions; s_F is the natural sink
        P[sv, :, :, lab["s_F"]] = 1.0
    P[lab["s_F"], :, :, lab["s_F"]] = 1.0
    sigma = np.eye(S)[lab["s_I"]]
    mdp = TwoAgentMDP(P, R, g, sigma)
    target = TabularPolicy.deterministic(VICTIM, np.zeros(S, int), 2)
    return Reduction(mdp, lab, target, f, params)


def assignment_to_policy(f: CnfFormula, params, assignment) -> TabularPolicy:
    """Deterministic adversary: lowest satisfying literal per clause, a1=0 iff x true."""
    lab = state_labels(f)
    S = f.n_clauses + 3 * f.n_vars + 2
    act = np.zeros(S, int)
    for i, clause in enumerate(f.clauses):
        sat = [j for j, (v, pos) in enumerate(clause) if bool(assignment[v]) == pos]
        act[lab["s_C"][i]] = sat[0] if sat else 0
    for j in range(f.n_vars):
        act[lab["s_val"][j]] = 0 if assignment[j] else 1
    return TabularPolicy.deterministic(ADVERSARY, act, 3)


def decode_assignment(red: Reduction, pi_adv: TabularPolicy):
    """x_j is true iff the expected reward at its value state (victim action 0) exceeds 1."""
    R = red.mdp.reward_vic
    return [bool(pi_adv.probs[s] @ R[s, :, 0] > 1) for s in red.labels["s_val"]]


def _action_classes(mdp, s):
    """Groups of adversary actions with identical rewards and transitions in s."""
    groups = []
    for a in range(mdp.n_actions_adv):
        for g in groups:
            b = g[0]
            if np.array_equal(mdp.reward_vic[s, a], mdp.reward_vic[s, b]) and np.array_equal(
                mdp.transition[s, a], mdp.transition[s, b]
            ):
                g.append(a)
                break
        else:
            groups.append([a])
    return groups


def _simplex_grid(k, step):
    """Points of the k-simplex with coordinates on multiples of step."""
    N = int(round(1 / step))
    if abs(N * step - 1) > 1e-9:
        raise ValueError("grid_step must divide 1")
    pts = []
    for comp in itertools.product(range(N + 1), repeat=k - 1):
        if sum(comp) <= N:
            pts.append(list(comp) + [N - sum(comp)])
    return np.array(pts, dtype=float)[::-1] / N


def brute_force_feasible(
    mdp, pi_target, epsilon, grid_step=0.25, budget=200_000, mode="general", pi_default=None
) -> TabularPolicy | None:
    """Exhaustive search over per-state grid policies; first feasible one or None.

    Adversary actions with identical effect in a state are merged, so the grid
    runs over distinguishable actions only.  Every deterministic policy over
    the merged actions is a grid vertex, hence always included.
    """
    if pi_default is not None and is_feasible(mdp, pi_default, pi_target, epsilon, mode):
        return pi_default
    S, A = mdp.n_states, mdp.n_actions_adv
    rows = []
    for s in range(S):
        groups = _action_classes(mdp, s)
        pts = _simplex_grid(len(groups), grid_step)
        tab = np.zeros((len(pts), A))
        for gi, g in enumerate(groups):
            tab[:, g[0]] = pts[:, gi]
        rows.append(tab)
    total = int(np.prod([len(r) for r in rows], dtype=float))
    if total > budget:
        raise BudgetError(f"grid has {total} policies, budget is {budget}")
    for choice in itertools.product(*[range(len(r)) for r in rows]):
        probs = np.array([rows[s][i] for s, i in enumerate(choice)])
        pi = TabularPolicy(ADVERSARY, probs)
        if is_feasible(mdp, pi, pi_target, epsilon, mode):
            return pi
    return None


def enumerate_deterministic(red: Reduction):
    """Deterministic adversary policies that differ in effect (clause and value states)."""
    lab, mdp = red.labels, red.mdp
    choices = []
    for s in range(mdp.n_states):
        choices.append([g[0] for g in _action_classes(mdp, s)])
    for act in itertools.product(*choices):
        yield TabularPolicy.deterministic(ADVERSARY, act, mdp.n_actions_adv)


def random_formula(rng, n_vars, n_clauses) -> CnfFormula:
    clauses = []
    for _ in range(n_clauses):
        clauses.append(tuple((int(rng.integers(n_vars)), bool(rng.integers(2))) for _ in range(3)))
    return CnfFormula(n_vars, tuple(clauses))

