"""Cost bounds for forcing a target policy.

A lower bound on any feasible attack's cost, and two constructive upper bounds
that need structural assumptions on the transitions.  Upper bounds come with
a witness policy that is re-checked with the exact gap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cps import attack_cost
from .linprog import OPTIMAL, LpError, LpProblem, solve_lp
from .mdp import (
    ADVERSARY,
    GAP_SLACK,
    VISITED_TOL,
    TabularPolicy,
    _chain_det,
    _occupancy,
    adversary_marginal,
    policy_iteration,
    true_gap,
    value_functions,
    victim_marginal,
)


class AssumptionError(ValueError):
    pass


@dataclass(frozen=True)
class ChiTable:
    values: np.ndarray
    epsilon_prime: float


@dataclass(frozen=True)
class BoundReport:
    lower: float
    upper: float | None = None
    alpha2_star: float | None = None
    witness_policy: TabularPolicy | None = None
    maximin_policy: TabularPolicy | None = None
    beta: float | None = None

    def to_dict(self):
        return {
            "lower": self.lower,
            "upper": self.upper,
            "alpha2_star": self.alpha2_star,
            "beta": self.beta,
            "witness_policy": None if self.witness_policy is None else self.witness_policy.to_dict(),
        }


def always_visited(mdp, pi_target, s) -> bool:
    """Whether state s has positive occupancy under pi_target for every adversary policy.

    The adversary maximizes a reward of -1 in s; s is unavoidable iff the best
    value it can reach from sigma is still negative.
    """
    P1, _ = victim_marginal(mdp, pi_target.probs)
    R = np.zeros((mdp.n_states, mdp.n_actions_adv))
    R[s] = -1.0
    _, V = policy_iteration(P1, R, mdp.gamma)
    return bool(abs(mdp.sigma @ V) > VISITED_TOL)


def _target_stats(mdp, pa, target):
    """Return, occupancy and per-(s,a2) neighbor return/occupancy under adversary table pa."""
    P2, R2 = adversary_marginal(mdp, pa)
    K, r = _chain_det(P2, R2, target)
    mu = _occupancy(K, mdp.sigma, mdp.gamma)
    nb = {}
    for s in range(mdp.n_states):
        for a2 in range(mdp.n_actions_vic):
            if a2 == target[s]:
                continue
            act = target.copy()
            act[s] = a2
            Kd, rd = _chain_det(P2, R2, act)
            mud = _occupancy(Kd, mdp.sigma, mdp.gamma)
            nb[s, a2] = (float(mud @ rd), mud)
    return float(mu @ r), mu, nb


def chi_table(mdp, pi_default, pi_target, epsilon_prime, visited=None) -> ChiTable:
    """Normalized advantage of each neighbor deviation over the target under pi_default."""
    target = pi_target.actions()
    if visited is None:
        visited = [always_visited(mdp, pi_target, s) for s in range(mdp.n_states)]
    rho, _, nb = _target_stats(mdp, pi_default.probs, target)
    chi = np.zeros((mdp.n_states, mdp.n_actions_vic))
    for (s, a2), (rho_n, mu_n) in nb.items():
        if visited[s]:
            chi[s, a2] = max(0.0, (rho_n - rho + epsilon_prime) / mu_n[s])
    return ChiTable(chi, epsilon_prime)


def lower_bound_cost(mdp, pi_default, pi_target, visited=None) -> float:
    chi = chi_table(mdp, pi_default, pi_target, 0.0, visited).values
    top = chi.max(initial=0.0)
    if top == 0:
        return 0.0
    V, _ = value_functions(mdp, pi_default, pi_target)
    denom = np.abs(mdp.reward_vic).max() + mdp.gamma * np.abs(V).max()
    return float((1 - mdp.gamma) / 2 * top / denom)


def _require_adversary_independent(mdp):
    if not mdp.adversary_independent(1e-12):
        raise AssumptionError("adversary affects transitions")


def alpha2_star(mdp, pi_default, pi_target):
    """max over adversary policies of the smallest neighbor gap (an LP when the
    adversary cannot influence transitions).  Returns (value, maximin policy)."""
    _require_adversary_independent(mdp)
    S, A = mdp.n_states, mdp.n_actions_adv
    target = pi_target.actions()
    # occupancies do not depend on the adversary, so evaluate them at pi_default
    _, mu, nb = _target_stats(mdp, pi_default.probs, target)
    R = mdp.reward_vic
    idx = np.arange(S)
    g_t = (mu[:, None] * R[idx, :, target]).ravel()
    pairs = [k for k in sorted(nb) if mu[k[0]] > VISITED_TOL]
    n = S * A
    if not pairs:
        return float("inf"), pi_default
    rows = []
    for s, a2 in pairs:
        act = target.copy()
        act[s] = a2
        g_n = (nb[s, a2][1][:, None] * R[idx, :, act]).ravel()
        rows.append(np.append(g_n - g_t, 1.0))  # Delta - (g_t - g_n).pi <= 0
    A_eq = np.zeros((S, n + 1))
    for s in range(S):
        A_eq[s, s * A : (s + 1) * A] = 1.0
    big = 2 * np.abs(R).max() + 1
    bounds = np.array([[0.0, 1.0]] * n + [[-big, big]])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    sol = solve_lp(LpProblem(c, A_eq, np.ones(S), np.array(rows), np.zeros(len(rows)), bounds))
    if sol.status != OPTIMAL:
        raise LpError(f"alpha2 program {sol.status}")
    probs = np.clip(sol.x[:n].reshape(S, A), 0, None)
    return float(sol.x[-1]), TabularPolicy(ADVERSARY, probs / probs.sum(1, keepdims=True))


def _ratio(chi_bar, chi_star):
    den = chi_star + chi_bar
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(chi_bar == 0, 0.0, chi_bar / den)
    return np.clip(r, 0, 1)


def upper_bound_cost(mdp, pi_default, pi_target, epsilon, p=1) -> BoundReport:
    """Both bounds for adversary-transition-independent, always-visited instances.

    The upper bound is witnessed by mixing pi_default with the maximin policy
    by the smallest weight that makes every neighbor gap reach epsilon.
    """
    _require_adversary_independent(mdp)
    visited = [always_visited(mdp, pi_target, s) for s in range(mdp.n_states)]
    if not all(visited):
        raise AssumptionError("some state can be avoided under the target policy")
    lower = lower_bound_cost(mdp, pi_default, pi_target, visited)
    a2s, pi_star = alpha2_star(mdp, pi_default, pi_target)
    if a2s < epsilon - GAP_SLACK:
        return BoundReport(lower, None, a2s, None, pi_star)
    target = pi_target.actions()
    chi_bar = chi_table(mdp, pi_default, pi_target, epsilon, visited).values
    rho_s, _, nb_s = _target_stats(mdp, pi_star.probs, target)
    chi_star = np.zeros_like(chi_bar)
    for (s, a2), (rho_n, mu_n) in nb_s.items():
        chi_star[s, a2] = (rho_s - rho_n - epsilon) / mu_n[s]
    beta = float(_ratio(chi_bar, np.maximum(chi_star, 0)).max(initial=0.0))
    S = mdp.n_states
    upper = 2 * beta * (1.0 if p == np.inf else S ** (1 / p))
    witness = TabularPolicy(ADVERSARY, (1 - beta) * pi_default.probs + beta * pi_star.probs)
    _verify_witness(mdp, witness, pi_default, pi_target, epsilon, p, upper)
    return BoundReport(lower, upper, a2s, witness, pi_star, beta)


def _verify_witness(mdp, witness, pi_default, pi_target, epsilon, p, upper):
    gap = true_gap(mdp, witness, pi_target, "general").gap
    cost = attack_cost(witness, pi_default, p)
    if gap < epsilon - GAP_SLACK or cost > upper + 1e-9:
        raise AssertionError(f"bound witness failed: gap {gap}, cost {cost}, bound {upper}")


def alpha1_star(mdp, pi_default, pi_target, s, epsilon=0.0) -> float:
    """Per-state maximin advantage of the target action, scaled by its occupancy."""
    return _alpha1(mdp, pi_default, pi_target, s, epsilon)[0]


def _alpha1(mdp, pi_default, pi_target, s, epsilon):
    target = pi_target.actions()
    P2, R2 = adversary_marginal(mdp, pi_default.probs)
    K, _ = _chain_det(P2, R2, target)
    mu = _occupancy(K, mdp.sigma, mdp.gamma)[s]
    A = mdp.n_actions_adv
    if mu <= VISITED_TOL:
        return float(epsilon), None
    others = [a2 for a2 in range(mdp.n_actions_vic) if a2 != target[s]]
    if not others:
        return float("inf"), None
    R = mdp.reward_vic[s]
    D = mu * (R[:, [target[s]]] - R[:, others])  # (A1, deviations)
    big = np.abs(D).max() + 1
    rows = np.hstack([-D.T, np.ones((len(others), 1))])  # v <= D[:, j] . pi
    c = np.zeros(A + 1)
    c[-1] = -1.0
    bounds = np.array([[0.0, 1.0]] * A + [[-big, big]])
    A_eq = np.append(np.ones(A), 0.0)[None]
    sol = solve_lp(LpProblem(c, A_eq, [1.0], rows, np.zeros(len(others)), bounds))
    if sol.status != OPTIMAL:
        raise LpError(f"alpha1 program {sol.status}")
    pi_s = np.clip(sol.x[:A], 0, None)
    return float(sol.x[-1]), pi_s / pi_s.sum()


def upper_bound_cost_per_state(mdp, pi_default, pi_target, epsilon, p=1) -> BoundReport:
    """Per-state mixture bound when transitions ignore both agents' actions.

    Each state mixes pi_default with its own maximin row by weight beta_s; the
    bound is 2 * ||beta||_p, the quantity the construction actually certifies.
    """
    if not mdp.action_independent(1e-12):
        raise AssumptionError("transitions depend on the agents' actions")
    S, A = mdp.n_states, mdp.n_actions_adv
    lower = lower_bound_cost(mdp, pi_default, pi_target)
    visited = [always_visited(mdp, pi_target, s) for s in range(S)]
    chi_bar = chi_table(mdp, pi_default, pi_target, epsilon, visited).values
    target = pi_target.actions()
    _, _, nb = _target_stats(mdp, pi_default.probs, target)
    witness = pi_default.probs.copy()
    betas = np.zeros(S)
    for s in range(S):
        a1, row = _alpha1(mdp, pi_default, pi_target, s, epsilon)
        if a1 < epsilon - GAP_SLACK:
            return BoundReport(lower)
        if row is None:
            continue
        chi1 = np.zeros(mdp.n_actions_vic)
        for a2 in range(mdp.n_actions_vic):
            if a2 != target[s] and nb[s, a2][1][s] > 0:
                chi1[a2] = (a1 - epsilon) / nb[s, a2][1][s]
        betas[s] = _ratio(chi_bar[s], np.maximum(chi1, 0)).max(initial=0.0)
        witness[s] = (1 - betas[s]) * pi_default.probs[s] + betas[s] * row
    upper = 2 * float(betas.max(initial=0.0) if p == np.inf else (betas**p).sum() ** (1 / p))
    wpol = TabularPolicy(ADVERSARY, witness)
    _verify_witness(mdp, wpol, pi_default, pi_target, epsilon, p, upper)
    return BoundReport(lower, upper, None, wpol, None, float(betas.max(initial=0.0)))
