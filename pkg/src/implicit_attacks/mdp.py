"""Tabular two-agent MDPs: policies, occupancy measures, returns, values and gaps.

Agent 1 is the adversary (actions ``a1``), agent 2 the victim (actions ``a2``).
Only the victim's reward is modelled.  Occupancy measures are normalized by
``1 - gamma`` so that returns are averages of rewards, not sums.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

VISITED_TOL = 1e-10
STOCH_TOL = 1e-12
RENORM_TOL = 1e-9
GAP_SLACK = 1e-9

ADVERSARY = "adversary"
VICTIM = "victim"


class MDPError(ValueError):
    pass


class PolicyError(ValueError):
    pass


def _readonly(x):
    a = np.array(x, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TwoAgentMDP:
    transition: np.ndarray  # (S, A1, A2, S)
    reward_vic: np.ndarray  # (S, A1, A2)
    gamma: float
    sigma: np.ndarray

    def __post_init__(self):
        P = _readonly(self.transition)
        R = _readonly(self.reward_vic)
        sigma = _readonly(self.sigma)
        if P.ndim != 4 or P.shape[0] != P.shape[3]:
            raise MDPError(f"transition must have shape (S, A1, A2, S), got {P.shape}")
        if R.shape != P.shape[:3]:
            raise MDPError(f"reward shape {R.shape} does not match transition {P.shape[:3]}")
        if sigma.shape != (P.shape[0],):
            raise MDPError("sigma has wrong length")
        if not np.all(np.isfinite(R)):
            raise MDPError("rewards must be finite")
        if P.min() < 0 or np.abs(P.sum(-1) - 1).max() > STOCH_TOL:
            raise MDPError("transition rows must be probability vectors")
        if sigma.min() < 0 or abs(sigma.sum() - 1) > STOCH_TOL:
            raise MDPError("sigma must be a probability vector")
        if not 0 <= self.gamma < 1:
            raise MDPError("gamma must lie in [0, 1)")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_vic", R)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions_adv(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions_vic(self) -> int:
        return self.transition.shape[2]

    def adversary_independent(self, tol=1e-12) -> bool:
        """True when transitions do not depend on the adversary's action."""
        P = self.transition
        return bool(np.abs(P - P[:, :1]).max() <= tol)

    def action_independent(self, tol=1e-12) -> bool:
        P = self.transition
        return bool(np.abs(P - P[:, :1, :1]).max() <= tol)

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions_adv": self.n_actions_adv,
            "n_actions_vic": self.n_actions_vic,
            "gamma": self.gamma,
            "sigma": self.sigma.tolist(),
            "transition": self.transition.tolist(),
            "reward_vic": self.reward_vic.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        mdp = cls(np.array(d["transition"]), np.array(d["reward_vic"]), d["gamma"], np.array(d["sigma"]))
        dims = (mdp.n_states, mdp.n_actions_adv, mdp.n_actions_vic)
        if "n_states" in d and (d["n_states"], d["n_actions_adv"], d["n_actions_vic"]) != dims:
            raise MDPError("declared sizes do not match arrays")
        return mdp


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    owner: str
    probs: np.ndarray

    def __post_init__(self):
        if self.owner not in (ADVERSARY, VICTIM):
            raise PolicyError(f"unknown owner {self.owner!r}")
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[1] == 0:
            raise PolicyError(f"policy table must be 2-d, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < -RENORM_TOL:
            raise PolicyError("policy entries must be finite and non-negative")
        sums = p.sum(1)
        if np.abs(sums - 1).max() > RENORM_TOL:
            raise PolicyError("policy rows must sum to 1")
        if p.min() < 0 or np.abs(sums - 1).max() > 0:
            p = np.clip(p, 0, None)
            p /= p.sum(1, keepdims=True)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    def actions(self) -> np.ndarray:
        """Greedy action per state (the action itself for deterministic policies)."""
        return np.argmax(self.probs, axis=1)

    @classmethod
    def deterministic(cls, owner, actions, n_actions):
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return cls(owner, p)

    @classmethod
    def uniform(cls, owner, n_states, n_actions):
        return cls(owner, np.full((n_states, n_actions), 1.0 / n_actions))

    def to_dict(self):
        return {"owner": self.owner, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["owner"], np.array(d["probs"]))


@dataclass(frozen=True)
class OccupancyBundle:
    mu_target: np.ndarray
    mu_neighbor: dict  # (s, a2) -> occupancy under the deviation
    visited_mask: np.ndarray
    deviations: dict = field(default_factory=dict)  # (s, a2) -> deviating victim action vector
    rho_target: float = float("nan")
    rho_neighbor: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GapReport:
    gap: float
    argmin_pair: tuple | None
    per_pair_margins: dict


def save_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj.to_dict(), f)


def load_mdp(path) -> TwoAgentMDP:
    with open(path) as f:
        return TwoAgentMDP.from_dict(json.load(f))


def load_policy(path) -> TabularPolicy:
    with open(path) as f:
        return TabularPolicy.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# array-level kernels, shared by the public functions and the attack loops

def _check(mdp, pi_adv, pi_vic):
    if pi_adv.probs.shape != (mdp.n_states, mdp.n_actions_adv):
        raise MDPError(f"adversary policy shape {pi_adv.probs.shape} does not match MDP")
    if pi_vic.probs.shape != (mdp.n_states, mdp.n_actions_vic):
        raise MDPError(f"victim policy shape {pi_vic.probs.shape} does not match MDP")


def adversary_marginal(mdp, pa):
    """P^{pi_A}(s, a2, s') and R^{pi_A}(s, a2) for an adversary probability table."""
    P2 = np.einsum("sa,sabt->sbt", pa, mdp.transition)
    R2 = np.einsum("sa,sab->sb", pa, mdp.reward_vic)
    return P2, R2


def victim_marginal(mdp, pv):
    """P^{pi_L}(s, a1, s') and R^{pi_L}(s, a1) for a victim probability table."""
    P1 = np.einsum("sb,sabt->sat", pv, mdp.transition)
    R1 = np.einsum("sb,sab->sa", pv, mdp.reward_vic)
    return P1, R1


def _chain(P2, R2, pv):
    return np.einsum("sb,sbt->st", pv, P2), np.einsum("sb,sb->s", pv, R2)


def _chain_det(P2, R2, actions):
    idx = np.arange(len(actions))
    return P2[idx, actions], R2[idx, actions]


def _occupancy(K, sigma, gamma):
    n = K.shape[0]
    try:
        mu = (1 - gamma) * np.linalg.solve((np.eye(n) - gamma * K).T, sigma)
    except np.linalg.LinAlgError as e:
        raise MDPError(f"occupancy solve failed: {e}") from e
    return np.clip(mu, 0, None)


def _values(K, r, gamma):
    return np.linalg.solve(np.eye(K.shape[0]) - gamma * K, r)


def _greedy(Q, tol):
    """Lowest-index action within tol of the row maximum."""
    return np.argmax(Q >= Q.max(1, keepdims=True) - tol, axis=1)


def policy_iteration(P, R, gamma, allowed=None, init=None, tol=1e-12):
    """Exact solution of a single-agent MDP by policy iteration.

    P: (S, A, S), R: (S, A).  ``allowed`` masks admissible actions per state.
    Returns (deterministic actions, V).  Ties go to the lowest admissible index.
    """
    S, A = R.shape
    if allowed is None:
        allowed = np.ones((S, A), bool)
    if init is None:
        init = np.argmax(allowed, axis=1)
    act = np.array(init, dtype=int)
    scale = max(1.0, np.abs(R).max() / (1 - gamma))
    for _ in range(10 * S * A + 100):
        K, r = _chain_det(P, R, act)
        V = _values(K, r, gamma)
        Q = np.where(allowed, R + gamma * P @ V, -np.inf)
        cur = Q[np.arange(S), act]
        best = Q.max(1)
        improve = best > cur + tol * scale
        if not improve.any():
            break
        act = np.where(improve, np.argmax(Q, axis=1), act)
    else:
        raise MDPError("policy iteration did not converge")
    # canonical tie-breaking among optimal actions
    act = _greedy(Q, 1e-10 * scale)
    return act, V


# ---------------------------------------------------------------------------
# public operations

def joint_kernel(mdp: TwoAgentMDP, pi_adv: TabularPolicy, pi_vic: TabularPolicy):
    """State-to-state transition matrix and expected reward per state under both policies."""
    _check(mdp, pi_adv, pi_vic)
    P2, R2 = adversary_marginal(mdp, pi_adv.probs)
    return _chain(P2, R2, pi_vic.probs)


def occupancy_measure(mdp, pi_adv, pi_vic) -> np.ndarray:
    K, _ = joint_kernel(mdp, pi_adv, pi_vic)
    return _occupancy(K, mdp.sigma, mdp.gamma)


def discounted_return(mdp, pi_adv, pi_vic) -> float:
    K, r = joint_kernel(mdp, pi_adv, pi_vic)
    return float(_occupancy(K, mdp.sigma, mdp.gamma) @ r)


def value_functions(mdp, pi_adv, pi_vic):
    """V (per state) and Q_vic (state x victim action) in the victim's induced MDP."""
    _check(mdp, pi_adv, pi_vic)
    P2, R2 = adversary_marginal(mdp, pi_adv.probs)
    K, r = _chain(P2, R2, pi_vic.probs)
    V = _values(K, r, mdp.gamma)
    return V, R2 + mdp.gamma * P2 @ V


def best_response(mdp, pi_adv, tol=1e-12, max_sweeps=100_000):
    """Optimal deterministic victim policy against a fixed adversary (value iteration)."""
    P2, R2 = adversary_marginal(mdp, pi_adv.probs)
    V = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        Q = R2 + mdp.gamma * P2 @ V
        V_new = Q.max(1)
        done = np.abs(V_new - V).max() <= tol
        V = V_new
        if done:
            break
    Q = R2 + mdp.gamma * P2 @ V
    scale = max(1.0, np.abs(Q).max())
    act = _greedy(Q, 1e-10 * scale)
    return TabularPolicy.deterministic(VICTIM, act, mdp.n_actions_vic), Q.max(1)


def neighbor_policy(pi: TabularPolicy, s: int, a: int) -> TabularPolicy:
    """Copy of pi that plays a deterministically in state s."""
    if not (0 <= s < pi.n_states and 0 <= a < pi.n_actions):
        raise IndexError(f"(s={s}, a={a}) out of range")
    p = pi.probs.copy()
    p[s] = 0.0
    p[s, a] = 1.0
    return TabularPolicy(pi.owner, p)


def _target_actions(pi_target):
    if not pi_target.is_deterministic():
        raise PolicyError("target policy must be deterministic")
    return pi_target.actions()


def _extended_actions(P2, R2, gamma, visited, target, s, a2):
    """Action vector of the extended neighbor: fixed on visited states, optimal elsewhere."""
    fixed = target.copy()
    fixed[s] = a2
    if visited.all():
        return fixed
    allowed = np.ones(R2.shape, bool)
    allowed[visited] = False
    allowed[visited, fixed[visited]] = True
    act, _ = policy_iteration(P2, R2, gamma, allowed=allowed, init=fixed)
    return act


def extended_neighbor_target(mdp, pi_adv, pi_target, s, a2, visited=None) -> TabularPolicy:
    """Target policy deviating to a2 in s, completed greedily on unvisited states.

    Visited means positive occupancy under (pi_adv, pi_target).  On unvisited
    states the victim plays optimally given the deviation on visited ones.
    """
    _check(mdp, pi_adv, pi_target)
    target = _target_actions(pi_target)
    if target[s] == a2:
        raise PolicyError(f"action {a2} is already the target action in state {s}")
    P2, R2 = adversary_marginal(mdp, pi_adv.probs)
    if visited is None:
        K, _ = _chain_det(P2, R2, target)
        visited = _occupancy(K, mdp.sigma, mdp.gamma) > VISITED_TOL
    act = _extended_actions(P2, R2, mdp.gamma, np.asarray(visited), target, s, a2)
    return TabularPolicy.deterministic(VICTIM, act, mdp.n_actions_vic)


def occupancy_bundle(mdp, pi_adv, pi_target, mode="general") -> OccupancyBundle:
    """Occupancies of the target and of every eligible deviation under pi_adv."""
    if mode not in ("ergodic", "general"):
        raise ValueError(f"unknown mode {mode!r}")
    _check(mdp, pi_adv, pi_target)
    target = _target_actions(pi_target)
    P2, R2 = adversary_marginal(mdp, pi_adv.probs)
    g, sigma = mdp.gamma, mdp.sigma
    K, r = _chain_det(P2, R2, target)
    mu_t = _occupancy(K, sigma, g)
    visited = mu_t > VISITED_TOL
    mus, devs, rhos = {}, {}, {}
    for s in np.flatnonzero(visited):
        for a2 in range(mdp.n_actions_vic):
            if a2 == target[s]:
                continue
            if mode == "ergodic":
                act = target.copy()
                act[s] = a2
            else:
                act = _extended_actions(P2, R2, g, visited, target, s, a2)
            Kd, rd = _chain_det(P2, R2, act)
            mu = _occupancy(Kd, sigma, g)
            key = (int(s), a2)
            mus[key], devs[key], rhos[key] = mu, act, float(mu @ rd)
    return OccupancyBundle(mu_t, mus, visited, devs, float(mu_t @ r), rhos)


def gap_from_bundle(bundle: OccupancyBundle) -> GapReport:
    margins = {k: bundle.rho_target - v for k, v in bundle.rho_neighbor.items()}
    if not margins:
        return GapReport(float("inf"), None, margins)
    key = min(margins, key=margins.get)
    return GapReport(margins[key], key, margins)


def true_gap(mdp, pi_adv, pi_target, mode="general") -> GapReport:
    """Smallest margin by which the target beats any eligible (extended-)neighbor deviation."""
    return gap_from_bundle(occupancy_bundle(mdp, pi_adv, pi_target, mode))


def is_feasible(mdp, pi_adv, pi_target, epsilon, mode="general") -> bool:
    """gap >= epsilon (with slack), stopping at the first violating pair."""
    target = _target_actions(pi_target)
    P2, R2 = adversary_marginal(mdp, pi_adv.probs)
    g, sigma = mdp.gamma, mdp.sigma
    K, r = _chain_det(P2, R2, target)
    mu_t = _occupancy(K, sigma, g)
    rho_t = mu_t @ r
    visited = mu_t > VISITED_TOL
    for s in np.flatnonzero(visited):
        for a2 in range(mdp.n_actions_vic):
            if a2 == target[s]:
                continue
            if mode == "ergodic":
                act = target.copy()
                act[s] = a2
            else:
                act = _extended_actions(P2, R2, g, visited, target, s, a2)
            Kd, rd = _chain_det(P2, R2, act)
            if rho_t - _occupancy(Kd, sigma, g) @ rd < epsilon - GAP_SLACK:
                return False
    return True


def influence_mix(pi_default: TabularPolicy, pi_attack: TabularPolicy, iota: float) -> TabularPolicy:
    """Row-wise (1 - iota) * pi_default + iota * pi_attack."""
    if not 0 <= iota <= 1:
        raise ValueError("iota must lie in [0, 1]")
    if pi_default.probs.shape != pi_attack.probs.shape:
        raise PolicyError("policies have different shapes")
    if iota == 0:
        return pi_default
    if iota == 1:
        return pi_attack
    return TabularPolicy(pi_attack.owner, (1 - iota) * pi_default.probs + iota * pi_attack.probs)
